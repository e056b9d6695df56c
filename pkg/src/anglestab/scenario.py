"""Scenario files: a line-oriented ``[section]`` / ``key = value`` grammar.

Parsing is strict (unknown keys, duplicate keys and dangling references are
errors carrying the offending line number). ``serialize`` writes a canonical
form that parses back to an equal ``Scenario``.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import devices as dv
from .dynsim import (
    ApplyFault,
    ClearFaultAndTrip,
    DeviceSpec,
    Event,
    LoadScale,
    ParamOverride,
    SimConfig,
    SystemSnapshot,
    initialize,
    set_param,
)
from .errors import ScenarioError, StructuralError
from .powergrid import BranchSpec, BusSpec, Injection, LoadSpec, NetworkModel, solve_power_flow
from .studies import FaultTemplate

SECTIONS = ("system", "bus", "branch", "load", "machine", "gfm", "events", "study")
REPEATABLE = ("bus", "branch", "load", "machine", "gfm")


# -- model -------------------------------------------------------------------


@dataclass(frozen=True)
class SystemSection:
    name: str = ""
    s_base: float = 100.0  # MVA
    f_nom: float = 50.0  # Hz
    t_end: float = 10.0  # s
    dt: float = 1e-3  # s
    integrator: str = "trapezoidal"
    stride: int = 1
    network_solve_tol: float = 1e-10
    max_inner_iter: int = 50
    pf_tol: float = 1e-10
    pf_max_iter: int = 30


@dataclass(frozen=True)
class BusEntry:
    id: int
    kind: str = "pq"
    base_kv: float = 400.0
    v: float = 1.0  # pu, pv/slack setpoint
    angle: float = 0.0  # deg, slack only


@dataclass(frozen=True)
class BranchEntry:
    id: str
    from_bus: int
    to_bus: int
    r: float = 0.0  # pu on s_base
    x: float = 0.0
    b: float = 0.0
    tap: float = 1.0
    status: bool = True
    s_base: Optional[float] = None  # MVA base of r, x, b when not the system base


@dataclass(frozen=True)
class LoadEntry:
    bus: int
    p: float = 0.0  # MW
    q: float = 0.0  # MVAr
    scale: float = 1.0


@dataclass(frozen=True)
class MachineEntry:
    name: str
    bus: int
    p_mw: float = 0.0
    params: dv.SyncMachineParams = field(default_factory=dv.SyncMachineParams)


@dataclass(frozen=True)
class GfmEntry:
    name: str
    bus: int
    p_mw: float = 0.0
    params: dv.GfmVsmParams = field(default_factory=dv.GfmVsmParams)


@dataclass(frozen=True)
class EventEntry:
    label: str
    time: float
    action: str  # fault | clear | load_scale | param
    args: tuple = ()  # ((key, raw value), ...) in file order

    def arg(self, key, default=None):
        for k, v in self.args:
            if k == key:
                return v
        return default


@dataclass(frozen=True)
class StudySection:
    kind: str = "none"  # none | fault | small_signal
    fault_event: str = ""
    clear_event: str = ""
    channel: str = ""
    t_start: float = 0.0
    angle_threshold: float = 180.0  # deg
    window: float = 2.0  # s
    min_slip_rate: float = 5.0  # deg/s
    growth_tol: float = 5e-3  # 1/s
    cct_lo: float = 0.0
    cct_hi: float = 0.0
    cct_tol: float = 0.002


@dataclass(frozen=True)
class Scenario:
    system: SystemSection
    buses: tuple
    branches: tuple
    loads: tuple = ()
    machines: tuple = ()
    gfms: tuple = ()
    events: tuple = ()
    study: StudySection = field(default_factory=StudySection)

    @property
    def devices(self) -> tuple:
        return self.machines + self.gfms


_EVENT_ARGS = {
    "fault": ({"bus"}, {"g", "b"}),
    "clear": (set(), {"branch"}),
    "load_scale": ({"bus", "factor"}, set()),
    "param": ({"device", "field", "value"}, set()),
}

_KEY_ALIASES = {"branch": {"from": "from_bus", "to": "to_bus"}}
_KEY_NAMES = {"branch": {"from_bus": "from", "to_bus": "to"}}


# -- value coercion ----------------------------------------------------------


def _coerce(kind, raw: str, what: str, line=None):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        if kind is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        return raw.strip()
    except ValueError:
        raise ScenarioError(f"{what}: cannot read {raw!r} as {kind.__name__}", line) from None


def _field_types(cls) -> dict:
    hints = {"int": int, "float": float, "str": str, "bool": bool, "Optional[float]": float}
    out = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        out[f.name] = hints.get(t, None)
    return out


def _set_flat(entry, key: str, raw: str, section: str, line=None):
    types = _field_types(type(entry))
    if key not in types or types[key] is None:
        raise ScenarioError(f"[{section}] unknown key {key!r}", line)
    return dataclasses.replace(entry, **{key: _coerce(types[key], raw, f"[{section}] {key}", line)})


def _param_paths(params, prefix="") -> list[str]:
    out = []
    for f in dataclasses.fields(params):
        val = getattr(params, f.name)
        if dataclasses.is_dataclass(val):
            out += _param_paths(val, f"{prefix}{f.name}.")
        else:
            out.append(prefix + f.name)
    return out


def _get_path(params, path: str):
    for part in path.split("."):
        params = getattr(params, part)
    return params


def _set_device(entry, key: str, raw: str, section: str, line=None):
    if key in ("name", "bus", "p_mw"):
        kind = {"name": str, "bus": int, "p_mw": float}[key]
        return dataclasses.replace(entry, **{key: _coerce(kind, raw, f"[{section}] {key}", line)})
    if key not in _param_paths(entry.params):
        raise ScenarioError(f"[{section}] unknown key {key!r}", line)
    current = _get_path(entry.params, key)
    kind = bool if isinstance(current, bool) else float if isinstance(current, float) else str
    value = _coerce(kind, raw, f"[{section}] {key}", line)
    try:
        params = set_param(entry.params, key, value)
    except (ValueError, StructuralError) as exc:
        raise ScenarioError(f"[{section}] {key}: {exc}", line) from None
    return dataclasses.replace(entry, params=params)


# -- parsing -----------------------------------------------------------------


@dataclass
class _Block:
    name: str
    line: int
    items: list  # (key, value, line)


def _lex(text: str) -> list[_Block]:
    blocks: list[_Block] = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ScenarioError(f"malformed section header {raw.strip()!r}", n)
            name = line[1:-1].strip().lower()
            if name not in SECTIONS:
                raise ScenarioError(f"unknown section [{name}]", n)
            blocks.append(_Block(name, n, []))
            continue
        if "=" not in line:
            raise ScenarioError(f"expected 'key = value', got {raw.strip()!r}", n)
        if not blocks:
            raise ScenarioError("key outside of any section", n)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not key:
            raise ScenarioError("empty key", n)
        blocks[-1].items.append((key, value, n))
    return blocks


def _check_dupes(block: _Block):
    seen = {}
    for key, _, n in block.items:
        if key in seen:
            raise ScenarioError(f"[{block.name}] key {key!r} repeated (first at line {seen[key]})", n)
        seen[key] = n


def _required(block: _Block, keys):
    have = {k for k, _, _ in block.items}
    for k in keys:
        if k not in have:
            raise ScenarioError(f"[{block.name}] section is missing required key {k!r}", block.line)


def _parse_event(key, value, n) -> EventEntry:
    parts = value.split()
    if len(parts) < 2:
        raise ScenarioError(f"event {key!r}: expected '<time> <action> [k=v ...]'", n)
    time = _coerce(float, parts[0], f"event {key!r} time", n)
    if time < 0:
        raise ScenarioError(f"event {key!r}: negative time", n)
    action = parts[1].lower()
    if action not in _EVENT_ARGS:
        raise ScenarioError(f"event {key!r}: unknown action {action!r}", n)
    need, opt = _EVENT_ARGS[action]
    args = []
    for tok in parts[2:]:
        k, eq, v = tok.partition("=")
        if not eq or not k or not v:
            raise ScenarioError(f"event {key!r}: bad argument {tok!r} (expected key=value)", n)
        if k not in need | opt:
            raise ScenarioError(f"event {key!r}: unknown argument {k!r} for {action}", n)
        if k in dict(args):
            raise ScenarioError(f"event {key!r}: argument {k!r} repeated", n)
        args.append((k, v))
    missing = need - {k for k, _ in args}
    if missing:
        raise ScenarioError(f"event {key!r}: {action} needs {', '.join(sorted(missing))}", n)
    for k, v in args:
        if k in ("bus",):
            _coerce(int, v, f"event {key!r} {k}", n)
        elif k in ("g", "b", "factor", "value") and not (action == "param" and k == "value"):
            _coerce(float, v, f"event {key!r} {k}", n)
    return EventEntry(key, time, action, tuple(args))


def parse(text: str) -> Scenario:
    blocks = _lex(text)
    systems = [b for b in blocks if b.name == "system"]
    if len(systems) != 1:
        where = ", ".join(str(b.line) for b in systems) or "none"
        raise ScenarioError(f"exactly one [system] section required (found at lines: {where})",
                            systems[1].line if len(systems) > 1 else None)
    for name in ("events", "study"):
        found = [b for b in blocks if b.name == name]
        if len(found) > 1:
            raise ScenarioError(f"[{name}] may appear only once (also at line {found[0].line})", found[1].line)

    system = SystemSection()
    buses, branches, loads, machines, gfms, events = [], [], [], [], [], []
    study = StudySection()
    line_of = {}
    for b in blocks:
        if b.name != "events":
            _check_dupes(b)
        if b.name == "system":
            for k, v, n in b.items:
                system = _set_flat(system, k, v, "system", n)
        elif b.name == "bus":
            _required(b, ["id"])
            entry = BusEntry(id=_coerce(int, dict((k, v) for k, v, _ in b.items)["id"], "[bus] id", b.line))
            for k, v, n in b.items:
                entry = _set_flat(entry, k, v, "bus", n)
            buses.append(entry)
            line_of[("bus", entry.id)] = b.line
        elif b.name == "branch":
            _required(b, ["id", "from", "to"])
            raw = {k: v for k, v, _ in b.items}
            entry = BranchEntry(id=raw["id"], from_bus=_coerce(int, raw["from"], "[branch] from", b.line),
                                to_bus=_coerce(int, raw["to"], "[branch] to", b.line))
            for k, v, n in b.items:
                if k in ("from_bus", "to_bus"):
                    raise ScenarioError(f"[branch] unknown key {k!r}", n)
                entry = _set_flat(entry, _KEY_ALIASES["branch"].get(k, k), v, "branch", n)
            branches.append(entry)
            line_of[("branch", entry.id)] = b.line
        elif b.name == "load":
            _required(b, ["bus"])
            entry = LoadEntry(bus=0)
            for k, v, n in b.items:
                entry = _set_flat(entry, k, v, "load", n)
            loads.append(entry)
            line_of[("load", len(loads))] = b.line
        elif b.name in ("machine", "gfm"):
            _required(b, ["name", "bus"])
            cls = MachineEntry if b.name == "machine" else GfmEntry
            entry = cls(name="", bus=0)
            for k, v, n in b.items:
                entry = _set_device(entry, k, v, b.name, n)
            (machines if b.name == "machine" else gfms).append(entry)
            line_of[("device", entry.name)] = b.line
        elif b.name == "events":
            labels = {}
            for k, v, n in b.items:
                if k in labels:
                    raise ScenarioError(f"event label {k!r} repeated (first at line {labels[k]})", n)
                labels[k] = n
                events.append(_parse_event(k, v, n))
                line_of[("event", k)] = n
        elif b.name == "study":
            for k, v, n in b.items:
                study = _set_flat(study, k, v, "study", n)
            line_of[("study",)] = b.line

    sc = Scenario(system, tuple(buses), tuple(branches), tuple(loads), tuple(machines), tuple(gfms),
                  tuple(events), study)
    validate(sc, line_of)
    return sc


def validate(sc: Scenario, line_of: Optional[dict] = None) -> None:
    """Cross-reference checks; raises ScenarioError."""
    line_of = line_of or {}
    sysd = sc.system
    if sysd.s_base <= 0 or sysd.f_nom <= 0:
        raise ScenarioError("[system] s_base and f_nom must be positive")
    try:
        SimConfig(t_end=sysd.t_end, dt=sysd.dt, integrator=sysd.integrator, stride=sysd.stride,
                  network_solve_tol=sysd.network_solve_tol, max_inner_iter=sysd.max_inner_iter)
    except ValueError as exc:
        raise ScenarioError(f"[system] {exc}") from None

    ids = {}
    for b in sc.buses:
        if b.id in ids:
            raise ScenarioError(f"bus {b.id} declared twice", line_of.get(("bus", b.id)))
        if b.kind not in ("slack", "pv", "pq"):
            raise ScenarioError(f"bus {b.id}: kind must be slack, pv or pq", line_of.get(("bus", b.id)))
        ids[b.id] = b
    slacks = [b for b in sc.buses if b.kind == "slack"]
    if len(slacks) != 1:
        lines = [f"[bus] id={b.id} at line {line_of.get(('bus', b.id), '?')}" for b in slacks]
        raise ScenarioError(
            "exactly one slack bus required; found " + (", ".join(lines) if lines else "none"),
            line_of.get(("bus", slacks[1].id)) if len(slacks) > 1 else None,
        )
    br_ids = set()
    for br in sc.branches:
        ln = line_of.get(("branch", br.id))
        if br.id in br_ids:
            raise ScenarioError(f"branch {br.id!r} declared twice", ln)
        br_ids.add(br.id)
        for end in (br.from_bus, br.to_bus):
            if end not in ids:
                raise ScenarioError(f"branch {br.id!r} references unknown bus {end}", ln)
        if br.s_base is not None and br.s_base <= 0:
            raise ScenarioError(f"branch {br.id!r}: s_base must be positive", ln)
    for k, ld in enumerate(sc.loads, 1):
        if ld.bus not in ids:
            raise ScenarioError(f"load references unknown bus {ld.bus}", line_of.get(("load", k)))
    names = set()
    for d in sc.devices:
        ln = line_of.get(("device", d.name))
        if not d.name:
            raise ScenarioError("device name must not be empty", ln)
        if d.name in names:
            raise ScenarioError(f"device {d.name!r} declared twice", ln)
        names.add(d.name)
        if d.bus not in ids:
            raise ScenarioError(f"device {d.name!r} references unknown bus {d.bus}", ln)
        if ids[d.bus].kind == "slack":
            raise ScenarioError(f"device {d.name!r} sits on the slack bus", ln)
    for ev in sc.events:
        ln = line_of.get(("event", ev.label))
        bus = ev.arg("bus")
        if bus is not None and int(float(bus)) not in ids:
            raise ScenarioError(f"event {ev.label!r} references unknown bus {bus}", ln)
        br = ev.arg("branch")
        if br is not None and br not in br_ids:
            raise ScenarioError(f"event {ev.label!r} references unknown branch {br!r}", ln)
        dev = ev.arg("device")
        if dev is not None:
            if dev not in names:
                raise ScenarioError(f"event {ev.label!r} references unknown device {dev!r}", ln)
            entry = next(d for d in sc.devices if d.name == dev)
            if ev.arg("field") not in _param_paths(entry.params):
                raise ScenarioError(f"event {ev.label!r}: {dev} has no parameter {ev.arg('field')!r}", ln)
    st = sc.study
    ln = line_of.get(("study",))
    if st.kind not in ("none", "fault", "small_signal"):
        raise ScenarioError("[study] kind must be none, fault or small_signal", ln)
    labels = {e.label for e in sc.events}
    for key in ("fault_event", "clear_event"):
        ref = getattr(st, key)
        if ref and ref not in labels:
            raise ScenarioError(f"[study] {key} names unknown event {ref!r}", ln)
    if st.kind == "fault" and not (st.fault_event and st.clear_event):
        raise ScenarioError("[study] kind = fault needs fault_event and clear_event", ln)
    if st.fault_event and next(e for e in sc.events if e.label == st.fault_event).action != "fault":
        raise ScenarioError("[study] fault_event must name a fault event", ln)
    if st.clear_event and next(e for e in sc.events if e.label == st.clear_event).action != "clear":
        raise ScenarioError("[study] clear_event must name a clear event", ln)


def load(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    return parse(text)


# -- serialization -----------------------------------------------------------


def _out(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(sc: Scenario) -> str:
    lines = ["[system]"]
    lines += [f"{f.name} = {_out(getattr(sc.system, f.name))}" for f in dataclasses.fields(sc.system)
              if f.name != "name" or sc.system.name]
    for b in sc.buses:
        lines += ["", "[bus]"] + [f"{f.name} = {_out(getattr(b, f.name))}" for f in dataclasses.fields(b)]
    for br in sc.branches:
        lines += ["", "[branch]"]
        for f in dataclasses.fields(br):
            val = getattr(br, f.name)
            if val is None:
                continue
            lines.append(f"{_KEY_NAMES['branch'].get(f.name, f.name)} = {_out(val)}")
    for ld in sc.loads:
        lines += ["", "[load]"] + [f"{f.name} = {_out(getattr(ld, f.name))}" for f in dataclasses.fields(ld)]
    for section, entries in (("machine", sc.machines), ("gfm", sc.gfms)):
        for d in entries:
            lines += ["", f"[{section}]", f"name = {d.name}", f"bus = {d.bus}", f"p_mw = {_out(d.p_mw)}"]
            lines += [f"{p} = {_out(_get_path(d.params, p))}" for p in _param_paths(d.params)]
    if sc.events:
        lines += ["", "[events]"]
        for e in sc.events:
            args = "".join(f" {k}={v}" for k, v in e.args)
            lines.append(f"{e.label} = {_out(e.time)} {e.action}{args}")
    if sc.study != StudySection():
        lines += ["", "[study]"] + [f"{f.name} = {_out(getattr(sc.study, f.name))}"
                                    for f in dataclasses.fields(sc.study)]
    return "\n".join(lines) + "\n"


# -- overrides ---------------------------------------------------------------


def apply_override(sc: Scenario, path: str, raw) -> Scenario:
    """Set one value addressed by a dotted path; ``a+b`` sets several paths at once.

    Paths: ``system.<key>``, ``study.<key>``, ``machine.<key>`` / ``gfm.<key>``
    (every device of that kind; parameter groups are dotted, e.g.
    ``machine.pss.enabled``), ``<device name>.<key>``, ``bus.<id>.<key>``,
    ``branch.<id>.<key>``, ``load.<bus>.<key>``, ``event.<label>.time``.
    """
    raw = str(raw)
    if "+" in path:
        for part in path.split("+"):
            sc = apply_override(sc, part.strip(), raw)
        return sc
    head, _, rest = path.partition(".")
    if not rest:
        raise ScenarioError(f"override path {path!r} needs a section and a key")
    if head == "system":
        sc = dataclasses.replace(sc, system=_set_flat(sc.system, rest, raw, "system"))
    elif head == "study":
        sc = dataclasses.replace(sc, study=_set_flat(sc.study, rest, raw, "study"))
    elif head in ("machine", "gfm"):
        attr = "machines" if head == "machine" else "gfms"
        entries = getattr(sc, attr)
        if not entries:
            raise ScenarioError(f"override {path!r}: scenario has no [{head}] section")
        sc = dataclasses.replace(sc, **{attr: tuple(_set_device(d, rest, raw, head) for d in entries)})
    elif head in ("bus", "branch", "load", "event"):
        ident, _, key = rest.rpartition(".")
        if not ident:
            raise ScenarioError(f"override path {path!r} needs {head}.<id>.<key>")
        attr = {"bus": "buses", "branch": "branches", "load": "loads", "event": "events"}[head]
        match = {"bus": lambda e: str(e.id) == ident, "branch": lambda e: e.id == ident,
                 "load": lambda e: str(e.bus) == ident, "event": lambda e: e.label == ident}[head]
        entries = list(getattr(sc, attr))
        hit = [k for k, e in enumerate(entries) if match(e)]
        if not hit:
            raise ScenarioError(f"override {path!r}: no {head} {ident!r}")
        if head == "event" and key != "time":
            raise ScenarioError("only event.<label>.time can be overridden")
        key = _KEY_ALIASES.get(head, {}).get(key, key)
        for k in hit:
            entries[k] = _set_flat(entries[k], key, raw, head)
        sc = dataclasses.replace(sc, **{attr: tuple(entries)})
    else:
        devs = [d for d in sc.devices if d.name == head]
        if not devs:
            raise ScenarioError(f"override path {path!r}: unknown section or device {head!r}")
        sc = dataclasses.replace(
            sc,
            machines=tuple(_set_device(d, rest, raw, "machine") if d.name == head else d for d in sc.machines),
            gfms=tuple(_set_device(d, rest, raw, "gfm") if d.name == head else d for d in sc.gfms),
        )
    validate(sc)
    return sc


# -- building runnable objects -----------------------------------------------


def build_network(sc: Scenario) -> NetworkModel:
    s_base = sc.system.s_base
    buses = [BusSpec(b.id, b.kind, b.base_kv, b.v, math.radians(b.angle)) for b in sc.buses]
    branches = []
    for br in sc.branches:
        k = 1.0 if br.s_base is None else s_base / br.s_base
        branches.append(BranchSpec(br.id, br.from_bus, br.to_bus, br.r * k, br.x * k, br.b / k, br.tap,
                                   "in_service" if br.status else "out_of_service"))
    loads = [LoadSpec(ld.bus, ld.p, ld.q, ld.scale) for ld in sc.loads]
    return NetworkModel(buses, branches, loads, s_base=s_base)


def injections(sc: Scenario) -> dict:
    out = {}
    for d in sc.devices:
        out[d.bus] = Injection(out.get(d.bus, Injection(0.0)).p_mw + d.p_mw)
    return out


def build_snapshot(sc: Scenario) -> SystemSnapshot:
    net = build_network(sc)
    pf = solve_power_flow(net, injections(sc), tol=sc.system.pf_tol, max_iter=sc.system.pf_max_iter)
    specs = [DeviceSpec(d.name, "sm", d.bus, d.params) for d in sc.machines]
    specs += [DeviceSpec(d.name, "gfm", d.bus, d.params) for d in sc.gfms]
    slack = net.slack
    inf = dv.InfiniteBusModel(v_mag=slack.v_setpoint, angle=slack.angle_setpoint)
    return initialize(net, specs, pf, infinite_bus=inf, f_nom=sc.system.f_nom)


def event_action(ev: EventEntry):
    if ev.action == "fault":
        g = float(ev.arg("g", 1e4))
        b = float(ev.arg("b", -1e4))
        return ApplyFault(int(float(ev.arg("bus"))), complex(g, b))
    if ev.action == "clear":
        return ClearFaultAndTrip(ev.arg("branch"))
    if ev.action == "load_scale":
        return LoadScale(int(float(ev.arg("bus"))), float(ev.arg("factor")))
    if ev.action == "param":
        return ParamOverride(ev.arg("device"), ev.arg("field"), ev.arg("value"))
    raise ScenarioError(f"unknown event action {ev.action!r}")


def build_events(sc: Scenario) -> list[Event]:
    return [Event(e.time, event_action(e)) for e in sc.events]


def sim_config(sc: Scenario, **overrides) -> SimConfig:
    s = sc.system
    args = dict(t_end=s.t_end, dt=s.dt, integrator=s.integrator, network_solve_tol=s.network_solve_tol,
                max_inner_iter=s.max_inner_iter, stride=s.stride)
    args.update({k: v for k, v in overrides.items() if v is not None})
    return SimConfig(**args)


def fault_template(sc: Scenario) -> tuple[FaultTemplate, float]:
    """The study's fault/clear pair as a template plus its nominal clearing duration."""
    st = sc.study
    if not (st.fault_event and st.clear_event):
        raise ScenarioError("[study] must name fault_event and clear_event")
    by_label = {e.label: e for e in sc.events}
    f, c = by_label[st.fault_event], by_label[st.clear_event]
    extra = tuple(Event(e.time, event_action(e)) for e in sc.events if e.label not in (f.label, c.label))
    return FaultTemplate(f.time, event_action(f), event_action(c), extra), c.time - f.time


def technologies(sc: Scenario) -> dict:
    out = {d.name: "synchronous_machine" for d in sc.machines}
    out.update({d.name: "gfm_converter" for d in sc.gfms})
    return out


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package (``canonical`` or ``canonical.scn``)."""
    if not name.endswith(".scn"):
        name += ".scn"
    path = Path(__file__).with_name("scenarios") / name
    if not path.exists():
        raise ScenarioError(f"no bundled scenario {name!r}")
    return path


def bundled_names() -> list[str]:
    return sorted(p.stem for p in (Path(__file__).with_name("scenarios")).glob("*.scn"))
