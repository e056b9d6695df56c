"""Phasor (RMS) time-domain simulation of the network plus dynamic devices.

The network is algebraic. Loads become constant shunt admittances at their
initialized voltage. Machines enter through their real-linear stator relation
(the saliency term is solved in closed form), converters as current sources.
Device ODEs are integrated with a trapezoidal corrector solved by fixed-point
iteration, re-solving the network on every pass; ``rk4`` is available as a
cross-check.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from . import devices as dv
from .errors import (
    ConvergenceError,
    InitializationError,
    NumericalError,
    StructuralError,
)
from .powergrid import (
    ClearFault,
    NetworkModel,
    PowerFlowSolution,
    SetFault,
    SetLoadScale,
    TripBranch,
    apply_topology_event,
)

DEG = 180.0 / math.pi


# -- device declarations -----------------------------------------------------


@dataclass(frozen=True)
class DeviceSpec:
    """A dynamic device attached to a bus before initialization."""

    name: str
    kind: str  # "sm" | "gfm"
    bus: int
    params: Union[dv.SyncMachineParams, dv.GfmVsmParams]

    def __post_init__(self):
        if self.kind not in ("sm", "gfm"):
            raise StructuralError(f"device {self.name}: unknown kind {self.kind!r}")

    @property
    def technology(self) -> str:
        return "synchronous_machine" if self.kind == "sm" else "gfm_converter"

    @property
    def state_names(self) -> tuple[str, ...]:
        return dv.SM_STATES if self.kind == "sm" else dv.GFM_STATES


@dataclass(frozen=True)
class Device:
    """An initialized device: spec plus setpoints and its slice of the state vector."""

    spec: DeviceSpec
    controls: Any
    offset: int

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def n_states(self) -> int:
        return len(self.spec.state_names)

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.n_states)


# -- events ------------------------------------------------------------------


@dataclass(frozen=True)
class ApplyFault:
    bus: int
    admittance: complex = complex(1e4, -1e4)


@dataclass(frozen=True)
class ClearFaultAndTrip:
    branch: Optional[str] = None  # None clears the fault without switching


@dataclass(frozen=True)
class LoadScale:
    bus: int
    factor: float


@dataclass(frozen=True)
class ParamOverride:
    device: str
    field: str  # dotted path inside the device parameters, e.g. "pss.enabled"
    value: float


Action = Union[ApplyFault, ClearFaultAndTrip, LoadScale, ParamOverride]


@dataclass(frozen=True)
class Event:
    time: float
    action: Action

    def __post_init__(self):
        if self.time < 0:
            raise StructuralError(f"event time {self.time} is negative")


@dataclass(frozen=True)
class SimConfig:
    t_end: float = 10.0
    dt: float = 1e-3
    integrator: str = "trapezoidal"
    network_solve_tol: float = 1e-10
    max_inner_iter: int = 50
    stride: int = 1

    def __post_init__(self):
        if not 0 < self.dt <= 0.01:
            raise ValueError("dt must lie in (0, 0.01] s")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if self.integrator not in ("trapezoidal", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


def set_param(params, path: str, value):
    """dataclasses.replace along a dotted path, coercing to the field's type."""
    head, _, rest = path.partition(".")
    names = {f.name for f in dataclasses.fields(params)}
    if head not in names:
        raise StructuralError(f"{type(params).__name__} has no field {head!r}")
    current = getattr(params, head)
    if rest:
        if not dataclasses.is_dataclass(current):
            raise StructuralError(f"{head!r} is not a parameter group")
        return dataclasses.replace(params, **{head: set_param(current, rest, value)})
    if isinstance(current, bool):
        value = bool(float(value)) if not isinstance(value, str) else value.lower() in ("1", "true", "yes", "on")
    elif isinstance(current, float):
        value = float(value)
    elif isinstance(current, str):
        value = str(value)
    return dataclasses.replace(params, **{head: value})


# -- the compiled system -----------------------------------------------------


class _Topology:
    """Reduced network data for one switching state."""

    __slots__ = ("z", "w0", "keep", "pos", "sm_pos", "z_sm_cols", "z_sm_sm", "y_full")

    def __init__(self, system: "DynamicSystem", network: NetworkModel):
        n = len(network.buses)
        idx = network.index
        y = network.y_bus.copy()
        for ld in network.loads:
            y[idx[ld.bus], idx[ld.bus]] += ld.scale * system.load_y0[ld.bus]
        self.y_full = y.copy()
        for dev in system.devices:
            if dev.spec.kind == "sm":
                a, _, _ = dv.sm_norton(dv.SyncMachineState(*([0.0] * 9)), dev.spec.params)
                k = idx[dev.spec.bus]
                y[k, k] += a * system.ratio(dev)
        s = idx[system.slack_bus]
        keep = [k for k in range(n) if k != s]
        yr = y[np.ix_(keep, keep)]
        try:
            z = np.linalg.inv(yr)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular network admittance matrix") from exc
        if not np.all(np.isfinite(z)):
            raise NumericalError("singular network admittance matrix")
        self.z = z
        self.keep = keep
        self.pos = {k: p for p, k in enumerate(keep)}
        self.w0 = -z @ y[keep, s] * system.infinite_bus.phasor
        sm_pos = [self.pos[idx[d.spec.bus]] for d in system.devices if d.spec.kind == "sm"]
        self.sm_pos = sm_pos
        self.z_sm_cols = z[:, sm_pos]
        self.z_sm_sm = z[np.ix_(sm_pos, sm_pos)]


class DynamicSystem:
    """Network + initialized devices. Treat as immutable; ``with_*`` return copies."""

    def __init__(
        self,
        network: NetworkModel,
        devices: Sequence[Device],
        load_y0: Mapping[int, complex],
        infinite_bus: dv.InfiniteBusModel,
        f_nom: float = 50.0,
        _cache: Optional[dict] = None,
    ):
        self.network = network
        self.devices = tuple(devices)
        self.load_y0 = dict(load_y0)
        self.infinite_bus = infinite_bus
        self.f_nom = f_nom
        self.omega_s = dv.omega_base(f_nom)
        self.slack_bus = network.slack.id
        self._cache = {} if _cache is None else _cache
        self.n_states = sum(d.n_states for d in self.devices)
        self._bus_pos = [network.index[d.spec.bus] for d in self.devices]
        self._topo = self._topology()

    # construction helpers

    def ratio(self, dev: Device) -> float:
        return dev.spec.params.s_rated / self.network.s_base

    def _topology(self) -> _Topology:
        key = (self.network, tuple((d.spec.bus, d.spec.params) for d in self.devices if d.spec.kind == "sm"))
        topo = self._cache.get(key)
        if topo is None:
            topo = _Topology(self, self.network)
            self._cache[key] = topo
        return topo

    def _replace(self, **kw) -> "DynamicSystem":
        args = dict(
            network=self.network,
            devices=self.devices,
            load_y0=self.load_y0,
            infinite_bus=self.infinite_bus,
            f_nom=self.f_nom,
            _cache=self._cache,
        )
        args.update(kw)
        return DynamicSystem(**args)

    def with_network(self, network: NetworkModel) -> "DynamicSystem":
        return self._replace(network=network)

    def device(self, name: str) -> Device:
        for d in self.devices:
            if d.name == name:
                return d
        raise StructuralError(f"unknown device {name!r}")

    def with_params(self, name: str, params) -> "DynamicSystem":
        self.device(name)
        devs = [
            dataclasses.replace(d, spec=dataclasses.replace(d.spec, params=params)) if d.name == name else d
            for d in self.devices
        ]
        return self._replace(devices=devs)

    def apply(self, action: Action) -> "DynamicSystem":
        if isinstance(action, ApplyFault):
            return self.with_network(apply_topology_event(self.network, SetFault(action.bus, action.admittance)))
        if isinstance(action, ClearFaultAndTrip):
            net = apply_topology_event(self.network, ClearFault())
            if action.branch:
                net = apply_topology_event(net, TripBranch(action.branch))
            return self.with_network(net)
        if isinstance(action, LoadScale):
            return self.with_network(apply_topology_event(self.network, SetLoadScale(action.bus, action.factor)))
        if isinstance(action, ParamOverride):
            dev = self.device(action.device)
            return self.with_params(action.device, set_param(dev.spec.params, action.field, action.value))
        raise StructuralError(f"unsupported event action {action!r}")

    @property
    def state_labels(self) -> list[str]:
        return [f"{d.name}.{s}" for d in self.devices for s in d.spec.state_names]

    # algebraic solve

    def solve_network(self, x: Sequence[float]) -> np.ndarray:
        """Bus voltages (all buses, declaration order) for state vector ``x``."""
        topo = self._topo
        inj = np.zeros(len(topo.keep), dtype=complex)
        b_sm = []
        for dev, k in zip(self.devices, self._bus_pos):
            xs = x[dev.offset:dev.offset + dev.n_states]
            r = self.ratio(dev)
            if dev.spec.kind == "sm":
                a, c, e = dv.sm_norton(dv.SyncMachineState(*xs), dev.spec.params)
                inj[topo.pos[k]] += r * (a * e + c * e.conjugate())
                b_sm.append(r * c)
            else:
                inj[topo.pos[k]] += r * complex(xs[6], xs[7])
        w = topo.w0 + topo.z @ inj
        if b_sm:
            b = np.asarray(b_sm)
            wm = w[topo.sm_pos]
            if len(b_sm) == 1:
                cc = topo.z_sm_sm[0, 0] * b[0]
                um = (wm[0] - cc * wm[0].conjugate()) / (1.0 - abs(cc) ** 2)
                um = np.array([um])
            else:
                cm = topo.z_sm_sm * b[None, :]
                m = len(b_sm)
                big = np.block([[np.eye(m) + cm.real, cm.imag], [cm.imag, np.eye(m) - cm.real]])
                sol = np.linalg.solve(big, np.concatenate([wm.real, wm.imag]))
                um = sol[:m] + 1j * sol[m:]
            w = w - topo.z_sm_cols @ (b * np.conj(um))
        v = np.empty(len(self.network.buses), dtype=complex)
        v[topo.keep] = w
        v[self.network.index[self.slack_bus]] = self.infinite_bus.phasor
        return v

    def derivatives(self, x: Sequence[float], v: Optional[np.ndarray] = None) -> np.ndarray:
        xl = x.tolist() if isinstance(x, np.ndarray) else list(x)
        if v is None:
            v = self.solve_network(xl)
        out = []
        ws = self.omega_s
        for dev, k in zip(self.devices, self._bus_pos):
            xs = xl[dev.offset:dev.offset + dev.n_states]
            vt = complex(v[k])
            if dev.spec.kind == "sm":
                out.extend(dv.sm_derivatives(dv.SyncMachineState(*xs), vt, dev.spec.params, dev.controls, ws))
            else:
                out.extend(dv.gfm_vsm_derivatives(dv.GfmVsmState(*xs), vt, dev.spec.params, dev.controls, ws))
        return np.array(out)

    def clamp(self, x: np.ndarray) -> np.ndarray:
        """Enforce hard state limits (exciter ceiling) after a step."""
        for dev in self.devices:
            if dev.spec.kind == "sm" and dev.spec.params.model != "classical":
                ex = dev.spec.params.exciter
                k = dev.offset + 4
                if x[k] > ex.efd_max:
                    x[k] = ex.efd_max
                elif x[k] < ex.efd_min:
                    x[k] = ex.efd_min
        return x

    def project(self, x: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Zero the rate of a state held at a limit and pushing outward."""
        for dev in self.devices:
            if dev.spec.kind == "sm" and dev.spec.params.model != "classical":
                ex = dev.spec.params.exciter
                k = dev.offset + 4
                if (x[k] >= ex.efd_max and f[k] > 0) or (x[k] <= ex.efd_min and f[k] < 0):
                    f[k] = 0.0
        return f

    # output channels

    def channel_names(self) -> list[str]:
        names = []
        for dev in self.devices:
            names += [f"{dev.name}.{c}" for c in ("angle", "speed", "P", "Q", "V", "I")]
            if dev.spec.kind == "gfm":
                names.append(f"{dev.name}.limit")
        names += ["GRID.P", "GRID.Q"]
        return names

    def outputs(self, x: Sequence[float], v: np.ndarray) -> list[float]:
        xl = x.tolist() if isinstance(x, np.ndarray) else list(x)
        sb = self.network.s_base
        ref = self.infinite_bus.angle
        out = []
        for dev, k in zip(self.devices, self._bus_pos):
            xs = xl[dev.offset:dev.offset + dev.n_states]
            vt = complex(v[k])
            p = dev.spec.params
            if dev.spec.kind == "sm":
                st = dv.SyncMachineState(*xs)
                i = dv.sm_current(st, vt, p)
                angle, speed = st.delta, st.omega
            else:
                st = dv.GfmVsmState(*xs)
                i = complex(st.i_re, st.i_im)
                angle, speed = st.theta_vsm, st.omega_vsm
            s = vt * i.conjugate() * p.s_rated
            out += [(angle - ref) * DEG, speed, s.real, s.imag, abs(vt), abs(i)]
            if dev.spec.kind == "gfm":
                _, active = dv.csa_limit(dv.gfm_current_reference(st, vt, p), p.i_max)
                out.append(1.0 if active else 0.0)
        s_idx = self.network.index[self.slack_bus]
        y_row = self._topo.y_full[s_idx]
        s_grid = v[s_idx] * np.conj(y_row @ v) * sb
        out += [-s_grid.real, -s_grid.imag]  # power delivered into the infinite bus
        return out


@dataclass(frozen=True)
class SystemSnapshot:
    system: DynamicSystem
    x: np.ndarray
    time: float = 0.0
    pf: Optional[PowerFlowSolution] = field(default=None, compare=False)

    @property
    def network(self) -> NetworkModel:
        return self.system.network

    def derivatives(self, x: Optional[np.ndarray] = None) -> np.ndarray:
        return self.system.derivatives(self.x if x is None else x)

    @property
    def state_labels(self) -> list[str]:
        return self.system.state_labels

    def with_state(self, x: np.ndarray) -> "SystemSnapshot":
        return dataclasses.replace(self, x=np.asarray(x, dtype=float).copy())


def initialize(
    network: NetworkModel,
    devices: Sequence[DeviceSpec],
    pf: PowerFlowSolution,
    infinite_bus: Optional[dv.InfiniteBusModel] = None,
    f_nom: float = 50.0,
    tol: float = 1e-8,
) -> SystemSnapshot:
    """Back-solve every device's states from a converged power flow."""
    if infinite_bus is None:
        slack = network.slack
        infinite_bus = dv.InfiniteBusModel(v_mag=slack.v_setpoint, angle=slack.angle_setpoint)
    buses = [d.bus for d in devices]
    if len(set(buses)) != len(buses):
        raise StructuralError("at most one dynamic device per bus is supported")
    s_base = network.s_base
    load_at = {}
    for ld in network.loads:
        load_at[ld.bus] = load_at.get(ld.bus, 0j) + complex(ld.p, ld.q) / s_base
    load_y0 = {}
    for ld in network.loads:
        vm = abs(pf.voltage(ld.bus))
        load_y0[ld.bus] = load_y0.get(ld.bus, 0j) + complex(ld.p0, -ld.q0) / s_base / vm**2

    built = []
    x0: list[float] = []
    for spec in devices:
        network.bus(spec.bus)
        if spec.bus == network.slack.id:
            raise StructuralError(f"device {spec.name} sits on the infinite bus")
        v = pf.voltage(spec.bus)
        s_dev = (pf.injection(spec.bus) + load_at.get(spec.bus, 0j)) * s_base / spec.params.s_rated
        if spec.kind == "sm":
            xs, ctrl = dv.sm_initialize(v, s_dev, spec.params, spec.name)
        else:
            xs, ctrl = dv.gfm_initialize(v, s_dev, spec.params, spec.name)
        built.append(Device(spec=spec, controls=ctrl, offset=len(x0)))
        x0.extend(xs)
    system = DynamicSystem(network, built, load_y0, infinite_bus, f_nom)
    x = np.array(x0)
    f = system.derivatives(x)
    for dev in system.devices:
        norm = float(np.max(np.abs(f[dev.slice]))) if dev.n_states else 0.0
        if not norm < tol:
            raise InitializationError(
                f"{dev.name}: not at equilibrium after initialization (|dx/dt| = {norm:.2e})",
                device=dev.name,
            )
    return SystemSnapshot(system=system, x=x, time=0.0, pf=pf)


# -- traces ------------------------------------------------------------------


@dataclass(frozen=True)
class Trace:
    times: np.ndarray
    channels: dict  # name -> np.ndarray, declaration order
    stride: int = 1
    truncated_at: Optional[float] = None

    def __post_init__(self):
        n = len(self.times)
        for name, values in self.channels.items():
            if len(values) != n:
                raise StructuralError(f"channel {name} length {len(values)} != {n}")

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError:
            raise StructuralError(f"trace has no channel {name!r}") from None

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    def devices(self) -> list[str]:
        return [n[: -len(".angle")] for n in self.channels if n.endswith(".angle")]

    def to_csv(self, path, decimals: int = 6) -> None:
        write_trace_csv(self, path, decimals)


def resample(trace: Trace, stride: int) -> Trace:
    """Keep every ``stride``-th sample; the last sample is always retained."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if stride == 1:
        return trace
    n = len(trace.times)
    idx = np.arange(0, n, stride)
    if n and idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return Trace(
        times=trace.times[idx],
        channels={k: v[idx] for k, v in trace.channels.items()},
        stride=trace.stride * stride,
        truncated_at=trace.truncated_at,
    )


def write_trace_csv(trace: Trace, path, decimals: int = 6) -> None:
    names = trace.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time"] + names)
        cols = [trace.channels[n] for n in names]
        for k, t in enumerate(trace.times):
            w.writerow([f"{t:.{decimals}f}"] + [f"{c[k]:.10g}" for c in cols])
        if trace.truncated_at is not None:
            w.writerow([f"# truncated at t={trace.truncated_at:.{decimals}f}"])


def read_trace_csv(path) -> Trace:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    header, data = rows[0], np.array(rows[1:], dtype=float)
    if data.size == 0:
        data = np.zeros((0, len(header)))
    return Trace(times=data[:, 0], channels={h: data[:, k] for k, h in enumerate(header) if k})


# -- integration -------------------------------------------------------------


class _Stepper:
    def __init__(self, config: SimConfig):
        self.cfg = config
        self.f_prev = None
        self.h_prev = None

    def reset(self):
        self.f_prev = None

    def trapezoidal(self, sys: DynamicSystem, x, f, h, t):
        cfg = self.cfg
        if self.f_prev is not None and self.h_prev is not None and abs(self.h_prev - h) < 1e-15:
            x_pred = x + h * (1.5 * f - 0.5 * self.f_prev)
        else:
            x_pred = x + h * f
        base = x + 0.5 * h * f
        xk = x_pred
        err_prev = math.inf
        for _ in range(cfg.max_inner_iter):
            fk = sys.derivatives(xk)
            xn = sys.clamp(base + 0.5 * h * fk)
            err = float(np.max(np.abs(xn - xk)))
            xk = xn
            if err <= cfg.network_solve_tol:
                break
            if not math.isfinite(err) or err > 0.9 * err_prev:
                # not contracting (stiff device loops at large dt): Newton instead
                xk, err = self._newton(sys, x_pred, base, h, t)
                break
            err_prev = err
        if not err <= cfg.network_solve_tol:
            if not math.isfinite(err):
                raise NumericalError(f"non-finite state at t={t + h:.6f} s", time=t + h)
            raise ConvergenceError(
                f"step corrector did not converge in {cfg.max_inner_iter} iterations "
                f"at t={t + h:.6f} s (last update {err:.2e})",
                time=t + h,
            )
        self.f_prev, self.h_prev = f, h
        return xk

    def _newton(self, sys: DynamicSystem, xk, base, h, t):
        """Newton iterations on x - base - h/2 f(x) = 0 with a finite-difference Jacobian."""
        n = len(xk)
        err = math.inf
        jac = None
        for _ in range(self.cfg.max_inner_iter):
            fk = sys.derivatives(xk)
            g = xk - base - 0.5 * h * fk
            if jac is None:
                jac = np.eye(n)
                for j in range(n):
                    d = 1e-7 * max(abs(xk[j]), 1.0)
                    xp = xk.copy()
                    xp[j] += d
                    jac[:, j] -= 0.5 * h * (sys.derivatives(xp) - fk) / d
            try:
                xn = sys.clamp(xk - np.linalg.solve(jac, g))
            except np.linalg.LinAlgError as exc:
                raise NumericalError(f"singular step Jacobian at t={t + h:.6f} s", time=t + h) from exc
            err = float(np.max(np.abs(xn - xk)))
            xk = xn
            if err <= self.cfg.network_solve_tol or not math.isfinite(err):
                break
        return xk, err

    def rk4(self, sys: DynamicSystem, x, f, h, t):
        def rate(xs):
            xs = sys.clamp(xs)
            return sys.project(xs, sys.derivatives(xs))

        k1 = sys.project(x, f.copy())
        k2 = rate(x + 0.5 * h * k1)
        k3 = rate(x + 0.5 * h * k2)
        k4 = rate(x + h * k3)
        return sys.clamp(x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


def simulate(snapshot: SystemSnapshot, events: Iterable[Event] = (), config: SimConfig = SimConfig()) -> Trace:
    """Integrate from ``snapshot`` to ``config.t_end``, applying ``events`` at their exact times.

    A numerical failure raises NumericalError with the partial trace attached
    as ``exc.trace``.
    """
    events = sorted(events, key=lambda e: e.time)
    dt = config.dt
    t0 = snapshot.time
    n_steps = int(round((config.t_end - t0) / dt))
    sys = snapshot.system
    x = np.array(snapshot.x, dtype=float)
    stepper = _Stepper(config)
    step = stepper.trapezoidal if config.integrator == "trapezoidal" else stepper.rk4
    names = sys.channel_names()
    rows = []
    times = []
    eps = 1e-9 * dt
    pending = 0

    def fire(t):
        nonlocal sys, pending
        fired = False
        while pending < len(events) and events[pending].time <= t + eps:
            sys = sys.apply(events[pending].action)
            pending += 1
            fired = True
        if fired:
            stepper.reset()
        return fired

    def record(t, x):
        v = sys.solve_network(x.tolist())
        rows.append(sys.outputs(x, v))
        times.append(t)

    def partial():
        data = np.array(rows) if rows else np.zeros((0, len(names)))
        return Trace(
            times=np.array(times),
            channels={n: data[:, k] for k, n in enumerate(names)},
            truncated_at=times[-1] if times else t0,
        )

    t = t0
    try:
        fire(t)
        record(t, x)
        f = sys.derivatives(x)
        for k in range(n_steps):
            t_next = t0 + (k + 1) * dt
            while pending < len(events) and events[pending].time < t_next - eps:
                te = events[pending].time
                if te > t + eps:
                    x = step(sys, x, f, te - t, t)
                    t = te
                fire(t)
                f = sys.derivatives(x)
            x = step(sys, x, f, t_next - t, t)
            t = t_next
            fire(t)
            f = sys.derivatives(x)
            if not np.all(np.isfinite(x)) or not np.all(np.isfinite(f)):
                raise NumericalError(f"non-finite state at t={t:.6f} s", time=t)
            if (k + 1) % config.stride == 0 or k == n_steps - 1:
                record(t, x)
    except NumericalError as exc:
        exc.trace = partial()
        raise

    data = np.array(rows)
    return Trace(
        times=np.array(times),
        channels={n: data[:, j] for j, n in enumerate(names)},
        stride=config.stride,
    )
