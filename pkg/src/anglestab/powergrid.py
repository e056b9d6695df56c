"""Static network model: admittance assembly, topology events and Newton power flow.

All impedances are per unit on the system base (``NetworkModel.s_base``).
Network values are immutable; every topology event returns a new model.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import DivergedError, NumericalError, StructuralError

BUS_KINDS = ("slack", "pv", "pq")


@dataclass(frozen=True)
class BusSpec:
    id: int
    kind: str = "pq"
    base_kv: float = 400.0
    v_setpoint: float = 1.0
    angle_setpoint: float = 0.0  # radians, slack only

    def __post_init__(self):
        if self.kind not in BUS_KINDS:
            raise StructuralError(f"bus {self.id}: unknown kind {self.kind!r}")
        if self.base_kv <= 0:
            raise StructuralError(f"bus {self.id}: base_kv must be positive")


@dataclass(frozen=True)
class BranchSpec:
    id: str
    from_bus: int
    to_bus: int
    r: float = 0.0
    x: float = 0.1
    b_shunt: float = 0.0
    tap: float = 1.0
    status: str = "in_service"

    def __post_init__(self):
        if self.x == 0:
            raise StructuralError(f"branch {self.id}: x must be non-zero")
        if self.tap <= 0:
            raise StructuralError(f"branch {self.id}: tap must be positive")
        if self.from_bus == self.to_bus:
            raise StructuralError(f"branch {self.id}: from and to bus are equal")
        if self.status not in ("in_service", "out_of_service"):
            raise StructuralError(f"branch {self.id}: unknown status {self.status!r}")

    @property
    def in_service(self) -> bool:
        return self.status == "in_service"


@dataclass(frozen=True)
class LoadSpec:
    bus: int
    p0: float  # MW
    q0: float  # MVAr
    scale: float = 1.0

    def __post_init__(self):
        if self.scale < 0:
            raise StructuralError(f"load at bus {self.bus}: negative scale")

    @property
    def p(self) -> float:
        return self.p0 * self.scale

    @property
    def q(self) -> float:
        return self.q0 * self.scale


@dataclass(frozen=True)
class NetworkModel:
    buses: tuple[BusSpec, ...]
    branches: tuple[BranchSpec, ...] = ()
    loads: tuple[LoadSpec, ...] = ()
    s_base: float = 100.0
    fault_shunt: Optional[tuple[int, complex]] = None

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "loads", tuple(self.loads))
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            raise StructuralError("duplicate bus ids")
        branch_ids = [br.id for br in self.branches]
        if len(set(branch_ids)) != len(branch_ids):
            raise StructuralError("duplicate branch ids")

    @cached_property
    def index(self) -> dict[int, int]:
        """Bus id -> dense matrix position (declaration order)."""
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def slack(self) -> BusSpec:
        slacks = [b for b in self.buses if b.kind == "slack"]
        if len(slacks) != 1:
            raise StructuralError(f"expected exactly one slack bus, found {len(slacks)}")
        return slacks[0]

    def bus(self, bus_id: int) -> BusSpec:
        try:
            return self.buses[self.index[bus_id]]
        except KeyError:
            raise StructuralError(f"unknown bus {bus_id}") from None

    def branch(self, branch_id: str) -> BranchSpec:
        for br in self.branches:
            if br.id == branch_id:
                return br
        raise StructuralError(f"unknown branch {branch_id!r}")

    @cached_property
    def y_bus(self) -> np.ndarray:
        return assemble_admittance(self)


def _stamp(y: np.ndarray, i: int, j: int, br: BranchSpec) -> None:
    ys = 1.0 / complex(br.r, br.x)
    half_b = 0.5j * br.b_shunt
    y[i, i] += (ys + half_b) / br.tap**2
    y[j, j] += ys + half_b
    y[i, j] -= ys / br.tap
    y[j, i] -= ys / br.tap


def assemble_admittance(network: NetworkModel) -> np.ndarray:
    """Pi-model bus admittance matrix; loads are not included."""
    n = len(network.buses)
    y = np.zeros((n, n), dtype=complex)
    idx = network.index
    for br in network.branches:
        if br.from_bus not in idx or br.to_bus not in idx:
            raise StructuralError(
                f"branch {br.id} references unknown bus ({br.from_bus}, {br.to_bus})"
            )
        if br.in_service:
            _stamp(y, idx[br.from_bus], idx[br.to_bus], br)
    if network.fault_shunt is not None:
        bus, y_f = network.fault_shunt
        if bus not in idx:
            raise StructuralError(f"fault at unknown bus {bus}")
        y[idx[bus], idx[bus]] += y_f
    return y


# -- topology events ---------------------------------------------------------


@dataclass(frozen=True)
class SetFault:
    bus: int
    admittance: complex = complex(1e4, -1e4)


@dataclass(frozen=True)
class ClearFault:
    pass


@dataclass(frozen=True)
class TripBranch:
    branch_id: str


@dataclass(frozen=True)
class SetLoadScale:
    bus: int
    scale: float


TopologyEvent = Union[SetFault, ClearFault, TripBranch, SetLoadScale]


def apply_topology_event(network: NetworkModel, event: TopologyEvent) -> NetworkModel:
    """Return a new network with ``event`` applied; ``network`` is left untouched."""
    if isinstance(event, SetFault):
        network.bus(event.bus)
        return dataclasses.replace(network, fault_shunt=(event.bus, complex(event.admittance)))
    if isinstance(event, ClearFault):
        return dataclasses.replace(network, fault_shunt=None)
    if isinstance(event, TripBranch):
        network.branch(event.branch_id)
        branches = tuple(
            dataclasses.replace(br, status="out_of_service") if br.id == event.branch_id else br
            for br in network.branches
        )
        return dataclasses.replace(network, branches=branches)
    if isinstance(event, SetLoadScale):
        if not any(ld.bus == event.bus for ld in network.loads):
            raise StructuralError(f"no load at bus {event.bus}")
        loads = tuple(
            dataclasses.replace(ld, scale=event.scale) if ld.bus == event.bus else ld
            for ld in network.loads
        )
        return dataclasses.replace(network, loads=loads)
    raise StructuralError(f"unsupported topology event {event!r}")


# -- power flow --------------------------------------------------------------


@dataclass(frozen=True)
class Injection:
    """Generation at a bus: P for pv buses, P and Q for pq buses (MW, MVAr)."""

    p_mw: float = 0.0
    q_mvar: float = 0.0


@dataclass(frozen=True)
class PowerFlowSolution:
    bus_ids: tuple[int, ...]
    v: np.ndarray  # complex per-unit voltage per bus
    s_injected: np.ndarray  # complex per-unit net injection per bus (system base)
    iterations: int
    max_mismatch: float
    s_base: float = 100.0
    extra: dict = field(default_factory=dict, compare=False)

    def voltage(self, bus_id: int) -> complex:
        return complex(self.v[self.bus_ids.index(bus_id)])

    def injection(self, bus_id: int) -> complex:
        return complex(self.s_injected[self.bus_ids.index(bus_id)])


def net_specified_power(
    network: NetworkModel, injections: Optional[Mapping[int, Injection]] = None
) -> np.ndarray:
    """Specified net complex injection per bus, per unit (generation minus load)."""
    s = np.zeros(len(network.buses), dtype=complex)
    idx = network.index
    for bus_id, inj in (injections or {}).items():
        if bus_id not in idx:
            raise StructuralError(f"injection at unknown bus {bus_id}")
        s[idx[bus_id]] += complex(inj.p_mw, inj.q_mvar) / network.s_base
    for ld in network.loads:
        if ld.bus not in idx:
            raise StructuralError(f"load at unknown bus {ld.bus}")
        s[idx[ld.bus]] -= complex(ld.p, ld.q) / network.s_base
    return s


def _check_connected(network: NetworkModel, y: np.ndarray) -> None:
    n = len(network.buses)
    seen = {network.index[network.slack.id]}
    frontier = list(seen)
    while frontier:
        k = frontier.pop()
        for j in np.nonzero(y[k])[0]:
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    if len(seen) != n:
        missing = [network.buses[k].id for k in range(n) if k not in seen]
        raise StructuralError(f"buses {missing} are not connected to the slack bus")


def solve_power_flow(
    network: NetworkModel,
    injections: Optional[Mapping[int, Injection]] = None,
    tol: float = 1e-10,
    max_iter: int = 30,
) -> PowerFlowSolution:
    """Newton-Raphson power flow in polar coordinates.

    pv buses hold |V| at ``v_setpoint`` and take P from ``injections``; pq
    buses take P and Q. Loads draw ``p0*scale``/``q0*scale`` as constant power.
    """
    y = network.y_bus
    _check_connected(network, y)
    slack = network.index[network.slack.id]
    kinds = [b.kind for b in network.buses]
    pv = [k for k, kind in enumerate(kinds) if kind == "pv"]
    pq = [k for k, kind in enumerate(kinds) if kind == "pq"]
    pvpq = pv + pq
    s_spec = net_specified_power(network, injections)

    vm = np.full(len(kinds), network.slack.v_setpoint)  # flat start at the slack magnitude
    va = np.full(len(kinds), network.slack.angle_setpoint)
    for k, b in enumerate(network.buses):
        if b.kind in ("slack", "pv"):
            vm[k] = b.v_setpoint
    v = vm * np.exp(1j * va)

    def mismatch(v):
        s_calc = v * np.conj(y @ v)
        ds = s_calc - s_spec
        return np.concatenate([ds[pvpq].real, ds[pq].imag])

    f = mismatch(v)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise DivergedError(
                f"power flow did not converge in {max_iter} iterations "
                f"(max mismatch {norm:.3e} pu)",
                mismatch=norm,
            )
        i_bus = y @ v
        vnorm = v / np.abs(v)
        ds_dvm = np.diag(v) @ np.conj(y @ np.diag(vnorm)) + np.diag(np.conj(i_bus)) @ np.diag(vnorm)
        ds_dva = 1j * np.diag(v) @ np.conj(np.diag(i_bus) - y @ np.diag(v))
        jac = np.block(
            [
                [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
                [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
            ]
        )
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"singular power-flow Jacobian at iteration {it}") from exc
        npv = len(pvpq)
        va[pvpq] += dx[:npv]
        vm[pq] += dx[npv:]
        v = vm * np.exp(1j * va)
        f = mismatch(v)
        norm = float(np.max(np.abs(f)))
        it += 1
        if not np.isfinite(norm):
            raise DivergedError("power flow produced non-finite voltages", mismatch=norm)

    v[slack] = network.slack.v_setpoint * np.exp(1j * network.slack.angle_setpoint)
    s_inj = v * np.conj(y @ v)
    return PowerFlowSolution(
        bus_ids=tuple(network.bus_ids),
        v=v,
        s_injected=s_inj,
        iterations=it,
        max_mismatch=norm,
        s_base=network.s_base,
    )


def branch_flow(network: NetworkModel, sol: PowerFlowSolution, branch_id: str) -> complex:
    """Complex power (per unit) leaving the from-end of a branch."""
    br = network.branch(branch_id)
    if not br.in_service:
        return 0j
    vf = sol.voltage(br.from_bus)
    vt = sol.voltage(br.to_bus)
    ys = 1.0 / complex(br.r, br.x)
    i_f = (ys + 0.5j * br.b_shunt) / br.tap**2 * vf - ys / br.tap * vt
    return vf * np.conj(i_f)


def reorder(network: NetworkModel, order: Sequence[int]) -> NetworkModel:
    """Same network with buses declared in ``order`` (by bus id)."""
    by_id = {b.id: b for b in network.buses}
    return dataclasses.replace(network, buses=tuple(by_id[i] for i in order))
