"""RMS dynamic models of the synchronous machine, the grid-forming VSM converter
and the infinite bus.

Device quantities are per unit on the device's own MVA rating. The network
side works on the system base; ``base_ratio = s_rated / s_base`` converts
currents and admittances at the boundary (voltages share the same base).

State vectors are plain float sequences; the ``*State`` named tuples give the
positional layout a name.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .errors import InitializationError

TWO_PI = 2.0 * math.pi


def omega_base(f_nom: float = 50.0) -> float:
    return TWO_PI * f_nom


# -- synchronous machine -----------------------------------------------------


@dataclass(frozen=True)
class ExciterParams:
    ka: float = 200.0
    ta: float = 0.01
    efd_min: float = -5.0
    efd_max: float = 6.0

    def __post_init__(self):
        if self.ta <= 0:
            raise ValueError("exciter ta must be positive")
        if not self.efd_min < self.efd_max:
            raise ValueError("exciter efd_min must be below efd_max")


@dataclass(frozen=True)
class PssParams:
    enabled: bool = True
    ks: float = 20.0
    tw: float = 10.0
    t1: float = 0.05
    t2: float = 0.02
    t3: float = 0.05
    t4: float = 0.02
    vs_max: float = 0.1
    vs_min: float = -0.1

    def __post_init__(self):
        if self.tw <= 0 or self.t2 <= 0 or self.t4 <= 0:
            raise ValueError("pss time constants must be positive")


@dataclass(frozen=True)
class GovernorParams:
    enabled: bool = False
    r: float = 0.05
    tg: float = 0.5

    def __post_init__(self):
        if self.tg <= 0:
            raise ValueError("governor tg must be positive")


@dataclass(frozen=True)
class SyncMachineParams:
    s_rated: float = 900.0
    h: float = 3.5
    d: float = 0.0
    xd: float = 1.8
    xq: float = 1.7
    xdp: float = 0.3
    xqp: float = 0.55
    td0p: float = 8.0
    tq0p: float = 0.4
    ra: float = 0.0
    model: str = "two_axis"  # or "classical": constant EMF behind xdp
    exciter: ExciterParams = field(default_factory=ExciterParams)
    pss: PssParams = field(default_factory=PssParams)
    governor: GovernorParams = field(default_factory=GovernorParams)

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("machine h must be positive")
        if not (self.xd >= self.xdp > 0 and self.xq >= self.xqp > 0):
            raise ValueError("machine reactances must satisfy xd >= xdp > 0, xq >= xqp > 0")
        if self.td0p <= 0 or self.tq0p <= 0:
            raise ValueError("machine open-circuit time constants must be positive")
        if self.model not in ("two_axis", "classical"):
            raise ValueError(f"unknown machine model {self.model!r}")

    @property
    def x_q_transient(self) -> float:
        # classical model has no transient saliency
        return self.xdp if self.model == "classical" else self.xqp


class SyncMachineState(NamedTuple):
    delta: float  # rad, q-axis angle in the system frame
    omega: float  # pu speed deviation
    eqp: float
    edp: float
    efd: float
    pss_w: float  # washout state
    pss_l1: float  # lead-lag states
    pss_l2: float
    pm: float  # mechanical power, governor output


@dataclass(frozen=True)
class SyncMachineControls:
    v_ref: float
    p_ref: float


def _park(v: complex, delta: float) -> tuple[float, float]:
    vdq = v * cmath.exp(-1j * (delta - 0.5 * math.pi))
    return vdq.real, vdq.imag


def sm_stator_currents(x: SyncMachineState, v_term: complex, p: SyncMachineParams):
    """Stator currents (id, iq) and voltages (vd, vq) in the rotor frame."""
    vd, vq = _park(v_term, x.delta)
    xqp = p.x_q_transient
    dd = x.edp - vd
    dq = x.eqp - vq
    det = p.ra * p.ra + p.xdp * xqp
    i_d = (p.ra * dd + xqp * dq) / det
    i_q = (p.ra * dq - p.xdp * dd) / det
    return i_d, i_q, vd, vq


def pss_output(x: SyncMachineState, p: PssParams) -> float:
    if not p.enabled:
        return 0.0
    y_w = p.ks * x.omega - x.pss_w
    y1 = x.pss_l1 + p.t1 / p.t2 * (y_w - x.pss_l1)
    y2 = x.pss_l2 + p.t3 / p.t4 * (y1 - x.pss_l2)
    return min(max(y2, p.vs_min), p.vs_max)


def sm_derivatives(
    x: SyncMachineState,
    v_term: complex,
    p: SyncMachineParams,
    ctrl: SyncMachineControls,
    omega_s: float = TWO_PI * 50.0,
) -> list[float]:
    """Two-axis machine with static exciter, PSS (washout + 2 lead-lags) and governor."""
    i_d, i_q, vd, vq = sm_stator_currents(x, v_term, p)
    pe = vd * i_d + vq * i_q + p.ra * (i_d * i_d + i_q * i_q)

    d_delta = omega_s * x.omega
    d_omega = (x.pm - pe - p.d * x.omega) / (2.0 * p.h)

    if p.model == "classical":
        d_eqp = d_edp = d_efd = 0.0
    else:
        d_eqp = (x.efd - x.eqp - (p.xd - p.xdp) * i_d) / p.td0p
        d_edp = (-x.edp + (p.xq - p.xqp) * i_q) / p.tq0p
        ex = p.exciter
        vpss = pss_output(x, p.pss)
        # ceiling/floor are hard state limits applied by the integrator
        d_efd = (ex.ka * (ctrl.v_ref - abs(v_term) + vpss) - x.efd) / ex.ta

    ps = p.pss
    if ps.enabled:
        u = ps.ks * x.omega
        y_w = u - x.pss_w
        d_w = (u - x.pss_w) / ps.tw
        d_l1 = (y_w - x.pss_l1) / ps.t2
        y1 = x.pss_l1 + ps.t1 / ps.t2 * (y_w - x.pss_l1)
        d_l2 = (y1 - x.pss_l2) / ps.t4
    else:
        # switched-off stabilizer: states relax to zero, decoupled from the rotor
        d_w, d_l1, d_l2 = -x.pss_w / ps.tw, -x.pss_l1 / ps.t2, -x.pss_l2 / ps.t4

    gov = p.governor
    droop = x.omega / gov.r if gov.enabled else 0.0
    d_pm = (ctrl.p_ref - droop - x.pm) / gov.tg

    return [d_delta, d_omega, d_eqp, d_edp, d_efd, d_w, d_l1, d_l2, d_pm]


def sm_norton(x: SyncMachineState, p: SyncMachineParams):
    """Real-linear stator relation I = a (E - V) + c conj(E - V), machine base.

    Returns (a, c, e) with ``e`` the transient EMF phasor in the system frame.
    ``a`` does not depend on the state; ``c`` carries the rotor position
    through ``exp(2j*delta)`` and vanishes without transient saliency.
    """
    xqp = p.x_q_transient
    det = p.ra * p.ra + p.xdp * xqp
    a = complex(p.ra, -0.5 * (p.xdp + xqp)) / det
    rot = cmath.exp(1j * (x.delta - 0.5 * math.pi))
    c = -0.5j * (p.xdp - xqp) / det * rot * rot
    e = complex(x.edp, x.eqp) * rot
    return a, c, e


def sm_current(x: SyncMachineState, v_term: complex, p: SyncMachineParams) -> complex:
    """Stator current phasor leaving the machine (machine base, system frame)."""
    a, c, e = sm_norton(x, p)
    de = e - v_term
    return a * de + c * de.conjugate()


def sm_initialize(
    v: complex, s: complex, p: SyncMachineParams, name: str = "machine"
) -> tuple[SyncMachineState, SyncMachineControls]:
    """Back-solve machine states from terminal voltage and injection (machine base)."""
    if abs(s) > 1.0 + 1e-9:
        raise InitializationError(
            f"{name}: dispatch {abs(s) * p.s_rated:.1f} MVA exceeds rating {p.s_rated:.1f} MVA",
            device=name,
        )
    i = (s / v).conjugate()
    xq_eff = p.xdp if p.model == "classical" else p.xq
    e_q = v + complex(p.ra, xq_eff) * i
    delta = cmath.phase(e_q)
    rot = cmath.exp(-1j * (delta - 0.5 * math.pi))
    idq = i * rot
    vdq = v * rot
    i_d, i_q = idq.real, idq.imag
    vd, vq = vdq.real, vdq.imag
    xqp = p.x_q_transient
    edp = vd + p.ra * i_d - xqp * i_q
    eqp = vq + p.ra * i_q + p.xdp * i_d
    if p.model == "classical":
        efd = eqp
    else:
        efd = eqp + (p.xd - p.xdp) * i_d
        ex = p.exciter
        if not ex.efd_min <= efd <= ex.efd_max:
            raise InitializationError(
                f"{name}: field voltage {efd:.3f} pu outside exciter limits", device=name
            )
    pe = vd * i_d + vq * i_q + p.ra * (i_d * i_d + i_q * i_q)
    v_ref = abs(v) + efd / p.exciter.ka
    x = SyncMachineState(delta, 0.0, eqp, edp, efd, 0.0, 0.0, 0.0, pe)
    return x, SyncMachineControls(v_ref=v_ref, p_ref=pe)


# -- grid-forming VSM converter ----------------------------------------------


@dataclass(frozen=True)
class GfmVsmParams:
    s_rated: float = 900.0
    ta_vsm: float = 10.0  # 2H equivalent, s
    d_gfm: float = 193.0  # pu power / pu speed, acts on (w_vsm - w_pll)
    pll_kp: float = 50.0  # rad/s per pu q-voltage
    pll_ki: float = 1000.0  # rad/s^2 per pu q-voltage
    pll_tf: float = 0.05  # frequency-estimate filter, s
    i_max: float = 1.2
    x_c: float = 0.15  # coupling reactance behind which the internal EMF sits
    t_v: float = 0.02  # voltage-loop surrogate, s
    k_v: float = 0.0  # proportional terminal-voltage correction of the EMF
    t_i: float = 0.01  # current-loop surrogate, s

    def __post_init__(self):
        if self.ta_vsm <= 0:
            raise ValueError("gfm ta_vsm must be positive")
        if self.d_gfm < 0:
            raise ValueError("gfm d_gfm must be non-negative")
        if self.i_max <= 0:
            raise ValueError("gfm i_max must be positive")
        if self.x_c <= 0 or self.t_v <= 0 or self.t_i <= 0 or self.pll_tf <= 0:
            raise ValueError("gfm reactance and time constants must be positive")


class GfmVsmState(NamedTuple):
    theta_vsm: float
    omega_vsm: float
    pll_theta: float
    pll_integrator: float  # rad/s
    pll_omega: float  # filtered pu frequency estimate
    e_mag: float  # internal EMF magnitude
    i_re: float  # output current (machine base, system frame)
    i_im: float


@dataclass(frozen=True)
class GfmVsmControls:
    p_ref: float
    v_ref: float
    e_set: float


def csa_limit(i_ref: complex, i_max: float) -> tuple[complex, bool]:
    """Current-saturation algorithm: scale |i_ref| down to i_max, keep its angle."""
    mag = abs(i_ref)
    if mag <= i_max:
        return i_ref, False
    return i_ref * (i_max / mag), True


def pll_derivatives(
    pll_theta: float,
    pll_integrator: float,
    pll_omega: float,
    v_term: complex,
    p: GfmVsmParams,
    omega_s: float = TWO_PI * 50.0,
) -> tuple[float, float, float]:
    """SRF-PLL: the q-axis voltage drives a PI whose output is the frequency deviation."""
    # q-error is proportional to |V|, so it vanishes (state hold) at zero voltage
    v_q = (v_term * cmath.exp(-1j * pll_theta)).imag
    w_raw = p.pll_kp * v_q + pll_integrator
    return w_raw, p.pll_ki * v_q, (w_raw / omega_s - pll_omega) / p.pll_tf


def vsm_acceleration(omega_vsm: float, pll_omega: float, p_meas: float, p_ref: float, p: GfmVsmParams) -> float:
    return (p_ref - p_meas - p.d_gfm * (omega_vsm - pll_omega)) / p.ta_vsm


def gfm_current_reference(x: GfmVsmState, v_term: complex, p: GfmVsmParams) -> complex:
    e = x.e_mag * cmath.exp(1j * x.theta_vsm)
    return (e - v_term) / complex(0.0, p.x_c)


def gfm_vsm_derivatives(
    x: GfmVsmState,
    v_term: complex,
    p: GfmVsmParams,
    ctrl: GfmVsmControls,
    omega_s: float = TWO_PI * 50.0,
) -> list[float]:
    i = complex(x.i_re, x.i_im)
    p_meas = (v_term * i.conjugate()).real
    d_theta = omega_s * x.omega_vsm
    d_omega = vsm_acceleration(x.omega_vsm, x.pll_omega, p_meas, ctrl.p_ref, p)
    d_pth, d_pint, d_pom = pll_derivatives(x.pll_theta, x.pll_integrator, x.pll_omega, v_term, p, omega_s)
    d_e = (ctrl.e_set + p.k_v * (ctrl.v_ref - abs(v_term)) - x.e_mag) / p.t_v
    i_lim, _ = csa_limit(gfm_current_reference(x, v_term, p), p.i_max)
    di = (i_lim - i) / p.t_i
    return [d_theta, d_omega, d_pth, d_pint, d_pom, d_e, di.real, di.imag]


def gfm_initialize(
    v: complex, s: complex, p: GfmVsmParams, name: str = "gfm"
) -> tuple[GfmVsmState, GfmVsmControls]:
    if abs(s) > 1.0 + 1e-9:
        raise InitializationError(
            f"{name}: dispatch {abs(s) * p.s_rated:.1f} MVA exceeds rating {p.s_rated:.1f} MVA",
            device=name,
        )
    i = (s / v).conjugate()
    if abs(i) > p.i_max:
        raise InitializationError(
            f"{name}: initial current {abs(i):.3f} pu exceeds i_max {p.i_max:.3f} pu", device=name
        )
    e = v + complex(0.0, p.x_c) * i
    x = GfmVsmState(
        theta_vsm=cmath.phase(e),
        omega_vsm=0.0,
        pll_theta=cmath.phase(v),
        pll_integrator=0.0,
        pll_omega=0.0,
        e_mag=abs(e),
        i_re=i.real,
        i_im=i.imag,
    )
    return x, GfmVsmControls(p_ref=(v * i.conjugate()).real, v_ref=abs(v), e_set=abs(e))


def device_injection_gfm(x: GfmVsmState, p: GfmVsmParams, s_base: float) -> complex:
    """Converter output current on the system base."""
    return complex(x.i_re, x.i_im) * (p.s_rated / s_base)


def device_injection_sm(x: SyncMachineState, v_term: complex, p: SyncMachineParams, s_base: float) -> complex:
    return sm_current(x, v_term, p) * (p.s_rated / s_base)


# -- infinite bus --------------------------------------------------------------


@dataclass(frozen=True)
class InfiniteBusModel:
    v_mag: float = 1.0
    angle: float = 0.0
    frequency: float = 1.0

    @property
    def phasor(self) -> complex:
        return cmath.rect(self.v_mag, self.angle)


SM_STATES = SyncMachineState._fields
GFM_STATES = GfmVsmState._fields
