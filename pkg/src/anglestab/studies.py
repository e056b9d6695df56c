"""Stability studies: loss-of-synchronism test, CCT search, ringdown fit, event taxonomy."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.signal import hilbert

from .dynsim import Action, Event, SimConfig, SystemSnapshot, Trace, simulate
from .errors import NoBracketError, StructuralError

SMALL = "small"
LARGE = "large"

SM_TECH = "synchronous_machine"
GFM_TECH = "gfm_converter"


# -- loss of synchronism -----------------------------------------------------


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    first_violation_time: Optional[float] = None
    violating_devices: tuple = ()
    disturbance_class: str = LARGE
    device_times: Mapping[str, float] = field(default_factory=dict, compare=False)
    criterion: str = ""

    def __post_init__(self):
        if self.disturbance_class not in (SMALL, LARGE):
            raise ValueError(f"disturbance_class must be {SMALL!r} or {LARGE!r}")
        if not self.stable and (self.first_violation_time is None or not self.violating_devices):
            raise ValueError("an unstable verdict needs a violation time and at least one device")


def _crossing_time(t: np.ndarray, dev: np.ndarray, threshold: float) -> Optional[float]:
    over = np.nonzero(np.abs(dev) > threshold)[0]
    if over.size == 0:
        hit = np.nonzero(np.abs(dev) >= threshold)[0]
        return float(t[hit[0]]) if hit.size else None
    k = int(over[0])
    if k == 0:
        return float(t[0])
    a0, a1 = abs(dev[k - 1]), abs(dev[k])
    if a1 == a0:
        return float(t[k])
    frac = (threshold - a0) / (a1 - a0)
    return float(t[k - 1] + min(max(frac, 0.0), 1.0) * (t[k] - t[k - 1]))


def _slip_time(t: np.ndarray, y: np.ndarray, window: float, min_rate: float) -> Optional[float]:
    """Time at which a run of same-sign slip faster than ``min_rate`` has lasted ``window``."""
    if len(t) < 2:
        return None
    rate = np.diff(y) / np.diff(t)
    sign = np.where(rate > min_rate, 1, np.where(rate < -min_rate, -1, 0))
    start = None
    for k, s in enumerate(sign):
        if s == 0 or (start is not None and s != sign[start]):
            start = k if s != 0 else None
            continue
        if start is None:
            start = k
        if t[k + 1] - t[start] >= window - 1e-12:
            return float(t[start] + window)
    return None


def detect_loss_of_sync(
    trace: Trace,
    angle_threshold: float = 180.0,
    window: float = 2.0,
    t_ref: Optional[float] = None,
    min_slip_rate: float = 5.0,
    devices: Optional[Sequence[str]] = None,
    disturbance_class: str = LARGE,
) -> StabilityVerdict:
    """Angle-excursion and sustained-slip test on every device angle channel (degrees).

    The reference is the angle at ``t_ref`` (trace start by default).
    """
    devices = list(trace.devices() if devices is None else devices)
    if not devices:
        raise StructuralError("trace contains no device angle channels")
    t = np.asarray(trace.times, dtype=float)
    if t_ref is None:
        t_ref = float(t[0]) if len(t) else 0.0
    k0 = int(np.searchsorted(t, t_ref - 1e-12))
    times = {}
    for name in devices:
        y = np.asarray(trace[f"{name}.angle"], dtype=float)
        if k0 >= len(t):
            continue
        tt, yy = t[k0:], y[k0:]
        hits = [c for c in (_crossing_time(tt, yy - yy[0], angle_threshold), _slip_time(tt, yy, window, min_slip_rate)) if c is not None]
        if hits:
            times[name] = min(hits)
    if not times:
        return StabilityVerdict(True, disturbance_class=disturbance_class, criterion="angle")
    return StabilityVerdict(
        False,
        first_violation_time=min(times.values()),
        violating_devices=tuple(d for d in devices if d in times),
        disturbance_class=disturbance_class,
        device_times=times,
        criterion="angle",
    )


def small_disturbance_verdict(
    trace: Trace,
    t_start: float,
    growth_tol: float = 5e-3,
    angle_threshold: float = 180.0,
    window: float = 2.0,
    devices: Optional[Sequence[str]] = None,
) -> StabilityVerdict:
    """Unstable if any device angle loses synchronism or rings with a growing envelope.

    For a growing ringdown the violation time is when the angle deviation
    first exceeds its first-swing amplitude.
    """
    base = detect_loss_of_sync(trace, angle_threshold, window, t_ref=t_start, devices=devices, disturbance_class=SMALL)
    times = dict(base.device_times)
    devices = list(trace.devices() if devices is None else devices)
    t = np.asarray(trace.times, dtype=float)
    m = t >= t_start - 1e-12
    for name in devices:
        if name in times:
            continue
        ch = f"{name}.angle"
        est = estimate_oscillation(trace, ch, t_start)
        if est.frequency is None or not est.growth_rate > growth_tol:
            continue
        tt = t[m]
        y = np.asarray(trace[ch], dtype=float)[m]
        dev = y - np.polyval(np.polyfit(tt, y, 1), tt)
        first = tt <= tt[0] + 1.0 / est.frequency
        swing = float(np.max(np.abs(dev[first])))
        later = np.nonzero((~first) & (np.abs(dev) > swing))[0]
        times[name] = float(tt[later[0]]) if later.size else float(tt[-1])
    if not times:
        return StabilityVerdict(True, disturbance_class=SMALL, criterion="angle+growth")
    return StabilityVerdict(
        False,
        first_violation_time=min(times.values()),
        violating_devices=tuple(d for d in devices if d in times),
        disturbance_class=SMALL,
        device_times=times,
        criterion="angle+growth",
    )


# -- critical clearing time --------------------------------------------------


@dataclass(frozen=True)
class FaultTemplate:
    """A fault applied at ``fault_time`` and cleared ``duration`` later."""

    fault_time: float
    apply: Action
    clear: Action
    extra: tuple = ()

    def events(self, duration: float) -> list[Event]:
        return [Event(self.fault_time, self.apply), Event(self.fault_time + duration, self.clear), *self.extra]


@dataclass(frozen=True)
class CctResult:
    cct: float
    bracket: tuple  # (last stable, first unstable) clearing durations, seconds
    tolerance: float
    evaluations: int  # bisection probes
    simulations: int  # every simulation run, endpoint checks included
    probes: tuple = ()  # (duration, stable) in run order


def _verdict_for(snapshot, template, config, detector) -> Callable[[float], bool]:
    def stable(duration: float) -> bool:
        trace = simulate(snapshot, template.events(duration), config)
        return detector(trace).stable

    return stable


def find_cct(
    snapshot: SystemSnapshot,
    fault: FaultTemplate,
    t_lo: float,
    t_hi: float,
    tol: float = 0.002,
    config: SimConfig = SimConfig(t_end=6.0),
    expand: int = 0,
    detector: Optional[Callable[[Trace], StabilityVerdict]] = None,
) -> CctResult:
    """Bisect the clearing duration between a stable ``t_lo`` and an unstable ``t_hi``.

    Endpoints are simulated first. With ``expand > 0`` a failing endpoint is
    moved outward by the bracket width up to that many times.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not t_hi > t_lo:
        raise NoBracketError(f"degenerate bracket [{t_lo}, {t_hi}]")
    if t_lo <= 0:
        raise ValueError("t_lo must be a positive clearing duration")
    if detector is None:
        detector = lambda tr: detect_loss_of_sync(tr, t_ref=fault.fault_time)  # noqa: E731
    check = _verdict_for(snapshot, fault, config, detector)
    probes = []

    def probe(d):
        s = check(d)
        probes.append((d, s))
        return s

    lo_ok = probe(t_lo)
    hi_ok = probe(t_hi)
    width = t_hi - t_lo
    for _ in range(expand):
        if lo_ok and not hi_ok:
            break
        if not lo_ok:
            t_hi, hi_ok = t_lo, False
            t_lo = t_lo - width
            if t_lo <= 0:
                t_lo = t_hi / 2.0
            lo_ok = probe(t_lo)
        else:
            t_lo, lo_ok = t_hi, True
            t_hi = t_hi + width
            hi_ok = probe(t_hi)
    if not (lo_ok and not hi_ok):
        raise NoBracketError(
            f"clearing at {t_lo:.4f} s is {'stable' if lo_ok else 'unstable'} and at "
            f"{t_hi:.4f} s is {'stable' if hi_ok else 'unstable'}; no stability boundary in between",
            lo_stable=lo_ok,
            hi_stable=hi_ok,
        )
    n_bisect = 0
    while t_hi - t_lo > tol:
        mid = 0.5 * (t_lo + t_hi)
        n_bisect += 1
        if probe(mid):
            t_lo = mid
        else:
            t_hi = mid
    return CctResult(
        cct=0.5 * (t_lo + t_hi),
        bracket=(t_lo, t_hi),
        tolerance=tol,
        evaluations=n_bisect,
        simulations=len(probes),
        probes=tuple(probes),
    )


def equal_area_cct(delta0: float, h: float, pm: float, omega_s: float) -> float:
    """Closed-form CCT for a classical SMIB with zero electrical power during the fault.

    ``delta0`` in radians, ``pm`` in pu of the machine base, ``h`` in seconds.
    The post-fault network is the pre-fault one (Pmax = pm / sin(delta0)).
    """
    d_cr = math.acos((math.pi - 2.0 * delta0) * math.sin(delta0) - math.cos(delta0))
    return math.sqrt(4.0 * h * (d_cr - delta0) / (omega_s * pm))


# -- ringdown ----------------------------------------------------------------


@dataclass(frozen=True)
class OscillationEstimate:
    frequency: Optional[float]  # Hz; None when no oscillation is present
    growth_rate: Optional[float]  # 1/s, comparable to Re(lambda)
    amplitude: float  # envelope at the start of the fitted segment, channel units
    fit_residual: float  # ||y - fit|| / ||y|| on the fitted segment, in [0, 1]

    @property
    def detected(self) -> bool:
        return self.frequency is not None


def _peak_frequency(y: np.ndarray, dt: float, f_min: float) -> Optional[float]:
    n = len(y)
    nfft = 1 << (int(math.ceil(math.log2(n))) + 4)
    spec = np.abs(np.fft.rfft(y * np.hanning(n), nfft))
    freqs = np.fft.rfftfreq(nfft, dt)
    valid = np.nonzero(freqs >= f_min)[0]
    if valid.size < 3:
        return None
    k = int(valid[np.argmax(spec[valid])])
    if k <= 0 or k >= len(spec) - 1 or spec[k] <= 0:
        return float(freqs[k])
    a, b, c = np.log(np.maximum(spec[k - 1:k + 2], 1e-300))
    den = a - 2 * b + c
    shift = 0.5 * (a - c) / den if den != 0 else 0.0
    return float((k + shift) * (freqs[1] - freqs[0]))


def estimate_oscillation(
    trace: Trace,
    channel: str,
    t_start: float,
    fit_fraction: float = 0.8,
    f_min: float = 0.1,
) -> OscillationEstimate:
    """Dominant ringdown frequency and growth rate of ``channel`` after ``t_start``.

    Uses the last ``fit_fraction`` of the post-``t_start`` data, linearly
    detrended: Hann-windowed FFT peak (log-parabolic interpolation) for the
    frequency, least squares on the log of the analytic-signal envelope for
    the growth rate.
    """
    t_all = np.asarray(trace.times, dtype=float)
    y_all = np.asarray(trace[channel], dtype=float)
    m = t_all >= t_start - 1e-12
    t, y = t_all[m], y_all[m]
    flat = OscillationEstimate(None, None, 0.0, 0.0)
    if len(t) < 8:
        return flat
    k = int(round((1.0 - fit_fraction) * len(t)))
    t, y = t[k:], y[k:]
    y = y - np.polyval(np.polyfit(t - t[0], y, 1), t - t[0])
    scale = max(1.0, float(np.max(np.abs(y_all[m]))))
    if float(np.max(np.abs(y))) <= 1e-9 * scale:
        return flat
    dt = float(np.median(np.diff(t)))
    f = _peak_frequency(y, dt, f_min)
    if f is None or f <= 0 or (t[-1] - t[0]) * f < 1.0:
        return flat

    env = np.abs(hilbert(y))
    trim = max(1, int(round(0.5 / f / dt)))  # half a period at each end
    sl = slice(trim, len(y) - trim) if len(y) > 4 * trim else slice(None)
    tt = t[sl] - t[0]
    ok = env[sl] > 0
    if ok.sum() < 2:
        return flat
    g, c0 = np.polyfit(tt[ok], np.log(env[sl][ok]), 1)

    # residual of y ~ e^{g t}(a cos + b sin) + c0 + c1 t with the estimated f and g;
    # the affine terms absorb what the detrend took from a partial cycle
    tau = t - t[0]
    w = 2.0 * math.pi * f
    osc = np.exp(g * tau)[:, None] * np.column_stack([np.cos(w * tau), np.sin(w * tau)])
    basis = np.column_stack([osc, np.ones_like(tau), tau])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    resid = float(np.linalg.norm(y - basis @ coef) / np.linalg.norm(y))
    return OscillationEstimate(
        frequency=f,
        growth_rate=float(g),
        amplitude=float(math.exp(c0)),
        fit_residual=min(max(resid, 0.0), 1.0),
    )


# -- taxonomy ----------------------------------------------------------------

PROPOSED_NONE = "none"
PROPOSED = {SMALL: "angle_stability_small_disturbance", LARGE: "angle_stability_large_disturbance"}
_LEGACY = {
    (SM_TECH, SMALL): "rotor_angle_small",
    (SM_TECH, LARGE): "rotor_angle_large",
    (GFM_TECH, SMALL): "converter_driven_slow",
    (GFM_TECH, LARGE): "converter_driven_slow",
}


@dataclass(frozen=True)
class TaxonomyLabel:
    proposed: str
    legacy: frozenset
    rationale: tuple  # ((device, technology), ...) for the violating devices


def classify_event(verdict: StabilityVerdict, technologies: Mapping[str, str]) -> TaxonomyLabel:
    """Unified angle-stability label next to the per-technology legacy labels."""
    for name, tech in technologies.items():
        if tech not in (SM_TECH, GFM_TECH):
            raise StructuralError(f"device {name}: unknown technology tag {tech!r}")
    if verdict.stable:
        return TaxonomyLabel(PROPOSED_NONE, frozenset(), ())
    rationale = []
    legacy = set()
    for name in verdict.violating_devices:
        if name not in technologies:
            raise StructuralError(f"violating device {name!r} has no technology tag")
        tech = technologies[name]
        rationale.append((name, tech))
        legacy.add(_LEGACY[(tech, verdict.disturbance_class)])
    return TaxonomyLabel(PROPOSED[verdict.disturbance_class], frozenset(legacy), tuple(rationale))


# -- reports -----------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.10g}"
    if isinstance(value, (set, frozenset)):
        return ";".join(sorted(map(str, value)))
    if isinstance(value, (list, tuple)):
        return ";".join(_fmt(v) for v in value)
    return str(value)


def flat_report(study: str, parameters: Mapping[str, object], results: Mapping[str, object]) -> str:
    """``key = value`` lines: study, parameters (``param.*``), then results in given order."""
    lines = [f"study = {study}"]
    lines += [f"param.{k} = {_fmt(v)}" for k, v in parameters.items()]
    lines += [f"{k} = {_fmt(v)}" for k, v in results.items()]
    return "\n".join(lines) + "\n"


def parse_flat_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        if line.strip() and not line.lstrip().startswith("#"):
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def verdict_fields(verdict: StabilityVerdict, label: Optional[TaxonomyLabel] = None) -> dict:
    out = {
        "verdict": "stable" if verdict.stable else "unstable",
        "disturbance_class": verdict.disturbance_class,
        "first_violation_time": verdict.first_violation_time,
        "violating_devices": list(verdict.violating_devices),
    }
    if label is not None:
        out["proposed_label"] = label.proposed
        out["legacy_labels"] = label.legacy
        out["rationale"] = [f"{d}:{t}" for d, t in label.rationale]
    return out
