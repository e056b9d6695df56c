"""Linearization about an equilibrium and modal analysis of the state matrix."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import root

from .errors import InitializationError, LinearizationError, NumericalError


@dataclass(frozen=True)
class LinearModel:
    """dx/dt = a x about ``equilibrium`` (fully reduced: the network is eliminated)."""

    a: np.ndarray
    state_labels: tuple
    equilibrium: Any = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("state matrix must be square")
        if a.shape[0] != len(self.state_labels):
            raise ValueError("one label per state is required")
        if not np.all(np.isfinite(a)):
            raise NumericalError("state matrix has non-finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "state_labels", tuple(self.state_labels))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    def response(self, dx0: Sequence[float], times: Sequence[float]) -> np.ndarray:
        """Free response x(t) = exp(a t) dx0 sampled at uniformly spaced ``times``."""
        times = np.asarray(times, dtype=float)
        out = np.empty((len(times), self.n))
        x = np.asarray(dx0, dtype=float).copy()
        if len(times) == 0:
            return out
        step = None
        prev = times[0]
        for k, t in enumerate(times):
            h = t - prev
            if h > 0:
                if step is None or not math.isclose(h, step[0], rel_tol=1e-9):
                    step = (h, sla.expm(self.a * h))
                x = step[1] @ x
            out[k] = x
            prev = t
        return out


@dataclass(frozen=True)
class Mode:
    eigenvalue: complex
    participation: np.ndarray  # |p_ki| normalised to max 1
    labels: tuple = ()

    @property
    def frequency(self) -> float:
        return abs(self.eigenvalue.imag) / (2.0 * math.pi)

    @property
    def damping_ratio(self) -> float:
        mag = abs(self.eigenvalue)
        return 0.0 if mag == 0.0 else -self.eigenvalue.real / mag

    @property
    def oscillatory(self) -> bool:
        return self.eigenvalue.imag > 0.0

    def top_states(self, k: int = 3) -> list[str]:
        order = np.argsort(-self.participation, kind="stable")[:k]
        return [self.labels[i] if self.labels else str(i) for i in order]

    def device_share(self, device: str) -> float:
        """Largest participation among the states of ``device``."""
        vals = [p for p, lab in zip(self.participation, self.labels) if lab.split(".")[0] == device]
        return max(vals) if vals else 0.0


def _equilibrium_check(snapshot, tol: float) -> None:
    f = np.asarray(snapshot.derivatives(), dtype=float)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    if not norm < tol:
        raise InitializationError(f"operating point is not an equilibrium (|dx/dt| = {norm:.2e})")


def find_equilibrium(snapshot, actions=(), tol: float = 1e-8):
    """Equilibrium of ``snapshot.system`` after applying ``actions``, started from ``snapshot.x``.

    Used to linearize about the operating point a disturbed trajectory settles
    towards (for example after a load step).
    """
    system = snapshot.system
    for action in actions:
        system = system.apply(action)
    x0 = np.asarray(snapshot.x, dtype=float)
    sol = root(system.derivatives, x0, method="hybr", options={"xtol": 1e-13})
    x = system.clamp(np.asarray(sol.x, dtype=float))
    res = float(np.max(np.abs(system.derivatives(x))))
    if not res < tol:
        raise NumericalError(f"no equilibrium found after the disturbance (|dx/dt| = {res:.2e})")
    return type(snapshot)(system=system, x=x, time=snapshot.time, pf=snapshot.pf)


def linearize(snapshot, h: float = 1e-6, equilibrium_tol: Optional[float] = 1e-8) -> LinearModel:
    """Central-difference state matrix of ``snapshot.derivatives`` around ``snapshot.x``.

    Every perturbed evaluation re-solves the algebraic network, so the result is
    the fully reduced matrix. Set ``equilibrium_tol=None`` to skip the check.
    """
    if h <= 0:
        raise ValueError("perturbation h must be positive")
    if equilibrium_tol is not None:
        _equilibrium_check(snapshot, equilibrium_tol)
    x0 = np.asarray(snapshot.x, dtype=float)
    labels = list(snapshot.state_labels)
    n = len(x0)
    a = np.empty((n, n))
    for j in range(n):
        d = h * max(abs(x0[j]), 1.0)
        xp = x0.copy()
        xm = x0.copy()
        xp[j] += d
        xm[j] -= d
        try:
            fp = np.asarray(snapshot.derivatives(xp), dtype=float)
            fm = np.asarray(snapshot.derivatives(xm), dtype=float)
        except NumericalError as exc:
            raise LinearizationError(f"network solve failed perturbing {labels[j]}: {exc}", state=labels[j]) from exc
        col = (fp - fm) / (2.0 * d)
        if not np.all(np.isfinite(col)):
            raise LinearizationError(f"non-finite derivative perturbing {labels[j]}", state=labels[j])
        a[:, j] = col
    return LinearModel(a=a, state_labels=tuple(labels), equilibrium=snapshot)


def participation_matrix(model: LinearModel):
    """Eigenvalues and signed participation factors p[k, i] = phi_ki psi_ik (columns sum to 1)."""
    try:
        lam, vl, vr = sla.eig(model.a, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    # vl columns satisfy vl^H a = lam vl^H; the left row vector is conj(vl)
    psi = vl.conj()
    scale = np.sum(psi * vr, axis=0)
    bad = np.abs(scale) < 1e-14
    if np.any(bad):
        raise NumericalError("defective eigenvector set; participation undefined")
    return lam, vr * psi / scale[None, :]


def eigenmodes(model: LinearModel) -> list[Mode]:
    """One mode per real eigenvalue or conjugate pair, least damped first."""
    lam, p = participation_matrix(model)
    modes = []
    for i, ev in enumerate(lam):
        tol = 1e-9 * max(1.0, abs(ev))
        if ev.imag < -tol:
            continue  # its partner with positive imaginary part is reported
        ev = complex(ev.real, 0.0) if abs(ev.imag) <= tol else complex(ev)
        mag = np.abs(p[:, i])
        top = mag.max()
        modes.append(Mode(eigenvalue=ev, participation=mag / top if top > 0 else mag, labels=model.state_labels))
    modes.sort(key=lambda m: (m.damping_ratio, -m.frequency))
    return modes


def least_damped(modes: Sequence[Mode], oscillatory: bool = True) -> Optional[Mode]:
    pool = [m for m in modes if m.oscillatory] if oscillatory else list(modes)
    return min(pool, key=lambda m: m.damping_ratio) if pool else None


def write_modes_csv(modes: Sequence[Mode], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode_id", "re", "im", "freq_hz", "damping_ratio", "top3_participating_states"])
        for k, m in enumerate(modes, 1):
            w.writerow([
                k,
                f"{m.eigenvalue.real:.10g}",
                f"{m.eigenvalue.imag:.10g}",
                f"{m.frequency:.10g}",
                f"{m.damping_ratio:.10g}",
                ";".join(m.top_states(3)),
            ])


@dataclass(frozen=True)
class ConsistencyReport:
    conclusive: bool
    freq_error: Optional[float] = None
    growth_error: Optional[float] = None
    model_frequency: Optional[float] = None
    model_growth: Optional[float] = None
    estimate: Any = None
    reason: str = ""


def mode_time_consistency(model: LinearModel, trace, channel: str, t_start: Optional[float] = None) -> ConsistencyReport:
    """Compare the least-damped oscillatory mode with a ringdown fit of ``channel``.

    Errors are relative to the model values. No mode or no detectable
    oscillation gives an inconclusive report.
    """
    from .studies import estimate_oscillation

    mode = least_damped(eigenmodes(model))
    if mode is None:
        return ConsistencyReport(False, reason="model has no oscillatory mode")
    if t_start is None:
        t_start = float(trace.times[0])
    est = estimate_oscillation(trace, channel, t_start)
    if est.frequency is None:
        return ConsistencyReport(
            False, model_frequency=mode.frequency, model_growth=mode.eigenvalue.real, estimate=est,
            reason="no oscillation detected in trace",
        )
    g = mode.eigenvalue.real
    return ConsistencyReport(
        True,
        freq_error=abs(est.frequency - mode.frequency) / mode.frequency,
        growth_error=abs(est.growth_rate - g) / abs(g) if g != 0 else math.inf,
        model_frequency=mode.frequency,
        model_growth=g,
        estimate=est,
    )
