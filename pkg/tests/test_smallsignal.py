import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hs

from anglestab import smallsignal as ss
from anglestab.dynsim import LoadScale, SimConfig, Trace, simulate
from anglestab.errors import InitializationError, LinearizationError, NumericalError

from conftest import snapshot
from oracles import second_order_eigs

OMEGA_S = 2 * math.pi * 50


class VsmToy:
    """Second-order VSM against a stiff grid: theta' = ws w, Ta w' = P0 - Pmax sin(theta) - D w."""

    state_labels = ("toy.theta", "toy.omega")

    def __init__(self, ta=10.0, d=20.0, p0=0.6, p_max=1.5, fail_below=None):
        self.ta, self.d, self.p0, self.p_max = ta, d, p0, p_max
        self.fail_below = fail_below
        self.x = np.array([math.asin(p0 / p_max), 0.0])

    def derivatives(self, x=None):
        th, w = self.x if x is None else x
        if self.fail_below is not None and th < self.fail_below:
            raise NumericalError("network solve failed")
        return np.array([OMEGA_S * w, (self.p0 - self.p_max * math.sin(th) - self.d * w) / self.ta])

    @property
    def k(self):
        return self.p_max * math.cos(self.x[0])


def test_recovers_analytic_block():
    toy = VsmToy()
    a = ss.linearize(toy).a
    ref = np.array([[0.0, OMEGA_S], [-toy.k / toy.ta, -toy.d / toy.ta]])
    np.testing.assert_allclose(a, ref, rtol=1e-6, atol=1e-12)


def test_central_difference_converges():
    snap = snapshot("caseB_loadstep")
    exact = ss.linearize(snap, h=1e-5).a
    errs = []
    toy = VsmToy()
    ref = np.array([[0.0, OMEGA_S], [-toy.k / toy.ta, -toy.d / toy.ta]])
    for h in (1e-2, 5e-3):
        errs.append(np.linalg.norm(ss.linearize(toy, h=h).a - ref))
    assert errs[1] < 0.3 * errs[0]  # second order: ratio ~ 1/4
    diff = np.linalg.norm(ss.linearize(snap, h=1e-6).a - ss.linearize(snap, h=5e-7).a)
    assert diff < 1e-5 * np.linalg.norm(exact)


def test_linearization_failure_names_state():
    toy = VsmToy(fail_below=0.0)
    toy.x = np.array([0.0, 0.0])
    toy.p0 = 0.0
    with pytest.raises(LinearizationError) as info:
        ss.linearize(toy)
    assert info.value.state == "toy.theta"


def test_non_equilibrium_rejected():
    toy = VsmToy()
    toy.x = toy.x + np.array([0.1, 0.0])
    with pytest.raises(InitializationError):
        ss.linearize(toy)
    assert ss.linearize(toy, equilibrium_tol=None).n == 2


def test_second_order_mode():
    wn, zeta = 2 * math.pi * 0.51, 0.05
    model = ss.LinearModel(np.array([[0.0, 1.0], [-wn**2, -2 * zeta * wn]]), ("a", "b"))
    (mode,) = ss.eigenmodes(model)
    assert mode.eigenvalue == pytest.approx(second_order_eigs(wn, zeta)[0], rel=1e-12)
    assert mode.frequency == pytest.approx(0.51 * math.sqrt(1 - zeta**2), rel=1e-12)
    assert mode.frequency == pytest.approx(0.5094, abs=1e-4)
    assert mode.damping_ratio == pytest.approx(0.05, rel=1e-12)
    assert mode.participation.max() == pytest.approx(1.0)


def test_zero_matrix_has_no_oscillation():
    modes = ss.eigenmodes(ss.LinearModel(np.zeros((3, 3)), ("a", "b", "c")))
    assert all(m.eigenvalue == 0 for m in modes)
    assert ss.least_damped(modes) is None


def test_defective_matrix_reported():
    with pytest.raises(NumericalError):
        ss.eigenmodes(ss.LinearModel(np.array([[0.0, 1.0], [0.0, 0.0]]), ("a", "b")))


def test_model_invariants():
    with pytest.raises(ValueError):
        ss.LinearModel(np.zeros((2, 3)), ("a", "b"))
    with pytest.raises(ValueError):
        ss.LinearModel(np.zeros((2, 2)), ("a",))
    with pytest.raises(NumericalError):
        ss.LinearModel(np.array([[np.nan]]), ("a",))


@settings(max_examples=50, deadline=None)
@given(hs.integers(2, 8), hs.integers(0, 2**32 - 1))
def test_participation_columns_sum_to_one(n, seed):
    a = np.random.default_rng(seed).normal(size=(n, n))
    model = ss.LinearModel(a, tuple(f"s{k}" for k in range(n)))
    lam, p = ss.participation_matrix(model)
    np.testing.assert_allclose(p.sum(axis=0), 1.0, atol=1e-8)
    modes = ss.eigenmodes(model)
    reported = [m.eigenvalue for m in modes]
    assert len(reported) == len(set(reported))
    assert len(reported) == sum(1 for z in lam if z.imag >= -1e-9 * max(1.0, abs(z)))
    for m in modes:
        assert -1.0 <= m.damping_ratio <= 1.0
        assert m.participation.max() == pytest.approx(1.0)
    damping = [m.damping_ratio for m in modes]
    assert damping == sorted(damping)


def test_modes_csv(tmp_path):
    model = ss.linearize(snapshot("caseA_loadstep"))
    modes = ss.eigenmodes(model)
    path = tmp_path / "modes.csv"
    ss.write_modes_csv(modes, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "mode_id,re,im,freq_hz,damping_ratio,top3_participating_states"
    assert len(lines) == len(modes) + 1
    assert len(lines[1].split(",")[5].split(";")) == 3


def test_case_a_all_damped():
    modes = ss.eigenmodes(ss.linearize(snapshot("caseA_loadstep")))
    assert len(ss.linearize(snapshot("caseA_loadstep")).state_labels) == 17
    assert min(m.damping_ratio for m in modes) > 0


def test_case_b_unstable_electromechanical_pair():
    model = ss.linearize(snapshot("caseB_loadstep"))
    mode = ss.least_damped(ss.eigenmodes(model))
    assert mode.eigenvalue.real > 0
    assert mode.damping_ratio < 0
    assert 0.3 <= mode.frequency <= 0.8
    top = mode.top_states(4)
    assert any(s.startswith("SM-1.") for s in top)
    assert any(s.startswith("GFM-VSC-2.") for s in top)
    assert mode.device_share("SM-1") > 0.3 and mode.device_share("GFM-VSC-2") > 0.3


def test_synthetic_consistency():
    t = np.arange(0.0, 20.0, 1e-3)
    y = np.exp(0.1 * t) * np.sin(2 * math.pi * 0.5 * t)
    tr = Trace(times=t, channels={"X.angle": y})
    w = 2 * math.pi * 0.5
    model = ss.LinearModel(np.array([[0.1, w], [-w, 0.1]]), ("x1", "x2"))
    rep = ss.mode_time_consistency(model, tr, "X.angle")
    assert rep.conclusive
    assert rep.freq_error < 0.01
    assert rep.growth_error < 0.01


def test_flat_trace_is_inconclusive():
    t = np.arange(0.0, 10.0, 1e-3)
    tr = Trace(times=t, channels={"X.angle": np.full_like(t, 30.0)})
    model = ss.LinearModel(np.array([[-0.1, 3.0], [-3.0, -0.1]]), ("x1", "x2"))
    rep = ss.mode_time_consistency(model, tr, "X.angle")
    assert not rep.conclusive
    assert rep.freq_error is None
    no_modes = ss.LinearModel(-np.eye(2), ("x1", "x2"))
    assert not ss.mode_time_consistency(no_modes, tr, "X.angle").conclusive


def test_linear_response_matches_perturbed_simulation():
    snap = snapshot("caseA_loadstep")
    model = ss.linearize(snap)
    dx = np.zeros(model.n)
    dx[model.state_labels.index("SM-1.delta")] = 1e-4
    dx[model.state_labels.index("GFM-VSC-2.theta_vsm")] = -1e-4
    tr = simulate(snap.with_state(snap.x + dx), (), SimConfig(t_end=5.0))
    lin = model.response(dx, tr.times)
    k = model.state_labels.index("SM-1.delta")
    sim = np.radians(tr["SM-1.angle"]) - snap.x[k]
    err = np.max(np.abs(sim - lin[:, k])) / np.max(np.abs(lin[:, k]))
    assert err < 0.02


def test_find_equilibrium_after_load_step():
    snap = snapshot("caseB_loadstep")
    eq = ss.find_equilibrium(snap, [LoadScale(5, 0.9)])
    assert np.max(np.abs(eq.derivatives())) < 1e-8
    assert eq.system.network.loads[0].scale == 0.9
    assert snap.system.network.loads[0].scale == 1.0
    assert not np.allclose(eq.x, snap.x)
