import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hs

from anglestab.errors import DivergedError, StructuralError
from anglestab.powergrid import (
    BranchSpec,
    BusSpec,
    ClearFault,
    Injection,
    LoadSpec,
    NetworkModel,
    SetFault,
    SetLoadScale,
    TripBranch,
    apply_topology_event,
    assemble_admittance,
    net_specified_power,
    reorder,
    solve_power_flow,
)
from anglestab import scenario as scn

from conftest import bundled
from oracles import gauss_seidel, hand_ybus


def two_bus(x=0.1, load_mw=50.0):
    return NetworkModel(
        buses=(BusSpec(1, "slack"), BusSpec(2, "pq")),
        branches=(BranchSpec("L", 1, 2, r=0.0, x=x),),
        loads=(LoadSpec(2, load_mw, 0.0),) if load_mw else (),
    )


def canonical_network():
    return scn.build_network(bundled("canonical"))


# -- admittance assembly -----------------------------------------------------


def test_single_branch_stamp():
    y = assemble_admittance(two_bus())
    assert y[0, 1] == pytest.approx(10j)
    assert y[1, 0] == pytest.approx(10j)
    assert y[0, 0] == pytest.approx(-10j)
    assert y[1, 1] == pytest.approx(-10j)


def test_no_branches_gives_zero_matrix():
    net = NetworkModel(buses=(BusSpec(1, "slack"), BusSpec(2), BusSpec(3)))
    y = assemble_admittance(net)
    assert y.shape == (3, 3)
    assert not np.any(y)


def test_parallel_branches_double_transfer_admittance():
    single = NetworkModel(buses=(BusSpec(5), BusSpec(6, "slack")),
                          branches=(BranchSpec("a", 5, 6, 0.01, 0.1, 0.1),))
    double = dataclasses.replace(single, branches=single.branches + (BranchSpec("b", 5, 6, 0.01, 0.1, 0.1),))
    assert double.y_bus[0, 1] == 2 * single.y_bus[0, 1]


def test_dangling_branch_is_structural_error():
    net = NetworkModel(buses=(BusSpec(1, "slack"),), branches=(BranchSpec("x", 1, 9),))
    with pytest.raises(StructuralError):
        assemble_admittance(net)


@pytest.mark.parametrize("kw", [dict(x=0.0), dict(tap=0.0), dict(to_bus=1)])
def test_branch_invariants(kw):
    args = dict(id="b", from_bus=1, to_bus=2, x=0.1)
    args.update(kw)
    with pytest.raises(StructuralError):
        BranchSpec(**args)


def test_bus_invariants():
    with pytest.raises(StructuralError):
        BusSpec(1, base_kv=0.0)
    with pytest.raises(StructuralError):
        BusSpec(1, kind="swing")
    with pytest.raises(StructuralError):
        NetworkModel(buses=(BusSpec(1, "slack"), BusSpec(1)))


def test_canonical_matches_hand_stamped_matrix():
    net = canonical_network()
    pos = {b: k for k, b in enumerate(net.bus_ids)}
    t = 0.15 * 100 / 900
    ref = hand_ybus(4, [
        (pos[1], pos[5], 0.0, t, 0.0, 1.0),
        (pos[2], pos[5], 0.0, t, 0.0, 1.0),
        (pos[5], pos[6], 0.01, 0.15, 0.1, 1.0),
        (pos[5], pos[6], 0.01, 0.15, 0.1, 1.0),
    ])
    np.testing.assert_allclose(net.y_bus, np.array(ref), rtol=1e-12, atol=1e-12)


def test_off_nominal_tap_matches_oracle():
    net = NetworkModel(buses=(BusSpec(1, "slack"), BusSpec(2)),
                       branches=(BranchSpec("t", 1, 2, 0.002, 0.08, 0.02, tap=1.05),))
    np.testing.assert_allclose(net.y_bus, np.array(hand_ybus(2, [(0, 1, 0.002, 0.08, 0.02, 1.05)])), rtol=1e-13)


# -- topology events ---------------------------------------------------------


def test_fault_round_trip():
    net = canonical_network()
    faulted = apply_topology_event(net, SetFault(5, complex(1e4, -1e4)))
    k = net.index[5]
    assert faulted.y_bus[k, k] - net.y_bus[k, k] == pytest.approx(complex(1e4, -1e4))
    cleared = apply_topology_event(faulted, ClearFault())
    assert np.array_equal(cleared.y_bus, net.y_bus)
    assert net.fault_shunt is None  # original untouched


def test_trip_halves_transfer_admittance():
    net = canonical_network()
    i, j = net.index[5], net.index[6]
    tripped = apply_topology_event(net, TripBranch("5-6a"))
    assert tripped.y_bus[i, j] == pytest.approx(0.5 * net.y_bus[i, j], rel=1e-14)
    assert net.branch("5-6a").in_service


def test_load_scale_to_ninety_percent():
    net = apply_topology_event(canonical_network(), SetLoadScale(5, 0.9))
    (ld,) = net.loads
    assert ld.p == pytest.approx(870.3)
    assert ld.q == pytest.approx(90.0)
    s = net_specified_power(net, {})
    assert s[net.index[5]] == pytest.approx(-(8.703 + 0.9j))


@pytest.mark.parametrize("event", [TripBranch("nope"), SetFault(42), SetLoadScale(1, 0.5)])
def test_unknown_element_is_structural_error(event):
    with pytest.raises(StructuralError):
        apply_topology_event(canonical_network(), event)


# -- power flow --------------------------------------------------------------


def test_two_bus_angle_closed_form():
    sol = solve_power_flow(two_bus())
    v2 = sol.voltage(2)
    ang = math.degrees(math.atan2(v2.imag, v2.real))
    exact = -0.5 * math.degrees(math.asin(0.1))  # Q = 0 forces V2 = cos(delta), so sin(2 delta) = 2 P X
    assert ang == pytest.approx(exact, abs=1e-8)
    assert ang == pytest.approx(-2.866, abs=0.01)
    assert abs(v2) == pytest.approx(math.cos(math.radians(exact)), abs=1e-9)


def test_zero_injection_flat_profile():
    net = NetworkModel(buses=(BusSpec(1, "slack", v_setpoint=1.02), BusSpec(2), BusSpec(3)),
                       branches=(BranchSpec("a", 1, 2, 0.0, 0.1), BranchSpec("b", 2, 3, 0.0, 0.2)))
    sol = solve_power_flow(net)
    assert sol.iterations <= 1
    np.testing.assert_allclose(sol.v, 1.02, atol=1e-12)


def test_slack_voltage_exact():
    net = canonical_network()
    sol = solve_power_flow(net, scn.injections(bundled("canonical")))
    assert sol.voltage(6) == complex(1.0, 0.0)


def test_canonical_agrees_with_gauss_seidel():
    sc = bundled("canonical")
    net = scn.build_network(sc)
    inj = scn.injections(sc)
    sol = solve_power_flow(net, inj, tol=1e-10)
    assert sol.max_mismatch < 1e-8

    kinds = [b.kind for b in net.buses]
    s = net_specified_power(net, inj)
    v0 = [complex(b.v_setpoint) for b in net.buses]
    v_gs, _ = gauss_seidel(net.y_bus.tolist(), kinds, v0, s.real, s.imag, tol=1e-13)
    np.testing.assert_allclose(sol.v, np.array(v_gs), atol=1e-8)

    export = -sol.injection(6).real * net.s_base
    assert 1200.0 - 967.0 - 15.0 < export < 1200.0 - 967.0  # a few MW of line losses
    for bus in (1, 2):
        assert sol.injection(bus).real * net.s_base == pytest.approx(600.0, abs=1e-6)


def test_divergence_carries_mismatch():
    with pytest.raises(DivergedError) as info:
        solve_power_flow(two_bus(load_mw=5000.0), max_iter=10)
    assert info.value.mismatch > 0


def test_disconnected_bus_rejected():
    net = NetworkModel(buses=(BusSpec(1, "slack"), BusSpec(2), BusSpec(3)),
                       branches=(BranchSpec("a", 1, 2),))
    with pytest.raises(StructuralError):
        solve_power_flow(net)


# -- properties --------------------------------------------------------------

PROPS = settings(max_examples=40, deadline=None)

branch_params = hs.tuples(
    hs.floats(0.0, 0.05), hs.floats(0.02, 0.5), hs.floats(0.0, 0.3), hs.floats(0.9, 1.1)
)


@PROPS
@given(hs.lists(hs.tuples(hs.integers(0, 3), hs.integers(0, 3), branch_params), min_size=1, max_size=6))
def test_assembly_is_linear(raw):
    buses = tuple(BusSpec(k, "slack" if k == 0 else "pq") for k in range(4))
    branches = [BranchSpec(f"b{n}", i, j, r, x, b, tap)
                for n, (i, j, (r, x, b, tap)) in enumerate(raw) if i != j]
    full = NetworkModel(buses=buses, branches=branches).y_bus
    acc = np.zeros_like(full)
    for br in branches:
        acc = acc + NetworkModel(buses=buses, branches=(br,)).y_bus
    assert np.array_equal(full, acc)
    if all(br.tap == 1.0 for br in branches):
        assert np.array_equal(full, full.T)


def _random_network(draw_values):
    p2, p3, q3, x12, x23, x13 = draw_values
    return NetworkModel(
        buses=(BusSpec(1, "slack", v_setpoint=1.0), BusSpec(2, "pv", v_setpoint=1.01), BusSpec(3, "pq")),
        branches=(BranchSpec("a", 1, 2, 0.01, x12, 0.02), BranchSpec("b", 2, 3, 0.01, x23),
                  BranchSpec("c", 1, 3, 0.005, x13, 0.01)),
        loads=(LoadSpec(3, p3, q3),),
    ), {2: Injection(p2)}


network_values = hs.tuples(
    hs.floats(0.0, 150.0), hs.floats(0.0, 150.0), hs.floats(-30.0, 60.0),
    hs.floats(0.05, 0.2), hs.floats(0.05, 0.2), hs.floats(0.05, 0.2),
)


@PROPS
@given(network_values)
def test_power_flow_residual_within_tolerance(values):
    net, inj = _random_network(values)
    tol = 1e-9
    sol = solve_power_flow(net, inj, tol=tol)
    s_calc = sol.v * np.conj(net.y_bus @ sol.v)
    mis = s_calc - net_specified_power(net, inj)
    for k, b in enumerate(net.buses):
        if b.kind == "pv":
            assert abs(mis[k].real) <= tol
            assert abs(sol.v[k]) == pytest.approx(b.v_setpoint, abs=1e-12)
        elif b.kind == "pq":
            assert abs(mis[k]) <= math.sqrt(2) * tol


@PROPS
@given(network_values, hs.permutations([1, 2, 3]))
def test_bus_order_does_not_change_solution(values, order):
    net, inj = _random_network(values)
    a = solve_power_flow(net, inj, tol=1e-11)
    b = solve_power_flow(reorder(net, order), inj, tol=1e-11)
    for bus in (1, 2, 3):
        assert b.voltage(bus) == pytest.approx(a.voltage(bus), abs=1e-9)
        assert b.injection(bus) == pytest.approx(a.injection(bus), abs=1e-8)
