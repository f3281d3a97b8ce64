import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aoiprice.errors import InvalidInstance, Uncalibratable
from aoiprice.joac import (JoacInstance, calibrate_prices, evaluate, feasible, objective, t_max,
                           upper_bound)
from aoiprice.mdp import AgingMdpInstance, linear_utility, solve_average_reward
from aoiprice.mobility import build_model

from conftest import line_chain, random_chain


def make(seed, L=4, d=3, eps=0.2, M=8, B=np.inf):
    rng = np.random.default_rng(seed)
    m = build_model(random_chain(L, rng, 2.0))
    return JoacInstance(m, rng.uniform(1, 5, L), B, d=d, epsilon=eps, max_age=M)


def test_validation():
    m = build_model(random_chain(3, np.random.default_rng(0)))
    with pytest.raises(InvalidInstance):
        JoacInstance(m, [1, 2], 1.0, d=2, epsilon=0.1, max_age=5)
    with pytest.raises(InvalidInstance):
        JoacInstance(m, [1, 2, 3], 1.0, d=2, epsilon=1.0, max_age=5)
    with pytest.raises(InvalidInstance):
        JoacInstance(m, [1, 2, 3], 1.0, d=5, epsilon=0.1, max_age=5)
    with pytest.raises(InvalidInstance):
        JoacInstance(m, [1, 2, 3], 0.0, d=2, epsilon=0.1, max_age=5)


def test_zero_thresholds_flat_cost_and_feasible():
    inst = make(1, B=1.0)
    assert objective(inst, np.zeros(4, int)) == pytest.approx(inst.costs @ inst.D)
    assert feasible(inst, np.zeros(4, int)).feasible


def test_uniform_costs_flat_objective():
    inst = make(2).replace(costs=np.full(4, 2.5))
    for tau in ([0, 0, 0, 0], [3, 1, 0, 2], [5, 5, 5, 5]):
        assert objective(inst, tau) == pytest.approx(2.5 * inst.D.sum(), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 6), min_size=4, max_size=4),
       st.floats(0.01, 100.0))
def test_bounds_and_scale(seed, tau, alpha):
    inst = make(seed)
    W = objective(inst, tau)
    total = inst.D.sum()
    assert inst.costs.min() * total - 1e-9 <= W <= inst.costs.max() * total + 1e-9
    assert W <= upper_bound(inst) + 1e-12
    scaled = inst.replace(costs=alpha * inst.costs)
    assert objective(scaled, tau) == pytest.approx(alpha * W, rel=1e-12)


def test_line_topology_aoi_violation():
    d = 3
    inst = JoacInstance(build_model(line_chain(6)), np.ones(6), np.inf, d=d, epsilon=0.05, max_age=10)
    # only the far end uploads early; it is 5 hops from origin 0
    tau = [d + 1] * 5 + [0]
    rep = feasible(inst, tau)
    origins = {v[0]: v[1] for v in rep.aoi_violations}
    assert origins[0] == pytest.approx(1.0, abs=1e-12)


def test_capacity_violation_reported():
    inst = make(3)
    tau = np.array([0, 2, 2, 2])
    ev = evaluate(inst, tau)
    sink = int(np.argmax(ev.Y))
    B = np.full(4, np.inf)
    B[sink] = 1e-6
    rep = feasible(inst.replace(capacities=B), tau)
    assert [v[0] for v in rep.capacity_violations] == [sink]
    assert rep.capacity_violations[0][1] == pytest.approx(ev.Y[sink])
    assert not rep


def test_single_location_t_max():
    for d in (1, 3, 5):
        inst = JoacInstance(build_model([[1.0]]), [1.0], np.inf, d=d, epsilon=0.05, max_age=12)
        tm = t_max(inst)
        # mass sits at age tau + 1 exactly
        assert evaluate(inst, [tm]).tail[0] == 0.0
        assert evaluate(inst, [tm + 1]).tail[0] == 1.0
        assert tm == d - 1


def test_t_max_caps():
    inst = make(4, d=3, eps=0.9, M=9)
    assert t_max(inst) == 8
    assert t_max(inst.replace(operating_cap=True)) == 6
    assert t_max(inst.replace(t_max_override=2)) == 2


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(0.01, 0.5))
def test_t_max_monotone(seed, d, eps):
    inst = make(seed, d=d, eps=eps, M=10)
    base = t_max(inst)
    assert t_max(inst.replace(d=d + 1)) >= base
    assert t_max(inst.replace(epsilon=min(0.99, eps * 1.5))) >= base


def test_calibrate_all_zero():
    inst = make(5)
    cal = calibrate_prices(inst, np.zeros(4, int))
    assert np.array_equal(cal.prices, np.zeros(4))


def test_calibrate_round_trip():
    P = random_chain(4, np.random.default_rng(6), 2.0)
    m = build_model(P)
    M = 10
    mdp = AgingMdpInstance(m, M, linear_utility(M), [0.0, 6.0, 9.0, 3.0])
    target = solve_average_reward(mdp).thresholds.per_location
    inst = JoacInstance(m, np.ones(4), np.inf, d=4, epsilon=0.2, max_age=M)
    cal = calibrate_prices(inst, target)
    assert np.array_equal(cal.achieved, target)
    again = solve_average_reward(mdp.with_prices(cal.prices)).thresholds.per_location
    assert np.array_equal(again, target)


def test_calibrate_inconsistent_target():
    m = build_model([[0.5, 0.5], [0.5, 0.5]])
    inst = JoacInstance(m, [1.0, 2.0], np.inf, d=2, epsilon=0.5, max_age=6)
    assert calibrate_prices(inst, [0, 4]).ok.all()
    # M - 1 sits inside a jump of the threshold-vs-price staircase
    with pytest.raises(Uncalibratable) as err:
        calibrate_prices(inst, [0, 5])
    assert not err.value.ok[1]
