import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rsloc.concentration import HalfSpace
from rsloc.localization import simulate
from rsloc.martingale import (
    MartingalePath,
    brownian_paths,
    empirical_tail,
    exponential_supermartingale_check,
    freedman_bound,
    set_measure_martingales,
)
from rsloc.potential import SubspaceSplit, flat_strong

PHI_M2 = 0.022750131948179207  # P(N(0,1) >= 2)


@pytest.fixture(scope="module")
def bm():
    return brownian_paths(10_000, 1.0, 0.01, seed=0)


def test_bound_examples():
    assert freedman_bound(2, 1) == pytest.approx(0.13533528323661269, rel=1e-14)
    assert freedman_bound(1, 0.5) == pytest.approx(0.36787944117144232, rel=1e-14)
    assert freedman_bound(1e-12, 1) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        freedman_bound(0, 1)
    with pytest.raises(ValueError):
        freedman_bound(1, 0)


@settings(max_examples=300, deadline=None)
@given(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(1.01, 3))
def test_bound_monotone(a, b, f):
    assert freedman_bound(a * f, b) <= freedman_bound(a, b)
    assert freedman_bound(a, b * f) >= freedman_bound(a, b)


def test_brownian_tail(bm):
    out = empirical_tail(bm, 2.0, 1.0, 1.0)
    assert abs(out["fraction"] - PHI_M2) <= 0.005
    assert out["passed"] and out["bound"] == pytest.approx(0.13534, abs=1e-5)


def test_zero_martingale():
    t = np.linspace(0, 1, 11)
    paths = [MartingalePath(t, np.zeros(11), np.zeros(11))] * 5
    assert empirical_tail(paths, 1.0, 1.0, 1.0)["fraction"] == 0
    for row in exponential_supermartingale_check(paths, [0.0, 1.0]):
        assert np.allclose(row["mean"], 1.0) and row["passed"]


def test_set_monotonicity(bm):
    for a, b in [(1.0, 0.5), (0.5, 1.0), (2.0, 1.0)]:
        stopped = [p.stopped(b) for p in bm[:2000]]
        restricted = empirical_tail(stopped, a, b, 1.0)["fraction"]
        full = empirical_tail(stopped, a, b, 1.0, restrict_qv=False)["fraction"]
        assert full >= restricted


def test_supermartingale_brownian(bm):
    rows = exponential_supermartingale_check(bm, [0.0, 0.5, 1.0, 2.0])
    assert np.all(rows[0]["mean"] == 1.0)
    for row in rows:
        assert row["passed"]
    # exact MGF, so the mean is not far below 1 either (for lambda = 2 the
    # lognormal tail makes the sample SE itself unreliable)
    for row in rows[:3]:
        assert np.all(row["mean"] >= 1.0 - 3 * row["se"] - 1e-12)


def test_grid_quadratic_variation_law():
    T = 1.0
    for dt in (0.01, 0.001):
        paths = brownian_paths(50, T, dt, seed=1, analytic_qv=False)
        for p in paths:
            assert abs(p.qv[-1] - T) <= 5 * np.sqrt(2 * T * dt)


def test_path_validation_and_stopping():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        MartingalePath(t, np.ones(5), t)
    with pytest.raises(ValueError):
        MartingalePath(t, np.zeros(5), t[::-1] - 1)
    p = MartingalePath(t, np.array([0.0, 1, 2, 3, 4]), t)
    s = p.stopped(0.5)
    assert np.all(s.values[2:] == 2) and s.qv[-1] == 0.5
    assert p.at(0.6) == 2


def test_set_measure_freedman_on_localization_paths():
    split = SubspaceSplit.axes(2, 1)
    p = flat_strong(split, eta=2.0, w="gumbel")
    sets = {"h": HalfSpace(np.array([1.0, 0.0]), -0.3665129205816643)}
    paths = simulate(p, 0.4, 0.01, sets, seed=0, replicas=500, moments="exact")
    mg = set_measure_martingales(paths, "h", center="reversed")
    for T in (0.1, 0.2, 0.4):
        out = empirical_tail(mg, 0.25, 10 * T, T)
        assert out["bound"] == pytest.approx(np.exp(-1 / (320 * T)))
        assert out["passed"]
    # the qv proxy dominates the realised squared increments
    for m in mg[:20]:
        emp = np.cumsum(np.diff(m.values) ** 2)
        assert emp[-1] <= 1.5 * m.qv[-1]
