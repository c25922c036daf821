import numpy as np
import pytest

from rsloc.concentration import HalfSpace
from rsloc.localization import (
    LocalizationState,
    brownian_increments,
    c_in_range,
    exact_path,
    gaussian_halfspace_measure,
    gaussian_oracle_path,
    hessian_bound_check,
    init,
    martingale_check,
    quadratic_variation_check,
    run_path,
    set_measure,
    simulate,
    step,
    tilted_mass,
    time_grid,
)
from rsloc.potential import SubspaceSplit, TiltedPotential, flat_strong, gaussian
from rsloc.sampler import MalaConfig, sample_exact_gaussian

FAST = MalaConfig(count=2000)


def test_time_grid():
    g = time_grid(1.0, 0.3)
    assert g[0] == 0 and g[-1] == 1.0 and np.all(np.diff(g) > 0)
    with pytest.raises(ValueError):
        time_grid(0.1, 0.2)
    with pytest.raises(ValueError):
        time_grid(1.0, 0.0)


def test_init_standard_gaussian():
    p = gaussian(SubspaceSplit.random(3, 2, 1), np.eye(3))
    s = init(p, MalaConfig(count=20_000), seed=1)
    assert s.t == 0 and np.all(s.c == 0)
    assert np.abs(s.a).max() < 0.05
    assert np.abs(s.K - np.eye(3)).max() < 0.06
    assert np.abs(s.Q - np.eye(2)).max() < 0.06


def test_init_flat_strong_product_variances():
    p = flat_strong(SubspaceSplit.axes(2, 1), eta=2.0)
    s = init(p, moments="exact")
    assert np.allclose(s.K, np.diag([1.0, 0.5]))
    s = init(p, MalaConfig(count=20_000), seed=2)
    assert np.abs(s.K - np.diag([1.0, 0.5])).max() < 0.05


def test_init_whitened_has_unit_q():
    from rsloc.potential import whiten

    p = gaussian(SubspaceSplit.axes(3, 2), np.array([[3.0, 0.5, 0.2], [0.5, 1.0, 0.1], [0.2, 0.1, 2.0]]))
    pw, _ = whiten(p, p.cov)
    s = init(pw, MalaConfig(count=40_000), seed=3)
    batch = s.batch
    Y = batch.points @ pw.split.perp
    d = Y - Y.mean(axis=0)
    prod = np.einsum("Ni,Nj->Nij", d, d)
    se = prod.std(axis=0) / np.sqrt(len(Y))
    assert np.all(np.abs(s.Q - np.eye(2)) <= 5 * se)


def _state(p, c, a):
    K = np.eye(p.n)
    perp = p.split.perp
    return LocalizationState(0.5, np.asarray(c, float), np.asarray(a, float), K, perp.T @ K @ perp)


def test_step_drift_vanishes_at_zero_barycenter():
    p = gaussian(SubspaceSplit.axes(3, 2), np.eye(3))
    s = _state(p, [0.1, 0.2, 0.0], [0.0, 0.0, 0.0])
    dB = np.array([0.3, -0.1, 0.7])
    out = step(s, 0.01, dB, p, moments="exact")
    assert np.allclose(out.c, s.c + p.split.P @ dB)
    assert out.t == pytest.approx(0.51)


def test_step_noise_in_e_is_annihilated():
    p = gaussian(SubspaceSplit.axes(3, 2), np.eye(3))
    a = np.array([0.4, -0.2, 0.9])
    s = _state(p, [0.0, 0.0, 0.0], a)
    out = step(s, 0.1, np.array([0.0, 0.0, 5.0]), p, moments="exact")
    assert np.allclose(out.c, 0.1 * p.split.P @ a)


def test_step_gaussian_covariance_is_c_independent():
    split = SubspaceSplit.random(3, 1, 5)
    p = gaussian(split, np.eye(3))
    s = _state(p, 2.0 * split.perp[:, 0], np.zeros(3))
    out = step(s, 0.5, np.zeros(3), p, MalaConfig(count=20_000), rng=np.random.default_rng(0))
    oracle = np.linalg.inv(np.eye(3) + 1.0 * split.P)
    assert np.abs(out.K - oracle).max() < 0.05


def test_step_rejects_nonpositive_dt():
    p = gaussian(SubspaceSplit.axes(2, 1), np.eye(2))
    with pytest.raises(ValueError):
        step(_state(p, [0, 0], [0, 0]), 0.0, np.zeros(2), p)


def test_mala_path_replays_against_oracle():
    split = SubspaceSplit.random(3, 2, 8)
    p = gaussian(split, np.eye(3))
    dt = 0.05
    rec = run_path(p, 0.5, dt, seed=4, sampler=FAST)
    oracle = gaussian_oracle_path(np.eye(3), split, rec.brownian_increments, dt)
    err = np.linalg.norm(rec.K - oracle.K, axis=(1, 2))
    assert np.all(err <= 5 * (rec.moment_error + dt))
    # the oracle is itself the closed form
    for t, K in zip(oracle.times, oracle.K):
        assert np.allclose(K, np.linalg.inv(np.eye(3) + t * split.P))


def test_single_step_path_is_near_init():
    p = gaussian(SubspaceSplit.axes(2, 1), np.eye(2))
    rec = run_path(p, 1e-4, 1e-4, moments="exact")
    assert len(rec) == 2
    assert np.allclose(rec.K[1], rec.K[0], atol=1e-3)


def test_path_invariants():
    split = SubspaceSplit.random(4, 2, 2)
    p = gaussian(split, np.diag([2.0, 1.0, 1.0, 0.5]))
    rec = run_path(p, 1.0, 0.02, seed=1, moments="exact", sets=[HalfSpace(split.perp[:, 0], 0.0)])
    assert rec.times[0] == 0 and np.all(np.diff(rec.times) > 0)
    assert np.all(np.diff(rec.qv_bound) >= 0)
    assert c_in_range([rec], split) <= 1e-10
    assert np.allclose(rec.Q, np.swapaxes(rec.Q, 1, 2))
    assert np.linalg.eigvalsh(rec.Q).min() >= -1e-12


def test_increments_are_per_replica():
    p = gaussian(SubspaceSplit.axes(2, 1), np.eye(2))
    a = simulate(p, 0.2, 0.02, seed=3, replicas=[2], moments="exact")[0]
    b = simulate(p, 0.2, 0.02, seed=3, replicas=3, moments="exact")[2]
    assert np.array_equal(a.c, b.c)
    assert np.array_equal(a.brownian_increments, brownian_increments(3, 2, a.times, 2))


def test_mala_ensemble_is_replica_local():
    p = gaussian(SubspaceSplit.axes(2, 1), np.eye(2))
    cfg = MalaConfig(count=200)
    a = simulate(p, 0.1, 0.05, seed=3, replicas=[1], sampler=cfg)[0]
    b = simulate(p, 0.1, 0.05, seed=3, replicas=2, sampler=cfg)[1]
    assert np.array_equal(a.K, b.K)


@pytest.mark.parametrize("t", [0.0, 1.0, 3.0])
@pytest.mark.parametrize("c", [0.0, 2.0])
def test_tilted_mass_is_one(t, c):
    p = gaussian(SubspaceSplit.axes(1, 1), np.eye(1))
    assert tilted_mass(TiltedPotential(p, t, np.array([c]))) == pytest.approx(1.0, abs=1e-6)


def test_tilted_mass_2d_separable():
    p = flat_strong(SubspaceSplit.axes(2, 1), eta=2.0, w="gumbel")
    assert tilted_mass(TiltedPotential(p, 0.7, np.array([0.5, 0.0]))) == pytest.approx(1.0, abs=1e-6)


def test_set_measure_examples():
    batch = sample_exact_gaussian(np.eye(2), np.zeros(2), 40_000, 0)
    s, se = set_measure(batch, HalfSpace(np.array([1.0, 0.0]), 0.0))
    assert abs(s - 0.5) <= 3 * se
    assert set_measure(batch, HalfSpace.full_space(2)) == (1.0, 0.0)
    with pytest.raises(ValueError):
        set_measure(sample_exact_gaussian(np.eye(2), np.zeros(2), 0, 0), HalfSpace.full_space(2))
    # exact oracle
    assert gaussian_halfspace_measure(np.zeros(2), np.eye(2), HalfSpace(np.array([1.0, 0.0]), -1.0)) == pytest.approx(
        0.15865525393145705, abs=1e-14
    )


def test_martingale_check_single_path_is_vacuous():
    p = gaussian(SubspaceSplit.axes(2, 1), np.eye(2))
    rec = run_path(p, 0.2, 0.02, sets={"h": HalfSpace(np.array([1.0, 0.0]), 0.0)}, moments="exact")
    out = martingale_check([rec], "h")
    assert out["passed"] and out["insufficient"] and np.all(np.isinf(out["se"]))


def test_martingale_check_exact_ensemble_and_negative_control():
    p = gaussian(SubspaceSplit.axes(2, 1), np.eye(2))
    sets = {"h": HalfSpace(np.array([1.0, 0.0]), 0.0)}
    # a 3 SE band at all 50 grid times has a family-wise false alarm rate
    # of about 6% on exact martingales; seed 0 is one of those alarms
    paths = simulate(p, 1.0, 0.02, sets, seed=1, replicas=400, moments="exact")
    assert martingale_check(paths, "h")["passed"]
    # drift-free tilt (no P a dt term) breaks the martingale
    biased = [_shifted(q, 0.25) for q in paths]
    assert not martingale_check(biased, "h")["passed"]


def _shifted(rec, amount):
    from dataclasses import replace

    s = rec.set_measures["h"] + amount * rec.times
    return replace(rec, set_measures={"h": s})


def test_qv_domination_exact_ensemble():
    p = gaussian(SubspaceSplit.axes(2, 1), np.eye(2))
    sets = {"h": HalfSpace(np.array([1.0, 0.0]), 0.0)}
    paths = simulate(p, 1.0, 0.01, sets, seed=1, replicas=300, moments="exact")
    out = quadratic_variation_check(paths, "h")
    assert out["passed"] and out["noise_budget"] == 0


def test_halving_dt_changes_little():
    split = SubspaceSplit.axes(2, 1)
    p = flat_strong(split, eta=2.0, w="gumbel")
    sets = {"h": HalfSpace(np.array([1.0, 0.0]), 0.0)}
    fine = simulate(p, 0.5, 0.005, sets, seed=2, replicas=1, moments="exact")[0]
    coarse_inc = fine.brownian_increments.reshape(-1, 2, 2).sum(axis=1)
    coarse = exact_path(p, coarse_inc, 0.01, sets)
    assert abs(coarse.set_measures["h"][-1] - fine.set_measures["h"][-1]) < 0.02


def test_hessian_bound_along_paths():
    split = SubspaceSplit.random(3, 1, 3)
    p = gaussian(split, np.diag([3.0, 1.0, 0.5]))
    paths = simulate(p, 1.0, 0.05, seed=0, replicas=5, moments="exact")
    out = hessian_bound_check(p, paths, n_points=200)
    assert out["passed"], out
