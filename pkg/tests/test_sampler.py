import numpy as np
import pytest
from scipy import stats

from rsloc.potential import SubspaceSplit, TiltedPotential, gaussian
from rsloc.sampler import (
    MalaConfig,
    SampleBatch,
    SamplerError,
    estimate_moments,
    mala_sample,
    reweight,
    sample_exact_gaussian,
)


@pytest.fixture(scope="module")
def std_gaussian_batch():
    p = gaussian(SubspaceSplit.axes(2, 1), np.eye(2))
    return mala_sample(p, 100_000, seed=11)


def test_mala_standard_gaussian_covariance(std_gaussian_batch):
    est = estimate_moments(std_gaussian_batch)
    assert np.linalg.norm(est.cov - np.eye(2), 2) <= 0.05
    assert 0.2 <= std_gaussian_batch.acceptance <= 0.9


def test_mala_marginals_ks(std_gaussian_batch):
    for j in range(2):
        d = stats.kstest(std_gaussian_batch.points[:, j], "norm").statistic
        assert d <= 0.01


def test_mala_tilted_gaussian_matches_conjugacy():
    split = SubspaceSplit.random(3, 2, 4)
    p = gaussian(split, np.eye(3))
    tp = TiltedPotential(p, 1.0, np.zeros(3))
    est = estimate_moments(mala_sample(tp, 50_000, seed=2))
    oracle = np.linalg.inv(np.eye(3) + split.P)
    assert np.abs(est.cov - oracle).max() <= 5 * est.cov_se_entries.max()


def test_mala_is_deterministic():
    p = gaussian(SubspaceSplit.axes(2, 1), np.diag([2.0, 0.5]))
    a = mala_sample(p, 500, seed=3)
    b = mala_sample(p, 500, seed=3)
    assert np.array_equal(a.points, b.points)
    c = mala_sample(p, 500, seed=4)
    assert not np.array_equal(a.points, c.points)


def test_count_zero_gives_empty_batch():
    p = gaussian(SubspaceSplit.axes(2, 1), np.eye(2))
    assert len(mala_sample(p, 0)) == 0
    assert len(sample_exact_gaussian(np.eye(2), np.zeros(2), 0, 0)) == 0


def test_bad_step_is_reported():
    p = gaussian(SubspaceSplit.axes(2, 1), np.eye(2))
    cfg = MalaConfig(step=50.0, tune=False, warmup=20)
    with pytest.raises(SamplerError, match="acceptance"):
        mala_sample(p, 200, cfg)


def test_non_finite_start_is_reported():
    p = gaussian(SubspaceSplit.axes(2, 1), np.eye(2))
    with pytest.raises(SamplerError, match="non-finite"):
        mala_sample(p, 10, init=np.array([np.inf, 0.0]))


def test_identical_points_have_zero_covariance():
    x0 = np.array([1.0, -2.0, 0.5])
    est = estimate_moments(SampleBatch(np.tile(x0, (10, 1))))
    assert np.allclose(est.mean, x0)
    assert np.allclose(est.cov, 0.0)


def test_two_point_formula():
    est = estimate_moments(SampleBatch(np.array([[1.0, 0.0], [-1.0, 0.0]])))
    assert np.allclose(est.mean, 0.0)
    assert np.allclose(est.cov, np.diag([2.0, 0.0]))


def test_exact_samples_covariance_within_5se():
    batch = sample_exact_gaussian(np.diag([4.0, 1.0]), np.zeros(2), 100_000, 5)
    est = estimate_moments(batch)
    assert np.all(np.abs(est.cov - np.diag([4.0, 1.0])) <= 5 * est.cov_se_entries)
    assert est.n_eff == pytest.approx(100_000)


def test_moments_need_two_points():
    with pytest.raises(ValueError):
        estimate_moments(SampleBatch(np.zeros((1, 2))))


def test_moments_permutation_invariant():
    g = np.random.default_rng(0)
    pts = g.standard_normal((300, 3))
    w = g.random(300)
    w /= w.sum()
    perm = g.permutation(300)
    a = estimate_moments(SampleBatch(pts, w))
    b = estimate_moments(SampleBatch(pts[perm], w[perm]))
    assert np.allclose(a.mean, b.mean, atol=1e-13)
    assert np.allclose(a.cov, b.cov, atol=1e-13)


def test_covariance_is_psd_for_degenerate_batch():
    g = np.random.default_rng(1)
    pts = np.outer(g.standard_normal(4), [1.0, 2.0, -1.0])
    est = estimate_moments(SampleBatch(pts))
    assert np.linalg.eigvalsh(est.cov)[0] >= -1e-14


def test_singular_exact_sampler():
    cov = np.diag([1.0, 0.0])
    batch = sample_exact_gaussian(cov, np.array([0.0, 3.0]), 100, 1)
    assert np.allclose(batch.points[:, 1], 3.0)


def test_reweight_identity_and_ess():
    batch = sample_exact_gaussian(np.eye(2), np.zeros(2), 2000, 0)
    P = np.diag([1.0, 0.0])
    same, ess = reweight(batch, P, 0.0, np.zeros(2))
    assert ess == pytest.approx(1.0)
    moved, ess2 = reweight(batch, P, 0.5, np.array([0.3, 0.0]))
    assert 0 < ess2 < 1
    # N(0,1) tilted by -t x^2/2 + c x has mean c / (1 + t)
    m = estimate_moments(moved).mean[0]
    assert m == pytest.approx(0.3 / 1.5, abs=0.05)


def test_batch_validation():
    with pytest.raises(ValueError):
        SampleBatch(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        SampleBatch(np.zeros((2, 1)), np.array([0.2, 0.2]))
