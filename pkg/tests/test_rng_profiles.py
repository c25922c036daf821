import numpy as np
import pytest

from rsloc.profiles import tilted_moments
from rsloc.rng import BROWNIAN, SAMPLER, replica_streams, stream

GUMBEL_MEAN = -0.57721566490153286
GUMBEL_VAR = 1.6449340668482264
GUMBEL_K3 = -2.4041138063191886


def test_stream_is_deterministic():
    a = stream(7, 3, BROWNIAN).standard_normal(50)
    b = stream(7, 3, BROWNIAN).standard_normal(50)
    assert np.array_equal(a, b)


def test_streams_differ_by_label_and_seed():
    base = stream(7, 3, BROWNIAN).standard_normal(50)
    assert not np.array_equal(base, stream(7, 3, SAMPLER).standard_normal(50))
    assert not np.array_equal(base, stream(7, 4, BROWNIAN).standard_normal(50))
    assert not np.array_equal(base, stream(8, 3, BROWNIAN).standard_normal(50))


def test_replica_stream_independent_of_ensemble():
    alone = replica_streams(1, [5], SAMPLER)[0].random(10)
    among = replica_streams(1, [0, 1, 2, 3, 4, 5], SAMPLER)[5].random(10)
    assert np.array_equal(alone, among)


def test_gumbel_profile_moments():
    m = tilted_moments("gumbel", 0.0, 0.0, 0.0)
    assert m["mean"] == pytest.approx(GUMBEL_MEAN, abs=1e-9)
    assert m["var"] == pytest.approx(GUMBEL_VAR, abs=1e-9)
    assert m["k3"] == pytest.approx(GUMBEL_K3, abs=1e-8)
    # e^z - z integrates to Gamma(1) = 1
    assert m["log_norm"] == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("t", [0.0, 1.0, 3.0])
@pytest.mark.parametrize("c", [0.0, 2.0, -1.5])
def test_quadratic_profile_matches_gaussian(t, c):
    m = tilted_moments("quadratic", 0.0, t, c, cdf_at=0.3)
    a = 1.0 + t
    assert m["mean"] == pytest.approx(c / a, abs=1e-12)
    assert m["var"] == pytest.approx(1.0 / a, rel=1e-10)
    assert m["k3"] == pytest.approx(0.0, abs=1e-10)
    assert m["log_norm"] == pytest.approx(0.5 * np.log(2 * np.pi / a) + c * c / (2 * a), abs=1e-10)
    from scipy.stats import norm

    assert m["cdf"] == pytest.approx(norm.cdf((0.3 - c / a) * np.sqrt(a)), abs=1e-9)


def test_logcosh_profile_symmetric():
    m = tilted_moments("logcosh", 0.5, 0.0, 0.0)
    assert abs(m["mean"]) < 1e-12
    assert abs(m["k3"]) < 1e-12


def test_profile_batches_broadcast():
    m = tilted_moments("gumbel", 0.0, np.array([0.0, 1.0]), np.array([[0.0], [1.0]]))
    assert m["mean"].shape == (2, 2)


def test_unknown_profile():
    with pytest.raises(ValueError, match="unknown profile"):
        tilted_moments("cubic", 0.0, 0.0, 0.0)
