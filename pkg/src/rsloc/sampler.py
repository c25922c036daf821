"""Metropolis-adjusted Langevin sampling of (tilted) potentials and moment estimates.

The chains for many targets sharing the same base potential and tilt time
are advanced together: arrays carry a leading replica axis ``B``, a chain
axis ``C`` and the coordinate axis ``n``. Each replica draws its noise from
its own generator, so the output for one replica does not depend on which
other replicas are simulated alongside it.
"""

from dataclasses import dataclass, field
from math import ceil
from typing import Optional

import numpy as np

from .potential import Potential, TiltedPotential
from .rng import stream


class SamplerError(RuntimeError):
    """Raised when a chain cannot be trusted (bad start, acceptance out of range)."""


@dataclass(frozen=True)
class MalaConfig:
    """MALA settings.

    ``step`` is the Langevin step ``h`` of the proposal
    ``y = x - h grad V(x) + sqrt(2h) xi``. With ``warmup=None`` the warmup
    length is ``ceil(warmup_factor / (step * theta0))`` where ``theta0`` is
    the known strong-convexity constant of the target (at least
    ``curvature_floor``). ``chains=None`` runs one chain per requested draw.
    """

    count: int = 10_000
    step: float = 0.5
    warmup: Optional[int] = None
    thinning: int = 1
    chains: Optional[int] = None
    tune: bool = True
    target_accept: float = 0.574
    warmup_factor: float = 10.0
    curvature_floor: float = 0.25
    min_warmup: int = 20
    max_warmup: int = 5000
    accept_low: float = 0.2
    accept_high: float = 0.9
    reweight: bool = False
    reweight_min_ess: float = 0.5

    def warmup_length(self, theta0):
        if self.warmup is not None:
            return int(self.warmup)
        theta = max(theta0, self.curvature_floor)
        n = ceil(self.warmup_factor / (self.step * theta))
        return int(min(max(n, self.min_warmup), self.max_warmup))


@dataclass(frozen=True)
class SampleBatch:
    points: np.ndarray
    weights: Optional[np.ndarray] = None
    source: str = "mala"
    seed: Optional[int] = None
    acceptance: Optional[float] = None
    step: Optional[float] = None

    def __post_init__(self):
        pts = np.asarray(self.points, float)
        if pts.ndim != 2:
            raise ValueError("points must be a (count, n) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("non-finite sample points")
        object.__setattr__(self, "points", pts)
        if self.weights is not None:
            w = np.asarray(self.weights, float)
            if w.shape != (len(pts),) or np.any(w < 0):
                raise ValueError("weights must be nonnegative, one per point")
            if abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must sum to 1")
            object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.points)

    @property
    def n_eff(self):
        if self.weights is None:
            return float(len(self.points))
        return float(1.0 / np.sum(self.weights**2))

    def normalized_weights(self):
        if self.weights is None:
            return np.full(len(self.points), 1.0 / max(len(self.points), 1))
        return self.weights


@dataclass(frozen=True)
class MomentEstimate:
    mean: np.ndarray
    cov: np.ndarray
    n_eff: float
    mean_se: np.ndarray
    cov_se: float
    cov_se_entries: Optional[np.ndarray] = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# exact Gaussian sampler


def sample_exact_gaussian(cov, mean, count, seed, rng=None):
    """I.i.d. draws from N(mean, cov); ``cov`` may be singular PSD.

    Draws come from ``stream(seed)`` unless a generator ``rng`` is given.
    """
    cov = np.asarray(cov, float)
    mean = np.asarray(mean, float)
    n = len(mean)
    if count == 0:
        return SampleBatch(np.empty((0, n)), source="exact", seed=seed)
    lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
    if lam[0] < -1e-10 * max(1.0, abs(lam[-1])):
        raise ValueError("covariance is not positive semidefinite")
    if np.all(lam <= 0):
        return SampleBatch(np.tile(mean, (count, 1)), source="exact", seed=seed)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        # singular PSD: symmetric square root
        L = vec * np.sqrt(np.clip(lam, 0, None))
    g = rng if rng is not None else stream(seed)
    z = g.standard_normal((count, n))
    return SampleBatch(mean + z @ L.T, source="exact", seed=seed)


# ---------------------------------------------------------------------------
# MALA kernel


def _tilted_energy(base, t, cs):
    """Energy and gradient of the tilts ``(t, c_b)`` of ``base``.

    ``cs`` has shape (B, n); points have shape (B, C, n).
    """
    P = base.split.P
    cc = cs[:, None, :]

    def energy(x):
        quad = np.einsum("bci,ij,bcj->bc", x, P, x)
        return base.value(x) + 0.5 * t * quad - np.einsum("bci,bci->bc", x, np.broadcast_to(cc, x.shape))

    def grad(x):
        return base.gradient(x) + t * (x @ P) - cc

    return energy, grad


def target_curvature(base, t):
    """Known strong-convexity constant of the tilt at time ``t``."""
    return max(base.strong_convexity, min(base.eta, t))


def mala_tilted(base, t, cs, x0, step0, rngs, config, count):
    """Run MALA on the tilts ``(t, c_b)`` of ``base`` for every replica ``b``.

    Returns ``(points (B, count, n), acceptance (B,), step (B,))``. Chains
    start at ``x0`` (B, n). Acceptance is averaged over the post-tuning
    iterations.
    """
    cs = np.atleast_2d(np.asarray(cs, float))
    B, n = cs.shape
    if count == 0:
        return np.empty((B, 0, n)), np.full(B, np.nan), np.asarray(step0, float)
    C = config.chains or count
    draws = ceil(count / C)
    energy, grad = _tilted_energy(base, t, cs)

    x = np.broadcast_to(np.asarray(x0, float)[:, None, :], (B, C, n)).copy()
    ex = energy(x)
    if not np.all(np.isfinite(ex)):
        raise SamplerError("non-finite potential at the initial point")
    gx = grad(x)
    log_step = np.log(np.broadcast_to(np.asarray(step0, float), (B,)).copy())
    n_warm = config.warmup_length(target_curvature(base, t))
    n_tune = n_warm // 2 if config.tune else 0
    n_iter = n_warm + draws * config.thinning
    out = np.empty((B, draws, C, n))
    acc_sum = np.zeros(B)
    acc_cnt = 0
    d = 0
    for it in range(n_iter):
        xi = np.stack([g.standard_normal((C, n)) for g in rngs])
        logu = np.log(np.stack([g.random(C) for g in rngs]))
        h = np.exp(log_step)[:, None, None]
        y = x - h * gx + np.sqrt(2.0 * h) * xi
        with np.errstate(over="ignore", invalid="ignore"):
            ey = energy(y)
            gy = grad(y)
            rev = x - y + h * gy
            log_alpha = ex - ey - np.einsum("bci,bci->bc", rev, rev) / (4.0 * h[..., 0]) + 0.5 * np.einsum(
                "bci,bci->bc", xi, xi
            )
        log_alpha = np.where(np.isfinite(ey) & np.isfinite(log_alpha), log_alpha, -np.inf)
        accept = logu < log_alpha
        x = np.where(accept[..., None], y, x)
        ex = np.where(accept, ey, ex)
        gx = np.where(accept[..., None], gy, gx)
        rate = accept.mean(axis=1)
        if it < n_tune:
            log_step += 0.5 * (rate - config.target_accept)
        else:
            acc_sum += rate
            acc_cnt += 1
        if it >= n_warm and (it - n_warm) % config.thinning == config.thinning - 1:
            out[:, d] = x
            d += 1
    pts = out.reshape(B, draws * C, n)[:, :count]
    return pts, acc_sum / max(acc_cnt, 1), np.exp(log_step)


def check_acceptance(acc, config):
    return (acc >= config.accept_low) & (acc <= config.accept_high)


def mala_sample(p, count, config=None, seed=0, init=None, rng=None):
    """Sample ``exp(-V)`` for a Potential or TiltedPotential with MALA.

    Deterministic given ``seed`` (or the supplied generator ``rng``).
    Raises SamplerError if the tuned acceptance leaves
    ``[config.accept_low, config.accept_high]``.
    """
    config = config or MalaConfig()
    if isinstance(p, TiltedPotential):
        base, t, c = p.base, p.t, p.c
    elif isinstance(p, Potential):
        base, t, c = p, 0.0, np.zeros(p.n)
    else:
        raise TypeError("expected a Potential or TiltedPotential")
    n = base.n
    if count == 0:
        return SampleBatch(np.empty((0, n)), source="mala", seed=seed)
    x0 = base.start_point() if init is None else np.asarray(init, float)
    g = rng if rng is not None else stream(seed)
    pts, acc, step = mala_tilted(base, t, c[None, :], x0[None, :], config.step, [g], config, count)
    if not check_acceptance(acc, config)[0]:
        raise SamplerError(f"acceptance {acc[0]:.3f} outside [{config.accept_low}, {config.accept_high}] after tuning")
    return SampleBatch(pts[0], source="mala", seed=seed, acceptance=float(acc[0]), step=float(step[0]))


# ---------------------------------------------------------------------------
# moments


def batch_moments(points, weights=None):
    """Weighted mean/covariance over axis 1 of ``points`` (B, N, n).

    Returns ``mean (B, n), cov (B, n, n), n_eff (B,), mean_se (B, n),
    cov_se (B,)``; the covariance carries the unbiased factor
    ``1 / (1 - sum w^2)`` and is symmetrised and clamped to PSD.
    """
    B, N, n = points.shape
    if N < 2:
        raise ValueError("need at least 2 points")
    w = np.full((B, N), 1.0 / N) if weights is None else np.asarray(weights, float)
    sw2 = np.sum(w * w, axis=1)
    n_eff = 1.0 / sw2
    mean = np.einsum("bN,bNi->bi", w, points)
    d = points - mean[:, None, :]
    cov = np.einsum("bN,bNi,bNj->bij", w, d, d) / (1.0 - sw2)[:, None, None]
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    lam, vec = np.linalg.eigh(cov)
    if np.any(lam < 0):
        cov = np.einsum("bik,bk,bjk->bij", vec, np.clip(lam, 0, None), vec)
    mean_se = np.sqrt(np.einsum("bii->bi", cov) / n_eff[:, None])
    r2 = np.einsum("bNi,bNi->bN", d, d)
    fourth = np.einsum("bN,bN->b", w, r2 * r2)
    frob2 = np.einsum("bij,bij->b", cov, cov)
    cov_se = np.sqrt(np.clip(fourth - frob2, 0, None) / n_eff)
    return mean, cov, n_eff, mean_se, cov_se


def estimate_moments(batch):
    """Mean, unbiased covariance and Monte Carlo errors of a sample batch."""
    pts = batch.points
    if len(pts) < 2:
        raise ValueError("need at least 2 points to estimate moments")
    w = None if batch.weights is None else batch.weights[None, :]
    mean, cov, n_eff, mean_se, cov_se = batch_moments(pts[None], w)
    wn = batch.normalized_weights()
    d = pts - mean[0]
    prod = d[:, :, None] * d[:, None, :]
    var_entries = np.einsum("N,Nij->ij", wn, (prod - cov[0]) ** 2)
    return MomentEstimate(
        mean=mean[0],
        cov=cov[0],
        n_eff=float(n_eff[0]),
        mean_se=mean_se[0],
        cov_se=float(cov_se[0]),
        cov_se_entries=np.sqrt(var_entries / n_eff[0]),
    )


# ---------------------------------------------------------------------------
# reweighting fast path


def reweight_log_weights(points, P, dt, dc):
    """Log importance weights taking the tilt ``(t, c)`` to ``(t + dt, c + dc)``."""
    quad = np.einsum("...i,ij,...j->...", points, P, points)
    return -0.5 * dt * quad + np.einsum("...Ni,...i->...N", points, dc)


def reweight(batch, P, dt, dc):
    """Importance-reweight a batch to a later tilt; returns ``(batch, ess_fraction)``."""
    lw = reweight_log_weights(batch.points, P, dt, dc)
    if batch.weights is not None:
        lw = lw + np.log(np.maximum(batch.weights, 1e-300))
    lw -= lw.max()
    w = np.exp(lw)
    w /= w.sum()
    ess = 1.0 / np.sum(w * w)
    out = SampleBatch(batch.points, w, source="reweighted", seed=batch.seed)
    return out, ess / len(batch)
