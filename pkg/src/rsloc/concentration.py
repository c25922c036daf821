"""Empirical concentration functions over half-space families.

For ``S = {x . theta <= m}`` the r-extension is ``{x . theta <= m + r}``,
so every set measure and extension is a one-dimensional computation on the
projections ``x . theta``.
"""

from dataclasses import dataclass, field

import numpy as np

from .rng import AUX, stream
from .sampler import SampleBatch


@dataclass(frozen=True)
class HalfSpace:
    """``{x : x . theta <= m}`` with ``theta`` normalised on construction."""

    theta: np.ndarray
    m: float

    def __post_init__(self):
        th = np.asarray(self.theta, float)
        nrm = np.linalg.norm(th)
        if nrm == 0 or not np.isfinite(nrm):
            raise ValueError("theta must be a nonzero finite vector")
        object.__setattr__(self, "theta", th / nrm)
        object.__setattr__(self, "m", float(self.m))

    @classmethod
    def full_space(cls, n):
        return cls(np.eye(n)[0], np.inf)

    def contains(self, x):
        return np.asarray(x, float) @ self.theta <= self.m

    def distance(self, x):
        """Euclidean distance to the half-space."""
        return np.maximum(np.asarray(x, float) @ self.theta - self.m, 0.0)

    def extend(self, r):
        if r < 0:
            raise ValueError("radius must be nonnegative")
        return HalfSpace(self.theta, self.m + r)


@dataclass(frozen=True)
class ConcentrationCurve:
    """``alpha[i]`` = max over the direction family of the mass beyond ``m + radii[i]``."""

    radii: np.ndarray
    alpha: np.ndarray
    se: np.ndarray
    family_size: int
    worst_index: np.ndarray
    directions: np.ndarray = field(repr=False)
    labels: tuple = field(default=(), repr=False)
    n_eff: float = np.inf

    def at(self, r):
        """Linear interpolation of the curve."""
        return float(np.interp(r, self.radii, self.alpha))


def _points_weights(batch):
    pts = np.asarray(batch.points, float)
    if len(pts) == 0:
        raise ValueError("empty batch")
    return pts, batch.normalized_weights()


def weighted_quantile(values, weights, q):
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cw = np.cumsum(w)
    j = int(np.searchsorted(cw, q * cw[-1] - 1e-15))
    return float(v[min(j, len(v) - 1)])


def median_halfspace(batch, theta):
    """Half-space ``{x . theta <= m}`` with ``m`` the (weighted) median of ``x . theta``."""
    pts, w = _points_weights(batch)
    th = np.asarray(theta, float)
    if np.linalg.norm(th) == 0:
        raise ValueError("theta must be nonzero")
    th = th / np.linalg.norm(th)
    proj = pts @ th
    if batch.weights is None:
        return HalfSpace(th, float(np.median(proj)))
    return HalfSpace(th, weighted_quantile(proj, w, 0.5))


def direction_family(n, cov=None, n_random=64, seed=0):
    """Unit directions: +-axes, +-eigenvectors of ``cov`` and ``n_random`` random ones.

    Returns ``(directions (D, n), labels)``.
    """
    dirs, labels = [], []
    for i in range(n):
        for sgn in (1.0, -1.0):
            dirs.append(sgn * np.eye(n)[i])
            labels.append(f"{'+' if sgn > 0 else '-'}axis{i}")
    if cov is not None:
        lam, vec = np.linalg.eigh(np.asarray(cov, float))
        for i in np.argsort(lam)[::-1]:
            for sgn in (1.0, -1.0):
                dirs.append(sgn * vec[:, i])
                labels.append(f"{'+' if sgn > 0 else '-'}eig{len(lam) - 1 - i}")
    if n_random:
        g = stream(seed, 0, AUX)
        R = g.standard_normal((n_random, n))
        R /= np.linalg.norm(R, axis=1, keepdims=True)
        dirs.extend(R)
        labels.extend(f"rand{i}" for i in range(n_random))
    return np.array(dirs), tuple(labels)


def _tails(pts, w, dirs, radii):
    """Median offsets (D,) and masses beyond ``m + r`` (D, R) for each direction."""
    proj = pts @ dirs.T  # (N, D)
    unweighted = np.allclose(w, w[0])
    if unweighted:
        med = np.median(proj, axis=0)
    else:
        med = np.array([weighted_quantile(proj[:, d], w, 0.5) for d in range(dirs.shape[0])])
    tails = np.empty((dirs.shape[0], len(radii)))
    for d in range(dirs.shape[0]):
        order = np.sort(proj[:, d]) if unweighted else None
        if unweighted:
            beyond = len(order) - np.searchsorted(order, med[d] + radii, side="right")
            tails[d] = beyond / len(order)
        else:
            tails[d] = [(w * (proj[:, d] > med[d] + r)).sum() for r in radii]
    return med, tails


def alpha_curve(batch, directions=64, radii=None, seed=0, cov=None):
    """Half-space concentration function of the empirical measure.

    ``directions`` is an explicit (D, n) array or a count of random unit
    vectors added to the axes and covariance eigenvectors (the batch
    covariance unless ``cov`` is given).
    """
    pts, w = _points_weights(batch)
    radii = np.linspace(0.0, 4.0, 41) if radii is None else np.asarray(radii, float)
    if np.any(radii < 0):
        raise ValueError("radii must be nonnegative")
    if np.isscalar(directions):
        if cov is None:
            mu = w @ pts
            cov = np.einsum("N,Ni,Nj->ij", w, pts - mu, pts - mu)
        dirs, labels = direction_family(pts.shape[1], cov, int(directions), seed)
    else:
        dirs = np.atleast_2d(np.asarray(directions, float))
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        labels = tuple(f"dir{i}" for i in range(len(dirs)))
    _, tails = _tails(pts, w, dirs, radii)
    worst = np.argmax(tails, axis=0)
    alpha = tails[worst, np.arange(len(radii))]
    # each direction's tail is nonincreasing in r, and so is their max;
    # the running minimum only guards against ties in floating point
    alpha = np.minimum.accumulate(alpha)
    n_eff = 1.0 / np.sum(w * w)
    se = np.sqrt(alpha * (1 - alpha) / n_eff)
    return ConcentrationCurve(radii, alpha, se, len(dirs), worst, dirs, labels, float(n_eff))


def _alpha_upper(curve, z=3.0):
    # conservative tail: alpha + z SE, and the rule of three where no point lies beyond
    return np.where(curve.alpha > 0, curve.alpha + z * curve.se, 3.0 / curve.n_eff)


# ---------------------------------------------------------------------------
# concentration inequalities


def check_strong_logconcave_bound(batch, sets, t, radii, z=3.0):
    """``mu(S_r^c) <= exp(-t r^2 / 4) / mu(S)`` for each half-space and radius,
    for a ``t``-strongly log-concave law."""
    if t <= 0:
        raise ValueError("t must be positive")
    pts, w = _points_weights(batch)
    n_eff = 1.0 / np.sum(w * w)
    radii = np.asarray(radii, float)
    rows = []
    for i, S in enumerate(sets):
        proj = pts @ S.theta
        mu_s = float(np.sum(w * (proj <= S.m)))
        for r in radii:
            emp = float(np.sum(w * (proj > S.m + r)))
            se = np.sqrt(emp * (1 - emp) / n_eff)
            bound = np.inf if mu_s == 0 else np.exp(-t * r * r / 4.0) / mu_s
            rows.append({"set": i, "r": float(r), "mu_S": mu_s, "empirical": emp, "se": float(se),
                         "bound": float(bound), "passed": bool(emp <= bound + z * se)})
    return {"rows": rows, "passed": all(r["passed"] for r in rows)}


def concentration_rate(r, eta, k, q_norm, psi_k=1.0):
    """``min(r / sqrt(||Q||), r^2 min(eta, 1 / (psi_k^2 max(log k, 1) ||Q||)))``.

    ``eta = inf`` gives the form for measures without a flat part.
    """
    r = np.asarray(r, float)
    curv = min(eta, 1.0 / (psi_k**2 * max(np.log(k), 1.0) * q_norm))
    return np.minimum(r / np.sqrt(q_norm), r * r * curv)


def check_concentration_rate(curve, eta, k, q_norm, psi_k=1.0, prefactor=1.0, r_max=None):
    """Fit ``c_hat`` with ``alpha(r) <= prefactor * exp(-c_hat g(r))`` on the grid.

    ``c_hat`` is the largest constant consistent with the conservative
    curve (alpha plus 3 SE, rule of three where empty). Shape checks:
    ``-log alpha`` is nondecreasing and ``-log alpha(r) / r`` stays bounded
    below on the upper half of the grid.
    """
    r = curve.radii
    keep = r > 0 if r_max is None else (r > 0) & (r <= r_max)
    g = concentration_rate(r[keep], eta, k, q_norm, psi_k)
    a_hi = np.minimum(_alpha_upper(curve)[keep], 1.0)
    neglog = np.log(prefactor) - np.log(a_hi)
    ratios = neglog / g
    c_hat = float(np.min(ratios))
    raw = -np.log(np.where(curve.alpha > 0, curve.alpha, np.nan))
    finite = raw[np.isfinite(raw)]
    monotone = bool(np.all(np.diff(finite) >= -1e-12))
    rr = r[keep]
    upper = rr >= 0.5 * rr.max()
    lin = neglog[upper] / rr[upper]
    quad = neglog / (rr * rr)
    return {
        "c_hat": c_hat,
        "ratios": ratios,
        "radii": rr,
        "rate": g,
        "neglog_alpha": neglog,
        "monotone": monotone,
        "linear_floor": float(np.min(lin)),
        "quadratic_floor": float(np.min(quad)),
        "passed": bool(c_hat > 0 and monotone and np.min(lin) > 0),
    }


def poincare_proxies(batch, curve, eta=np.inf, k=None, psi_k=1.0, split=None):
    """Lower-side Poincare proxies next to the right-hand side of the Poincare bound.

    ``alpha_inv_quarter`` is the first radius where the curve reaches 1/4
    (linear interpolation); ``rayleigh_lower`` is the square root of the top
    covariance eigenvalue (linear test functions).
    """
    a = curve.alpha
    below = np.flatnonzero(a <= 0.25)
    if len(below) == 0:
        raise ValueError("curve never reaches 1/4; extend the radius grid")
    j = below[0]
    if j == 0:
        r_q = float(curve.radii[0])
    else:
        r0, r1, a0, a1 = curve.radii[j - 1], curve.radii[j], a[j - 1], a[j]
        r_q = float(r0 + (a0 - 0.25) * (r1 - r0) / (a0 - a1))
    pts, w = _points_weights(batch)
    mu = w @ pts
    cov = np.einsum("N,Ni,Nj->ij", w, pts - mu, pts - mu)
    rayleigh = float(np.sqrt(np.linalg.eigvalsh(cov)[-1]))
    out = {"alpha_inv_quarter": r_q, "rayleigh_lower": rayleigh}
    if split is not None:
        Q = split.perp.T @ cov @ split.perp
        q = float(np.linalg.eigvalsh(Q)[-1])
        kk = split.k if k is None else k
        out["poincare_upper"] = float(max(1.0 / np.sqrt(eta), np.sqrt(q) * psi_k * np.sqrt(max(np.log(kk), 1.0))))
    return out


def lipschitz_tail(batch, g, L, radii, curve=None, affine=False, z=3.0):
    """Deviation curve ``P(g(X) >= median + L r)``.

    Next to a half-space curve it is a hard check only for affine ``g``
    (where both describe the same half-spaces); otherwise it is reported.
    """
    if L <= 0:
        raise ValueError("L must be positive")
    pts, w = _points_weights(batch)
    vals = np.asarray(g(pts), float)
    med = weighted_quantile(vals, w, 0.5)
    radii = np.asarray(radii, float)
    tail = np.array([np.sum(w * (vals >= med + L * r)) for r in radii])
    n_eff = 1.0 / np.sum(w * w)
    se = np.sqrt(tail * (1 - tail) / n_eff)
    out = {"radii": radii, "median": med, "tail": tail, "se": se}
    if curve is not None:
        alpha = np.interp(radii, curve.radii, curve.alpha)
        aset = np.interp(radii, curve.radii, curve.se)
        out["alpha"] = alpha
        ok = tail <= alpha + z * np.sqrt(se**2 + aset**2)
        out["within_alpha"] = ok
        out["passed"] = bool(np.all(ok)) if affine else None
    return out


def norm_deviation_shape(batch, ts, t0=2.0, z=3.0):
    """``-log P(|X| >= t sqrt(n))`` grows at least linearly in ``t >= t0``:
    the per-unit rate at every ``t > t0`` (tail taken at its upper 3-SE
    bound) is at least the point estimate at ``t0``. Empty tails count as
    infinitely fast decay."""
    pts, w = _points_weights(batch)
    n = pts.shape[1]
    norms = np.linalg.norm(pts, axis=1)
    ts = np.asarray(ts, float)
    n_eff = 1.0 / np.sum(w * w)
    tail = np.array([np.sum(w * (norms >= t * np.sqrt(n))) for t in ts])
    se = np.sqrt(tail * (1 - tail) / n_eff)
    i0 = int(np.argmin(np.abs(ts - t0)))
    if tail[i0] <= 0:
        raise ValueError("no sample beyond the reference radius; use a larger batch or smaller t0")
    base = -np.log(tail[i0]) / ts[i0]
    later = ts > ts[i0]
    hi = np.minimum(tail + z * se, 1.0)
    rate = np.where(tail > 0, -np.log(hi) / ts, np.inf)
    ok = rate[later] >= base
    return {"t": ts, "tail": tail, "se": se, "rate": rate, "reference_rate": float(base), "passed": bool(np.all(ok))}


def whitening_transfer_check(batch_tilde, S, radii, n_random=64, seed=0, z=3.0):
    """``alpha_mu(r) <= alpha_mu_tilde(r / lambda_1(S))`` with common random numbers.

    ``batch_tilde`` samples the whitened law; ``X = S X_tilde`` samples the
    original one. Each original direction ``theta`` maps to ``S theta`` on
    the whitened side, so the two curves are computed on matched families.
    """
    pts_t, w = _points_weights(batch_tilde)
    S = np.asarray(S, float)
    pts = pts_t @ S.T
    radii = np.asarray(radii, float)
    n = S.shape[0]
    mu = w @ pts
    cov = np.einsum("N,Ni,Nj->ij", w, pts - mu, pts - mu)
    dirs, _ = direction_family(n, cov, n_random, seed)
    mapped = dirs @ S
    lam1 = float(np.linalg.svd(S, compute_uv=False)[0])
    orig = alpha_curve(SampleBatch(pts, batch_tilde.weights), dirs, radii)
    white = alpha_curve(batch_tilde, mapped, radii / lam1)
    ok = orig.alpha <= white.alpha + z * np.sqrt(orig.se**2 + white.se**2)
    return {
        "radii": radii,
        "alpha": orig.alpha,
        "alpha_whitened": white.alpha,
        "lambda1": lam1,
        "passed": bool(np.all(ok)),
        "excess": float(np.max(orig.alpha - white.alpha)),
    }
