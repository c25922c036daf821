"""Log-concave potentials curved on a subspace, their tilts and whitening.

A measure ``d mu = exp(-V) dx`` on R^n comes with a split R^n = E + E_perp,
where E_perp has dimension ``k`` and ``V`` is assumed to be ``eta``-convex
along E. All built-in maps accept batched points of shape ``(..., n)``.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import linalg, stats

from . import profiles
from .rng import stream


class HypothesisError(ValueError):
    """A potential violates the structural assumptions (convexity, curvature)."""


# ---------------------------------------------------------------------------
# subspace split


@dataclass(frozen=True)
class SubspaceSplit:
    """Orthonormal decomposition with the first ``k`` basis columns spanning E_perp."""

    n: int
    k: int
    basis: np.ndarray
    P: np.ndarray = field(repr=False)
    P_E: np.ndarray = field(repr=False)

    @classmethod
    def from_basis(cls, basis, k):
        basis = np.asarray(basis, float)
        n = basis.shape[0]
        if basis.shape != (n, n):
            raise ValueError("basis must be square")
        if not 1 <= k <= n:
            raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
        if np.abs(basis.T @ basis - np.eye(n)).max() > 1e-10:
            raise ValueError("basis columns are not orthonormal")
        perp = basis[:, :k]
        P = perp @ perp.T
        P = 0.5 * (P + P.T)
        return cls(n, k, basis, P, np.eye(n) - P)

    @classmethod
    def axes(cls, n, k):
        """E_perp spanned by the first ``k`` coordinate axes."""
        return cls.from_basis(np.eye(n), k)

    @classmethod
    def random(cls, n, k, seed):
        q, r = np.linalg.qr(stream(seed).standard_normal((n, n)))
        return cls.from_basis(q * np.sign(np.diag(r)), k)

    @property
    def perp(self):
        """n x k matrix whose columns span E_perp."""
        return self.basis[:, : self.k]

    @property
    def along(self):
        """n x (n-k) matrix whose columns span E."""
        return self.basis[:, self.k :]


# ---------------------------------------------------------------------------
# finite differences


def _fd_step(x):
    return 1e-5 * (1.0 + np.linalg.norm(x))


def fd_gradient(value, x):
    """Central-difference gradient of a scalar map at a single point."""
    x = np.asarray(x, float)
    h = _fd_step(x)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (value(x + e) - value(x - e)) / (2 * h)
    return g


def fd_hessian(gradient, x):
    """Central-difference Hessian from the gradient, symmetrised."""
    x = np.asarray(x, float)
    h = _fd_step(x)
    H = np.empty((x.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        H[:, j] = (gradient(x + e) - gradient(x - e)) / (2 * h)
    return 0.5 * (H + H.T)


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class Potential:
    """A convex potential with metadata.

    ``value`` is defined up to an additive constant unless
    ``log_normalizer`` is known (then ``log_normalizer = log int exp(-V)``).
    ``strong_convexity`` is a known lower bound on the full Hessian (0 if
    none). ``mean`` and ``cov`` are the exact moments when available.
    ``structure`` carries the closed-form description used by exact
    oracles (``None`` for opaque potentials).
    """

    split: SubspaceSplit
    eta: float
    value: Callable
    gradient: Callable
    hessian: Optional[Callable] = None
    support_radius: float = np.inf
    kind: str = "custom"
    strong_convexity: float = 0.0
    log_normalizer: Optional[float] = None
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    structure: Optional[dict] = field(default=None, repr=False)

    @property
    def n(self):
        return self.split.n

    @property
    def k(self):
        return self.split.k

    def hess(self, x):
        """Hessian at a single point, falling back to finite differences."""
        if self.hessian is not None:
            return self.hessian(x)
        return fd_hessian(self.gradient, x)

    def start_point(self):
        return np.zeros(self.n) if self.mean is None else np.array(self.mean, float)


def gaussian(split, cov, mean=None):
    """Gaussian potential ``(x-m)^T cov^-1 (x-m)/2 + log det(2 pi cov)/2``."""
    n = split.n
    cov = np.array(cov, float)
    if cov.shape != (n, n) or not np.allclose(cov, cov.T, atol=1e-12):
        raise ValueError("covariance must be a symmetric n x n matrix")
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        raise ValueError("covariance is not positive definite") from None
    prec = linalg.cho_solve((chol, True), np.eye(n))
    prec = 0.5 * (prec + prec.T)
    mean = np.zeros(n) if mean is None else np.asarray(mean, float)
    half_logdet = np.log(np.diag(chol)).sum() + 0.5 * n * np.log(2 * np.pi)

    def value(x):
        d = np.asarray(x, float) - mean
        return 0.5 * np.einsum("...i,ij,...j->...", d, prec, d) + half_logdet

    def gradient(x):
        return (np.asarray(x, float) - mean) @ prec

    def hessian(x):
        x = np.asarray(x, float)
        return np.broadcast_to(prec, x.shape[:-1] + (n, n)).copy()

    # largest eta with prec >= eta P_E, i.e. 1 / lambda_max of the E block of cov
    along = split.along
    eta = np.inf if along.shape[1] == 0 else float(1.0 / np.linalg.eigvalsh(along.T @ cov @ along)[-1])
    return Potential(
        split=split,
        eta=eta,
        value=value,
        gradient=gradient,
        hessian=hessian,
        kind="gaussian",
        strong_convexity=float(np.linalg.eigvalsh(prec)[0]),
        log_normalizer=0.0,
        mean=mean.copy(),
        cov=cov.copy(),
        structure={"type": "gaussian", "cov": cov, "prec": prec, "mean": mean},
    )


def flat_strong(split, eta, w="quadratic", quad=0.0, scale=None):
    """``V(x) = eta |P_E x|^2 / 2 + W(y)`` with ``y`` the E_perp coordinates.

    ``W(y) = sum_i w(s_i y_i) + quad * sum_i (s_i y_i)^2 / 2`` for the 1-d
    profile ``w`` ("quadratic", "logcosh" or "gumbel") and scales ``s``.
    """
    n, k = split.n, split.k
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    if k < n and eta == 0:
        raise ValueError("eta = 0 leaves E flat; the measure is not normalisable")
    if quad < 0:
        raise ValueError("quad must be nonnegative")
    prof_w, prof_dw, prof_ddw, ddw_inf = profiles.profile(w)
    s = np.ones(k) if scale is None else np.asarray(scale, float)
    if s.shape != (k,) or np.any(s <= 0):
        raise ValueError("scale must be k positive numbers")
    perp, P_E = split.perp, split.P_E

    def value(x):
        x = np.asarray(x, float)
        z = (x @ perp) * s
        e_part = 0.5 * eta * np.einsum("...i,ij,...j->...", x, P_E, x)
        return e_part + (prof_w(z) + 0.5 * quad * z * z).sum(axis=-1)

    def gradient(x):
        x = np.asarray(x, float)
        z = (x @ perp) * s
        return eta * (x @ P_E) + ((prof_dw(z) + quad * z) * s) @ perp.T

    def hessian(x):
        x = np.asarray(x, float)
        z = (x @ perp) * s
        d = (prof_ddw(z) + quad) * s * s
        return eta * P_E + np.einsum("ia,...a,ja->...ij", perp, d, perp)

    m = profiles.tilted_moments(w, quad, 0.0, 0.0)
    if not np.isfinite(m["log_norm"]):
        raise ValueError("profile without quadratic part is not normalisable")
    log_norm = k * float(m["log_norm"]) - np.log(s).sum()
    mean = perp @ (np.full(k, float(m["mean"])) / s)
    cov = perp @ np.diag(float(m["var"]) / s**2) @ perp.T
    if k < n:
        log_norm += 0.5 * (n - k) * np.log(2 * np.pi / eta)
        cov = cov + split.P_E / eta
    sc = min(eta if k < n else np.inf, float((ddw_inf + quad) * np.min(s * s)))
    return Potential(
        split=split,
        eta=float(eta) if k < n else np.inf,
        value=value,
        gradient=gradient,
        hessian=hessian,
        kind="flat_strong",
        strong_convexity=sc,
        log_normalizer=log_norm,
        mean=mean,
        cov=0.5 * (cov + cov.T),
        structure={"type": "separable", "w": w, "quad": float(quad), "scale": s, "eta": float(eta)},
    )


def default_truncation_radius(base, mass=1e-7):
    """Radius outside of which ``base`` carries less than ``mass``, estimated
    from its Gaussian-curvature part."""
    if base.kind == "gaussian":
        lam = float(np.linalg.eigvalsh(base.cov)[-1])
        return float(np.linalg.norm(base.mean) + np.sqrt(lam * stats.chi2.isf(mass, base.n)))
    if base.strong_convexity > 0:
        centre = np.linalg.norm(base.start_point())
        return float(centre + np.sqrt(stats.chi2.isf(mass, base.n) / base.strong_convexity))
    raise ValueError("no curvature information; supply the truncation radius explicitly")


def truncation_deficit(base, radius):
    """Mass of ``base`` outside the ball of given radius.

    Exact for centred isotropic Gaussians, an upper bound for other
    Gaussians, ``None`` otherwise.
    """
    if base.kind != "gaussian":
        return None
    lam = np.linalg.eigvalsh(base.cov)
    if np.any(base.mean != 0):
        return None
    return float(stats.chi2.sf(radius**2 / lam[-1], base.n))


def truncated(base, radius=None):
    """Restrict ``base`` to the centred ball of the given radius.

    The value is ``+inf`` outside the ball; gradient and Hessian are those of
    ``base`` and are never meant to be evaluated at the boundary.
    """
    R = default_truncation_radius(base) if radius is None else float(radius)
    if R <= 0:
        raise ValueError("truncation radius must be positive")

    def value(x):
        x = np.asarray(x, float)
        v = np.asarray(base.value(x), float)
        return np.where(np.einsum("...i,...i->...", x, x) <= R * R, v, np.inf)

    deficit = truncation_deficit(base, R)
    log_norm = None
    if base.log_normalizer is not None and deficit is not None:
        log_norm = base.log_normalizer + np.log1p(-deficit)
    return Potential(
        split=base.split,
        eta=base.eta,
        value=value,
        gradient=base.gradient,
        hessian=base.hessian,
        support_radius=R,
        kind="truncated",
        strong_convexity=base.strong_convexity,
        log_normalizer=log_norm,
        structure={"type": "truncated", "base": base, "radius": R, "deficit": deficit},
    )


def make_builtin(kind, split=None, **params):
    """Build one of the test-corpus potentials.

    ``gaussian``: ``cov`` (and optional ``mean``); ``flat_strong``: ``eta``,
    ``w``, ``quad``, ``scale``; ``truncated``: ``base`` and ``radius``.
    """
    if kind == "gaussian":
        return gaussian(split, params["cov"], params.get("mean"))
    if kind == "flat_strong":
        return flat_strong(split, **params)
    if kind == "truncated":
        return truncated(params["base"], params.get("radius"))
    raise ValueError(f"unknown potential kind {kind!r}")


# ---------------------------------------------------------------------------
# hypothesis check


@dataclass(frozen=True)
class HypothesisReport:
    """``min_restricted_eig``: smallest eigenvalue of the Hessian restricted to E;
    ``min_gap``: smallest eigenvalue of ``Hess V - eta P_E``; ``min_eig``: of ``Hess V``."""

    min_restricted_eig: float
    min_eig: float
    eta: float
    tol: float
    n_points: int
    min_gap: float = np.inf

    @property
    def passed(self):
        return (
            self.min_restricted_eig >= self.eta - self.tol
            and self.min_eig >= -self.tol
            and self.min_gap >= -self.tol
        )


def proposal_points(p, n_points, seed, scale=3.0):
    """Points covering the support: uniform in the ball if bounded, else
    Gaussian around the known mean."""
    g = stream(seed)
    n = p.n
    if np.isfinite(p.support_radius):
        d = g.standard_normal((n_points, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = p.support_radius * g.uniform(size=(n_points, 1)) ** (1.0 / n)
        return d * r * (1 - 1e-9)
    spread = scale
    if p.cov is not None:
        spread = scale * np.sqrt(np.linalg.eigvalsh(p.cov)[-1])
    return p.start_point() + spread * g.standard_normal((n_points, n))


def verify_hypothesis(p, n_points=200, seed=0, eta=None):
    """Check ``Hess V >= eta P_E`` and convexity at sampled points.

    Reports the restricted minimum eigenvalue on E and also the matrix
    inequality itself, which is stronger when E and E_perp are coupled.
    """
    eta = p.eta if eta is None else float(eta)
    tol = 1e-8 * (1.0 + (eta if np.isfinite(eta) else 0.0))
    along = p.split.along
    shift = eta * p.split.P_E if np.isfinite(eta) else 0.0
    min_r, min_all, min_gap = np.inf, np.inf, np.inf
    for x in proposal_points(p, n_points, seed):
        H = np.asarray(p.hess(x), float)
        if not np.all(np.isfinite(H)):
            raise HypothesisError(f"non-finite Hessian at {x}")
        H = 0.5 * (H + H.T)
        min_all = min(min_all, np.linalg.eigvalsh(H)[0])
        if along.shape[1]:
            min_r = min(min_r, np.linalg.eigvalsh(along.T @ H @ along)[0])
            min_gap = min(min_gap, np.linalg.eigvalsh(H - shift)[0])
    return HypothesisReport(float(min_r), float(min_all), eta, tol, n_points, float(min_gap))


# ---------------------------------------------------------------------------
# whitening


def whiten(p, K):
    """Change variables so that the E_perp block of the covariance is the identity.

    With ``Q`` the E_perp block of ``K`` (in the split's basis) the linear map
    is ``S = ||Q||^(1/2)`` on E and ``Q^(1/2)`` on E_perp. Returns the
    potential of ``S^-1 X`` (``x -> V(Sx) - log det S``) and ``S``; the new
    potential is ``||Q|| eta``-convex along E.
    """
    K = np.asarray(K, float)
    split = p.split
    perp, along = split.perp, split.along
    Q = perp.T @ K @ perp
    Q = 0.5 * (Q + Q.T)
    lam, vec = np.linalg.eigh(Q)
    if lam[0] <= 1e-12 * max(lam[-1], 1.0):
        raise ValueError("singular E_perp covariance block; degenerate marginal")
    q_norm = lam[-1]
    root = vec @ np.diag(np.sqrt(lam)) @ vec.T
    S = np.sqrt(q_norm) * (along @ along.T) + perp @ root @ perp.T
    S = 0.5 * (S + S.T)
    S_inv = np.linalg.inv(S)
    S_inv = 0.5 * (S_inv + S_inv.T)
    logdet = float(np.linalg.slogdet(S)[1])
    eta_new = q_norm * p.eta
    mean = None if p.mean is None else S_inv @ p.mean
    cov = None if p.cov is None else S_inv @ p.cov @ S_inv
    if cov is not None:
        cov = 0.5 * (cov + cov.T)

    if p.kind == "gaussian":
        return gaussian(split, cov, mean), S

    st = p.structure or {}
    q_offdiag = np.abs(Q - np.diag(np.diag(Q))).max()
    if st.get("type") == "separable" and q_offdiag <= 1e-12 * q_norm:
        new = flat_strong(
            split,
            eta=st["eta"] * q_norm,
            w=st["w"],
            quad=st["quad"],
            scale=st["scale"] * np.sqrt(np.diag(Q)),
        )
        return new, S

    def value(x):
        return p.value(np.asarray(x, float) @ S) - logdet

    def gradient(x):
        return p.gradient(np.asarray(x, float) @ S) @ S

    hessian = None
    if p.hessian is not None:

        def hessian(x):
            return S @ p.hessian(np.asarray(x, float) @ S) @ S

    lam_S = np.linalg.eigvalsh(S)
    new = Potential(
        split=split,
        eta=eta_new,
        value=value,
        gradient=gradient,
        hessian=hessian,
        support_radius=p.support_radius / lam_S[0],
        kind="whitened",
        strong_convexity=p.strong_convexity * lam_S[0] ** 2,
        log_normalizer=p.log_normalizer,
        mean=mean,
        cov=cov,
    )
    return new, S


# ---------------------------------------------------------------------------
# tilts


@dataclass(frozen=True)
class TiltedMoments:
    """Exact moments of a tilted measure.

    ``third`` is the central third-moment tensor of the E_perp coordinates
    ``Y = perp^T X``.
    """

    mean: np.ndarray
    cov: np.ndarray
    third: np.ndarray


@dataclass(frozen=True)
class TiltedPotential:
    """``V_t(x) = V(x) + t x^T P x / 2 - c . x + log Z_t``.

    ``log_partition`` is ``log int exp(-V - t x^T P x/2 + c.x)``, so that
    ``exp(-V_t)`` is a probability density.
    """

    base: Potential
    t: float
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, float))

    @property
    def split(self):
        return self.base.split

    @property
    def eta(self):
        return self.base.eta

    def unnormalized(self, x):
        x = np.asarray(x, float)
        P = self.base.split.P
        quad = np.einsum("...i,ij,...j->...", x, P, x)
        return self.base.value(x) + 0.5 * self.t * quad - x @ self.c

    def value(self, x):
        return self.unnormalized(x) + self.log_partition

    def gradient(self, x):
        x = np.asarray(x, float)
        return self.base.gradient(x) + self.t * (x @ self.base.split.P) - self.c

    def hess(self, x):
        return self.base.hess(x) + self.t * self.base.split.P

    @property
    def hessian_floor(self):
        """Guaranteed lower bound ``min(eta, t)`` on the Hessian."""
        return min(self.base.eta, self.t)

    @cached_property
    def log_partition(self):
        st = self.base.structure or {}
        kind = st.get("type")
        if kind == "gaussian":
            prec, m = st["prec"], st["mean"]
            A = prec + self.t * self.base.split.P
            h = prec @ m + self.c
            sol = np.linalg.solve(A, h)
            _, logdet = np.linalg.slogdet(st["cov"] @ A)
            return float(0.5 * h @ sol - 0.5 * m @ prec @ m - 0.5 * logdet)
        if kind == "separable":
            return float(_separable(self.base, self.t, self.c[None, :])["log_norm"][0])
        raise ValueError(f"no closed-form partition function for kind {self.base.kind!r}")

    def exact_moments(self):
        """Closed-form or quadrature moments; ``None`` for opaque potentials."""
        out = exact_tilted_moments(self.base, self.t, self.c[None, :])
        if out is None:
            return None
        mean, cov, third = out
        return TiltedMoments(mean[0], cov[0], third[0])


def _separable(p, t, c):
    """Per-coordinate quadrature for separable potentials, batched over ``c`` (B, n)."""
    st = p.structure
    s = st["scale"]
    cy = c @ p.split.perp  # (B, k)
    m = profiles.tilted_moments(st["w"], st["quad"], t / s**2, cy / s)
    k = p.k
    out = {
        "mean": m["mean"] / s,
        "var": m["var"] / s**2,
        "k3": m["k3"] / s**3,
        "log_norm": (m["log_norm"] - np.log(s)).sum(axis=1),
    }
    if k < p.n:
        out["log_norm"] = out["log_norm"] + 0.5 * (p.n - k) * np.log(2 * np.pi / st["eta"])
    return out


def exact_tilted_moments(p, t, c):
    """Exact ``(mean, cov, third)`` of the tilts of ``p`` at time ``t`` for a
    batch of tilt vectors ``c`` of shape (B, n); ``None`` if unavailable."""
    st = p.structure or {}
    c = np.atleast_2d(np.asarray(c, float))
    B = c.shape[0]
    n, k = p.n, p.k
    if st.get("type") == "gaussian":
        A = st["prec"] + t * p.split.P
        Kt = np.linalg.inv(A)
        Kt = 0.5 * (Kt + Kt.T)
        mean = (st["prec"] @ st["mean"] + c) @ Kt
        cov = np.broadcast_to(Kt, (B, n, n)).copy()
        return mean, cov, np.zeros((B, k, k, k))
    if st.get("type") == "separable":
        m = _separable(p, t, c)
        perp = p.split.perp
        mean = m["mean"] @ perp.T
        cov = np.einsum("ia,ba,ja->bij", perp, m["var"], perp)
        if k < n:
            cov = cov + p.split.P_E / st["eta"]
        third = np.zeros((B, k, k, k))
        idx = np.arange(k)
        third[:, idx, idx, idx] = m["k3"]
        return mean, cov, third
    return None


def separable_halfspace_cdf(p, t, c, theta, m):
    """Exact ``P(X . theta <= m)`` under the tilt, for Gaussian potentials
    (any ``theta``) or separable ones (``theta`` a basis axis).

    ``c`` has shape (B, n); returns shape (B,).
    """
    st = p.structure or {}
    c = np.atleast_2d(np.asarray(c, float))
    theta = np.asarray(theta, float)
    theta = theta / np.linalg.norm(theta)
    if st.get("type") == "gaussian":
        mean, cov, _ = exact_tilted_moments(p, t, c)
        sd = np.sqrt(theta @ cov[0] @ theta)
        return stats.norm.cdf((m - mean @ theta) / sd)
    if st.get("type") != "separable":
        raise ValueError("no exact half-space measure for this potential")
    coords = p.split.basis.T @ theta
    j = int(np.argmax(np.abs(coords)))
    if abs(abs(coords[j]) - 1.0) > 1e-10:
        raise ValueError("separable half-space oracle needs theta along a basis axis")
    sign = np.sign(coords[j])
    if j >= p.k:
        # E coordinates are untouched N(0, 1/eta)
        return np.full(c.shape[0], stats.norm.cdf(m * np.sqrt(st["eta"])))
    s = st["scale"][j]
    cy = c @ p.split.perp[:, j]
    if sign > 0:
        # y_j <= m  <=>  z <= s m
        res = profiles.tilted_moments(st["w"], st["quad"], t / s**2, cy / s, cdf_at=np.full_like(cy, s * m))
        return res["cdf"]
    res = profiles.tilted_moments(st["w"], st["quad"], t / s**2, cy / s, cdf_at=np.full_like(cy, -s * m))
    return 1.0 - res["cdf"]


__all__ = [
    "HypothesisError",
    "HypothesisReport",
    "Potential",
    "SubspaceSplit",
    "TiltedMoments",
    "TiltedPotential",
    "default_truncation_radius",
    "exact_tilted_moments",
    "fd_gradient",
    "fd_hessian",
    "flat_strong",
    "gaussian",
    "make_builtin",
    "separable_halfspace_cdf",
    "truncated",
    "truncation_deficit",
    "verify_hypothesis",
    "whiten",
]
