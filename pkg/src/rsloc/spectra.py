"""Spectral potential of the projected covariance and its drift terms.

For the k x k projected covariance ``Q_t`` with eigenvalues
``lambda_1 >= ... >= lambda_k`` the potential is
``Gamma_t = sum_i lambda_i ** p`` with ``p = max(log k, 1)``. Its root
``Gamma_t ** (1/p)`` evolves with martingale part ``v_t . dW_t`` and a drift
bounded by ``delta_upper``; both are functions of the eigenvalues and the
third central moments ``u_ij`` of the marginal in the eigenbasis.

Functions with a ``_batch`` suffix take a leading replica axis.
"""

from dataclasses import dataclass
import warnings

import numpy as np
from scipy import stats


def default_p(k):
    return max(np.log(k), 1.0)


@dataclass(frozen=True)
class SpectralSnapshot:
    lambdas: np.ndarray
    eigvecs: np.ndarray
    p: float
    gamma: float
    gamma_root: float

    @property
    def op_norm(self):
        return float(self.lambdas[0])


@dataclass(frozen=True)
class ThirdMoments:
    """``u[i, j]`` is the k-vector ``E[Z_i Z_j Z]`` of the centred marginal in the eigenbasis."""

    u: np.ndarray
    se: np.ndarray

    @property
    def se_norm(self):
        return float(np.sqrt(np.sum(self.se**2)))


def eig_desc_batch(Q):
    """Eigenvalues (descending) and eigenvectors of a stack of symmetric matrices."""
    lam, vec = np.linalg.eigh(0.5 * (Q + np.swapaxes(Q, -1, -2)))
    return lam[..., ::-1], vec[..., ::-1]


def snapshot(Q, k=None, p=None):
    Q = np.atleast_2d(np.asarray(Q, float))
    k = Q.shape[0] if k is None else k
    if Q.shape != (k, k):
        raise ValueError(f"expected a {k}x{k} matrix")
    asym = np.abs(Q - Q.T).max()
    if asym > 1e-8:
        raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.2e})")
    lam, vec = eig_desc_batch(Q)
    if lam[-1] < -1e-8:
        warnings.warn(f"eigenvalue {lam[-1]:.3e} below -1e-8 clamped to 0", RuntimeWarning, stacklevel=2)
    lam = np.clip(lam, 0.0, None)
    p = default_p(k) if p is None else float(p)
    gamma = float(np.sum(lam**p))
    return SpectralSnapshot(lam, vec, p, gamma, gamma ** (1.0 / p))


# ---------------------------------------------------------------------------
# third moments


def third_moments(batch, b, eigvecs):
    """Monte Carlo third central moments of a marginal batch in the eigenbasis.

    ``batch`` holds points of the marginal ``Y`` (k coordinates) and ``b`` is
    its barycenter.
    """
    Y = np.asarray(batch.points, float)
    if len(Y) == 0:
        raise ValueError("empty batch")
    w = batch.normalized_weights()
    Z = (Y - np.asarray(b, float)) @ np.asarray(eigvecs, float)
    prod = np.einsum("Ni,Nj,Nl->Nijl", Z, Z, Z)
    u = np.einsum("N,Nijl->ijl", w, prod)
    var = np.einsum("N,Nijl->ijl", w, (prod - u) ** 2)
    return ThirdMoments(u, np.sqrt(var * np.sum(w * w)))


def third_moments_batch(Z, w):
    """``u (B, k, k, k)`` and Frobenius-scale SE ``(B,)`` from centred
    eigenbasis coordinates ``Z (B, N, k)`` and weights ``w (B, N)``."""
    u = np.einsum("bN,bNi,bNj,bNl->bijl", w, Z, Z, Z, optimize=True)
    r2 = np.einsum("bNi,bNi->bN", Z, Z)
    sixth = np.einsum("bN,bN->b", w, r2**3)
    frob2 = np.einsum("bijl,bijl->b", u, u)
    se = np.sqrt(np.clip(sixth - frob2, 0, None) * np.sum(w * w, axis=1))
    return u, se


# ---------------------------------------------------------------------------
# drift terms


def _pow(lam, e):
    # lambda ** e with 0 ** e := 0 (degenerate directions carry no moments)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(lam > 0, np.abs(lam) ** e, 0.0)


def drift_terms_batch(lam, u, p):
    """``v (..., k)`` and ``delta_upper (...)`` for eigenvalues ``lam (..., k)``
    and third moments ``u (..., k, k, k)``."""
    lam = np.clip(lam, 0.0, None)
    gamma = np.sum(lam**p, axis=-1)
    if np.any(gamma <= 0):
        raise ValueError("zero spectral potential: degenerate covariance")
    pref = gamma ** (1.0 / p - 1.0)
    diag = np.einsum("...iil->...il", u)
    v = pref[..., None] * np.einsum("...i,...il->...l", _pow(lam, p - 1.0), diag)
    sq = np.einsum("...ijl,...ijl->...ij", u, u)
    delta = (p - 1.0) * pref * np.einsum("...i,...ij->...", _pow(lam, p - 2.0), sq)
    return v, delta


def drift_terms(snap, third):
    """Martingale coefficient ``v`` and the upper bound on the drift of
    ``Gamma ** (1/p)`` for one snapshot."""
    u = third.u if isinstance(third, ThirdMoments) else np.asarray(third, float)
    v, delta = drift_terms_batch(snap.lambdas, u, snap.p)
    return {"v": v, "delta_upper": float(delta)}


def delta_upper_inflated(lam, u, p, se):
    """``delta_upper`` with every ``|u_ij|`` pushed up by ``3 se`` (MC tolerance)."""
    lam = np.clip(lam, 0.0, None)
    gamma = np.sum(lam**p, axis=-1)
    pref = gamma ** (1.0 / p - 1.0)
    norms = np.sqrt(np.einsum("...ijl,...ijl->...ij", u, u)) + 3.0 * np.asarray(se)[..., None, None]
    return (p - 1.0) * pref * np.einsum("...i,...ij->...", _pow(lam, p - 2.0), norms**2)


# ---------------------------------------------------------------------------
# bound checks


@dataclass(frozen=True)
class BoundCheck:
    constant: float
    limit: float
    passed: bool
    detail: dict


def check_vt_bound(v, gamma_root, c_max=20.0):
    """Fit ``c_hat = max |v| / gamma_root ** 1.5`` and compare with ``c_max``."""
    v = np.atleast_2d(np.asarray(v, float))
    gr = np.atleast_1d(np.asarray(gamma_root, float))
    if len(gr) == 0:
        raise ValueError("empty series")
    ratio = np.linalg.norm(v, axis=-1) / gr**1.5
    c_hat = float(np.max(ratio))
    return BoundCheck(c_hat, c_max, bool(c_hat <= c_max), {"n": int(len(gr)), "mean_ratio": float(ratio.mean())})


def check_delta_bound(delta_upper, gamma, p, psi_k=1.0, delta_hi=None):
    """Ratio ``delta_upper / (4 p Gamma^(2/p) psi_k^2)``, maximised over the series.

    ``delta_hi`` (same shape) is ``delta_upper`` recomputed with third
    moments inflated by their Monte Carlo error; the tolerance is the largest
    resulting increase of the ratio.
    """
    if psi_k <= 0:
        raise ValueError("psi_k must be positive")
    d = np.atleast_1d(np.asarray(delta_upper, float))
    g = np.atleast_1d(np.asarray(gamma, float))
    denom = 4.0 * p * g ** (2.0 / p) * psi_k**2
    ratio = d / denom
    tol = 0.0 if delta_hi is None else float(np.max((np.asarray(delta_hi) - d) / denom))
    r = float(np.max(ratio))
    return BoundCheck(r, 1.0 + tol, bool(r <= 1.0 + tol), {"tol_mc": tol, "n": int(len(d))})


def gamma_drift_identity(k, t, p=None, h=1e-4):
    """Central-difference ``d Gamma / dt`` along the Gaussian replay
    ``Q_t = I_k / (1 + t)`` next to ``-p sum lambda ** (p + 1)``."""
    p = default_p(k) if p is None else p

    def gamma(s):
        return snapshot(np.eye(k) / (1.0 + s), k, p).gamma

    fd = (gamma(t + h) - gamma(t - h)) / (2 * h)
    lam = snapshot(np.eye(k) / (1.0 + t), k, p).lambdas
    return {"fd": fd, "drift": -p * float(np.sum(lam ** (p + 1))), "closed_form": -p * k / (1.0 + t) ** (p + 1)}


def exit_time_stats(paths, threshold=10.0, horizon=None, c1=0.1):
    """Empirical ``P(max_{s<=t} ||Q_s||_op >= threshold)`` on the common grid.

    Returns per-time fractions, a one-sided 95% Clopper-Pearson upper bound
    and the reference curve ``exp(-c1 / t)`` (``c1`` is a configurable,
    non-derived constant).
    """
    live = [p for p in paths if not p.censored]
    if not live:
        raise ValueError("no uncensored paths")
    times = live[0].times
    if horizon is not None:
        keep = times <= horizon + 1e-12
        times = times[keep]
    m = len(times)
    running = np.array([np.maximum.accumulate(p.q_norm[:m]) for p in live])
    hits = (running >= threshold).sum(axis=0)
    N = len(live)
    frac = hits / N
    upper = np.where(hits < N, stats.beta.ppf(0.95, hits + 1, N - hits), 1.0)
    with np.errstate(divide="ignore"):
        ref = np.where(times > 0, np.exp(-c1 / np.where(times > 0, times, 1.0)), 0.0)
    return {
        "times": times,
        "fraction": frac,
        "upper95": upper,
        "reference": ref,
        "n_paths": N,
        "rule_of_three": 3.0 / N,
    }


def martingale_part_qv(paths):
    """Ensemble means of ``sum (d Gamma^(1/p))^2`` and ``sum |v|^2 dt``."""
    emp, pred = [], []
    for p in paths:
        if p.censored or p.spectra is None:
            continue
        gr = p.spectra["gamma_root"]
        v = p.spectra["v"]
        dt = np.diff(p.times)
        emp.append(np.sum(np.diff(gr) ** 2))
        pred.append(np.sum(np.sum(v[:-1] ** 2, axis=1) * dt))
    emp, pred = np.array(emp), np.array(pred)
    return {
        "empirical": float(emp.mean()),
        "predicted": float(pred.mean()),
        "se": float(emp.std(ddof=1) / np.sqrt(len(emp))) if len(emp) > 1 else np.inf,
        "n_paths": len(emp),
    }
