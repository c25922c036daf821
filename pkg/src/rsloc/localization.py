"""Restricted stochastic localization driven through its tilt vector.

The random measure at time ``t`` has density proportional to
``exp(-t x^T P x / 2 + c_t . x) f(x)``, and the tilt follows
``dc_t = P dB_t + P a_t dt`` with ``a_t`` the barycenter of the current
measure. Paths are integrated with explicit Euler-Maruyama on ``c_t``;
``a_t`` and ``K_t`` come either from MALA samples of the tilted measure
(``moments="mala"``) or from closed forms / quadrature when the base
potential admits them (``moments="exact"``).

Ensembles are advanced in lockstep with a leading replica axis. Replica
``r`` draws its Brownian increments and its sampler noise from its own
streams, so a path depends only on ``(seed, r)``.
"""

from dataclasses import dataclass, field
from math import ceil
from typing import Optional

import numpy as np
from scipy import integrate, stats

from . import rng as rngmod
from . import spectra as sp
from .concentration import HalfSpace
from .potential import TiltedPotential, exact_tilted_moments, separable_halfspace_cdf
from .sampler import (
    MalaConfig,
    SampleBatch,
    SamplerError,
    batch_moments,
    check_acceptance,
    mala_tilted,
    reweight_log_weights,
)


@dataclass(frozen=True)
class LocalizationState:
    t: float
    c: np.ndarray
    a: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    moment_error: float = 0.0
    step_size: Optional[float] = None
    batch: Optional[SampleBatch] = field(default=None, repr=False, compare=False)

    def tilt(self, p):
        return TiltedPotential(p, self.t, self.c)


@dataclass
class PathRecord:
    """Columnar record of one path on its time grid (write once, then read only)."""

    times: np.ndarray
    c: np.ndarray
    a: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    moment_error: np.ndarray
    set_measures: dict
    set_se: dict
    brownian_increments: np.ndarray
    replica: int = 0
    source: str = "mala"
    censored: bool = False
    diagnostic: str = ""
    spectra: Optional[dict] = None
    extensions: Optional[dict] = None
    radii: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.times)

    @property
    def n(self):
        return self.c.shape[1]

    @property
    def k(self):
        return self.Q.shape[1]

    @property
    def q_norm(self):
        return np.linalg.eigvalsh(self.Q)[:, -1]

    @property
    def qv_bound(self):
        """Running ``sum ||Q_s||_op ds`` (left-point rule)."""
        inc = self.q_norm[:-1] * np.diff(self.times)
        return np.concatenate([[0.0], np.cumsum(inc)])

    def state(self, i):
        return LocalizationState(
            float(self.times[i]), self.c[i], self.a[i], self.K[i], self.Q[i], float(self.moment_error[i])
        )


def default_dt(horizon):
    return min(0.01, horizon / 100.0)


def time_grid(horizon, dt):
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if dt > horizon + 1e-12:
        raise ValueError("dt must not exceed the horizon")
    steps = int(ceil(horizon / dt - 1e-9))
    return np.minimum(np.arange(steps + 1) * dt, horizon)


def brownian_increments(seed, replica, times, n):
    g = rngmod.stream(seed, replica, rngmod.BROWNIAN)
    return g.standard_normal((len(times) - 1, n)) * np.sqrt(np.diff(times))[:, None]


def _named_sets(sets):
    if sets is None:
        return {}
    if isinstance(sets, dict):
        return dict(sets)
    return {f"S{i}": s for i, s in enumerate(sets)}


def _project(K, perp):
    Q = np.einsum("ia,bij,jc->bac", perp, K, perp)
    return 0.5 * (Q + np.swapaxes(Q, 1, 2))


# ---------------------------------------------------------------------------
# the engine


def simulate(
    p,
    horizon,
    dt=None,
    sets=None,
    seed=0,
    replicas=1,
    sampler=None,
    moments="mala",
    spectra=True,
    radii=None,
    increments=None,
):
    """Integrate an ensemble of localization paths.

    ``replicas`` is a count or an iterable of replica indices. ``increments``
    optionally fixes the Brownian increments (B, steps, n) for replay.
    ``radii`` enables per-step extension measures ``mu_t(S_r^c)`` of each
    registered set. Returns one PathRecord per replica, in replica order.
    """
    cfg = sampler or MalaConfig()
    dt = default_dt(horizon) if dt is None else dt
    times = time_grid(horizon, dt)
    steps = len(times) - 1
    reps = list(range(replicas)) if isinstance(replicas, int) else [int(r) for r in replicas]
    B, n, k = len(reps), p.n, p.k
    P, perp = p.split.P, p.split.perp
    named = _named_sets(sets)
    radii = None if radii is None else np.asarray(radii, float)
    if moments == "exact" and exact_tilted_moments(p, 0.0, np.zeros((1, n))) is None:
        raise ValueError("exact moments are not available for this potential")
    if moments not in ("mala", "exact"):
        raise ValueError(f"unknown moment source {moments!r}")

    if increments is None:
        dB = np.stack([brownian_increments(seed, r, times, n) for r in reps])
    else:
        dB = np.asarray(increments, float).reshape(B, steps, n)
    s_rngs = rngmod.replica_streams(seed, reps, rngmod.SAMPLER)

    m = steps + 1
    rec_c = np.zeros((B, m, n))
    rec_a = np.zeros((B, m, n))
    rec_K = np.zeros((B, m, n, n))
    rec_err = np.zeros((B, m))
    rec_s = {name: np.zeros((B, m)) for name in named}
    rec_se = {name: np.zeros((B, m)) for name in named}
    rec_ext = {name: np.zeros((B, m, len(radii))) for name in named} if radii is not None else None
    spec = None
    if spectra:
        spec = {
            "lambdas": np.zeros((B, m, k)),
            "gamma": np.zeros((B, m)),
            "gamma_root": np.zeros((B, m)),
            "v": np.zeros((B, m, k)),
            "delta_upper": np.zeros((B, m)),
            "delta_hi": np.zeros((B, m)),
            "u_se": np.zeros((B, m)),
        }
    pexp = sp.default_p(k)
    censored_at = np.full(B, m)
    diagnostics = [""] * B

    c = np.zeros((B, n))
    step_size = np.full(B, cfg.step)
    start = np.broadcast_to(p.start_point(), (B, n)).copy()
    prev = None  # (t, c, points, weights) of the last estimate, for reweighting

    for i in range(m):
        t = float(times[i])
        live = np.flatnonzero(censored_at == m)
        if len(live) == 0:
            break
        if moments == "exact":
            a, K, third = exact_tilted_moments(p, t, c[live])
            err = np.zeros(len(live))
            pts = w = None
        else:
            pts, w, fresh = _mala_step(p, t, c, live, start, step_size, s_rngs, cfg, prev)
            if fresh is not None:
                ok = fresh["ok"]
                for j in np.flatnonzero(~ok):
                    b = live[j]
                    censored_at[b] = i
                    diagnostics[b] = f"sampler acceptance {fresh['acc'][j]:.3f} at t={t:.4g}"
            keep = censored_at[live] == m
            live, pts = live[keep], pts[keep]
            w = None if w is None else w[keep]
            if len(live) == 0:
                break
            wts = np.full(pts.shape[:2], 1.0 / pts.shape[1]) if w is None else w
            a, K, _, _, err = batch_moments(pts, wts)
            third = None
            start[live] = a
            if cfg.reweight:
                prev_pts = np.zeros((B,) + pts.shape[1:])
                prev_pts[live] = pts
                prev_w = np.zeros((B, pts.shape[1]))
                prev_w[live] = wts
                prev = (t, c.copy(), prev_pts, prev_w)

        rec_c[live, i] = c[live]
        rec_a[live, i] = a
        rec_K[live, i] = K
        rec_err[live, i] = err
        for name, S in named.items():
            s, se, ext = _set_stats(p, t, c[live], S, pts, w, radii, moments)
            rec_s[name][live, i] = s
            rec_se[name][live, i] = se
            if rec_ext is not None:
                rec_ext[name][live, i] = ext
        if spec is not None:
            _spectral_step(spec, live, i, K, a, pts, w, third, perp, pexp)

        if i == steps:
            break
        h = times[i + 1] - times[i]
        c[live] = c[live] + dB[live, i] @ P + h * (a @ P)

    out = []
    for j, r in enumerate(reps):
        cut = censored_at[j]
        rec = PathRecord(
            times=times[:cut].copy(),
            c=rec_c[j, :cut],
            a=rec_a[j, :cut],
            K=rec_K[j, :cut],
            Q=_project(rec_K[j, :cut], perp) if cut else np.zeros((0, k, k)),
            moment_error=rec_err[j, :cut],
            set_measures={nm: v[j, :cut] for nm, v in rec_s.items()},
            set_se={nm: v[j, :cut] for nm, v in rec_se.items()},
            brownian_increments=dB[j, : max(cut - 1, 0)],
            replica=r,
            source=moments,
            censored=bool(cut < m),
            diagnostic=diagnostics[j],
            spectra=None if spec is None else {key: v[j, :cut] for key, v in spec.items()},
            extensions=None if rec_ext is None else {nm: v[j, :cut] for nm, v in rec_ext.items()},
            radii=radii,
        )
        out.append(rec)
    return out


def _mala_step(p, t, c, live, start, step_size, rngs, cfg, prev):
    """Samples for the live replicas at ``(t, c)``.

    With reweighting enabled, the previous step's samples are importance
    weighted to the new tilt and kept when their ESS stays above
    ``cfg.reweight_min_ess``; all other replicas get fresh MALA chains.
    """
    count = cfg.count
    pts = np.zeros((len(live), count, p.n))
    w = None
    need = np.ones(len(live), bool)
    if cfg.reweight and prev is not None:
        t0, c0, prev_pts, prev_w = prev
        w = np.full((len(live), count), 1.0 / count)
        for j, b in enumerate(live):
            lw = reweight_log_weights(prev_pts[b], p.split.P, t - t0, c[b] - c0[b])
            lw = lw + np.log(np.maximum(prev_w[b], 1e-300))
            ww = np.exp(lw - lw.max())
            ww /= ww.sum()
            if 1.0 / np.sum(ww * ww) >= cfg.reweight_min_ess * count:
                pts[j] = prev_pts[b]
                w[j] = ww
                need[j] = False
    fresh = None
    if np.any(need):
        idx = live[need]
        sub, acc, steps = mala_tilted(p, t, c[idx], start[idx], step_size[idx], [rngs[b] for b in idx], cfg, count)
        step_size[idx] = steps
        pts[need] = sub
        ok = np.ones(len(live), bool)
        ok[need] = check_acceptance(acc, cfg)
        full_acc = np.full(len(live), np.nan)
        full_acc[need] = acc
        fresh = {"ok": ok, "acc": full_acc}
    return pts, w, fresh


def _set_stats(p, t, c, S, pts, w, radii, moments):
    R = 0 if radii is None else len(radii)
    if np.isinf(S.m):
        one = np.ones(len(c))
        return one, np.zeros(len(c)), np.zeros((len(c), R))
    if moments == "exact":
        s = separable_halfspace_cdf(p, t, c, S.theta, S.m)
        ext = None
        if radii is not None:
            ext = np.stack([1.0 - separable_halfspace_cdf(p, t, c, S.theta, S.m + r) for r in radii], axis=1)
        return s, np.zeros(len(c)), ext
    proj = pts @ S.theta
    wts = np.full(proj.shape, 1.0 / proj.shape[1]) if w is None else w
    s = np.sum(wts * (proj <= S.m), axis=1)
    n_eff = 1.0 / np.sum(wts * wts, axis=1)
    se = np.sqrt(np.clip(s * (1 - s), 0, None) / n_eff)
    ext = None
    if radii is not None:
        ext = np.stack([np.sum(wts * (proj > S.m + r), axis=1) for r in radii], axis=1)
    return s, se, ext


def _spectral_step(spec, live, i, K, a, pts, w, third, perp, pexp):
    Q = _project(K, perp)
    lam, vec = sp.eig_desc_batch(Q)
    lam = np.clip(lam, 0.0, None)
    if third is not None:
        u = np.einsum("bpqr,bpi,bqj,brl->bijl", third, vec, vec, vec, optimize=True)
        use = np.zeros(len(live))
    else:
        wts = np.full(pts.shape[:2], 1.0 / pts.shape[1]) if w is None else w
        Z = np.einsum("bNi,ia,bak->bNk", pts - a[:, None, :], perp, vec, optimize=True)
        u, use = sp.third_moments_batch(Z, wts)
    v, delta = sp.drift_terms_batch(lam, u, pexp)
    gamma = np.sum(lam**pexp, axis=1)
    spec["lambdas"][live, i] = lam
    spec["gamma"][live, i] = gamma
    spec["gamma_root"][live, i] = gamma ** (1.0 / pexp)
    spec["v"][live, i] = v
    spec["delta_upper"][live, i] = delta
    spec["delta_hi"][live, i] = sp.delta_upper_inflated(lam, u, pexp, use)
    spec["u_se"][live, i] = use


# ---------------------------------------------------------------------------
# single-path entry points


def init(p, sampler_config=None, seed=0, moments="mala"):
    """State at ``t = 0``: ``c = 0`` and the moments of the base measure."""
    return _state_at(p, 0.0, np.zeros(p.n), sampler_config, rngmod.stream(seed), p.start_point(), None, moments)


def step(state, dt, noise, p, sampler_config=None, rng=None, moments="mala"):
    """One explicit Euler-Maruyama step of the tilt followed by re-estimation."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    noise = np.asarray(noise, float)
    P = p.split.P
    c = state.c + P @ noise + dt * (P @ state.a)
    g = rng if rng is not None else rngmod.stream(0)
    return _state_at(p, state.t + dt, c, sampler_config, g, state.a, state.step_size, moments)


def _state_at(p, t, c, cfg, g, x0, step0, moments):
    perp = p.split.perp
    if moments == "exact":
        out = exact_tilted_moments(p, t, c[None, :])
        if out is None:
            raise ValueError("exact moments are not available for this potential")
        a, K = out[0][0], out[1][0]
        return LocalizationState(t, c, a, K, perp.T @ K @ perp, 0.0)
    cfg = cfg or MalaConfig()
    step0 = cfg.step if step0 is None else step0
    pts, acc, h = mala_tilted(p, t, c[None, :], np.asarray(x0)[None, :], step0, [g], cfg, cfg.count)
    if not check_acceptance(acc, cfg)[0]:
        raise SamplerError(f"acceptance {acc[0]:.3f} out of range at t={t:.4g}")
    a, K, _, _, err = batch_moments(pts)
    batch = SampleBatch(pts[0], source="mala", acceptance=float(acc[0]), step=float(h[0]))
    Q = perp.T @ K[0] @ perp
    return LocalizationState(t, c, a[0], K[0], 0.5 * (Q + Q.T), float(err[0]), float(h[0]), batch)


def run_path(p, horizon, dt=None, sets=None, seed=0, sampler=None, replica=0, **kw):
    """Single localization path (replica ``replica`` of the ensemble with this seed)."""
    return simulate(p, horizon, dt, sets, seed, [replica], sampler, **kw)[0]


def gaussian_oracle_path(cov, split, increments, dt, sets=None, mean=None):
    """Closed-form replay: ``K_t = (cov^-1 + t P)^-1`` and ``a_t = K_t (cov^-1 m + c_t)``
    with ``c_t`` advanced by the same Euler scheme."""
    from .potential import gaussian

    g = gaussian(split, cov, mean)
    inc = np.asarray(increments, float)
    horizon = dt * len(inc)
    return exact_path(g, inc, dt, sets, horizon=horizon)


def exact_path(p, increments, dt, sets=None, horizon=None, radii=None):
    """Replay of given increments with exact moments (Gaussian or separable bases)."""
    inc = np.asarray(increments, float)
    horizon = dt * len(inc) if horizon is None else horizon
    return simulate(p, horizon, dt, sets, 0, [0], moments="exact", increments=inc[None], radii=radii)[0]


# ---------------------------------------------------------------------------
# set measures and checks


def tilted_mass(tp, width=12.0, tol=1e-10):
    """``int exp(-V_t)`` by adaptive quadrature in dimension at most 2.

    The box spans ``width`` standard deviations of the exact tilted law
    around its mean; ``V_t`` includes the closed-form ``log Z_t``, so the
    result is 1 up to quadrature error.
    """
    n = tp.base.n
    mom = tp.exact_moments()
    if mom is None:
        raise ValueError("no closed-form partition function for this potential")
    lo = mom.mean - width * np.sqrt(np.diag(mom.cov))
    hi = mom.mean + width * np.sqrt(np.diag(mom.cov))
    if n == 1:
        f = lambda x: np.exp(-tp.value(np.array([x])))
        return float(integrate.quad(f, lo[0], hi[0], epsabs=tol, epsrel=tol, limit=200)[0])
    if n == 2:
        f = lambda y, x: np.exp(-tp.value(np.array([x, y])))
        return float(integrate.dblquad(f, lo[0], hi[0], lo[1], hi[1], epsabs=tol, epsrel=tol)[0])
    raise ValueError("quadrature check implemented for n <= 2")


def gaussian_halfspace_measure(a, K, S):
    """``P(X . theta <= m)`` for ``X ~ N(a, K)``."""
    sd = np.sqrt(S.theta @ K @ S.theta)
    return float(stats.norm.cdf((S.m - a @ S.theta) / sd))


def set_measure(obj, S):
    """Monte Carlo ``mu_t(S)`` with binomial SE from a batch (or a state holding one)."""
    batch = obj.batch if isinstance(obj, LocalizationState) else obj
    if batch is None or len(batch) == 0:
        raise ValueError("empty batch")
    if np.isinf(S.m):
        return 1.0, 0.0
    w = batch.normalized_weights()
    s = float(np.sum(w * S.contains(batch.points)))
    return s, float(np.sqrt(s * (1 - s) / batch.n_eff))


def _stack(paths, key, name=None):
    arrs = [getattr(p, key)[name] if name else getattr(p, key) for p in paths]
    m = min(len(a) for a in arrs)
    return np.array([a[:m] for a in arrs])


def martingale_check(paths, set_name, s0=None, z=3.0):
    """``|mean s_t - s_0| <= z SE(s_t)`` at every grid time.

    ``s_0`` defaults to the ensemble mean at ``t = 0``. Ensembles of fewer
    than two paths pass vacuously with infinite SE and are flagged.
    """
    live = [p for p in paths if not p.censored]
    N = len(live)
    if N == 0:
        raise ValueError("no uncensored paths")
    s = _stack(live, "set_measures", set_name)
    times = live[0].times[: s.shape[1]]
    ref = float(s[:, 0].mean()) if s0 is None else float(s0)
    mean = s.mean(axis=0)
    if N < 2:
        se = np.full_like(mean, np.inf)
    else:
        se = s.std(axis=0, ddof=1) / np.sqrt(N)
    dev = np.abs(mean - ref)
    ok = dev <= z * se
    # zero-variance grid points: exact equality is required
    ok |= (se == 0) & (dev <= 1e-12)
    return {
        "times": times,
        "mean": mean,
        "s0": ref,
        "deviation": dev,
        "se": se,
        "pass_per_t": ok,
        "passed": bool(np.all(ok)),
        "n_paths": N,
        "insufficient": N < 100,
        "censored": len(paths) - N,
    }


def quadratic_variation_check(paths, set_name, horizon=None, factor=1.25):
    """Empirical ``sum (ds)^2`` against ``factor * mean qv_bound`` on ``[0, horizon]``.

    Monte Carlo noise in ``s_t`` inflates squared increments by about
    ``se_i^2 + se_{i+1}^2`` per step; that expected inflation is added to
    the allowance.
    """
    live = [p for p in paths if not p.censored]
    s = _stack(live, "set_measures", set_name)
    se = _stack(live, "set_se", set_name)
    times = live[0].times[: s.shape[1]]
    m = len(times) if horizon is None else int(np.searchsorted(times, horizon + 1e-12))
    emp = np.sum(np.diff(s[:, :m], axis=1) ** 2, axis=1)
    noise = np.sum(se[:, : m - 1] ** 2 + se[:, 1:m] ** 2, axis=1)
    bound = np.array([p.qv_bound[m - 1] for p in live])
    allowed = factor * bound.mean() + noise.mean()
    return {
        "empirical": float(emp.mean()),
        "qv_bound": float(bound.mean()),
        "noise_budget": float(noise.mean()),
        "allowed": float(allowed),
        "passed": bool(emp.mean() <= allowed),
        "n_paths": len(live),
        "horizon": float(times[m - 1]),
    }


def hessian_bound_check(p, paths, n_points=1000, seed=0, tol=1e-6):
    """``lambda_min(Hess V_t) >= min(eta, t) - tol`` at points drawn around
    recorded states (Gaussian with the state's mean and covariance)."""
    g = rngmod.stream(seed, 0, rngmod.AUX)
    live = [q for q in paths if not q.censored and len(q)]
    worst = np.inf
    P = p.split.P
    for _ in range(n_points):
        path = live[g.integers(len(live))]
        i = int(g.integers(len(path)))
        st = path.state(i)
        L = np.linalg.cholesky(st.K + 1e-12 * np.eye(p.n))
        x = st.a + L @ g.standard_normal(p.n)
        if np.isfinite(p.support_radius) and np.linalg.norm(x) > p.support_radius:
            x = x * (0.999 * p.support_radius / np.linalg.norm(x))
        H = p.hess(x) + st.t * P
        margin = np.linalg.eigvalsh(0.5 * (H + H.T))[0] - min(p.eta, st.t)
        worst = min(worst, margin)
    return {"min_margin": float(worst), "tol": tol, "n_points": n_points, "passed": bool(worst >= -tol)}


def c_in_range(paths, split):
    """Largest ``|(I - P) c_t|`` over an ensemble (zero up to rounding)."""
    return max((float(np.abs(q.c @ split.P_E).max()) for q in paths if len(q.c)), default=0.0)
