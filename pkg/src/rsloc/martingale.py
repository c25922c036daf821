"""Freedman-type tail bounds for continuous martingales and their empirical checks."""

from dataclasses import dataclass

import numpy as np

from .rng import stream


@dataclass(frozen=True)
class MartingalePath:
    """A sampled martingale ``M`` with ``M_0 = 0`` and its quadratic variation."""

    times: np.ndarray
    values: np.ndarray
    qv: np.ndarray

    def __post_init__(self):
        for name in ("times", "values", "qv"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), float))
        if not (len(self.times) == len(self.values) == len(self.qv)):
            raise ValueError("times, values and qv must have equal length")
        if abs(self.values[0]) > 1e-12 or abs(self.qv[0]) > 1e-12:
            raise ValueError("martingale and its quadratic variation must start at 0")
        if np.any(np.diff(self.qv) < -1e-12):
            raise ValueError("quadratic variation must be nondecreasing")

    @classmethod
    def from_values(cls, times, values, qv=None):
        """Path with the empirical quadratic variation (cumulative squared increments)
        unless ``qv`` is given."""
        values = np.asarray(values, float)
        if qv is None:
            qv = np.concatenate([[0.0], np.cumsum(np.diff(values) ** 2)])
        return cls(times, values, qv)

    def at(self, T):
        """Index of the last grid time ``<= T``."""
        return int(np.searchsorted(self.times, T + 1e-12) - 1)

    def stopped(self, b):
        """The path stopped at the first grid time its quadratic variation reaches ``b``."""
        hit = np.flatnonzero(self.qv >= b)
        if len(hit) == 0:
            return self
        j = hit[0]
        vals = self.values.copy()
        qv = self.qv.copy()
        vals[j:] = vals[j]
        qv[j:] = qv[j]
        return MartingalePath(self.times, vals, qv)


def freedman_bound(a, b):
    """``exp(-a^2 / (2b))``, the bound on ``P(M_T >= a, [M]_T <= b)``."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    return float(np.exp(-(a * a) / (2.0 * b)))


def empirical_tail(paths, a, b, T, restrict_qv=True, z=3.0):
    """Fraction of paths with ``M_T >= a`` and ``[M]_T <= b`` against the bound.

    With ``restrict_qv=False`` the quadratic-variation event is dropped
    (the unrestricted tail, which can only be larger).
    """
    N = len(paths)
    if N == 0:
        raise ValueError("empty ensemble")
    hits = 0
    for path in paths:
        j = path.at(T)
        if path.values[j] >= a and (not restrict_qv or path.qv[j] <= b):
            hits += 1
    frac = hits / N
    se = np.sqrt(frac * (1 - frac) / N)
    bound = freedman_bound(a, b)
    return {
        "fraction": frac,
        "se": float(se),
        "ci": (max(frac - 1.96 * se, 0.0), min(frac + 1.96 * se, 1.0)),
        "bound": bound,
        "passed": bool(frac <= bound + z * se),
        "n_paths": N,
        "insufficient": N < 100,
    }


def exponential_supermartingale_check(paths, lambdas, z=3.0):
    """Ensemble mean of ``exp(lambda M_t - lambda^2 [M]_t / 2)`` at every grid time.

    The exponent is formed in log space and only exponentiated once it is
    known to be finite; values of ``+inf`` make the check fail rather than
    overflow silently.
    """
    m = min(len(p.times) for p in paths)
    M = np.array([p.values[:m] for p in paths])
    V = np.array([p.qv[:m] for p in paths])
    out = []
    for lam in lambdas:
        logs = lam * M - 0.5 * lam * lam * V
        with np.errstate(over="ignore"):
            e = np.exp(logs)
        mean = e.mean(axis=0)
        se = e.std(axis=0, ddof=1) / np.sqrt(len(paths)) if len(paths) > 1 else np.full(m, np.inf)
        ok = np.isfinite(mean) & (mean <= 1.0 + z * se + 1e-12)
        out.append(
            {
                "lambda": float(lam),
                "times": paths[0].times[:m],
                "mean": mean,
                "se": se,
                "max_excess": float(np.max((mean - 1.0) / np.where(se > 0, se, np.inf))),
                "passed": bool(np.all(ok)),
            }
        )
    return out


def brownian_paths(n_paths, T, dt, seed, analytic_qv=True):
    """Standard Brownian motions on a uniform grid.

    The quadratic variation is the exact ``[B]_t = t`` by default, else the
    grid sum of squared increments.
    """
    steps = int(round(T / dt))
    times = np.arange(steps + 1) * dt
    g = stream(seed)
    inc = g.standard_normal((n_paths, steps)) * np.sqrt(dt)
    B = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)
    if analytic_qv:
        return [MartingalePath(times, b, times) for b in B]
    return [MartingalePath.from_values(times, b) for b in B]


def set_measure_martingales(records, set_name, center="initial"):
    """``M_t = s_t - s_0`` (or ``s_0 - s_t`` with ``center="reversed"``) from
    localization paths, with the quadratic-variation proxy ``qv_bound``."""
    out = []
    for r in records:
        if r.censored:
            continue
        s = r.set_measures[set_name]
        m = s - s[0] if center == "initial" else s[0] - s
        out.append(MartingalePath(r.times, m, r.qv_bound))
    return out
