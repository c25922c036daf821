"""Experiment pipeline: build the measure, simulate, run every check, write artifacts.

Each stage returns a dict of named checks. A check has a ``status``
(``pass``, ``fail``, ``report``, ``insufficient_ensemble`` or
``not_applicable``), a ``hard`` flag and a ``detail`` dict. Only hard
checks with status ``fail`` make a run fail.
"""

from dataclasses import dataclass, field, replace
import csv
import io
import json
import os

import numpy as np

from . import concentration as conc
from . import localization as loc
from . import martingale as mart
from . import rng as rngmod
from . import spectra as sp
from .config import ExperimentConfig
from .plots import write_chart
from .potential import (
    SubspaceSplit,
    TiltedPotential,
    flat_strong,
    gaussian,
    truncated,
    verify_hypothesis,
    whiten,
)
from .sampler import MalaConfig, mala_sample, sample_exact_gaussian, target_curvature

CHECKLIST = (
    "hypothesis",
    "mass_normalization",
    "gaussian_replay",
    "c_in_range",
    "martingale",
    "qv_domination",
    "hessian_bound",
    "freedman_set_measure",
    "exponential_supermartingale",
    "freedman_brownian",
    "gamma_drift_identity",
    "vt_bound",
    "delta_bound",
    "martingale_part_qv",
    "exit_time",
    "strong_logconcave_bound",
    "concentration_rate",
    "poincare_proxies",
    "lipschitz_tail",
    "whitening_transfer",
    "decomposition",
)

MIN_ENSEMBLE = 100

# labels of auxiliary streams (first label AUX keeps them apart from replica streams)
_INIT_BATCH, _TILT_BATCH, _HESSIAN, _FREEDMAN, _HYPOTHESIS, _WHITEN = range(6)


def _aux(seed, what):
    return rngmod.stream(seed, rngmod.AUX, what)


def _aux_seed(seed, what):
    return int(_aux(seed, what).integers(2**31))


def check(status, hard=True, **detail):
    return {"status": status, "hard": hard, "detail": detail}


def judged(passed, n_paths=None, hard=True, **detail):
    if n_paths is not None and n_paths < MIN_ENSEMBLE:
        return check("insufficient_ensemble", False, n_paths=n_paths, **detail)
    return check("pass" if passed else "fail", hard, **detail)


# ---------------------------------------------------------------------------
# building blocks


def _matrix(spec, n):
    if isinstance(spec, str):
        if spec != "identity":
            raise ValueError(f"unknown covariance {spec!r}")
        return np.eye(n)
    vals = np.atleast_1d(np.asarray(spec, float))
    if vals.size == n:
        return np.diag(vals)
    if vals.size == n * n:
        return vals.reshape(n, n)
    raise ValueError(f"covariance needs {n} or {n * n} numbers")


def build_split(m):
    if m.split == "axes":
        return SubspaceSplit.axes(m.n, m.k)
    if m.split == "random":
        return SubspaceSplit.random(m.n, m.k, m.split_seed)
    raise ValueError(f"unknown split {m.split!r}")


def build_potential(m):
    split = build_split(m)
    if m.kind == "gaussian":
        return gaussian(split, _matrix(m.cov, m.n))
    if m.kind == "flat_strong":
        scale = None if m.scale is None else np.atleast_1d(np.asarray(m.scale, float))
        return flat_strong(split, m.eta, m.w, m.quad, scale)
    if m.kind == "truncated":
        inner = dict(vars(m), kind=m.base)
        base = build_potential(type(m)(**inner))
        return truncated(base, m.radius)
    raise ValueError(f"unknown measure kind {m.kind!r}")


def build_sampler(s):
    return MalaConfig(count=s.count, step=s.step, warmup=s.warmup, thinning=s.thinning, reweight=s.reweight)


def sample_measure(p, count, sampler, g):
    """Exact draws for Gaussians, MALA otherwise."""
    if p.kind == "gaussian":
        return sample_exact_gaussian(p.cov, p.mean, count, None, rng=g)
    return mala_sample(p, count, replace(sampler, count=count), rng=g)


@dataclass
class Context:
    cfg: ExperimentConfig
    base: object
    p: object
    S: object
    sampler: MalaConfig
    batch: object
    sets: dict
    radii: np.ndarray
    records: list = field(default_factory=list)
    curve: object = None


def prepare(cfg):
    seed = cfg.run.seed
    base = build_potential(cfg.measure)
    sampler = build_sampler(cfg.mala)
    p, S = base, None
    if cfg.run.whiten:
        K = base.cov
        if K is None:
            b0 = sample_measure(base, cfg.checks.samples, sampler, _aux(seed, _WHITEN))
            K = np.cov(b0.points.T)
        p, S = whiten(base, K)
    batch = sample_measure(p, cfg.checks.samples, sampler, _aux(seed, _INIT_BATCH))
    axes = cfg.sets.axes if isinstance(cfg.sets.axes, list) else [cfg.sets.axes]
    sets = {}
    for j in axes:
        theta = p.split.basis[:, int(j)]
        m = float(p.mean @ theta) if p.kind == "gaussian" else conc.median_halfspace(batch, theta).m
        sets[f"axis{int(j)}"] = conc.HalfSpace(theta, m)
    radii = np.linspace(0.0, cfg.radii.max, cfg.radii.count)
    return Context(cfg, base, p, S, sampler, batch, sets, radii)


# ---------------------------------------------------------------------------
# stages


def stage_verify(ctx):
    rep = verify_hypothesis(ctx.base, ctx.cfg.checks.hypothesis_points, _aux_seed(ctx.cfg.run.seed, _HYPOTHESIS))
    return {
        "hypothesis": check(
            "pass" if rep.passed else "fail",
            min_restricted_eig=rep.min_restricted_eig,
            min_eig=rep.min_eig,
            eta=rep.eta,
            tol=rep.tol,
        )
    }


def simulate_paths(ctx, replicas=None):
    cfg = ctx.cfg
    reps = cfg.run.replicas if replicas is None else replicas
    ctx.records = loc.simulate(
        ctx.p,
        cfg.run.horizon,
        cfg.run.dt,
        ctx.sets,
        cfg.run.seed,
        reps,
        ctx.sampler,
        moments=cfg.run.moments,
        radii=ctx.radii,
    )
    return ctx.records


def stage_paths(ctx):
    cfg, p = ctx.cfg, ctx.p
    recs = ctx.records
    live = [r for r in recs if not r.censored]
    N = len(live)
    out = {}
    const = cfg.constants
    censored = len(recs) - N
    if not live:
        return {name: check("fail", reason="all paths censored") for name in _PATH_CHECKS}

    out["c_in_range"] = judged(loc.c_in_range(live, p.split) <= 1e-10, max_offset=loc.c_in_range(live, p.split))
    out["mass_normalization"] = _mass_check(p, live[0])
    out["gaussian_replay"] = _replay_check(p, live, cfg.run.moments)

    name0 = next(iter(ctx.sets))
    mc = loc.martingale_check(live, name0)
    out["martingale"] = judged(
        mc["passed"], N, set=name0, s0=mc["s0"], max_z=_max_z(mc["deviation"], mc["se"]), censored=censored
    )
    qv = loc.quadratic_variation_check(live, name0, horizon=min(cfg.run.horizon, 1.0))
    out["qv_domination"] = judged(qv.pop("passed"), qv.pop("n_paths"), **qv)
    hb = loc.hessian_bound_check(p, live, cfg.checks.hessian_points, seed=_aux_seed(cfg.run.seed, _HESSIAN))
    out["hessian_bound"] = judged(hb.pop("passed"), **hb)

    # Freedman bound on s_0 - s_t with a = 1/4, b = 10 t
    down = mart.set_measure_martingales(live, name0, center="reversed")
    rows = []
    for frac in (0.25, 0.5, 0.75, 1.0):
        t = frac * cfg.run.horizon
        et = mart.empirical_tail(down, 0.25, 10.0 * t, t)
        rows.append({"t": t, "fraction": et["fraction"], "bound": et["bound"], "se": et["se"], "passed": et["passed"]})
    out["freedman_set_measure"] = judged(all(r["passed"] for r in rows), N, rows=rows)

    up = mart.set_measure_martingales(live, name0)
    sm = mart.exponential_supermartingale_check(up, cfg.checks.lambdas)
    out["exponential_supermartingale"] = judged(
        all(r["passed"] for r in sm), N, rows=[{"lambda": r["lambda"], "max_excess_se": r["max_excess"]} for r in sm]
    )

    k = p.k
    ts = live[0].times[:: max(1, len(live[0].times) // 5)]
    ts = ts[ts > 1e-3]
    errs = []
    for t in ts:
        gd = sp.gamma_drift_identity(k, float(t))
        errs.append(abs(gd["fd"] - gd["closed_form"]) / abs(gd["closed_form"]))
    out["gamma_drift_identity"] = judged(max(errs, default=0.0) <= 1e-4, max_rel_error=max(errs, default=0.0), k=k)

    spec = [r.spectra for r in live]
    v = np.concatenate([s["v"] for s in spec])
    gr = np.concatenate([s["gamma_root"] for s in spec])
    vt = sp.check_vt_bound(v, gr, const.c_max)
    out["vt_bound"] = judged(vt.passed, c_hat=vt.constant, c_max=vt.limit)
    pexp = sp.default_p(k)
    db = sp.check_delta_bound(
        np.concatenate([s["delta_upper"] for s in spec]),
        np.concatenate([s["gamma"] for s in spec]),
        pexp,
        const.psi_k,
        np.concatenate([s["delta_hi"] for s in spec]),
    )
    out["delta_bound"] = judged(db.passed, ratio=db.constant, limit=db.limit, psi_k=const.psi_k)

    mq = sp.martingale_part_qv(live)
    out["martingale_part_qv"] = check("report", False, **mq)

    ex = sp.exit_time_stats(live, const.exit_threshold, c1=const.c1_reference)
    out["exit_time"] = check(
        "report",
        False,
        threshold=const.exit_threshold,
        exceedances=int(round(ex["fraction"][-1] * ex["n_paths"])),
        upper95=float(ex["upper95"][-1]),
        rule_of_three=ex["rule_of_three"],
        n_paths=ex["n_paths"],
        c1_reference=const.c1_reference,
    )
    out["decomposition"] = check("report", False, rows=decomposition(ctx, name0))
    return out


_PATH_CHECKS = (
    "c_in_range",
    "mass_normalization",
    "gaussian_replay",
    "martingale",
    "qv_domination",
    "hessian_bound",
    "freedman_set_measure",
    "exponential_supermartingale",
    "gamma_drift_identity",
    "vt_bound",
    "delta_bound",
    "martingale_part_qv",
    "exit_time",
    "decomposition",
)


def _max_z(dev, se):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, dev / se, np.where(dev > 0, np.inf, 0.0))
    return float(np.max(z))


def _mass_check(p, rec):
    if p.n > 2:
        return check("not_applicable", False, reason="quadrature only in dimension <= 2")
    try:
        rows = []
        for i in np.unique(np.linspace(0, len(rec) - 1, 3).astype(int)):
            mass = loc.tilted_mass(TiltedPotential(p, float(rec.times[i]), rec.c[i]))
            rows.append({"t": float(rec.times[i]), "mass": mass})
    except ValueError as e:
        return check("not_applicable", False, reason=str(e))
    return judged(all(abs(r["mass"] - 1) <= 1e-6 for r in rows), rows=rows)


def _replay_check(p, live, moments):
    """Estimated ``K_t`` against ``(cov^-1 + t P)^-1``, which does not depend on ``c_t``."""
    if p.kind != "gaussian":
        return check("not_applicable", False, reason="closed-form replay needs a Gaussian base")
    prec, P = p.structure["prec"], p.split.P
    worst, worst_margin = 0.0, -np.inf
    for r in live:
        oracle = np.linalg.inv(prec[None] + r.times[:, None, None] * P[None])
        d = np.linalg.norm(r.K - oracle, axis=(1, 2))
        dt = float(r.times[1] - r.times[0]) if len(r) > 1 else 0.0
        margin = d - (5.0 * r.moment_error + dt)
        worst = max(worst, float(d.max()))
        worst_margin = max(worst_margin, float(margin.max()))
    return judged(worst_margin <= 0, max_frobenius=worst, worst_margin=worst_margin, moments=moments)


def decomposition(ctx, name):
    """Split of ``mu(S_r^c)`` at ``t(r) = min(beta, 1/r)`` into the part where
    ``s_t >= 1/4`` and the probability that ``s_t <= 1/4``."""
    cfg, p = ctx.cfg, ctx.p
    live = [r for r in ctx.records if not r.censored]
    times = live[0].times
    beta = min(p.eta, cfg.run.horizon)
    rows = []
    for j, r in enumerate(ctx.radii):
        if r <= 0:
            continue
        t_r = min(beta, 1.0 / r)
        i = int(np.searchsorted(times, t_r + 1e-12) - 1)
        t = float(times[i])
        s = np.array([q.set_measures[name][i] for q in live])
        ext = np.array([q.extensions[name][i, j] for q in live])
        ext0 = np.array([q.extensions[name][0, j] for q in live])
        good = float(np.mean(ext * (s >= 0.25)))
        bad = float(np.mean(s <= 0.25))
        row = {
            "r": float(r),
            "t": t,
            "mass_beyond": float(ext0.mean()),
            "mass_beyond_at_t": float(ext.mean()),
            "term_good": good,
            "term_bad": bad,
            "bound_good": float(4.0 * np.exp(-0.25 * min(p.eta, t) * r * r)),
            "bound_bad": float(np.exp(-1.0 / (320.0 * t))) if t > 0 else 0.0,
        }
        rows.append(row)
    return rows


def stage_concentration(ctx):
    cfg, p = ctx.cfg, ctx.p
    const = cfg.constants
    out = {}
    seed = cfg.run.seed
    curve = conc.alpha_curve(ctx.batch, cfg.checks.directions, ctx.radii, seed=seed)
    ctx.curve = curve
    pts = ctx.batch.points
    cov = np.cov(pts.T)
    Q = p.split.perp.T @ cov @ p.split.perp
    q_norm = float(np.linalg.eigvalsh(np.atleast_2d(Q))[-1])

    # strongly log-concave bound on the tilt at the horizon, started at the
    # first recorded terminal tilt (c = 0 when no paths were simulated)
    live = [r for r in ctx.records if not r.censored]
    t_end = float(live[0].times[-1]) if live else cfg.run.horizon
    c_end = live[0].c[-1] if live else np.zeros(p.n)
    tilt = TiltedPotential(p, t_end, c_end)
    tb = mala_sample(tilt, cfg.checks.samples, ctx.sampler, rng=_aux(seed, _TILT_BATCH))
    dirs, _ = conc.direction_family(p.n, np.cov(tb.points.T), 0)
    hs = [conc.median_halfspace(tb, d) for d in dirs]
    kappa = target_curvature(p, t_end)
    sl = conc.check_strong_logconcave_bound(tb, hs, kappa, ctx.radii)
    worst = max(sl["rows"], key=lambda r: r["empirical"] - r["bound"])
    out["strong_logconcave_bound"] = judged(sl["passed"], t=t_end, curvature=kappa, worst=worst, n_rows=len(sl["rows"]))

    mt = conc.check_concentration_rate(curve, p.eta, p.k, q_norm, const.psi_k, const.prefactor)
    out["concentration_rate"] = judged(
        mt["passed"],
        c_hat=mt["c_hat"],
        monotone=mt["monotone"],
        linear_floor=mt["linear_floor"],
        quadratic_floor=mt["quadratic_floor"],
        q_norm=q_norm,
    )
    try:
        pp = conc.poincare_proxies(ctx.batch, curve, p.eta, p.k, const.psi_k, p.split)
        out["poincare_proxies"] = check("report", False, **pp)
    except ValueError as e:
        out["poincare_proxies"] = check("fail", False, reason=str(e))

    theta = curve.directions[int(curve.worst_index[len(curve.radii) // 4])]
    aff = conc.lipschitz_tail(ctx.batch, lambda x: x @ theta, 1.0, ctx.radii, curve, affine=True)
    nrm = conc.lipschitz_tail(ctx.batch, lambda x: np.linalg.norm(x, axis=1), 1.0, ctx.radii, curve)
    out["lipschitz_tail"] = judged(
        aff["passed"],
        affine_max_excess=float(np.max(aff["tail"] - aff["alpha"])),
        norm_tail_at_1=float(np.interp(1.0, nrm["radii"], nrm["tail"])),
        norm_within_alpha=bool(np.all(nrm["within_alpha"])),
    )
    if ctx.S is None:
        out["whitening_transfer"] = check("not_applicable", False, reason="measure not whitened")
    else:
        wt = conc.whitening_transfer_check(ctx.batch, ctx.S, ctx.radii, cfg.checks.directions, seed)
        out["whitening_transfer"] = judged(wt["passed"], lambda1=wt["lambda1"], excess=wt["excess"])
    return out


def freedman_table(n_paths, dt, seed, lambdas, pairs=((2.0, 1.0), (1.0, 0.5), (1.0, 1.0), (3.0, 1.0))):
    paths = mart.brownian_paths(n_paths, 1.0, dt, seed)
    rows = []
    for a, b in pairs:
        et = mart.empirical_tail(paths, a, b, 1.0)
        rows.append({"a": a, "b": b, "T": 1.0, **{k: et[k] for k in ("fraction", "se", "bound", "passed")}})
    sm = mart.exponential_supermartingale_check(paths, lambdas)
    sm_rows = [{"lambda": r["lambda"], "max_excess_se": r["max_excess"], "passed": r["passed"]} for r in sm]
    return rows, sm_rows


def stage_freedman(ctx):
    cfg = ctx.cfg
    rows, sm_rows = freedman_table(
        cfg.checks.freedman_paths, cfg.checks.freedman_dt, _aux_seed(cfg.run.seed, _FREEDMAN), cfg.checks.lambdas
    )
    ok = all(r["passed"] for r in rows) and all(r["passed"] for r in sm_rows)
    return {"freedman_brownian": judged(ok, cfg.checks.freedman_paths, rows=rows, supermartingale=sm_rows)}


# ---------------------------------------------------------------------------
# artifacts


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def _write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) if not isinstance(v, str) else v for v in row])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())


def path_rows(records, set_names, perp):
    """Header and rows of the path table: one row per replica and grid time."""
    n = records[0].n
    k = records[0].k
    header = (
        ["replica", "t"]
        + [f"c{i}" for i in range(k)]
        + [f"a{i}" for i in range(n)]
        + [f"Q{i}{j}" for i in range(k) for j in range(k)]
        + ["q_norm"]
        + [f"s_{name}" for name in set_names]
        + ["qv_bound", "censored"]
    )
    rows = []
    for r in records:
        cy = r.c @ perp
        qn, qv = r.q_norm, r.qv_bound
        for i in range(len(r)):
            rows.append(
                [r.replica, r.times[i], *cy[i], *r.a[i], *r.Q[i].ravel(), qn[i]]
                + [r.set_measures[nm][i] for nm in set_names]
                + [qv[i], int(r.censored)]
            )
    return header, rows


def spectra_rows(records):
    k = records[0].k
    header = ["replica", "t"] + [f"lambda{i}" for i in range(k)] + ["gamma", "gamma_root", "v_norm", "delta_upper"]
    rows = []
    for r in records:
        s = r.spectra
        vn = np.linalg.norm(s["v"], axis=1)
        for i in range(len(r)):
            rows.append([r.replica, r.times[i], *s["lambdas"][i], s["gamma"][i], s["gamma_root"][i], vn[i], s["delta_upper"][i]])
    return header, rows


def write_paths(ctx, out_dir):
    recs = ctx.records
    _write_csv(os.path.join(out_dir, "paths.csv"), *path_rows(recs, list(ctx.sets), ctx.p.split.perp))
    _write_csv(os.path.join(out_dir, "spectra.csv"), *spectra_rows(recs))
    live = [r for r in recs if not r.censored]
    if not live:
        return
    plots = os.path.join(out_dir, "plots")
    os.makedirs(plots, exist_ok=True)
    name0 = next(iter(ctx.sets))
    if len(live) > 1:
        mc = loc.martingale_check(live, name0)
        write_chart(
            os.path.join(plots, "martingale.svg"),
            [
                ("mean s_t", mc["times"], mc["mean"]),
                ("s_0 + 3 SE", mc["times"], mc["s0"] + 3 * mc["se"], True),
                ("s_0 - 3 SE", mc["times"], mc["s0"] - 3 * mc["se"], True),
            ],
            title="Ensemble mean of the set measure",
            xlabel="t",
            ylabel="s_t",
        )
    ex = sp.exit_time_stats(live, ctx.cfg.constants.exit_threshold, c1=ctx.cfg.constants.c1_reference)
    write_chart(
        os.path.join(plots, "exit_time.svg"),
        [
            ("exceedance", ex["times"], ex["fraction"]),
            ("95% upper", ex["times"], ex["upper95"], True),
            ("exp(-c1/t) reference", ex["times"], ex["reference"], True),
        ],
        title="P(max ||Q_s|| >= threshold)",
        xlabel="t",
        ylabel="probability",
    )
    m = min(len(r) for r in live)
    write_chart(
        os.path.join(plots, "gamma.svg"),
        [
            ("mean Gamma_t", live[0].times[:m], np.mean([r.spectra["gamma"][:m] for r in live], axis=0)),
            ("mean ||Q_t||", live[0].times[:m], np.mean([r.q_norm[:m] for r in live], axis=0)),
        ],
        title="Spectral potential",
        xlabel="t",
    )


def write_curves(ctx, out_dir, checks):
    c = ctx.curve
    rows = [[c.radii[i], c.alpha[i], c.se[i], int(c.worst_index[i])] for i in range(len(c.radii))]
    _write_csv(os.path.join(out_dir, "curves.csv"), ["r", "alpha", "se", "worst_direction_index"], rows)
    plots = os.path.join(out_dir, "plots")
    os.makedirs(plots, exist_ok=True)
    mt = checks.get("concentration_rate", {}).get("detail", {})
    series = [("empirical alpha", c.radii, c.alpha)]
    if "c_hat" in mt and np.isfinite(mt["c_hat"]):
        g = conc.concentration_rate(c.radii, ctx.p.eta, ctx.p.k, mt["q_norm"], ctx.cfg.constants.psi_k)
        series.append(("fitted bound", c.radii, ctx.cfg.constants.prefactor * np.exp(-mt["c_hat"] * g), True))
    write_chart(
        os.path.join(plots, "alpha.svg"), series, title="Concentration function", xlabel="r", ylabel="alpha", log_y=True
    )


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if np.isnan(x):
            return "nan"
        if np.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(format(x, ".12g"))
    return obj


def write_summary(path, checks, cfg, stage):
    doc = {"stage": stage, "config": cfg.flat(), "checks": checks, "failed": failed_checks(checks)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_clean(doc), fh, sort_keys=True, indent=2)
        fh.write("\n")


def failed_checks(checks):
    return sorted(name for name, c in checks.items() if c["hard"] and c["status"] == "fail")


# ---------------------------------------------------------------------------
# entry points


def run(cfg, out_dir=None, log=None):
    """Full pipeline; returns ``(checks, exit_code)``."""
    log = log or (lambda msg: None)
    out_dir = out_dir or cfg.output
    os.makedirs(out_dir, exist_ok=True)
    ctx = prepare(cfg)
    checks = stage_verify(ctx)
    log("simulating paths")
    simulate_paths(ctx)
    checks.update(stage_paths(ctx))
    write_paths(ctx, out_dir)
    log("concentration checks")
    checks.update(stage_concentration(ctx))
    write_curves(ctx, out_dir, checks)
    log("Freedman checks")
    checks.update(stage_freedman(ctx))
    checks = {name: checks[name] for name in CHECKLIST}
    write_summary(os.path.join(out_dir, "summary.json"), checks, cfg, "run")
    return checks, 1 if failed_checks(checks) else 0


STAGE_FILES = ("summary.json", "verify.json", "path.json", "ensemble.json", "concentration.json", "freedman.json")


def report(out_dir):
    """Merge stage summaries into one checklist with every check listed once.

    Files are read in the order of ``STAGE_FILES``; a check found in an
    earlier file is not overridden. Checks found nowhere are ``missing``
    and fail the report.
    """
    found = [f for f in STAGE_FILES if os.path.exists(os.path.join(out_dir, f))]
    if not found:
        raise FileNotFoundError(f"no stage summaries in {out_dir}")
    merged = {}
    for f in found:
        with open(os.path.join(out_dir, f), encoding="utf-8") as fh:
            doc = json.load(fh)
        for name, c in doc["checks"].items():
            if name not in merged:
                merged[name] = dict(c, source=f)
    checklist = {}
    for name in CHECKLIST:
        checklist[name] = merged.get(name, {"status": "missing", "hard": True, "detail": {}, "source": None})
    missing = [n for n, c in checklist.items() if c["status"] == "missing"]
    failed = [n for n, c in checklist.items() if c["hard"] and c["status"] in ("fail", "missing")]
    doc = {"checklist": checklist, "missing": missing, "failed": failed, "sources": found}
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(_clean(doc), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return doc
