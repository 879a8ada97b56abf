"""Named verification experiments with Monte Carlo verdicts.

Each experiment compares a scenario-sup empirical statistic against the
closed-form envelope from the bound engine.  The pass direction is always
"empirical <= bound + 3 SE": the envelopes are upper bounds, so the
experiments can falsify but never confirm beyond that.  Scenario maxima
are taken checkpoint-wise, matching a supremum applied separately at each
time.  Every statistical verdict carries its standard error.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bounds as bnd
from .bounds import InfeasibleError
from .config import RunSetup
from .gbm import (Scenario, VolatilityBand, check_markov_inequality, sample_path,
                  scenario_grid, sublinear_expectation)
from .integrator import batch_statistics, simulate, simulate_truncated
from .measures import check_delay_integral_bound
from .phase_space import check_segment_norm_bound

__all__ = [
    "CheckpointRow",
    "Verdict",
    "run_ms_bound",
    "run_pair_convergence",
    "run_map_bound",
    "run_map_convergence",
    "run_l2_estimate",
    "run_lyapunov",
    "run_nonexplosion",
    "run_markov_battery",
    "run_lemma_suite",
    "run_truncation_agreement",
    "run_all",
    "RunAllResult",
    "EXPERIMENTS",
]


@dataclass(frozen=True)
class CheckpointRow:
    """One compared point: checkpoint label, estimate, its SE, the bound."""

    label: float
    empirical: float
    se: float
    bound: float
    passed: bool


@dataclass
class Verdict:
    """Outcome of one experiment: per-checkpoint rows plus margin notes."""

    name: str
    rows: list
    passed: bool
    notes: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.passed

    def margin_stats(self) -> dict:
        margins = [r.bound + 3.0 * r.se - r.empirical for r in self.rows]
        ratios = [r.bound / r.empirical for r in self.rows if r.empirical > 0]
        return {
            "min_margin": min(margins) if margins else float("nan"),
            "max_bound_ratio": max(ratios) if ratios else float("nan"),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "empirical", "SE", "bound", "pass"])
            for r in self.rows:
                w.writerow([f"{r.label:.10g}", f"{r.empirical:.17g}",
                            f"{r.se:.17g}", f"{r.bound:.17g}",
                            "1" if r.passed else "0"])


def _fail(name: str, err: InfeasibleError) -> Verdict:
    return Verdict(name, [], False, notes=[f"refused: {err.condition}: {err}"])


def _scenario_sup(setup: RunSetup, stat: str, checkpoints, n_paths: int,
                  seed: int, xi_spec=None, horizon=None):
    """Checkpoint-wise scenario max of the Monte Carlo mean, with the SE of
    the attaining scenario."""
    horizon = horizon if horizon is not None else max(checkpoints)
    cfg = setup.sim_config(horizon)
    n_cp = len(checkpoints)
    best = np.full(n_cp, -np.inf)
    best_se = np.zeros(n_cp)
    for si, sc in enumerate(setup.scenarios):
        stats = batch_statistics(cfg, sc, seed, n_paths, checkpoints,
                                 (stat,), scenario_index=si, xi_spec=xi_spec)
        arr = stats[stat]
        means = arr.mean(axis=0)
        ses = arr.std(axis=0, ddof=1) / np.sqrt(n_paths)
        take = means > best
        best[take] = means[take]
        best_se[take] = ses[take]
    return best, best_se


def _rows_against(checkpoints, emp, ses, bound_fn):
    rows = []
    for t, e, s in zip(checkpoints, emp, ses):
        b = float(bound_fn(t))
        rows.append(CheckpointRow(float(t), float(e), float(s), b,
                                  bool(e <= b + 3.0 * s)))
    return rows


def run_ms_bound(setup: RunSetup, n_paths=None, seed=None) -> Verdict:
    """Second moment of the state against K4 + K5 e^{-lam t}."""
    rep = setup.bound_report
    rep.windows["ms_bound"].require()
    n_paths = n_paths or setup.n_paths
    seed = setup.seed if seed is None else seed
    cps = setup.checkpoints
    emp, ses = _scenario_sup(setup, "x2", cps, n_paths, seed)
    lam = rep.chosen_lam["ms_bound"]
    rows = _rows_against(cps, emp, ses,
                         lambda t: rep.K4 + rep.K5 * np.exp(-lam * t))
    v = Verdict("ms_bound", rows, all(r.passed for r in rows))
    v.extras["lambda"] = lam
    v.extras["lambda_scan"] = _lambda_scan_diagnostic(setup, cps, emp, ses)
    v.notes.append(f"lam={lam:.6g}, K4={rep.K4:.6g}, K5={rep.K5:.6g}")
    return v


def _lambda_scan_diagnostic(setup: RunSetup, cps, emp, ses) -> dict:
    """Optional sweep over candidate decay rates; reports the tightest one
    whose envelope still clears every checkpoint."""
    rep = setup.bound_report
    window = rep.windows["ms_bound"]
    out = {"satisfied": [], "tightest": None}
    cert = setup.coefficients.certificate
    for lam in bnd.lambda_scan(window):
        try:
            K4, K5, lam, _ = bnd.mean_square_constants(
                cert, setup.aux, setup.q, rep.zeta_norm_sq, rep.x0_sq,
                rep.offsets_sq, window, lam=float(lam))
        except InfeasibleError:
            continue
        bound = K4 + K5 * np.exp(-lam * np.asarray(cps))
        if np.all(emp <= bound + 3.0 * ses):
            worst = float(np.max(np.asarray(emp) / np.maximum(bound, 1e-300)))
            out["satisfied"].append(round(float(lam), 6))
            if out["tightest"] is None or worst > out["tightest"][1]:
                out["tightest"] = (round(float(lam), 6), worst)
    return out


def run_pair_convergence(setup: RunSetup, n_paths=None, seed=None) -> Verdict:
    """Coupled two-trajectory gap against K6 ||zeta - xi||^2 e^{-lam t}."""
    rep = setup.bound_report
    rep.windows["ms_bound"].require()
    n_paths = n_paths or setup.n_paths
    seed = setup.seed if seed is None else seed
    cps = setup.checkpoints
    emp, ses = _scenario_sup(setup, "diff2", cps, n_paths, seed, xi_spec=setup.xi_spec)
    lam = rep.chosen_lam["pair_convergence"]
    gap = (setup.zeta_segment() - setup.xi_segment()).norm() ** 2
    rows = _rows_against(cps, emp, ses,
                         lambda t: rep.K6 * gap * np.exp(-lam * t))
    decreasing = True
    tail = [(t, e) for t, e in zip(cps, emp) if t >= 1.0]
    for (t0, e0), (t1, e1) in zip(tail, tail[1:]):
        if not e1 < e0:
            decreasing = False
    v = Verdict("pair_convergence", rows, all(r.passed for r in rows) and decreasing)
    v.extras["decreasing_after_t1"] = decreasing
    v.notes.append(f"lam={lam:.6g}, K6={rep.K6:.6g}, gap^2={gap:.6g}")
    if not decreasing:
        v.notes.append("empirical curve failed to decrease past t=1")
    return v


def run_map_bound(setup: RunSetup, n_paths=None, seed=None) -> Verdict:
    """Segment-norm second moment against K7 + K8 e^{-lam t}."""
    rep = setup.bound_report
    rep.windows["map_bound"].require()
    n_paths = n_paths or setup.n_paths
    seed = setup.seed if seed is None else seed
    cps = setup.checkpoints
    emp, ses = _scenario_sup(setup, "norm2", cps, n_paths, seed)
    lam = rep.chosen_lam["map_bound"]
    rows = _rows_against(cps, emp, ses,
                         lambda t: rep.K7 + rep.K8 * np.exp(-lam * t))
    v = Verdict("map_bound", rows, all(r.passed for r in rows))
    v.notes.append(f"lam={lam:.6g}, K7={rep.K7:.6g}, K8={rep.K8:.6g}")
    return v


def run_map_convergence(setup: RunSetup, n_paths=None, seed=None) -> Verdict:
    """Segment-norm gap of coupled runs against K9 ||zeta - xi||^2 e^{-lam t}.

    The source statement decorates the decay symbol with a hat; the rate
    used is the same lam admitted by this estimate's own window.
    """
    rep = setup.bound_report
    rep.windows["map_convergence"].require()
    n_paths = n_paths or setup.n_paths
    seed = setup.seed if seed is None else seed
    cps = setup.checkpoints
    emp, ses = _scenario_sup(setup, "diffnorm2", cps, n_paths, seed,
                             xi_spec=setup.xi_spec)
    lam = rep.chosen_lam["map_convergence"]
    gap = (setup.zeta_segment() - setup.xi_segment()).norm() ** 2
    rows = _rows_against(cps, emp, ses,
                         lambda t: rep.K9 * gap * np.exp(-lam * t))
    v = Verdict("map_convergence", rows, all(r.passed for r in rows))
    v.notes.append(f"lam={lam:.6g} (hatted symbol in the statement), K9={rep.K9:.6g}")
    return v


def run_l2_estimate(setup: RunSetup, n_paths=None, seed=None) -> Verdict:
    """Running sup of |X|^2 (history included) against (||zeta||^2+L1) e^{L2 t}."""
    rep = setup.bound_report
    n_paths = n_paths or int(setup.opt("l2_estimate", "n_paths", setup.n_paths))
    seed = setup.seed if seed is None else seed
    cps = setup.checkpoints
    emp, ses = _scenario_sup(setup, "sup2", cps, n_paths, seed)
    rows = _rows_against(
        cps, emp, ses,
        lambda t: (rep.zeta_norm_sq + rep.L1) * np.exp(rep.L2 * t))
    v = Verdict("l2_estimate", rows, all(r.passed for r in rows))
    v.notes.append(f"L1={rep.L1:.6g}, L2={rep.L2:.6g}")
    return v


def run_lyapunov(setup: RunSetup, n_paths=None, seed=None) -> Verdict:
    """Pathwise growth-rate statistic max_paths (1/T) log |X(T)| vs M."""
    rep = setup.bound_report
    n_paths = n_paths or int(setup.opt("lyapunov", "n_paths", 1000))
    seed = setup.seed if seed is None else seed
    T = float(setup.opt("lyapunov", "horizon", 20.0))
    cfg = setup.sim_config(T)
    stat = -np.inf
    for si, sc in enumerate(setup.scenarios):
        x2 = batch_statistics(cfg, sc, seed, n_paths, (T,), ("x2",),
                              scenario_index=si)["x2"][:, 0]
        with np.errstate(divide="ignore"):
            rates = 0.5 * np.log(x2) / T
        stat = max(stat, float(np.max(rates)))
    margin = 0.1 * max(1.0, abs(rep.M))
    bound = rep.M + margin
    row = CheckpointRow(T, stat, 0.0, bound, bool(stat <= bound))
    v = Verdict("lyapunov", [row], row.passed)
    v.notes.append(f"M={rep.M:.6g}, margin={margin:.6g} (pathwise, no SE)")
    return v


def run_nonexplosion(setup: RunSetup, n_paths=None, seed=None) -> Verdict:
    """Exit frequencies over an m-ladder against (K2/m^2) e^{K3 T}."""
    rep = setup.bound_report
    n_paths = n_paths or setup.n_paths
    seed = setup.seed if seed is None else seed
    levels = list(setup.opt("nonexplosion", "levels", (2.0, 4.0, 8.0, 16.0)))
    T = float(setup.opt("nonexplosion", "horizon", 5.0))
    cfg = setup.sim_config(T)
    sups = []
    for si, sc in enumerate(setup.scenarios):
        sups.append(batch_statistics(cfg, sc, seed, n_paths, (T,), ("pathsup",),
                                     scenario_index=si)["pathsup"][:, 0])
    rows = []
    freqs = []
    for m in levels:
        best, best_se = 0.0, 0.0
        for s in sups:
            p = float(np.mean(s > m))
            if p >= best:
                best = p
                best_se = np.sqrt(max(p * (1 - p), 0.0) / n_paths)
        cap = bnd.exit_capacity_bound(rep.K2, rep.K3, m, T)
        rows.append(CheckpointRow(float(m), best, float(best_se), float(cap),
                                  bool(best <= cap + 3.0 * best_se)))
        freqs.append(best)
    monotone = all(b <= a + 1e-15 for a, b in zip(freqs, freqs[1:]))
    v = Verdict("nonexplosion", rows, all(r.passed for r in rows) and monotone)
    v.extras["nonincreasing_in_m"] = monotone
    v.notes.append(f"T={T:g}, K2={rep.K2:.6g}, K3={rep.K3:.6g}; "
                   "rows are indexed by the exit level m")
    if not monotone:
        v.notes.append("exit frequency failed to be nonincreasing in m")
    return v


def run_markov_battery(setup: RunSetup, n_paths=None, seed=None) -> Verdict:
    """Estimator-level battery for the expectation axioms and the printed
    capacity-vs-moment inequality, on functionals of B(1)."""
    n_paths = n_paths or int(setup.opt("markov", "n_paths", 10000))
    seed = setup.seed if seed is None else seed
    dt = float(setup.opt("markov", "dt", 0.01))
    band = VolatilityBand(0.5, 1.0)
    scenarios = scenario_grid(band, dt, 3)
    T = 1.0

    def b1_sq(path):
        return path.value(T) ** 2

    def b1_sq_half(path):
        return 0.5 * path.value(T) ** 2

    def b1_sq_neg(path):
        return -path.value(T) ** 2

    est = sublinear_expectation(b1_sq, scenarios, T, n_paths, seed)
    est_half = sublinear_expectation(b1_sq_half, scenarios, T, n_paths, seed)
    est_neg = sublinear_expectation(b1_sq_neg, scenarios, T, n_paths, seed)
    K = 0.7
    est_const = sublinear_expectation(lambda p: K, scenarios, T, n_paths, seed)
    alpha = 2.3
    est_scaled = sublinear_expectation(lambda p: alpha * p.value(T) ** 2,
                                       scenarios, T, n_paths, seed)
    # X + Y with X = B1^2, Y = -B1^2: the sum is 0, strictly below
    # E[X] + E[Y] ~ sigma_hi^2 - sigma_lo^2 > 0 under volatility uncertainty.
    est_sum = sublinear_expectation(lambda p: 0.0 * p.value(T), scenarios,
                                    T, n_paths, seed)
    tol = 1e-9 * max(1.0, est.estimate)
    mono = est_half.estimate - est.estimate
    const_dev = abs(est_const.estimate - K)
    homog_dev = abs(est_scaled.estimate - alpha * est.estimate)
    subadd = est_sum.estimate - (est.estimate + est_neg.estimate)
    rows = [
        # monotonicity: B1^2 >= B1^2/2 pointwise, coupled seeds -> exact order
        CheckpointRow(1, float(mono), 0.0, 0.0, bool(mono <= 0.0)),
        # constant preservation
        CheckpointRow(2, float(const_dev), 0.0, 1e-12, bool(const_dev <= 1e-12)),
        # positive homogeneity (coupled estimators; float-roundoff budget)
        CheckpointRow(3, float(homog_dev), 0.0, tol, bool(homog_dev <= tol)),
        # subadditivity: E[X+Y] <= E[X] + E[Y]
        CheckpointRow(4, float(subadd), 0.0, tol, bool(subadd <= tol)),
        # statistical sanity: band endpoints attain the sup/inf (3 SE)
        CheckpointRow(5, abs(est.estimate - band.sigma_hi ** 2),
                      float(est.se), 0.0,
                      bool(abs(est.estimate - band.sigma_hi ** 2) <= 3.0 * est.se)),
        CheckpointRow(6, abs(est_neg.estimate + band.sigma_lo ** 2),
                      float(est_neg.se), 0.0,
                      bool(abs(est_neg.estimate + band.sigma_lo ** 2)
                           <= 3.0 * est_neg.se)),
    ]
    mk = check_markov_inequality(lambda p: p.value(T), p=2.0, delta=2.0,
                                 scenarios=(Scenario.constant(1.0, VolatilityBand(1.0, 1.0), dt),),
                                 horizon=T, n_paths=n_paths, seed=seed)
    rows.append(CheckpointRow(7, mk.capacity, mk.combined_se, mk.bound, mk.holds))
    v = Verdict("markov", rows, all(r.passed for r in rows))
    v.extras["markov_delta_p_bound"] = mk.bound_delta_p
    v.notes.append("rows: 1 monotonicity, 2 constant, 3 homogeneity, "
                   "4 subadditivity, 5/6 band endpoints (+-3SE), 7 printed "
                   f"capacity bound (delta form; delta^p form = {mk.bound_delta_p:.4g}, "
                   "reported, not asserted)")
    return v


def run_lemma_suite(setup: RunSetup, n_trajectories=None, seed=None) -> Verdict:
    """Pathwise inequality suite on randomly driven trajectories.

    Checks the norm-decomposition bound (orders 1, 2, 4), both variants of
    the delay-integral bound at order 2 for every configured measure, and
    the exact per-step quadratic-variation band.
    """
    n_traj = n_trajectories or int(setup.opt("lemmas", "n_trajectories", 100))
    seed = setup.seed if seed is None else seed
    T = float(setup.opt("lemmas", "horizon", 2.0))
    cfg = setup.sim_config(T, stride=1)
    zeta = setup.zeta_segment()
    measures = list({id(m): m for m in setup.measures.values()}.values())
    worst_norm = np.inf
    worst_plain = np.inf
    worst_exp = np.inf
    worst_qv = 0.0
    for i in range(n_traj):
        si = i % len(setup.scenarios)
        sc = setup.scenarios[si]
        rec = simulate(cfg, sc, seed, scenario_index=si, path_index=i)
        for p in (1.0, 2.0, 4.0):
            chk = check_segment_norm_bound(rec.times, rec.states, zeta, p=p,
                                           lam=0.5 * p * setup.q)
            worst_norm = min(worst_norm, chk.min_slack)
        for mu in measures:
            for variant in ("plain", "exponential"):
                chk = check_delay_integral_bound(rec.times, rec.states, zeta,
                                                 mu, p=2.0, lam=setup.q,
                                                 variant=variant)
                if variant == "plain":
                    worst_plain = min(worst_plain, chk.min_slack)
                else:
                    worst_exp = min(worst_exp, chk.min_slack)
        gpath = sample_path(sc, T, seed, si, i)
        worst_qv = max(worst_qv, gpath.band_violation(setup.band))
    rows = [
        CheckpointRow(1, -worst_norm, 0.0, 1e-6, bool(worst_norm >= -1e-6)),
        CheckpointRow(2, -worst_plain, 0.0, 1e-6, bool(worst_plain >= -1e-6)),
        CheckpointRow(3, -worst_exp, 0.0, 1e-6, bool(worst_exp >= -1e-6)),
        CheckpointRow(4, worst_qv, 0.0, 0.0, bool(worst_qv == 0.0)),
    ]
    v = Verdict("lemmas", rows, all(r.passed for r in rows))
    v.notes.append("rows: 1 norm bound (p in {1,2,4}), 2/3 delay-integral "
                   "bound plain/exponential (p=2), 4 exact qv band; "
                   "empirical = worst violation")
    return v


def run_truncation_agreement(setup: RunSetup, n_seeds=None, seed=None) -> Verdict:
    """Coupled clipped/unclipped runs with a level far above the path sup."""
    n_seeds = n_seeds or int(setup.opt("truncation", "n_seeds", 100))
    seed = setup.seed if seed is None else seed
    T = float(setup.opt("truncation", "horizon", 1.0))
    factor = float(setup.opt("truncation", "level_factor", 10.0))
    cfg = setup.sim_config(T, stride=1)
    zeta_norm = setup.zeta_segment().norm()
    worst = 0.0
    for i in range(n_seeds):
        si = i % len(setup.scenarios)
        sc = setup.scenarios[si]
        probe = simulate(cfg, sc, seed, scenario_index=si, path_index=i)
        sup = float(np.max(np.linalg.norm(probe.states, axis=1)))
        level = factor * max(sup, zeta_norm, 1e-6)
        plain, clipped = simulate_truncated(cfg, level, sc, seed,
                                            scenario_index=si, path_index=i)
        dev = float(np.max(np.abs(plain.states - clipped.states)))
        worst = max(worst, dev)
        if not np.array_equal(plain.states, probe.states):
            worst = max(worst, float(np.max(np.abs(plain.states - probe.states))))
    row = CheckpointRow(0, worst, 0.0, 1e-12, bool(worst <= 1e-12))
    v = Verdict("truncation", [row], row.passed)
    v.notes.append(f"{n_seeds} seeds, level = {factor:g} x path sup; "
                   "empirical = max abs deviation")
    return v


EXPERIMENTS = {
    "ms_bound": run_ms_bound,
    "pair_convergence": run_pair_convergence,
    "map_bound": run_map_bound,
    "map_convergence": run_map_convergence,
    "l2_estimate": run_l2_estimate,
    "lyapunov": run_lyapunov,
    "nonexplosion": run_nonexplosion,
    "markov": run_markov_battery,
    "lemmas": run_lemma_suite,
    "truncation": run_truncation_agreement,
}


@dataclass
class RunAllResult:
    verdicts: dict
    passed: bool
    summary: str


def run_one(setup: RunSetup, name: str, seed=None, n_paths=None) -> Verdict:
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from "
                         f"{sorted(EXPERIMENTS)}")
    fn = EXPERIMENTS[name]
    try:
        if name in ("lemmas",):
            return fn(setup, seed=seed)
        if name in ("truncation",):
            return fn(setup, seed=seed)
        return fn(setup, n_paths=n_paths, seed=seed)
    except InfeasibleError as err:
        return _fail(name, err)


def run_all(setup: RunSetup, out_dir=None, echo=None) -> RunAllResult:
    """Feasibility first, then every enabled experiment; write reports.

    Produces summary.txt (bound report plus verdict table) and one CSV per
    experiment.  The result's ``passed`` is the AND of all verdicts.
    """
    echo = echo or (lambda s: None)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    report = setup.bound_report
    echo(report.to_text())
    verdicts = {}
    t0 = time.time()
    for name in EXPERIMENTS:
        if not setup.enabled(name):
            continue
        v = run_one(setup, name)
        verdicts[name] = v
        echo(f"{name}: {'PASS' if v.passed else 'FAIL'}")
        if out is not None:
            v.write_csv(out / f"{name}.csv")
    elapsed = time.time() - t0
    buf = io.StringIO()
    buf.write(report.to_text())
    buf.write("\n\nverdicts\n========\n")
    for name, v in verdicts.items():
        stats = v.margin_stats()
        buf.write(f"{name:18s} {'PASS' if v.passed else 'FAIL':4s} "
                  f"rows={len(v.rows)} min_margin={stats['min_margin']:.4g}\n")
        for note in v.notes:
            buf.write(f"    {note}\n")
    buf.write(f"\ntotal runtime: {elapsed:.1f} s\n")
    summary = buf.getvalue()
    if out is not None:
        (out / "summary.txt").write_text(summary)
    passed = bool(verdicts) and all(v.passed for v in verdicts.values())
    return RunAllResult(verdicts, passed, summary)
