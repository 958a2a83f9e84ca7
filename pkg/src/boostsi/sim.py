"""Simulation studies: data generators, study runner and aggregation.

Each replication draws data, runs the selection, tests every selected
base-learner with the requested methods and emits one record per
(variable, method).  Aggregates are always recomputed from the records.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np
import pandas as pd
from scipy import stats

from .baselearner import SplineConfig, linear_learner, spline_learner
from .boosting import LearnerBank, boost_fit, BoostConfig, estimate_sigma, selected_design
from .oracle import CVOracle, FixedStopOracle
from .polyhedron import (
    PathCertificate,
    build_gamma,
    polyhedron_ci,
    polyhedron_pvalue,
    truncation_limits,
)
from .sampler import (
    TestSpec,
    selective_inference,
    smooth_function_test_basis,
    test_vector_linear,
)
from .stopping import assign_folds

LINEAR_BETA = (4.0, -3.0, 2.0, -1.0)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    kind: str = "linear"
    n: int = 25
    p0: int = 4
    beta: tuple = LINEAR_BETA
    snr: float = 1.0
    step_length: float = 0.1
    m_stop: int = 40
    stopping: str = "fixed"
    cv_folds: int = 5
    grid_max: int = 100
    variance: str = "known"
    methods: tuple = ("sampling",)
    reps: int = 100
    B: int = 1000
    alpha: float = 0.05
    seed: int = 1
    spline_degree: int = 3
    spline_knots: int = 5
    spline_diff_order: int = 2
    spline_df: float = 4.0

    def __post_init__(self):
        if not self.snr > 0:
            raise ValueError("SNR must be positive")
        if self.reps < 1:
            raise ValueError("need at least one replication")
        if self.kind not in ("linear", "additive"):
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        if self.stopping not in ("fixed", "cv"):
            raise ValueError(f"unknown stopping rule {self.stopping!r}")
        unknown = set(self.methods) - {"sampling", "polyhedron", "naive"}
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    @property
    def n_signal(self) -> int:
        return len(self.beta) if self.kind == "linear" else 2


PRESETS = {
    "linear-n25-p8-snr1": ScenarioConfig("linear-n25-p8-snr1", n=25, p0=4, snr=1.0),
    "linear-n25-p8-snr4": ScenarioConfig("linear-n25-p8-snr4", n=25, p0=4, snr=4.0),
    "linear-n25-p8-snr1-cv": ScenarioConfig("linear-n25-p8-snr1-cv", n=25, p0=4, snr=1.0, stopping="cv"),
    "linear-n25-p26-snr1": ScenarioConfig("linear-n25-p26-snr1", n=25, p0=22, snr=1.0),
    "linear-n25-p26-snr4": ScenarioConfig("linear-n25-p26-snr4", n=25, p0=22, snr=4.0),
    "linear-n100-p26-snr1": ScenarioConfig("linear-n100-p26-snr1", n=100, p0=22, snr=1.0),
    "linear-n100-p26-snr4": ScenarioConfig("linear-n100-p26-snr4", n=100, p0=22, snr=4.0),
    "additive-n300": ScenarioConfig(
        "additive-n300", kind="additive", n=300, p0=13, snr=0.5, m_stop=50, B=600
    ),
}


def preset(name: str, **overrides) -> ScenarioConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return replace(cfg, **overrides)


class SimData(NamedTuple):
    y: np.ndarray
    X: np.ndarray
    mu: np.ndarray
    sigma: float


def _rng(seed):
    return np.random.default_rng(seed)


def _finish(X, eta, snr, rng):
    sigma = float(np.std(eta, ddof=1) / snr)
    y = eta + sigma * rng.standard_normal(eta.size)
    return SimData(y - y.mean(), X - X.mean(axis=0), eta - eta.mean(), sigma)


def gen_linear(cfg: ScenarioConfig, seed) -> SimData:
    """Standard normal covariates, ``eta = X[:, :4] beta``, noise sd
    ``sd(eta) / SNR``.  Response and covariates are returned centered."""
    rng = _rng(seed)
    beta = np.asarray(cfg.beta, dtype=float)
    X = rng.standard_normal((cfg.n, beta.size + cfg.p0))
    return _finish(X, X[:, : beta.size] @ beta, cfg.snr, rng)


def additive_truth(x1, x2):
    return np.sin(2 * x1) + 0.5 * x2 ** 2


def gen_additive(cfg: ScenarioConfig, seed) -> SimData:
    """Two smooth signals ``sin(2 x1) + x2^2 / 2`` plus ``p0`` noise covariates."""
    rng = _rng(seed)
    X = rng.standard_normal((cfg.n, 2 + cfg.p0))
    return _finish(X, additive_truth(X[:, 0], X[:, 1]), cfg.snr, rng)


def make_learners(cfg: ScenarioConfig, X):
    if cfg.kind == "linear":
        return [linear_learner(j, X[:, j], name=f"x{j + 1}") for j in range(X.shape[1])]
    scfg = SplineConfig(cfg.spline_degree, cfg.spline_knots, cfg.spline_diff_order)
    return [spline_learner(j, X[:, j], scfg, df=cfg.spline_df, name=f"s(x{j + 1})") for j in range(X.shape[1])]


def replication_seeds(base_seed: int, rep: int):
    """Independent (data, folds, sampler) seed streams for one replication."""
    ss = np.random.SeedSequence([int(base_seed), int(rep)])
    return ss.spawn(3)


RECORD_COLUMNS = [
    "rep", "learner", "var_class", "method", "selected", "n_selected", "admissible", "null_holds",
    "mstop", "estimate", "target", "p_value", "ci_lo", "ci_hi", "covered", "ci_infinite", "ess",
    "accepted", "dim", "error",
]


@dataclass(frozen=True, eq=False)
class ReplicationRecord:
    """Everything recorded for one replication; ``tests`` has one row per
    (selected variable, method)."""

    rep: int
    selected: tuple
    mstop: int
    admissible: bool
    error: str
    tests: list


def _record(rep, jid, cfg, method, sel, admissible, mstop, **kw):
    rec = dict.fromkeys(RECORD_COLUMNS)
    rec.update(
        rep=rep, learner=jid, var_class="signal" if jid < cfg.n_signal else "noise", method=method,
        selected=";".join(str(s) for s in sel), n_selected=len(sel), admissible=admissible,
        null_holds=bool(admissible and jid >= cfg.n_signal), mstop=mstop, error="",
    )
    rec.update(kw)
    lo, hi, t = rec["ci_lo"], rec["ci_hi"], rec["target"]
    if lo is not None and t is not None:
        rec["covered"] = bool(lo <= t <= hi)
        rec["ci_infinite"] = bool(math.isinf(lo) or math.isinf(hi))
    return rec


def run_replication(cfg: ScenarioConfig, rep: int) -> ReplicationRecord:
    sel, mstop, admissible, tests = _replicate(cfg, rep)
    errs = [t["error"] for t in tests if t["learner"] < 0]
    return ReplicationRecord(rep, sel, mstop, admissible, errs[0] if errs else "", tests)


def _replicate(cfg, rep):
    data_seed, fold_seed, sampler_seed = replication_seeds(cfg.seed, rep)
    data = (gen_linear if cfg.kind == "linear" else gen_additive)(cfg, data_seed)
    learners = make_learners(cfg, data.X)
    bank = LearnerBank(learners)
    nu = cfg.step_length
    if cfg.stopping == "cv":
        folds = assign_folds(cfg.n, cfg.cv_folds, int(fold_seed.generate_state(1)[0]))
        oracle = CVOracle(learners, nu, cfg.grid_max, folds)
        mstop = oracle.mstop(data.y)
    else:
        oracle = FixedStopOracle(learners, nu, cfg.m_stop, bank=bank)
        mstop = cfg.m_stop
    fit = boost_fit(data.y, learners, BoostConfig(nu, mstop), bank=bank)
    sel = fit.selected_set
    oracle.reference = sel
    admissible = set(range(cfg.n_signal)) <= set(sel)
    out = []
    try:
        sigma2 = estimate_sigma(fit, data.y, cfg.variance, data.sigma ** 2)
        X_A = selected_design(fit)
        if np.linalg.matrix_rank(X_A) < X_A.shape[1]:
            raise np.linalg.LinAlgError("selected design is rank deficient")
    except (ValueError, np.linalg.LinAlgError) as exc:
        return sel, mstop, admissible, [_record(rep, -1, cfg, "all", sel, admissible, mstop, error=str(exc))]
    poly = None
    if "polyhedron" in cfg.methods and cfg.kind == "linear" and cfg.stopping == "fixed":
        poly = build_gamma(PathCertificate.from_fit(fit))
    sub_seeds = sampler_seed.spawn(len(sel))
    col = 0
    for k, jid in enumerate(sel):
        width = fit.learner(jid).p
        block = slice(col, col + width)
        col += width
        if cfg.kind == "linear":
            v = test_vector_linear(X_A, block.start)
            spec = TestSpec.direction(v, sigma2)
            target = float(v @ data.mu)
        else:
            spec = TestSpec.group(smooth_function_test_basis(X_A, block), sigma2)
            py = spec.W @ (spec.W.T @ data.y)
            target = float(py @ data.mu / np.linalg.norm(py))
        base = dict(target=target, dim=spec.dim)
        for method in cfg.methods:
            try:
                if method == "sampling":
                    res = selective_inference(data.y, spec, oracle, B=cfg.B, alpha=cfg.alpha, seed=sub_seeds[k])
                    rec = dict(estimate=res.estimate, p_value=res.p_value, ci_lo=res.ci_lo, ci_hi=res.ci_hi,
                               ess=res.ess, accepted=res.accepted)
                elif method == "polyhedron":
                    if poly is None:
                        continue
                    iv = truncation_limits(poly, spec.v, sigma2, data.y)
                    r = float(spec.v @ data.y)
                    p = polyhedron_pvalue(poly, spec.v, sigma2, data.y, interval=iv)
                    lo, hi = polyhedron_ci(r, spec.sigma_r, iv, cfg.alpha)
                    rec = dict(estimate=r, p_value=p, ci_lo=lo, ci_hi=hi)
                else:
                    rec = naive_test(data.y, spec, cfg.alpha)
            except Exception as exc:  # noqa: BLE001 - recorded per hypothesis, study continues
                out.append(_record(rep, jid, cfg, method, sel, admissible, mstop, error=f"{type(exc).__name__}: {exc}", **base))
                continue
            out.append(_record(rep, jid, cfg, method, sel, admissible, mstop, **base, **rec))
    return sel, mstop, admissible, out


def naive_test(y, spec: TestSpec, alpha: float) -> dict:
    """Unadjusted test treating the selected model as fixed in advance."""
    if spec.mode == "direction":
        r = float(spec.v @ y)
        z = r / spec.sigma_r
        q = stats.norm.isf(alpha / 2) * spec.sigma_r
        return dict(estimate=r, p_value=float(2 * stats.norm.sf(abs(z))), ci_lo=r - q, ci_hi=r + q)
    r = float(np.linalg.norm(spec.W.T @ y))
    p = float(stats.chi2.sf(r * r / spec.sigma2, spec.dim))
    return dict(estimate=r, p_value=p, ci_lo=None, ci_hi=None)


@dataclass(frozen=True, eq=False)
class StudyResult:
    config: ScenarioConfig
    records: list
    aggregates: dict = field(default_factory=dict)

    def hypotheses(self) -> pd.DataFrame:
        """One row per tested hypothesis, in canonical order."""
        return tests_frame(self.records)

    def to_csv(self, path):
        self.hypotheses().to_csv(path, index=False)


def tests_frame(records) -> pd.DataFrame:
    rows = [t for rec in sorted(records, key=lambda r: r.rep) for t in rec.tests]
    df = pd.DataFrame(rows, columns=RECORD_COLUMNS)
    return df.sort_values(["rep", "learner", "method"], kind="stable").reset_index(drop=True)


def _run_one(args):
    cfg, rep = args
    return run_replication(cfg, rep)


def run_study(cfg: ScenarioConfig, threads: int = 1) -> StudyResult:
    jobs = [(cfg, rep) for rep in range(cfg.reps)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            records = list(ex.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
    else:
        records = [_run_one(j) for j in jobs]
    records.sort(key=lambda r: r.rep)
    return StudyResult(cfg, records, aggregate(tests_frame(records), cfg.alpha))


def read_records(path) -> pd.DataFrame:
    df = pd.read_csv(path, keep_default_na=False, na_values=[""])
    df["error"] = df["error"].fillna("")
    df["selected"] = df["selected"].fillna("").astype(str)
    return df


def ks_uniform(p) -> float:
    p = np.asarray(p, dtype=float)
    if p.size == 0:
        return math.nan
    return float(stats.kstest(p, "uniform").statistic)


def aggregate(records: pd.DataFrame, alpha: float = 0.05) -> dict:
    """Per-method summaries over admissible replications without errors."""
    out = {}
    ok = records[(records["error"].fillna("") == "") & (records["learner"] >= 0)]
    n_reps = int(records["rep"].nunique())
    adm_reps = records.groupby("rep")["admissible"].first().astype(bool)
    for method, df in ok.groupby("method", sort=True):
        adm = df[df["admissible"].astype(bool)]
        noise = adm[adm["var_class"] == "noise"]
        signal = adm[adm["var_class"] == "signal"]
        entry = {
            "replications_with_tests": n_reps,
            "admissible_replications": int(adm_reps.sum()),
            "n_noise_tests": int(len(noise)),
            "n_signal_tests": int(len(signal)),
            "ks_noise": ks_uniform(noise["p_value"]),
            "rejection_noise": _mean(noise["p_value"] < alpha),
            "rejection_signal": _mean(signal["p_value"] < alpha),
            "coverage_noise": _mean(noise["covered"].dropna().astype(bool)),
            "coverage_signal": _mean(signal["covered"].dropna().astype(bool)),
            "infinite_ci_rate": _mean(adm["ci_infinite"].dropna().astype(bool)),
            "per_variable": {
                int(j): {
                    "n": int(len(g)),
                    "ks": ks_uniform(g["p_value"]),
                    "rejection": _mean(g["p_value"] < alpha),
                    "median_p": float(g["p_value"].median()),
                }
                for j, g in adm.groupby("learner")
            },
        }
        out[method] = entry
    out["errors"] = int((records["error"].fillna("") != "").sum())
    return out


def _mean(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.mean()) if x.size else math.nan


def config_dict(cfg: ScenarioConfig) -> dict:
    d = asdict(cfg)
    d["beta"] = list(cfg.beta)
    d["methods"] = list(cfg.methods)
    return d
