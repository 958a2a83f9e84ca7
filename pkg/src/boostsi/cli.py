"""Command-line entry point: ``boostsi {fit,infer,simulate}``.

Model configuration is an INI file::

    [data]
    path = houses.csv
    response = price

    [boosting]
    step_length = 0.1
    stopping = cv            ; or: fixed (then m_stop = ...)
    cv_folds = 5
    grid_max = 200

    [variance]
    mode = boost_residual    ; known (with sigma2 = ...), response, ols_refit

    [inference]
    method = sampling        ; or polyhedron
    B = 1000
    alpha = 0.05

    [learner area]
    kind = spline            ; linear, spline, group, factor, linear_spline
    column = area
    knots = 7

    [target area-curve]
    learner = area           ; defaults to the section label
    test = pointwise         ; coefficient, pointwise, function
    points = 25

Unknown sections or keys are rejected.  A ``linear_spline`` learner named
``x`` creates the two learners ``x.lin`` and ``x.dev``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselearner import (
    BaseLearner,
    LearnerKind,
    SingularLearnerError,
    SplineConfig,
    group_learner,
    linear_learner,
    spline_deviation_learner,
    spline_learner,
)
from .boosting import BoostConfig, LearnerBank, boost_fit, estimate_sigma, selected_design
from .oracle import CVOracle, FixedStopOracle
from .polyhedron import PathCertificate, build_gamma, polyhedron_ci, polyhedron_pvalue, truncation_limits
from .sampler import (
    TestSpec,
    selective_inference,
    smooth_function_test_basis,
    smooth_pointwise_vector,
    test_vector_linear,
)
from .stopping import assign_folds

FORMAT_VERSION = "1.0"
EXIT_OK, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2

LEARNER_KINDS = ("linear", "spline", "group", "factor", "linear_spline")
TEST_KINDS = ("coefficient", "pointwise", "function")

_SECTION_KEYS = {
    "data": {"path", "response"},
    "boosting": {"step_length", "stopping", "m_stop", "cv_folds", "grid_max", "cv_seed"},
    "variance": {"mode", "sigma2"},
    "inference": {"method", "b", "alpha", "seed", "proposal", "budget"},
}
_LEARNER_KEYS = {"kind", "column", "columns", "degree", "knots", "diff_order", "df", "lambda", "deviation_df"}
_TARGET_KEYS = {"learner", "test", "points", "grid"}


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class LearnerDecl:
    name: str
    kind: str
    columns: tuple
    degree: int = 3
    knots: int = 5
    diff_order: int = 2
    df: float | None = None
    smoothing: float | None = None
    deviation_df: float = 1.0


@dataclass(frozen=True)
class TargetDecl:
    label: str
    learner: str
    test: str
    points: int = 20
    grid: tuple | None = None


@dataclass(frozen=True)
class RunConfig:
    data_path: str
    response: str
    learners: tuple
    targets: tuple = ()
    step_length: float = 0.1
    stopping: str = "fixed"
    m_stop: int = 100
    cv_folds: int = 5
    grid_max: int = 100
    cv_seed: int = 1
    variance: str = "boost_residual"
    sigma2: float | None = None
    method: str = "sampling"
    B: int = 1000
    alpha: float = 0.05
    seed: int = 1
    proposal: str = "uniform_bracket"
    budget: int = 50
    base_dir: str = field(default=".", compare=False)

    def resolved_data_path(self) -> Path:
        p = Path(self.data_path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_sections(self) -> dict:
        """Canonical section/key/value mapping; parses back to an equal config."""
        out = {
            "data": {"path": self.data_path, "response": self.response},
            "boosting": {"step_length": repr(self.step_length), "stopping": self.stopping},
            "variance": {"mode": self.variance},
            "inference": {
                "method": self.method, "b": str(self.B), "alpha": repr(self.alpha), "seed": str(self.seed),
                "proposal": self.proposal, "budget": str(self.budget),
            },
        }
        if self.stopping == "fixed":
            out["boosting"]["m_stop"] = str(self.m_stop)
        else:
            out["boosting"].update(cv_folds=str(self.cv_folds), grid_max=str(self.grid_max), cv_seed=str(self.cv_seed))
        if self.sigma2 is not None:
            out["variance"]["sigma2"] = repr(self.sigma2)
        for d in self.learners:
            sec = {"kind": d.kind}
            if d.kind == "group":
                sec["columns"] = ", ".join(d.columns)
            else:
                sec["column"] = d.columns[0]
            if d.kind in ("spline", "linear_spline"):
                sec.update(degree=str(d.degree), knots=str(d.knots), diff_order=str(d.diff_order))
                if d.smoothing is not None:
                    sec["lambda"] = repr(d.smoothing)
                elif d.df is not None:
                    sec["df"] = repr(d.df)
            if d.kind == "linear_spline":
                sec["deviation_df"] = repr(d.deviation_df)
            out[f"learner {d.name}"] = sec
        for t in self.targets:
            sec = {"learner": t.learner, "test": t.test}
            if t.test == "pointwise":
                if t.grid is not None:
                    sec["grid"] = ", ".join(repr(c) for c in t.grid)
                else:
                    sec["points"] = str(t.points)
            out[f"target {t.label}"] = sec
        return out

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.read_dict(self.to_sections())
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


def _num(sec, key, conv, default=None, *, where):
    if key not in sec:
        return default
    raw = sec[key].strip()
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"[{where}] {key}: cannot parse {raw!r}") from None


def _choice(value, options, where):
    if value not in options:
        raise ConfigError(f"{where}: {value!r} is not one of {', '.join(options)}")
    return value


def parse_config_sections(sections: dict, base_dir: str = ".") -> RunConfig:
    learners, targets, seen = [], [], set()
    for name in sections:
        head, _, rest = name.partition(" ")
        rest = rest.strip()
        if name in _SECTION_KEYS:
            allowed = _SECTION_KEYS[name]
        elif head == "learner" and rest:
            allowed = _LEARNER_KEYS
        elif head == "target" and rest:
            allowed = _TARGET_KEYS
        else:
            raise ConfigError(f"unknown section [{name}]")
        unknown = sorted(set(k.lower() for k in sections[name]) - allowed)
        if unknown:
            raise ConfigError(f"[{name}] unknown keys: {', '.join(unknown)}")
    get = lambda s: {k.lower(): v for k, v in sections.get(s, {}).items()}  # noqa: E731
    data = get("data")
    if "path" not in data or "response" not in data:
        raise ConfigError("[data] needs path and response")
    boost, var, inf = get("boosting"), get("variance"), get("inference")
    for name in sections:
        head, _, rest = name.partition(" ")
        rest = rest.strip()
        sec = get(name)
        if head == "learner":
            if rest in seen:
                raise ConfigError(f"duplicate learner {rest!r}")
            seen.add(rest)
            kind = _choice(sec.get("kind", "").strip(), LEARNER_KINDS, f"[{name}] kind")
            if kind == "group":
                cols = tuple(c.strip() for c in sec.get("columns", "").split(",") if c.strip())
                if not cols:
                    raise ConfigError(f"[{name}] group learners need columns")
            else:
                cols = (sec.get("column", rest).strip(),)
            where = name
            df = _num(sec, "df", float, None, where=where)
            lam = _num(sec, "lambda", float, None, where=where)
            if df is not None and lam is not None:
                raise ConfigError(f"[{name}] give either df or lambda, not both")
            if kind in ("spline", "linear_spline") and df is None and lam is None:
                df = 4.0
            learners.append(LearnerDecl(
                rest, kind, cols,
                degree=_num(sec, "degree", int, 3, where=where),
                knots=_num(sec, "knots", int, 5, where=where),
                diff_order=_num(sec, "diff_order", int, 2, where=where),
                df=df, smoothing=lam,
                deviation_df=_num(sec, "deviation_df", float, 1.0, where=where),
            ))
        elif head == "target":
            test = _choice(sec.get("test", "").strip(), TEST_KINDS, f"[{name}] test")
            grid = None
            if "grid" in sec:
                try:
                    grid = tuple(float(c) for c in sec["grid"].split(",") if c.strip())
                except ValueError:
                    raise ConfigError(f"[{name}] grid: expected comma-separated numbers") from None
            targets.append(TargetDecl(rest, sec.get("learner", rest).strip(), test,
                                      _num(sec, "points", int, 20, where=name), grid))
    if not learners:
        raise ConfigError("no [learner ...] sections")
    stopping = _choice(boost.get("stopping", "fixed").strip(), ("fixed", "cv"), "[boosting] stopping")
    cfg = RunConfig(
        data_path=data["path"].strip(),
        response=data["response"].strip(),
        learners=tuple(learners),
        targets=tuple(targets),
        step_length=_num(boost, "step_length", float, 0.1, where="boosting"),
        stopping=stopping,
        m_stop=_num(boost, "m_stop", int, 100, where="boosting"),
        cv_folds=_num(boost, "cv_folds", int, 5, where="boosting"),
        grid_max=_num(boost, "grid_max", int, 100, where="boosting"),
        cv_seed=_num(boost, "cv_seed", int, 1, where="boosting"),
        variance=_choice(var.get("mode", "boost_residual").strip(),
                         ("known", "boost_residual", "response", "ols_refit"), "[variance] mode"),
        sigma2=_num(var, "sigma2", float, None, where="variance"),
        method=_choice(inf.get("method", "sampling").strip(), ("sampling", "polyhedron"), "[inference] method"),
        B=_num(inf, "b", int, 1000, where="inference"),
        alpha=_num(inf, "alpha", float, 0.05, where="inference"),
        seed=_num(inf, "seed", int, 1, where="inference"),
        proposal=_choice(inf.get("proposal", "uniform_bracket").strip(),
                         ("uniform_bracket", "normal_at_robs"), "[inference] proposal"),
        budget=_num(inf, "budget", int, 50, where="inference"),
        base_dir=base_dir,
    )
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if cfg.method == "sampling" and cfg.B < 100:
        raise ConfigError("sampling needs B >= 100")
    if not 0 < cfg.alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    if not cfg.step_length > 0:
        raise ConfigError("step_length must be positive")
    if cfg.stopping == "fixed" and cfg.m_stop < 1:
        raise ConfigError("m_stop must be >= 1")
    if cfg.variance == "known" and cfg.sigma2 is None:
        raise ConfigError("[variance] mode = known needs sigma2")
    names = set()
    for d in cfg.learners:
        names.update((f"{d.name}.lin", f"{d.name}.dev") if d.kind == "linear_spline" else (d.name,))
    for t in cfg.targets:
        if t.learner not in names:
            raise ConfigError(f"[target {t.label}] refers to no declared learner {t.learner!r}")


def parse_config(path) -> RunConfig:
    path = Path(path)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    sections = {s: dict(cp[s]) for s in cp.sections()}
    return parse_config_sections(sections, str(path.parent))


# ------------------------------------------------------------------ #
# Data
# ------------------------------------------------------------------ #


@dataclass(frozen=True, eq=False)
class Dataset:
    y: np.ndarray
    learners: list
    centering: dict
    n: int
    raw_columns: dict


def read_csv(path) -> tuple[list, list]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"data file is not UTF-8: {exc}") from None
    if not rows:
        raise DataError("data file is empty")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    for i, r in enumerate(body, start=1):
        if len(r) != len(header):
            raise DataError(f"row {i}: expected {len(header)} fields, found {len(r)}")
    return header, body


def _numeric_column(header, body, name) -> np.ndarray:
    k = header.index(name)
    out = np.empty(len(body))
    for i, r in enumerate(body, start=1):
        cell = r[k].strip()
        if cell == "":
            raise DataError(f"row {i}, column {name!r}: missing value")
        try:
            out[i - 1] = float(cell)
        except ValueError:
            raise DataError(f"row {i}, column {name!r}: non-numeric value {cell!r}") from None
        if not math.isfinite(out[i - 1]):
            raise DataError(f"row {i}, column {name!r}: non-finite value {cell!r}")
    return out


def _factor_dummies(header, body, name):
    k = header.index(name)
    values = []
    for i, r in enumerate(body, start=1):
        cell = r[k].strip()
        if cell == "":
            raise DataError(f"row {i}, column {name!r}: missing value")
        values.append(cell)
    levels = sorted(set(values))
    if len(levels) < 2:
        raise DataError(f"column {name!r}: factor needs at least two levels")
    D = np.array([[v == lev for lev in levels[1:]] for v in values], dtype=float)
    return D, levels


def ingest(cfg: RunConfig) -> Dataset:
    """Read the CSV, center response and covariates, build the learners."""
    header, body = read_csv(cfg.resolved_data_path())
    needed = [cfg.response] + [c for d in cfg.learners for c in d.columns]
    for c in needed:
        if c not in header:
            raise DataError(f"missing column {c!r}")
    n = len(body)
    if n < 3:
        raise DataError(f"need at least 3 rows, found {n}")
    y = _numeric_column(header, body, cfg.response)
    centering = {cfg.response: float(y.mean())}
    y = y - y.mean()
    learners, raw = [], {}
    next_id = 0
    for d in cfg.learners:
        try:
            if d.kind == "factor":
                D, levels = _factor_dummies(header, body, d.columns[0])
                means = D.mean(axis=0)
                centering[d.columns[0]] = {f"{d.columns[0]}={lev}": float(m) for lev, m in zip(levels[1:], means)}
                learners.append(group_learner(next_id, D - means, name=d.name))
                next_id += 1
                continue
            cols = np.column_stack([_numeric_column(header, body, c) for c in d.columns])
            for c, m in zip(d.columns, cols.mean(axis=0)):
                centering[c] = float(m)
            raw[d.name] = cols
            if d.kind == "linear":
                learners.append(linear_learner(next_id, cols[:, 0] - cols[:, 0].mean(), name=d.name))
                next_id += 1
            elif d.kind == "group":
                learners.append(group_learner(next_id, cols - cols.mean(axis=0), name=d.name))
                next_id += 1
            else:
                scfg = SplineConfig(d.degree, d.knots, d.diff_order)
                c = cols[:, 0]
                if d.kind == "spline":
                    learners.append(spline_learner(next_id, c, scfg, smoothing=d.smoothing,
                                                   df=d.df, name=d.name))
                    next_id += 1
                else:
                    learners.append(linear_learner(next_id, c - c.mean(), name=f"{d.name}.lin"))
                    learners.append(spline_deviation_learner(next_id + 1, c, scfg, df=d.deviation_df,
                                                             name=f"{d.name}.dev"))
                    raw[f"{d.name}.dev"] = cols
                    next_id += 2
        except SingularLearnerError as exc:
            raise DataError(f"learner {d.name!r}: {exc}") from None
        except ValueError as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"learner {d.name!r}: {exc}") from None
    return Dataset(y, learners, centering, n, raw)


# ------------------------------------------------------------------ #
# Pipeline
# ------------------------------------------------------------------ #


def _clean(x):
    """JSON-safe scalar: non-finite floats become strings."""
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


RESULT_KEYS = ("c", "fitted", "estimate", "p_value", "ci_lo", "ci_hi", "ess", "accepted", "B", "diagnostics", "error")


def _result(**kw):
    out = dict.fromkeys(RESULT_KEYS)
    out.update(kw)
    return out


class Pipeline:
    def __init__(self, cfg: RunConfig, data: Dataset):
        self.cfg = cfg
        self.data = data
        self.by_name = {bl.name: bl for bl in data.learners}
        self.bank = LearnerBank(data.learners)

    def select(self):
        cfg, y = self.cfg, self.data.y
        if cfg.stopping == "cv":
            folds = assign_folds(self.data.n, cfg.cv_folds, cfg.cv_seed)
            self.oracle = CVOracle(self.data.learners, cfg.step_length, cfg.grid_max, folds)
            self.m_stop = self.oracle.mstop(y)
        else:
            self.oracle = FixedStopOracle(self.data.learners, cfg.step_length, cfg.m_stop, bank=self.bank)
            self.m_stop = cfg.m_stop
        self.fit = boost_fit(y, self.data.learners, BoostConfig(cfg.step_length, self.m_stop), bank=self.bank)
        self.oracle.reference = self.fit.selected_set
        return self.fit

    def selected_report(self):
        out = []
        for jid in self.fit.selected_set:
            bl = self.fit.learner(jid)
            out.append({
                "id": jid, "name": bl.name, "kind": bl.kind.value,
                "times_selected": self.fit.path.count(jid),
                "coefficients": [float(c) for c in self.fit.coefficients[jid]],
            })
        return out

    def _block(self, bl: BaseLearner) -> slice:
        col = 0
        for jid in self.fit.selected_set:
            width = self.fit.learner(jid).p
            if jid == bl.id:
                return slice(col, col + width)
            col += width
        raise KeyError(bl.name)

    def _seed(self, ti: int, k: int):
        return np.random.SeedSequence([self.cfg.seed, ti, k])

    def infer(self, ti: int, t: TargetDecl) -> dict:
        cfg = self.cfg
        entry = {"target": t.label, "learner": t.learner, "test": t.test, "status": "ok", "error": None,
                 "results": []}
        bl = self.by_name[t.learner]
        if bl.id not in self.fit.selected_set:
            return dict(entry, status="error", error="learner not selected")
        if cfg.method == "polyhedron":
            if t.test != "coefficient" or cfg.stopping != "fixed" or any(
                b.kind is not LearnerKind.LINEAR for b in self.data.learners
            ):
                return dict(entry, status="error",
                            error="polyhedron method needs linear learners, fixed m_stop and coefficient tests")
        X_A = selected_design(self.fit)
        if np.linalg.matrix_rank(X_A) < X_A.shape[1]:
            return dict(entry, status="error", error="selected design is rank deficient")
        block = self._block(bl)
        if t.test == "coefficient":
            if bl.p != 1:
                return dict(entry, status="error", error="coefficient tests need a single-column learner")
            specs = [(None, None, TestSpec.direction(test_vector_linear(X_A, block.start), self.sigma2))]
        elif t.test == "function":
            specs = [(None, None, TestSpec.group(smooth_function_test_basis(X_A, block), self.sigma2))]
        else:
            if bl.basis is None:
                return dict(entry, status="error", error="pointwise tests need a spline learner")
            grid = np.asarray(t.grid) if t.grid is not None else np.linspace(bl.basis.lo, bl.basis.hi, t.points)
            coef = self.fit.coefficients[bl.id]
            specs = []
            for c in grid:
                try:
                    v = smooth_pointwise_vector(X_A, block, float(c), bl.basis)
                except ValueError as exc:
                    specs.append((float(c), None, exc))
                    continue
                specs.append((float(c), float(np.ravel(bl.basis(float(c))) @ coef),
                              TestSpec.direction(v, self.sigma2) if np.any(v) else ValueError("zero test vector")))
        failed = False
        for k, (c, fitted, spec) in enumerate(specs):
            if isinstance(spec, Exception):
                entry["results"].append(_result(c=c, fitted=fitted, error=str(spec)))
                failed = True
                continue
            try:
                entry["results"].append(_result(c=c, fitted=fitted, **self._run_one(spec, self._seed(ti, k))))
            except Exception as exc:  # noqa: BLE001 - reported per target, never dropped
                entry["results"].append(_result(c=c, fitted=fitted, error=f"{type(exc).__name__}: {exc}"))
                failed = True
        if failed:
            entry.update(status="error", error="one or more evaluations failed")
        return entry

    def _run_one(self, spec: TestSpec, seed) -> dict:
        cfg, y = self.cfg, self.data.y
        if cfg.method == "polyhedron":
            poly = build_gamma(PathCertificate.from_fit(self.fit))
            iv = truncation_limits(poly, spec.v, self.sigma2, y)
            r = float(spec.v @ y)
            p = polyhedron_pvalue(poly, spec.v, self.sigma2, y, interval=iv)
            lo, hi = polyhedron_ci(r, spec.sigma_r, iv, cfg.alpha)
            return dict(estimate=r, p_value=p, ci_lo=lo, ci_hi=hi,
                        diagnostics={"truncation_lo": iv.lo, "truncation_up": iv.up})
        res = selective_inference(y, spec, self.oracle, B=cfg.B, alpha=cfg.alpha, seed=seed,
                                  proposal=cfg.proposal, budget=cfg.budget)
        d = res.as_dict()
        return {k: d[k] for k in ("estimate", "p_value", "ci_lo", "ci_hi", "ess", "accepted", "B", "diagnostics")}


def run(cfg: RunConfig, *, infer: bool = True) -> tuple[dict, int]:
    """Execute the pipeline and build the report.  Returns ``(report, exit code)``."""
    t0 = time.perf_counter()
    data = ingest(cfg)
    pipe = Pipeline(cfg, data)
    fit = pipe.select()
    report = {
        "format_version": FORMAT_VERSION,
        "config": cfg.to_sections(),
        "n": data.n,
        "centering": data.centering,
        "m_stop": pipe.m_stop,
        "selected": pipe.selected_report(),
        "variance": {"mode": cfg.variance, "sigma2": None, "error": None},
        "targets": [],
    }
    code = EXIT_OK
    try:
        pipe.sigma2 = estimate_sigma(fit, data.y, cfg.variance, cfg.sigma2)
        report["variance"]["sigma2"] = pipe.sigma2
    except ValueError as exc:
        pipe.sigma2 = None
        report["variance"]["error"] = str(exc)
    if infer:
        for ti, t in enumerate(cfg.targets):
            if pipe.sigma2 is None:
                entry = {"target": t.label, "learner": t.learner, "test": t.test, "status": "error",
                         "error": f"variance unavailable: {report['variance']['error']}", "results": []}
            else:
                entry = pipe.infer(ti, t)
            if entry["status"] != "ok":
                code = EXIT_PARTIAL
            report["targets"].append(entry)
    report["timing"] = {
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "wall_seconds": time.perf_counter() - t0,
    }
    return _clean(report), code


def report_body(report: dict) -> str:
    """Serialized report without the timing block (the deterministic part)."""
    return json.dumps({k: v for k, v in report.items() if k != "timing"}, indent=2, sort_keys=True)


def format_table(report: dict) -> str:
    head = ("target", "test", "c", "estimate", "p_value", "ci_lo", "ci_hi", "status")
    rows = []
    for t in report["targets"]:
        results = t["results"] or [dict.fromkeys(RESULT_KEYS)]
        for r in results:
            status = r.get("error") or (t["error"] if t["status"] != "ok" else "ok")
            rows.append((t["target"], t["test"], _fmt(r.get("c")), _fmt(r.get("estimate")),
                         _fmt(r.get("p_value")), _fmt(r.get("ci_lo")), _fmt(r.get("ci_hi")), status))
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


def _fmt(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, str):
        return x
    return f"{x:.4g}"


def write_outputs(report: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out_dir / "report.txt").write_text(format_table(report), encoding="utf-8")
    for t in report["targets"]:
        if t["test"] != "pointwise" or not t["results"]:
            continue
        path = out_dir / f"effect_{t['target']}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["c", "fitted", "ci_lo", "ci_hi", "p_value"])
            for r in t["results"]:
                w.writerow([_csv(r[k]) for k in ("c", "fitted", "ci_lo", "ci_hi", "p_value")])


def _csv(x):
    return "" if x is None else repr(x) if isinstance(x, float) else str(x)


# ------------------------------------------------------------------ #
# Argument parsing
# ------------------------------------------------------------------ #


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="model configuration (INI)")
    common.add_argument("--seed", type=int, help="override the inference / study seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes for simulations")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")

    parser = _Parser(prog="boostsi", description="Selective inference after L2-Boosting.", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("fit", parents=[common], help="fit and report the selected model")
    sub.add_parser("infer", parents=[common], help="fit and run selective inference for all targets")
    sim = sub.add_parser("simulate", parents=[common], help="run a simulation preset")
    sim.add_argument("--preset", required=True)
    sim.add_argument("--reps", type=int)
    sim.add_argument("-B", type=int, dest="B")
    sim.add_argument("--methods", help="comma-separated: sampling,polyhedron,naive")
    return parser


def _simulate(args) -> int:
    from . import sim

    overrides = {}
    if args.reps is not None:
        overrides["reps"] = args.reps
    if args.B is not None:
        overrides["B"] = args.B
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.methods:
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    try:
        cfg = sim.preset(args.preset, **overrides)
    except (KeyError, ValueError) as exc:
        print(f"boostsi: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    result = sim.run_study(cfg, threads=max(1, args.threads))
    args.out.mkdir(parents=True, exist_ok=True)
    result.to_csv(args.out / "records.csv")
    summary = {"format_version": FORMAT_VERSION, "config": sim.config_dict(cfg), "aggregates": result.aggregates}
    (args.out / "aggregates.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n",
                                              encoding="utf-8")
    print(json.dumps(_clean(result.aggregates), indent=2, sort_keys=True))
    return EXIT_PARTIAL if result.aggregates.get("errors") else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return _simulate(args)
    if args.config is None:
        print("boostsi: --config is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            from dataclasses import replace

            cfg = replace(cfg, seed=args.seed)
        report, code = run(cfg, infer=args.command == "infer")
    except (ConfigError, DataError, FileNotFoundError) as exc:
        print(f"boostsi: {exc}", file=sys.stderr)
        return EXIT_USAGE
    write_outputs(report, args.out)
    sys.stdout.write(format_table(report) if args.command == "infer" else json.dumps(report["selected"], indent=2) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
