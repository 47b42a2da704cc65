"""Replicated simulation experiments, rate studies and result tables.

Every replicate derives its seeds from ``(master_seed, replicate, stream)``
so results do not depend on worker count or scheduling.  Wall-clock
timings go to a sidecar file, keeping the main table byte-reproducible.
"""
from __future__ import annotations

import csv
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluate import CellTimeout, MethodSpec, TuningGrid, evaluate_rule, fit_method
from .simgen import ScenarioSpec, contaminate, derive_seed, generate

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

FORMATS = ("csv", "json", "markdown")

# seed streams within a replicate
S_TRAIN, S_TUNE, S_TEST, S_CONT_TRAIN, S_CONT_TUNE = range(5)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioSpec
    methods: tuple
    replicates: int = 20
    n_test: int = 10_000
    n_tune: int | None = None
    contamination: tuple = (0.0,)
    master_seed: int = 0
    workers: int = 1
    output: str | None = None
    output_format: str = "csv"
    cell_timeout: float | None = 120.0
    criterion: str | None = None
    n_list: tuple = ()
    targets: tuple = (True, False)
    name: str = "experiment"

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise ValueError(f"method names must be unique: {names}")
        if self.output_format not in FORMATS:
            raise ValueError(f"output format must be one of {FORMATS}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        for c in self.contamination:
            if not 0.0 <= c < 1.0:
                raise ValueError("contamination rates must lie in [0, 1)")

    @property
    def tuning_criterion(self) -> str:
        if self.criterion is not None:
            return self.criterion
        # risk-based tuning for the one-dimensional rate example
        return "excess_risk" if self.scenario.example_id == 1 else "value"


def _grid_from(d: dict | None, default: TuningGrid) -> TuningGrid:
    if not d:
        return default
    return TuningGrid(
        tuple(d.get("lambdas", default.lambdas)),
        tuple(d.get("bandwidths", default.bandwidths)),
        tuple(d["sigmas"]) if d.get("sigmas") is not None else default.sigmas,
    )


def config_from_dict(d: dict) -> ExperimentConfig:
    sc = dict(d["scenario"])
    scenario = ScenarioSpec(int(sc["example_id"]), int(sc.get("n", 100)), int(sc.get("m", 1)),
                            bool(sc.get("smooth", True)))
    default_grid = _grid_from(d.get("grid"), TuningGrid())
    methods = []
    for md in d.get("methods", []):
        methods.append(MethodSpec(
            md["name"],
            md.get("framework", "rwl"),
            md.get("loss", "binomial"),
            md.get("kernel", "gaussian"),
            float(md.get("smoothness", 1.5)),
            _grid_from(md.get("grid"), default_grid),
            float(md["sigma"]) if "sigma" in md else None,
            tuple(sorted(md.get("loss_params", {}).items())),
        ))
    out = d.get("output", {})
    rate = d.get("rate_study", {})
    timeout = d.get("cell_timeout", 120.0)
    return ExperimentConfig(
        scenario=scenario,
        methods=tuple(methods),
        replicates=int(d.get("replicates", 20)),
        n_test=int(d.get("n_test", 10_000)),
        n_tune=int(d["n_tune"]) if "n_tune" in d else rate.get("n_tune"),
        contamination=tuple(float(c) for c in d.get("contamination", [0.0])),
        master_seed=int(d.get("master_seed", 0)),
        workers=int(d.get("workers", 1)),
        output=out.get("path"),
        output_format=out.get("format", "csv"),
        cell_timeout=None if timeout in (None, 0) else float(timeout),
        criterion=d.get("criterion"),
        n_list=tuple(int(n) for n in rate.get("n_list", ())),
        targets=tuple(bool(t) for t in rate.get("smooth", (True, False))),
        name=d.get("name", "experiment"),
    )


def load_config(path) -> ExperimentConfig:
    with Path(path).open("rb") as fh:
        return config_from_dict(tomllib.load(fh))


# ---------------------------------------------------------------------------
# result tables


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return str(x)


@dataclass
class ResultTable:
    """Rows of dicts over fixed ``columns``; ``types`` parses CSV cells back."""

    columns: tuple
    types: tuple
    rows: list = field(default_factory=list)
    layout: str = "experiment"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def to_json(self) -> str:
        def clean(v):
            return None if isinstance(v, float) and math.isnan(v) else v
        doc = {"layout": self.layout, "columns": list(self.columns), "types": list(self.types),
               "rows": [{c: clean(r.get(c)) for c in self.columns} for r in self.rows]}
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"

    def to_markdown(self) -> str:
        if self.layout == "experiment":
            return _experiment_markdown(self)
        head = "| " + " | ".join(self.columns) + " |"
        sep = "|" + "---|" * len(self.columns)
        lines = [head, sep]
        for r in self.rows:
            lines.append("| " + " | ".join(_fmt(r.get(c)) for c in self.columns) + " |")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, types: tuple, layout: str = "experiment") -> "ResultTable":
        reader = csv.reader(io.StringIO(text))
        columns = tuple(next(reader))
        conv = dict(zip(columns, types))
        rows = [{c: _parse(v, conv[c]) for c, v in zip(columns, rec)} for rec in reader]
        return cls(columns, types, rows, layout)

    @classmethod
    def from_json(cls, text: str) -> "ResultTable":
        doc = json.loads(text)
        columns, types = tuple(doc["columns"]), tuple(doc["types"])
        conv = dict(zip(columns, types))
        rows = [{c: (math.nan if r[c] is None and conv[c] == "float" else r[c]) for c in columns}
                for r in doc["rows"]]
        return cls(columns, types, rows, doc.get("layout", "experiment"))


def _parse(v: str, t: str):
    if t == "float":
        return math.nan if v == "" else float(v)
    if t == "int":
        return int(v)
    return v


EXPERIMENT_COLUMNS = (
    ("method", "str"), ("example_id", "int"), ("n", "int"), ("m", "int"),
    ("contamination", "float"), ("n_ok", "int"), ("mean_value", "float"), ("sd_value", "float"),
    ("mean_error", "float"), ("sd_error", "float"), ("status", "str"),
)
REPLICATE_COLUMNS = (
    ("method", "str"), ("contamination", "float"), ("replicate", "int"), ("value", "float"),
    ("error", "float"), ("excess_risk", "float"), ("lambda", "float"), ("bandwidth", "float"),
    ("sigma", "float"), ("status", "str"),
)
RATE_COLUMNS = (
    ("target", "str"), ("method", "str"), ("n", "int"), ("log2_n", "float"), ("n_ok", "int"),
    ("mean_excess_risk", "float"), ("sd_excess_risk", "float"), ("log_mean_excess_risk", "float"),
    ("status", "str"),
)


def empty_table(spec, layout: str) -> ResultTable:
    return ResultTable(tuple(c for c, _ in spec), tuple(t for _, t in spec), [], layout)


def _experiment_markdown(t: ResultTable) -> str:
    conts = sorted({r["contamination"] for r in t.rows})
    head = ["Method"]
    for c in conts:
        head += [f"Value ({c:.0%})", f"Error ({c:.0%})"]
    head.append("Best value at")
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    by = {(r["method"], r["contamination"]): r for r in t.rows}
    best = {}
    for c in conts:
        vals = [(r["mean_value"], r["method"]) for r in t.rows
                if r["contamination"] == c and not math.isnan(r["mean_value"])]
        if vals:
            best[c] = max(vals)[1]
    methods = list(dict.fromkeys(r["method"] for r in t.rows))
    for m in methods:
        cells = [m]
        for c in conts:
            r = by.get((m, c))
            if r is None or math.isnan(r["mean_value"]):
                cells += ["n/a", "n/a"]
            else:
                cells += [f"{r['mean_value']:.3f} ({r['sd_value']:.3f})",
                          f"{r['mean_error']:.3f} ({r['sd_error']:.3f})"]
        cells.append(", ".join(f"{c:.0%}" for c in conts if best.get(c) == m))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def emit(table: ResultTable, path, fmt: str = "csv") -> Path:
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}")
    text = {"csv": table.to_csv, "json": table.to_json, "markdown": table.to_markdown}[fmt]()
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise OSError(f"cannot write {path}: {e}") from e
    return path


def read_table(path, layout: str = "experiment") -> ResultTable:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return ResultTable.from_json(text)
    spec = {"experiment": EXPERIMENT_COLUMNS, "replicates": REPLICATE_COLUMNS, "rate": RATE_COLUMNS}[layout]
    return ResultTable.from_csv(text, tuple(t for _, t in spec), layout)


# ---------------------------------------------------------------------------
# replicate jobs


def replicate_datasets(cfg: ExperimentConfig, rep: int, n: int | None = None, smooth=None):
    """Clean train, tune and test sets for one replicate."""
    sc = cfg.scenario.replace(n=n or cfg.scenario.n,
                              smooth=cfg.scenario.smooth if smooth is None else smooth)
    n_tune = cfg.n_tune or sc.n
    train = generate(sc.replace(seed=derive_seed(cfg.master_seed, rep, S_TRAIN)))
    tune = generate(sc.replace(n=n_tune, seed=derive_seed(cfg.master_seed, rep, S_TUNE)))
    test = generate(sc.replace(n=cfg.n_test, seed=derive_seed(cfg.master_seed, rep, S_TEST)))
    return train, tune, test


def _fit_and_score(train, tune, test, method, cfg, smooth):
    deadline = None if cfg.cell_timeout is None else time.monotonic() + cfg.cell_timeout
    t0 = time.perf_counter()
    rec = {"method": method.name, "lambda": math.nan, "bandwidth": math.nan, "sigma": math.nan,
           "value": math.nan, "error": math.nan, "excess_risk": math.nan}
    try:
        rule, best = fit_method(train, tune, method, example_id=cfg.scenario.example_id,
                                smooth=smooth, criterion=cfg.tuning_criterion, deadline=deadline)
        rep = evaluate_rule(rule, test)
        rec.update(value=rep.value_estimate, error=rep.misclassification,
                   excess_risk=rep.excess_risk if rep.excess_risk is not None else math.nan,
                   status="ok")
        for k in ("lambda", "bandwidth", "sigma"):
            if best.get(k) is not None:
                rec[k] = float(best[k])
    except CellTimeout:
        rec["status"] = "timeout"
    except Exception as e:  # recorded, run continues
        rec["status"] = f"failed: {type(e).__name__}"
    return rec, time.perf_counter() - t0


def _experiment_job(args):
    cfg, rep, rate = args
    train, tune, test = replicate_datasets(cfg, rep)
    if rate > 0:
        train = contaminate(train, rate, derive_seed(cfg.master_seed, rep, S_CONT_TRAIN))
        tune = contaminate(tune, rate, derive_seed(cfg.master_seed, rep, S_CONT_TUNE))
    out = []
    for method in cfg.methods:
        rec, secs = _fit_and_score(train, tune, test, method, cfg, cfg.scenario.smooth)
        rec.update(contamination=rate, replicate=rep)
        out.append((rec, secs))
    return out


def _run_jobs(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _mean_sd(x):
    x = np.asarray(x, dtype=float)
    if len(x) == 0:
        return math.nan, math.nan
    return float(np.mean(x)), float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def _status(n_ok, total):
    if n_ok == total:
        return "ok"
    return "failed" if n_ok == 0 else f"incomplete ({n_ok}/{total})"


@dataclass
class ExperimentResult:
    table: ResultTable
    replicates: ResultTable
    timings: list


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    jobs = [(cfg, rep, rate) for rate in cfg.contamination for rep in range(cfg.replicates)]
    results = _run_jobs(_experiment_job, jobs, workers or cfg.workers)
    reps = empty_table(REPLICATE_COLUMNS, "replicates")
    timings = []
    for out in results:
        for rec, secs in out:
            reps.rows.append(rec)
            timings.append({"method": rec["method"], "contamination": rec["contamination"],
                            "replicate": rec["replicate"], "seconds": secs})
    table = empty_table(EXPERIMENT_COLUMNS, "experiment")
    sc = cfg.scenario
    for rate in cfg.contamination:
        for method in cfg.methods:
            rows = [r for r in reps.rows if r["method"] == method.name and r["contamination"] == rate]
            ok = [r for r in rows if r["status"] == "ok"]
            mv, sv = _mean_sd([r["value"] for r in ok])
            me, se = _mean_sd([r["error"] for r in ok])
            table.rows.append({"method": method.name, "example_id": sc.example_id, "n": sc.n,
                               "m": sc.m, "contamination": rate, "n_ok": len(ok),
                               "mean_value": mv, "sd_value": sv, "mean_error": me, "sd_error": se,
                               "status": _status(len(ok), len(rows))})
    return ExperimentResult(table, reps, timings)


def _rate_job(args):
    cfg, smooth, n, rep = args
    train, tune, test = replicate_datasets(cfg, rep, n=n, smooth=smooth)
    out = []
    for method in cfg.methods:
        rec, secs = _fit_and_score(train, tune, test, method, cfg, smooth)
        rec.update(target="smooth" if smooth else "nonsmooth", n=n, replicate=rep)
        out.append((rec, secs))
    return out


def run_rate_study(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    """Mean test excess risk per target, method and ``n``; example 1 only."""
    if cfg.scenario.example_id != 1:
        raise ValueError("the rate study uses example 1")
    if not cfg.n_list:
        raise ValueError("rate study needs n_list")
    jobs = [(cfg, smooth, n, rep) for smooth in cfg.targets for n in cfg.n_list
            for rep in range(cfg.replicates)]
    results = _run_jobs(_rate_job, jobs, workers or cfg.workers)
    recs, timings = [], []
    for out in results:
        for rec, secs in out:
            recs.append(rec)
            timings.append({"method": rec["method"], "target": rec["target"], "n": rec["n"],
                            "replicate": rec["replicate"], "seconds": secs})
    table = empty_table(RATE_COLUMNS, "rate")
    for smooth in cfg.targets:
        target = "smooth" if smooth else "nonsmooth"
        for method in cfg.methods:
            for n in cfg.n_list:
                rows = [r for r in recs if r["target"] == target and r["method"] == method.name
                        and r["n"] == n]
                ok = [r["excess_risk"] for r in rows if r["status"] == "ok"]
                m, s = _mean_sd(ok)
                table.rows.append({"target": target, "method": method.name, "n": n,
                                   "log2_n": math.log2(n), "n_ok": len(ok),
                                   "mean_excess_risk": m, "sd_excess_risk": s,
                                   "log_mean_excess_risk": math.log(m) if m > 0 else math.nan,
                                   "status": _status(len(ok), len(rows))})
    reps = ResultTable(("target", "method", "n", "replicate", "excess_risk", "lambda", "bandwidth",
                        "sigma", "status"),
                       ("str", "str", "int", "int", "float", "float", "float", "float", "str"),
                       recs, "rate_replicates")
    return ExperimentResult(table, reps, timings)


def write_outputs(result: ExperimentResult, path, fmt: str = "csv") -> list[Path]:
    """Main table, per-replicate CSV and a timing sidecar next to ``path``."""
    path = Path(path)
    written = [emit(result.table, path, fmt)]
    stem = path.with_suffix("")
    written.append(emit(result.replicates, stem.with_name(stem.name + ".replicates.csv"), "csv"))
    timing = stem.with_name(stem.name + ".timing.json")
    timing.write_text(json.dumps(result.timings, indent=1) + "\n", encoding="utf-8")
    written.append(timing)
    return written
