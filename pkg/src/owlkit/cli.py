"""Command-line entry point.

Every subcommand reads a TOML file given by ``--config``; ``--out`` sets the
output path and ``--workers`` the process count where it applies.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .calibration import check_policy_calibration, closed_form_psi, psi_curve
from .data import read_csv, write_csv
from .evaluate import MethodSpec, evaluate_rule, grid_search
from .experiment import (config_from_dict, emit, load_config, run_experiment, run_rate_study,
                         tomllib, write_outputs)
from .fit import FittedRule, fit_convex_owl
from .irco import irco_owl
from .losses import get_loss, make_concave
from .rwl import compute_residuals, fit_residual_model, residual_transform
from .simgen import ScenarioSpec, generate


def _toml(path) -> dict:
    with Path(path).open("rb") as fh:
        return tomllib.load(fh)


def _out(args, cfg: dict, default: str) -> Path:
    return Path(args.out or cfg.get("output", {}).get("path") or default)


def cmd_psi(args) -> int:
    """Sampled Psi-transform curve(s) as CSV: ``loss, v, tilde_psi, psi[, closed_form]``."""
    cfg = _toml(args.config)
    M = float(cfg.get("M", 1.0))
    n_grid = int(cfg.get("n_grid", 513))
    out = _out(args, cfg, "psi.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loss", "M", "v", "tilde_psi", "psi", "closed_form"])
        for spec in cfg.get("losses", []):
            name = spec["name"]
            params = {k: v for k, v in spec.items() if k != "name"}
            loss = get_loss(name, **params)
            curve = psi_curve(loss, M, n_grid)
            for v, t, p in zip(curve.grid, curve.tilde_values, curve.convex_values):
                try:
                    cf = repr(closed_form_psi(name, float(v), M, params))
                except (KeyError, ValueError):
                    cf = ""
                w.writerow([name, repr(M), repr(float(v)), repr(float(t)), repr(float(p)), cf])
            if cfg.get("check_calibration", False):
                rep = check_policy_calibration(loss, M, curve=curve)
                print(json.dumps({"loss": name, **rep.to_dict()}))
    print(f"wrote {out}")
    return 0


def cmd_generate(args) -> int:
    cfg = _toml(args.config)
    sc = cfg["scenario"]
    spec = ScenarioSpec(int(sc["example_id"]), int(sc["n"]), int(sc.get("m", 1)),
                        bool(sc.get("smooth", True)), float(sc.get("contamination_rate", 0.0)),
                        int(sc.get("seed", 0)))
    out = _out(args, cfg, "data.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    data = generate(spec)
    oracle = out.with_name(out.stem + ".oracle.csv")
    write_csv(data, out, oracle)
    print(f"wrote {out} and {oracle}")
    return 0


def _method(d: dict) -> MethodSpec:
    return config_from_dict({"scenario": {"example_id": 2, "m": 4}, "methods": [d]}).methods[0]


def cmd_fit(args) -> int:
    """Fit one rule: fixed hyperparameters, or a grid search when ``tune`` is given."""
    cfg = _toml(args.config)
    md = dict(cfg["method"])
    if "sigma" in cfg:
        md.setdefault("sigma", cfg["sigma"])
    method = _method(md)
    train = read_csv(cfg["train"])
    if method.framework == "owl" and np.any(train.rewards < 0):
        raise SystemExit("negative rewards: use framework = \"rwl\"")
    resid = None
    if "tune" in cfg:
        res = grid_search(train, read_csv(cfg["tune"]), method)
        rule, best = res.rule, res.best
    else:
        work = train
        if method.framework == "rwl":
            resid = fit_residual_model(train)
            work = residual_transform(train, compute_residuals(resid, train))
        kernel = method.kernel_spec(float(cfg["bandwidth"]))
        lam = float(cfg["lambda"])
        if method.robust:
            rule, _ = irco_owl(work, make_concave(method.loss[3:], sigma=method.sigmas[0]), kernel, lam)
        else:
            rule = fit_convex_owl(work, get_loss(method.loss, **dict(method.loss_params)), kernel, lam)
        best = {"lambda": lam, "bandwidth": kernel.bandwidth}
    if method.framework == "rwl" and resid is None:
        resid = fit_residual_model(train)
    doc = rule.to_dict()
    doc["hyperparameters"] = best
    if resid is not None:
        doc["residual_model"] = resid.to_dict()
    out = _out(args, cfg, "rule.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(doc), encoding="utf-8")
    print(f"wrote {out}")
    return 0


def cmd_score(args) -> int:
    """Scores and treatments per row; metrics on stdout when the data allow."""
    cfg = _toml(args.config)
    rule = FittedRule.from_dict(json.loads(Path(cfg["rule"]).read_text(encoding="utf-8")))
    data = read_csv(cfg["data"], cfg.get("oracle"))
    scores = rule.decision_function(data.covariates)
    out = _out(args, cfg, "scores.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "score", "treatment"])
        for i, s in enumerate(scores):
            w.writerow([i, repr(float(s)), 1 if s >= 0 else -1])
    try:
        rep = evaluate_rule(rule, data)
        print(json.dumps({"value": rep.value_estimate, "misclassification": rep.misclassification,
                          "n_matched": rep.n_matched, "excess_risk": rep.excess_risk}))
    except ValueError as e:
        print(f"metrics unavailable: {e}", file=sys.stderr)
    print(f"wrote {out}")
    return 0


def cmd_experiment(args) -> int:
    cfg = load_config(args.config)
    res = run_experiment(cfg, workers=args.workers)
    out = Path(args.out or cfg.output or "results.csv")
    for p in write_outputs(res, out, cfg.output_format):
        print(f"wrote {p}")
    print(res.table.to_markdown())
    return 0


def cmd_rate_study(args) -> int:
    cfg = load_config(args.config)
    res = run_rate_study(cfg, workers=args.workers)
    out = Path(args.out or cfg.output or "rates.csv")
    for p in write_outputs(res, out, cfg.output_format):
        print(f"wrote {p}")
    print(res.table.to_markdown())
    return 0


COMMANDS = {
    "psi": cmd_psi,
    "generate": cmd_generate,
    "fit": cmd_fit,
    "score": cmd_score,
    "experiment": cmd_experiment,
    "rate-study": cmd_rate_study,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="owlkit", description="Robust outcome-weighted learning")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sp = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        sp.add_argument("--config", required=True, help="TOML configuration file")
        sp.add_argument("--out", help="output path (overrides the config)")
        sp.add_argument("--workers", type=int, default=None, help="worker processes")
        sp.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
