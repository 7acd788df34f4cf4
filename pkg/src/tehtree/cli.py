"""Command-line interface: ``tehtree {fit,predict,simulate,report}``.

Standard output carries ``key=value`` lines only (plus the comparison table of
``report`` when no ``--out`` is given).  Exit codes: 0 success, 2 invalid input
or configuration, 1 internal error.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from ._rng import fresh_seed
from .bench import aggregate_metrics, read_metrics_csv, run_replications, write_metrics_csv, write_per_rep_csv
from .bench import METRIC_COLUMNS
from .dataset import load_covariates, load_csv
from .exceptions import ValidationError
from .pipeline import FitConfig, fit_tehtree
from .simgen import ScenarioSpec, heterogeneity_vars, load_config, parse_coeffs, parse_scenario_code
from .tree import tree_from_json, tree_to_dict

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INVALID = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _emit(stream, items):
    for key, value in items.items():
        if isinstance(value, float):
            value = repr(value)
        print(f"{key}={value}", file=stream)


def _add_method_flags(p):
    p.add_argument("--alpha", type=float)
    p.add_argument("--min-node", type=int)
    p.add_argument("--max-depth", type=int)
    p.add_argument("--mode", choices=("single", "double"))
    p.add_argument("--train-frac", type=float)
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int, help="default: drawn from OS entropy and printed")


def build_parser():
    parser = _Parser(prog="tehtree", description="Treatment-effect heterogeneity trees.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a tree to a trial CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--treatment", required=True)
    p.add_argument("--out", required=True, help="tree JSON path; the summary goes to OUT.summary.txt")
    p.add_argument("--caliper", type=float)
    _add_method_flags(p)

    p = sub.add_parser("predict", help="leaf effects for new rows")
    p.add_argument("--tree", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="CSV with one effect per input row")

    p = sub.add_parser("simulate", help="Monte Carlo study of one scenario")
    p.add_argument("--config", help="key = value scenario file")
    p.add_argument("--scenario", help="code such as '(M3)(C2)(P4)'")
    p.add_argument("--model")
    p.add_argument("--covariates")
    p.add_argument("--coeffs", help="preset (P4, P8iii) and/or key=value list")
    p.add_argument("--n", type=int)
    p.add_argument("--rho", type=float)
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--per-rep", help="optional per-replicate CSV path")
    _add_method_flags(p)

    p = sub.add_parser("report", help="merge metrics CSVs into one table")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", help="merged CSV; without it a table is printed")
    p.add_argument("--columns", help="comma-separated subset of columns for the printed table")
    return parser


def _seed(value):
    return fresh_seed() if value is None else value


def _pick(args, cfg, name, default, cast=None):
    value = getattr(args, name)
    if value is None:
        value = cfg.get(name, cfg.get(name.replace("_", "-"), default))
    if value is not None and cast is not None:
        try:
            value = cast(value)
        except (TypeError, ValueError):
            raise ValidationError(f"{name}: cannot interpret {value!r}") from None
    return value


def _method_config(args, cfg, seed):
    return FitConfig(
        alpha=_pick(args, cfg, "alpha", 0.05, float),
        min_node=_pick(args, cfg, "min_node", 10, int),
        max_depth=_pick(args, cfg, "max_depth", 10, int),
        mode=_pick(args, cfg, "mode", "single", str),
        train_frac=_pick(args, cfg, "train_frac", 0.75, float),
        folds=_pick(args, cfg, "folds", 10, int),
        seed=seed,
        caliper=getattr(args, "caliper", None),
    )


def cmd_fit(args, out):
    seed = _seed(args.seed)
    config = _method_config(args, {}, seed)
    data = load_csv(args.data, args.outcome, args.treatment)
    tree, diag = fit_tehtree(data, config)
    doc = tree_to_dict(tree)
    doc["diagnostics"] = diag.as_dict()
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    summary_path = args.out + ".summary.txt"
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(tree.summary() + "\n")
    _emit(out, {
        "seed": seed,
        "n": data.n,
        "p": data.p,
        "mode": config.mode,
        "n_pairs": diag.n_pairs,
        "n_reused_controls": diag.n_reused_controls,
        "n_terminal": tree.n_terminal,
        "split_vars": ";".join(data.col_names[v] for v in tree.split_vars()),
        "overall_effect": diag.overall_effect,
        "out": args.out,
        "summary": summary_path,
    })


def cmd_predict(args, out):
    with open(args.tree, encoding="utf-8") as fh:
        tree = tree_from_json(fh.read())
    names = tree.col_names or tuple(f"x{j + 1}" for j in range(tree.n_features))
    x = load_covariates(args.data, names)
    effects = tree.predict(x)
    leaves = tree.apply(x)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row", "leaf", "effect"])
        for i, (leaf, eff) in enumerate(zip(leaves, effects), start=1):
            writer.writerow([i, int(leaf), "" if np.isnan(eff) else repr(float(eff))])
    _emit(out, {"rows": x.shape[0], "n_missing": int(np.isnan(effects).sum()), "out": args.out})


def resolve_scenario(args, cfg, seed):
    """Build a ScenarioSpec from a scenario code, config entries and flags (flags win)."""
    model = covs = None
    coeff_text = ""
    code = args.scenario or cfg.get("scenario")
    if code:
        model, covs, coeff_text = parse_scenario_code(code)
    model = _pick(args, cfg, "model", model, str)
    if model is None:
        raise ValidationError("no model given; use --model, --scenario or a config file")
    covs = _pick(args, cfg, "covariates", covs or "C2", str)
    coeffs = parse_coeffs(coeff_text, model)
    coeffs.update(parse_coeffs(_pick(args, cfg, "coeffs", None), model))
    return ScenarioSpec(
        model=model,
        covariates=covs,
        coeffs=coeffs,
        n=_pick(args, cfg, "n", 200, int),
        rho=_pick(args, cfg, "rho", 0.0, float),
        seed=seed,
    )


def cmd_simulate(args, out):
    cfg = load_config(args.config) if args.config else {}
    seed = _seed(_pick(args, cfg, "seed", None, int))
    spec = resolve_scenario(args, cfg, seed)
    config = _method_config(args, cfg, seed)
    reps = _pick(args, cfg, "reps", 500, int)
    workers = _pick(args, cfg, "workers", None, int)
    report = run_replications(spec, config, reps=reps, workers=workers)
    metrics = aggregate_metrics(report)
    if args.out:
        write_metrics_csv([metrics], args.out)
    if args.per_rep:
        write_per_rep_csv(report, args.per_rep)
    items = {"seed": seed, "scenario": spec.code(), "n": spec.n, "rho": spec.rho, "reps": reps,
             "n_failed": report.n_failed}
    if heterogeneity_vars(spec):
        items["power_any_node"] = metrics["power_any_node"]
        items["power_root"] = metrics["power_root"]
    else:
        items["type_I_error"] = metrics["type_I_error"]
    items["mean_n_terminal"] = metrics["mean_n_terminal"]
    items["mean_mse"] = metrics["mean_mse"]
    if args.out:
        items["out"] = args.out
    _emit(out, items)


def cmd_report(args, out):
    rows = []
    for path in args.inputs:
        for row in read_metrics_csv(path):
            rows.append(dict(row, source=os.path.basename(path)))
    if args.out:
        write_metrics_csv(rows, args.out)
        _emit(out, {"rows": len(rows), "out": args.out})
        return
    columns = ["source"] + (args.columns.split(",") if args.columns else [
        "model", "covariates", "coeffs", "n", "rho", "mode", "reps",
        "type_I_error", "power_any_node", "mean_n_terminal", "mean_mse",
    ])
    unknown = [c for c in columns if c != "source" and c not in METRIC_COLUMNS]
    if unknown:
        raise ValidationError(f"unknown column(s) {unknown}")
    table = [columns] + [[_short(row.get(c, "")) for c in columns] for row in rows]
    widths = [max(len(r[k]) for r in table) for k in range(len(columns))]
    for r in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip(), file=out)


def _short(text):
    try:
        value = float(text)
    except ValueError:
        return text
    if text.lstrip("-").isdigit():
        return text
    return f"{value:.4g}"


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate, "report": cmd_report}


def main(argv=None, out=None, err=None):
    out = sys.stdout if out is None else out
    err = sys.stderr if err is None else err
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args, out)
    except (ValidationError, FileNotFoundError, IsADirectoryError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_INVALID
    except Exception as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=err)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
