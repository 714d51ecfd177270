"""Command-line front end.

Every subcommand needs an explicit ``--seed`` and writes JSON (sorted keys)
carrying the tool version, the effective configuration, the seed and notes
on modelling choices. Tabular outputs are CSV.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import subprocess
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import dili, extsim
from .exceptions import HTOrderError, SchemaError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_SCHEMA = 2

DEFAULTS = {
    "marg_q": 0.7,
    "dep_q": 0.7,
    "v_level": None,
    "v_floor": 5.0,
    "nsim": None,
    "nboot": None,
    "full": False,
    "preset": "paper-table4-desk",
    "replicates": None,
    "x_cut": dili.HYS_LAW[0],
    "y_max": 100.0,
    "y_points": 51,
    "bins": 20,
    "n_per_dose": 150,
}
NOTES = {
    "thresholds": "margins use an empirical-quantile GP threshold (marg_q); the dependence "
                  "threshold is the Laplace quantile at dep_q",
    "v_rule": "unless --v-level is given, v = max(v_floor, largest observed conditioning "
              "value), re-applied to each simulated dataset",
    "null_counts": "null datasets keep the observed number of exceedances per dose",
    "chibar": "chibar(p) = 2 log P(U > p) / log P(U > p, V > p) - 1 on the rank scale",
    "survival_body": "below the dependence threshold residual pairs are resampled from the "
                     "observed Laplace-scale pairs; baselines are drawn independently",
    "bootstrap": "survival intervals come from refitting the pipeline on patients "
                 "resampled within dose; each interval is widened to contain its estimate",
}


def version_string():
    """``git describe`` of the source tree when available, else the package version."""
    try:
        base = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        base = "0+unknown"
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5, check=True)
        return f"{base}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        return base


def _clean(obj):
    # JSON has no inf/nan
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dump_json(obj, path):
    text = json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _envelope(cfg, command, payload, notes=()):
    return {"version": version_string(), "command": command, "config": cfg,
            "seed": cfg["seed"], "notes": {k: NOTES[k] for k in notes}, "result": payload}


def write_csv(rows, path, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({c: ("" if row[c] is None else row[c]) for c in columns})


def _out_dir(cfg):
    out = Path(cfg.get("out") or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_state(cfg):
    if not cfg.get("state"):
        raise SystemExit("--state is required")
    return dili.DiliPipeline.from_dict(json.loads(Path(cfg["state"]).read_text())["result"])


def _check_quantiles(cfg):
    for key in ("marg_q", "dep_q"):
        if not 0.0 < float(cfg[key]) < 1.0:
            raise SystemExit(f"--{key.replace('_', '-')} must lie in (0, 1)")


def cmd_fit(cfg):
    if not cfg.get("input"):
        raise SystemExit("--input is required")
    _check_quantiles(cfg)
    data = dili.read_trial_csv(cfg["input"])
    pipe = dili.DiliPipeline(marg_q=cfg["marg_q"], dep_q=cfg["dep_q"], v_level=cfg["v_level"],
                             v_floor=cfg["v_floor"]).fit(data)
    out = _out_dir(cfg)
    state = pipe.to_dict()
    state["diagnostics"] = pipe.diagnostics()
    dump_json(_envelope(cfg, "fit", state, ("thresholds", "v_rule", "chibar")),
              out / "state.json")
    return out / "state.json"


def null_histogram(null, bins):
    """Histogram of a null sample; infinite values fall in an open-ended last bin."""
    null = np.asarray(null, dtype=float)
    finite = null[np.isfinite(null)]
    hi = float(finite.max()) if finite.size else 1.0
    counts, edges = np.histogram(finite, bins=bins, range=(0.0, max(hi, 1e-12)))
    out = [{"lower": float(a), "upper": float(b), "count": int(c)}
           for a, b, c in zip(edges[:-1], edges[1:], counts)]
    n_inf = int(np.count_nonzero(~np.isfinite(null)))
    if n_inf:
        out.append({"lower": hi, "upper": None, "count": n_inf})
    return out


def cmd_test_ordering(cfg):
    pipe = _load_state(cfg)
    n_sim = int(cfg["nsim"] or 99)
    results = pipe.test_ordering(n_sim=n_sim, seed=cfg["seed"])
    payload = {}
    for name, res in results.items():
        payload[name] = {
            "statistic": res.statistic, "p_value": res.p_value, "n_sim": res.n_sim,
            "v": pipe.levels_[name].v, "v_rule": pipe.levels_[name].rule,
            "dose_order": list(pipe.dose_order_),
            "null_histogram": null_histogram(res.null_sample, int(cfg["bins"])),
            "null_sample": res.null_sample,
        }
    out = _out_dir(cfg)
    dump_json(_envelope(cfg, "test-ordering", payload, ("v_rule", "null_counts")),
              out / "ordering.json")
    return out / "ordering.json"


def cmd_study(cfg):
    overrides = {"seed": int(cfg["seed"])}
    if cfg.get("replicates"):
        overrides["n_replicates"] = int(cfg["replicates"])
    study_cfg = extsim.preset(cfg["preset"], full=bool(cfg["full"]), **overrides)
    table = extsim.run_rmse_study(study_cfg)
    out = _out_dir(cfg)
    write_csv(table.rows(), out / "study.csv", ["ratio", "family", "dep", "q", "level", "value"])
    dump_json(_envelope(cfg, "study", table.to_dict()), out / "study.json")
    return out / "study.json"


def survival_rows(estimates):
    return [{"dose": e.dose, "model": e.model, "x_cut": e.x_cut, "y_cut": e.y_cut,
             "estimate": e.prob, "lo95": None if e.ci95 is None else e.ci95[0],
             "hi95": None if e.ci95 is None else e.ci95[1]} for e in estimates]


def cmd_predict(cfg):
    pipe = _load_state(cfg)
    x_cut = float(cfg["x_cut"])
    ys = np.linspace(0.0, float(cfg["y_max"]), int(cfg["y_points"])).tolist()
    cuts = [(x_cut, y) for y in ys]
    if dili.HYS_LAW not in cuts:
        cuts.append(dili.HYS_LAW)
    n_sim = int(cfg["nsim"] or 200000)
    n_boot = int(cfg["nboot"] if cfg["nboot"] is not None else 100)
    est = pipe.survival(cuts, n_sim=n_sim, n_boot=n_boot, seed=cfg["seed"])
    rows = survival_rows(est)
    out = _out_dir(cfg)
    write_csv(rows, out / "survival.csv",
              ["dose", "model", "x_cut", "y_cut", "estimate", "lo95", "hi95"])
    hys = [r for r in rows if (r["x_cut"], r["y_cut"]) == dili.HYS_LAW]
    payload = {"hys_law_cell": list(dili.HYS_LAW), "hys_law": hys, "curves": rows,
               "n_sim": n_sim, "n_boot": n_boot}
    dump_json(_envelope(cfg, "predict", payload, ("survival_body", "bootstrap", "v_rule")),
              out / "predict.json")
    return out / "predict.json"


def cmd_simulate(cfg):
    data = dili.simulate_trial(n_per_dose=int(cfg["n_per_dose"]), seed=cfg["seed"])
    out = _out_dir(cfg)
    dili.write_trial_csv(data, out / "trial.csv")
    return out / "trial.csv"


COMMANDS = {"fit": cmd_fit, "test-ordering": cmd_test_ordering, "study": cmd_study,
            "predict": cmd_predict, "simulate": cmd_simulate}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file supplying any option; flags take precedence")
    common.add_argument("--seed", type=int, default=None, help="random seed (required)")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--input", default=None, help="trial CSV")
    common.add_argument("--state", default=None, help="state file written by 'fit'")
    common.add_argument("--v-level", dest="v_level", type=float, default=None)
    common.add_argument("--v-floor", dest="v_floor", type=float, default=None)
    common.add_argument("--marg-q", dest="marg_q", type=float, default=None)
    common.add_argument("--dep-q", dest="dep_q", type=float, default=None)
    common.add_argument("--nsim", type=int, default=None)
    common.add_argument("--nboot", type=int, default=None)
    common.add_argument("--full", action="store_true", default=None,
                        help="study: use 1000 replicates")
    common.add_argument("--preset", default=None, choices=sorted(extsim.PRESETS))
    common.add_argument("--replicates", type=int, default=None)
    common.add_argument("--x-cut", dest="x_cut", type=float, default=None)
    common.add_argument("--y-max", dest="y_max", type=float, default=None)
    common.add_argument("--y-points", dest="y_points", type=int, default=None)
    common.add_argument("--bins", type=int, default=None)
    common.add_argument("--n-per-dose", dest="n_per_dose", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true", default=None)
    parser = argparse.ArgumentParser(prog="htorder", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def resolve_config(args):
    """Merge built-in defaults, the JSON config file and command-line flags."""
    cfg = dict(DEFAULTS)
    cfg.update({"input": None, "state": None, "out": None, "seed": None, "verbose": False})
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())
        cfg.update({k.replace("-", "_"): v for k, v in file_cfg.items()})
    cfg.update({k: v for k, v in vars(args).items()
                if v is not None and k not in ("command", "config")})
    if cfg["seed"] is None:
        raise SystemExit("a seed is required: pass --seed or set it in --config")
    cfg["seed"] = int(cfg["seed"])
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg = resolve_config(args)
    logging.basicConfig(level=logging.INFO if cfg["verbose"] else logging.WARNING)
    try:
        path = COMMANDS[args.command](cfg)
    except SchemaError as exc:
        print(json.dumps({"error": "SchemaError", "message": str(exc), "column": exc.column}),
              file=sys.stderr)
        return EXIT_SCHEMA
    except (HTOrderError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_FAILURE
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
