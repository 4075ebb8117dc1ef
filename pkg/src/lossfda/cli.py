"""Command-line front end for the full triangle-analysis pipeline.

Every subcommand reads an optional JSON config (flags override it), writes
machine-readable CSV/JSON artifacts into the output directory, echoes the
resolved config, and records a manifest with a config hash and the SHA-256
of every artifact. Runs with the same inputs, seed, and config produce
byte-identical outputs.

Exit codes: 0 success, 1 data/validation failure, 2 usage error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bootstrap as bt
from . import chainladder as cl
from . import completion as cp
from . import depth as dp
from . import scoring as sc
from . import synthetic as sy
from . import triangles as tr
from .errors import (DegenerateResampleError, InsufficientDataError, LossFdaError,
                     ParseError, SingularityError, ValidationError)
from .regression import CVSpec, coefficient_rows
from .tableio import file_sha256, write_csv

DEFAULTS = {
    "triangles": None,
    "features": None,
    "output_dir": "lossfda_out",
    "seed": 0,
    "alpha": 0.05,
    "replicates": 1000,
    "filters": {"min_premium": None, "max_premium_ratio": None},
    "outliers": {"method": "bd", "rule": "count:50", "alpha": 0.5,
                 "group_by": None, "mbd_variant": "printed"},
    "fit": {"K": 4, "lasso_penalty": "cv"},
    "forecast": {"company": None, "accident_year": None, "lam": None},
    "grids": {"K": None, "lambda": None},
    "tuning": {"folds": 5, "lasso_penalty": "cv"},
    "evaluation": {"T": None, "eval_years": None, "companies": None,
                   "start_ay": None, "end_ay": None, "s_values": None,
                   "remove_outliers": False},
    "synth": {"n_companies": 20, "first_year": 1995, "n_years": 12,
              "calendar_year": None, "k_true": 2, "residual_scale": 0.004,
              "heavy_tail": False},
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            cfg = _merge(cfg, json.load(fh))
    flat = {
        "triangles": "triangles", "features": "features", "out": "output_dir",
        "seed": "seed", "alpha": "alpha", "replicates": "replicates",
    }
    for flag, key in flat.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[key] = value
    nested = {
        "method": ("outliers", "method"), "rule": ("outliers", "rule"),
        "group_by": ("outliers", "group_by"), "envelope_alpha": ("outliers", "alpha"),
        "k": ("fit", "K"), "lasso_penalty": ("fit", "lasso_penalty"),
        "company": ("forecast", "company"), "year": ("forecast", "accident_year"),
        "lam": ("forecast", "lam"),
        "T": ("evaluation", "T"), "start_ay": ("evaluation", "start_ay"),
        "end_ay": ("evaluation", "end_ay"),
        "min_premium": ("filters", "min_premium"),
        "max_premium_ratio": ("filters", "max_premium_ratio"),
        "n_companies": ("synth", "n_companies"),
        "first_year": ("synth", "first_year"), "n_years": ("synth", "n_years"),
        "calendar_year": ("synth", "calendar_year"), "k_true": ("synth", "k_true"),
    }
    for flag, (section, key) in nested.items():
        value = getattr(args, flag, None)
        if value is not None:
            cfg[section][key] = value
    env_out = os.environ.get("LOSSFDA_OUTPUT_DIR")
    if env_out:
        cfg["output_dir"] = env_out
    return cfg


def config_hash(cfg: dict) -> str:
    hashed = {k: v for k, v in cfg.items() if k != "output_dir"}
    canonical = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _finish(cfg: dict, subcommand: str, inputs: list[str], outputs: list[Path]) -> None:
    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    config_path = outdir / "config.json"
    config_path.write_text(json.dumps(cfg, sort_keys=True, indent=1) + "\n",
                           encoding="utf-8")
    manifest = {
        "subcommand": subcommand,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "inputs": sorted(str(p) for p in inputs),
        "outputs": [
            {"name": p.name, "sha256": file_sha256(p)}
            for p in sorted(list(outputs) + [config_path], key=lambda p: p.name)
        ],
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _filters(cfg) -> tr.SelectionFilters:
    f = cfg["filters"]
    return tr.SelectionFilters(min_premium=f["min_premium"],
                               max_premium_ratio=f["max_premium_ratio"])


def _load_curves(cfg) -> tuple[list[tr.LossTriangle], list[tr.DevCurve], list[str]]:
    if not cfg["triangles"]:
        raise ValueError("a triangles CSV is required (--triangles or config)")
    inputs = [cfg["triangles"]]
    triangles = tr.ingest_triangles(cfg["triangles"], _filters(cfg))
    features = {}
    if cfg["features"]:
        features = tr.read_features(cfg["features"])
        inputs.append(cfg["features"])
    curves = []
    for tri in triangles:
        curves.extend(tr.to_ilr(tri, features=features.get(tri.company_id)))
    return triangles, curves, inputs


def _lasso_spec(value, seed: int):
    if value == "cv" or value is None:
        return CVSpec(seed=seed)
    return float(value)


def _grids(cfg, s: int):
    K_grid = cfg["grids"]["K"] or cp.default_k_grid(s)
    lam_grid = cfg["grids"]["lambda"] or cp.DEFAULT_LAMBDA_GRID
    return K_grid, np.asarray(lam_grid, dtype=float)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_validate(cfg) -> int:
    triangles, curves, inputs = _load_curves(cfg)
    for tri in triangles:
        tri.validate()
    round_trip_bad = []
    for c in curves:
        clr = tr.to_clr(c)
        back = tr.ilr_from_clr(clr)
        if not np.allclose(back, c.observed_ilr(), rtol=1e-12, atol=1e-15):
            round_trip_bad.append(c.curve_id)
    report = {
        "triangles": len(triangles),
        "curves": len(curves),
        "complete_curves": sum(c.is_complete for c in curves),
        "violations": round_trip_bad,
    }
    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    path = outdir / "validation.json"
    path.write_text(json.dumps(report, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    _finish(cfg, "validate", inputs, [path])
    return 0 if not round_trip_bad else 1


def cmd_summarize(cfg) -> int:
    _, curves, inputs = _load_curves(cfg)
    table = tr.summarize(curves)
    path = write_csv(Path(cfg["output_dir"]) / "summary.csv", tr.SummaryTable.COLUMNS,
                     table.rows())
    _finish(cfg, "summarize", inputs, [path])
    return 0


def cmd_outliers(cfg) -> int:
    _, curves, inputs = _load_curves(cfg)
    complete = [c for c in curves if c.is_complete]
    method = cfg["outliers"]["method"]
    if method == "bd":
        report = dp.band_depth(complete)
    elif method == "mbd":
        report = dp.modified_band_depth(complete, variant=cfg["outliers"]["mbd_variant"])
    elif method == "exd":
        report = dp.extremal_depth(complete)
    else:
        raise ValueError(f"unknown depth method {method!r}")
    rule = dp.OutlierRule.parse(cfg["outliers"]["rule"])
    flagged = dp.flag_outliers(report, rule)

    rank = {cid: i + 1 for i, cid in enumerate(report.ranking)}
    depth_rows = [[cid, report.depths[i], rank[cid], cid in flagged]
                  for i, cid in enumerate(report.curve_ids)]
    paths = [write_csv(Path(cfg["output_dir"]) / "depth.csv",
                       ["curve_id", "depth", "rank", "outlier"], depth_rows)]

    alpha = cfg["outliers"]["alpha"]
    group_by = cfg["outliers"]["group_by"]
    env_rows = []
    if group_by:
        strata = dp.stratified_envelopes(complete, group_by, alpha)
        for name, stratum in strata.items():
            if not stratum.sufficient:
                continue
            for x in range(tr.N_LAGS):
                env_rows.append([name, x, stratum.envelope.lower[x],
                                 stratum.envelope.upper[x]])
    else:
        env = dp.central_envelope(complete, report, alpha)
        for x in range(tr.N_LAGS):
            env_rows.append(["all", x, env.lower[x], env.upper[x]])
    paths.append(write_csv(Path(cfg["output_dir"]) / "envelope.csv",
                           ["group", "lag", "lower", "upper"], env_rows))
    _finish(cfg, "outliers", inputs, paths)
    return 0


def cmd_fit(cfg) -> int:
    _, curves, inputs = _load_curves(cfg)
    complete = [c for c in curves if c.is_complete]
    trained = cp.fit_pipeline(
        complete, int(cfg["fit"]["K"]),
        lasso_penalty=_lasso_spec(cfg["fit"]["lasso_penalty"], cfg["seed"]),
    )
    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)
    model_path = outdir / "model.json"
    model_path.write_text(trained.fpca.to_json() + "\n", encoding="utf-8")
    prior_doc = {
        "feature_names": trained.prior.feature_names,
        "base_year": trained.encoder.base_year,
        "factors": [
            {
                "intercept": format(f.intercept, ".17g"),
                "coef": [format(v, ".17g") for v in f.coef],
                "penalty": format(f.penalty, ".17g"),
                "converged": f.converged,
            }
            for f in trained.prior.factors
        ],
    }
    prior_path = outdir / "prior.json"
    prior_path.write_text(json.dumps(prior_doc, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")
    coef_path = write_csv(
        outdir / "coefficients.csv", ["s", "k", *trained.encoder.names],
        coefficient_rows({None: trained.prior}, trained.encoder.names))
    _finish(cfg, "fit", inputs, [model_path, prior_path, coef_path])
    return 0


def cmd_forecast(cfg) -> int:
    _, curves, inputs = _load_curves(cfg)
    company = cfg["forecast"]["company"]
    year = cfg["forecast"]["accident_year"]
    if company is None or year is None:
        raise ValueError("forecast needs --company and --year")
    target = next((c for c in curves
                   if c.company_id == company and c.accident_year == int(year)), None)
    if target is None:
        raise ValidationError(f"no curve for {company}:{year}")
    if target.is_complete:
        raise ValidationError(f"{target.curve_id} is already fully developed")
    train = [c for c in curves if c.is_complete]
    s = target.observed_through + 1
    seed = int(cfg["seed"])
    lasso = _lasso_spec(cfg["tuning"]["lasso_penalty"], seed)
    K_grid, lam_grid = _grids(cfg, s)
    if cfg["forecast"]["lam"] is None:
        tuned = cp.tune(train, K_grid, lam_grid, s, n_folds=cfg["tuning"]["folds"],
                        seed=seed, lasso_penalty=lasso)
        K, lam = tuned.K, tuned.lam
    else:
        K, lam = int(cfg["fit"]["K"]), float(cfg["forecast"]["lam"])
    trained = cp.fit_pipeline(train, K, lasso_penalty=lasso)
    completed = trained.complete(target, lam)
    B = int(cfg["replicates"])
    ens = bt.bootstrap_forecast(trained, target, lam, B=B, seed=seed)
    alpha = float(cfg["alpha"])

    outdir = Path(cfg["output_dir"])
    completed_rows = []
    clr_obs = np.cumsum(target.ilr[:s])
    for x in range(s):
        completed_rows.append([x, target.ilr[x], clr_obs[x], "observed"])
    for j, x in enumerate(range(s, tr.N_LAGS)):
        completed_rows.append([x, completed.forecast_ilr[j],
                               completed.forecast_clr[j], "forecast"])
    paths = [
        write_csv(outdir / "completed.csv", ["lag", "ilr", "clr", "source"],
                  completed_rows),
        write_csv(outdir / "ensemble.csv", ["replicate", "lag", "ilr", "clr"],
                  bt.ensemble_rows(ens)),
        write_csv(outdir / "regions_ilr.csv", ["lag", "kind", "level", "lower", "upper"],
                  bt.region_rows([bt.pointwise_interval(ens, alpha),
                                  bt.exd_region(ens, alpha)])),
        write_csv(outdir / "regions_clr.csv", ["lag", "kind", "level", "lower", "upper"],
                  bt.region_rows([bt.clr_region(ens, alpha, "pointwise"),
                                  bt.clr_region(ens, alpha, "exd")])),
    ]
    _finish(cfg, "forecast", inputs, paths)
    return 0


def cmd_backtest(cfg) -> int:
    _, curves, inputs = _load_curves(cfg)
    T = cfg["evaluation"]["T"]
    if T is None:
        raise ValueError("backtest needs evaluation.T (--T)")
    T = int(T)
    companies = cfg["evaluation"]["companies"] or sorted(
        {c.company_id for c in curves if c.accident_year == T and c.is_complete})
    seed = int(cfg["seed"])
    result = cp.fixed_origin_backtest(
        curves, companies, T,
        K_grid=cfg["grids"]["K"], lam_grid=cfg["grids"]["lambda"],
        B=int(cfg["replicates"]), seed=seed, alpha=float(cfg["alpha"]),
        n_folds=cfg["tuning"]["folds"],
        lasso_penalty=_lasso_spec(cfg["tuning"]["lasso_penalty"], seed),
    )
    outdir = Path(cfg["output_dir"])
    paths = [
        write_csv(outdir / "backtest.csv",
                  ["company_id", "s", "truth_ultimate", "forecast_ultimate",
                   "lower", "upper"],
                  [[r.company_id, r.s, r.truth_ultimate, r.forecast_ultimate,
                    r.lower, r.upper] for r in result.records]),
        write_csv(outdir / "skipped.csv", ["company_id", "reason"], result.skipped),
        write_csv(outdir / "tuning.csv", ["s", "n_train", "K", "lambda", "mape"],
                  result.config.rows()),
    ]
    _finish(cfg, "backtest", inputs, paths)
    return 0


def cmd_complete(cfg) -> int:
    _, curves, inputs = _load_curves(cfg)
    end_ay = cfg["evaluation"]["end_ay"]
    if end_ay is None:
        end_ay = max(c.accident_year for c in curves)
    end_ay = int(end_ay)
    start_ay = cfg["evaluation"]["start_ay"]
    start_ay = end_ay - 8 if start_ay is None else int(start_ay)
    seed = int(cfg["seed"])

    if cfg["evaluation"]["remove_outliers"]:
        complete = [c for c in curves if c.is_complete]
        report = dp.band_depth(complete)
        rule = dp.OutlierRule.parse(cfg["outliers"]["rule"])
        flagged = dp.flag_outliers(report, rule)
        curves = [c for c in curves if c.curve_id not in flagged]

    result = cp.sequential_completion(
        curves, start_ay, end_ay,
        K_grid=cfg["grids"]["K"], lam_grid=cfg["grids"]["lambda"],
        seed=seed, n_folds=cfg["tuning"]["folds"],
        lasso_penalty=_lasso_spec(cfg["tuning"]["lasso_penalty"], seed),
    )
    curve_of = {c.curve_id: c for c in curves}
    tri_rows = []
    for done in result.completed:
        target = curve_of[done.curve_id]
        prem = target.premium
        clr_obs = np.cumsum(target.ilr[: done.s])
        for x in range(done.s):
            tri_rows.append([done.company_id, done.accident_year, x,
                             clr_obs[x] * prem, prem, "observed"])
        for j, x in enumerate(range(done.s, tr.N_LAGS)):
            tri_rows.append([done.company_id, done.accident_year, x,
                             done.forecast_clr[j] * prem, prem, "forecast"])
    outdir = Path(cfg["output_dir"])
    paths = [
        write_csv(outdir / "completed_triangles.csv",
                  [*tr.TRIANGLE_HEADER, "source"], tri_rows),
        write_csv(outdir / "tuning.csv", ["s", "n_train", "K", "lambda", "mape"],
                  result.config.rows()),
    ]
    _finish(cfg, "complete", inputs, paths)
    return 0


def cmd_score(cfg) -> int:
    _, curves, inputs = _load_curves(cfg)
    T = cfg["evaluation"]["T"]
    if T is None:
        raise ValueError("score needs evaluation.T (--T)")
    seed = int(cfg["seed"])
    s_values = cfg["evaluation"]["s_values"] or list(range(1, 10))
    report = sc.evaluate_methods(
        curves, int(T), s_values=[int(s) for s in s_values],
        eval_years=cfg["evaluation"]["eval_years"],
        K_grid=cfg["grids"]["K"], lam_grid=cfg["grids"]["lambda"],
        B=int(cfg["replicates"]), seed=seed, alpha=float(cfg["alpha"]),
        n_folds=cfg["tuning"]["folds"],
        lasso_penalty=_lasso_spec(cfg["tuning"]["lasso_penalty"], seed),
    )
    outdir = Path(cfg["output_dir"])
    pit_rows = []
    ecdf_rows = []
    ks_rows = []
    for method in sorted(report.pits):
        pits = report.pits[method]
        pit_rows.extend([[method, i, p] for i, p in enumerate(pits)])
        ecdf_rows.extend([[method, *row] for row in report.ks[method].ecdf_rows()])
        ks = report.ks[method]
        ks_rows.append([method, len(pits), ks.ks, ks.critical, ks.reject])
    paths = [
        write_csv(outdir / "scores.csv",
                  ["s", "method", "mape", "coverage", "uis", "cis", "func_coverage"],
                  report.csv_rows()),
        write_csv(outdir / "pit.csv", ["method", "target", "pit"], pit_rows),
        write_csv(outdir / "ecdf.csv", ["method", "pit_quantile", "empirical_cdf"],
                  ecdf_rows),
        write_csv(outdir / "ks.csv", ["method", "n", "ks", "critical", "reject"],
                  ks_rows),
    ]
    _finish(cfg, "score", inputs, paths)
    return 0


def cmd_synth(cfg) -> int:
    s = cfg["synth"]
    spec = sy.SynthSpec(
        n_companies=int(s["n_companies"]),
        first_year=int(s["first_year"]),
        n_years=int(s["n_years"]),
        calendar_year=None if s["calendar_year"] is None else int(s["calendar_year"]),
        eigenfunctions=sy.make_eigenfunctions(int(s["k_true"])),
        eigenvalues=np.array([4e-4 * 0.25**k for k in range(int(s["k_true"]))]),
        residual_scale=np.full(tr.N_LAGS, float(s["residual_scale"])),
        heavy_tail=bool(s["heavy_tail"]),
        seed=int(cfg["seed"]),
    )
    dataset = sy.generate(spec)
    written = dataset.write(cfg["output_dir"])
    _finish(cfg, "synth", [], [Path(p) for p in written.values()])
    return 0


# ---------------------------------------------------------------------------
# Parser and entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lossfda",
        description="Functional analysis and probabilistic completion of "
                    "loss-development triangles.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--triangles", help="triangle CSV path")
        p.add_argument("--features", help="features CSV path")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="top-level RNG seed")
        p.add_argument("--alpha", type=float, help="interval level alpha")
        p.add_argument("--replicates", type=int, help="bootstrap replicates B")
        p.add_argument("--min-premium", dest="min_premium", type=float)
        p.add_argument("--max-premium-ratio", dest="max_premium_ratio", type=float)

    p = sub.add_parser("validate", help="ingest and check invariants")
    common(p)
    p = sub.add_parser("summarize", help="per-lag ILR summary statistics")
    common(p)
    p = sub.add_parser("outliers", help="depth ranking, flags, envelopes")
    common(p)
    p.add_argument("--method", choices=["bd", "mbd", "exd"])
    p.add_argument("--rule", help="count:k, threshold:v, or fence")
    p.add_argument("--group-by", dest="group_by",
                   choices=["business_focus", "ownership", "geography"])
    p.add_argument("--envelope-alpha", dest="envelope_alpha", type=float)
    p = sub.add_parser("fit", help="fit FPCA and score regressions")
    common(p)
    p.add_argument("--k", type=int, help="number of PCA factors")
    p.add_argument("--lasso-penalty", dest="lasso_penalty",
                   help="'cv' or a fixed nonnegative penalty")
    p = sub.add_parser("forecast", help="complete one partial curve with regions")
    common(p)
    p.add_argument("--company")
    p.add_argument("--year", type=int)
    p.add_argument("--lam", type=float, help="PLS penalty (tuned when omitted)")
    p.add_argument("--k", type=int, help="factors to use when --lam is given")
    p = sub.add_parser("backtest", help="fixed-origin ultimate trajectories")
    common(p)
    p.add_argument("--T", type=int, help="focal accident year")
    p = sub.add_parser("complete", help="sequential lower-right completion")
    common(p)
    p.add_argument("--start-ay", dest="start_ay", type=int)
    p.add_argument("--end-ay", dest="end_ay", type=int)
    p = sub.add_parser("score", help="PLS vs chain-ladder score report")
    common(p)
    p.add_argument("--T", type=int, help="latest calendar year")
    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--n-companies", dest="n_companies", type=int)
    p.add_argument("--first-year", dest="first_year", type=int)
    p.add_argument("--n-years", dest="n_years", type=int)
    p.add_argument("--calendar-year", dest="calendar_year", type=int)
    p.add_argument("--k-true", dest="k_true", type=int)
    return parser


COMMANDS = {
    "validate": cmd_validate,
    "summarize": cmd_summarize,
    "outliers": cmd_outliers,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "backtest": cmd_backtest,
    "complete": cmd_complete,
    "score": cmd_score,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.subcommand](cfg)
    except (ParseError, ValidationError, InsufficientDataError,
            DegenerateResampleError) as exc:
        print(f"error:data: {exc}", file=sys.stderr)
        return 1
    except (SingularityError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"error:numerical: {exc}", file=sys.stderr)
        return 3
    except LossFdaError as exc:
        print(f"error:data: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error:usage: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
