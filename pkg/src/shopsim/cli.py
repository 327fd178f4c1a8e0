"""Command-line entry point: ``shopsim {simulate,scenario,elasticity,calibrate} CONFIG``.

Exit codes: 0 success, 2 configuration error, 3 runtime error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .analytics import (
    compute_metrics,
    elasticity_heatmap,
    elasticity_table,
    sample_indices,
    segment_customers,
    sort_by_average_elasticity,
)
from .calibration import ReferenceDistributions, apply_params, calibrate, resolve
from .config import RunConfig, config_with_priors, load_config
from .exceptions import ConfigError, ShopsimError
from .population import SCENARIO_STORE_OVERRIDES
from .pricing import effective_discount, generate_price_paths
from .simulator import CustomerState, build_world, export_log, run_simulation

MANIFEST_SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4


def _write_csv(frame: pd.DataFrame, path: Path, index: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        frame.to_csv(fh, index=index, lineterminator="\n")


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=False, allow_nan=False, default=_json_default) + "\n",
                    encoding="utf-8")


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x).__name__}")


def _finite(x: float):
    return x if math.isfinite(x) else None


def _metrics_json(report) -> dict:
    summary = {k: _finite(v) if isinstance(v, float) else v for k, v in report.summary().items()}
    hists = {name: {"bin": df["bin"].tolist(), "count": df["count"].tolist()}
             for name, df in report.histograms().items()}
    return {"summary": summary, "histograms": hists}


def _write_manifest(out: Path, command: str, config_path, cfg: RunConfig, outputs: list[str], started: float,
                    extra: dict | None = None) -> None:
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "command": command,
        "config_path": str(config_path),
        "seed": int(cfg.simulation.master_seed),
        "version": __version__,
        "outputs": sorted(outputs + ["manifest.json"]),
        "duration_seconds": round(time.perf_counter() - started, 3),
    }
    if extra:
        manifest.update(extra)
    _write_json(manifest, out / "manifest.json")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out: Path) -> list[str]:
    res = run_simulation(cfg.simulation)
    export_log(res.log, out / "transactions.csv")
    _write_csv(res.prices.to_frame(), out / "prices.csv")
    _write_csv(res.population.to_frame(res.catalog), out / "population.csv")
    sim = cfg.simulation
    report = compute_metrics(res.log, sim.n_customers, sim.weeks, cfg.retention_window, n_products=sim.n_products)
    _write_json(_metrics_json(report), out / "metrics.json")
    return ["transactions.csv", "prices.csv", "population.csv", "metrics.json"]


def scenario_config(cfg: RunConfig):
    sim = cfg.simulation
    priors = sim.priors.with_overrides(SCENARIO_STORE_OVERRIDES) if cfg.store_overrides else sim.priors
    return replace(sim, priors=priors, mode="marketing")


def run_scenarios(cfg: RunConfig) -> tuple[pd.DataFrame, pd.DataFrame, dict]:
    """Simulate every policy on one shared catalog, population and seed."""
    base = scenario_config(cfg)
    catalog, pop, _ = build_world(base)
    segments = segment_customers(pop, catalog, cfg.n_segments)
    policy_rows, segment_rows, report = [], [], {}
    for policy in cfg.policies:
        sim = replace(base, policy=policy)
        prices = generate_price_paths(catalog, pop, policy, sim.weeks, sim.root_key)
        res = run_simulation(sim, world=(catalog, pop, prices))
        design = {"policy": policy.name, "effective_discount": effective_discount(policy),
                  "discount_state_probability": policy.discount_state_probability,
                  "expected_depth": policy.expected_depth}
        overall = compute_metrics(res.log, sim.n_customers, sim.weeks, cfg.retention_window,
                                  n_products=sim.n_products)
        policy_rows.append({**design, **overall.summary()})
        report[policy.name] = {"design": design, "overall": _metrics_json(overall), "segments": {}}
        for k, label in enumerate(segments.labels):
            members = segments.members(k)
            m = compute_metrics(res.log, sim.n_customers, sim.weeks, cfg.retention_window,
                                n_products=sim.n_products, customers=members)
            segment_rows.append({"policy": policy.name, "segment": label, "n_customers": int(members.size),
                                 "mean_sensitivity": float(segments.mean_sensitivity[members].mean()),
                                 **m.summary()})
            report[policy.name]["segments"][label] = m.summary()
    return pd.DataFrame(policy_rows), pd.DataFrame(segment_rows), report


def cmd_scenario(cfg: RunConfig, out: Path) -> list[str]:
    policies, segments, report = run_scenarios(cfg)
    _write_csv(policies, out / "policy_metrics.csv")
    _write_csv(segments, out / "segment_metrics.csv")
    long_overall = policies.drop(columns=["effective_discount", "discount_state_probability", "expected_depth"])
    long_overall = long_overall.melt(id_vars="policy", var_name="metric").assign(segment="all")
    long_seg = segments.drop(columns=["n_customers", "mean_sensitivity"]).melt(
        id_vars=["policy", "segment"], var_name="metric")
    summary = pd.concat([long_overall, long_seg], ignore_index=True)[["policy", "segment", "metric", "value"]]
    _write_csv(summary, out / "summary.csv")
    _write_json(report, out / "scenario_report.json")
    return ["policy_metrics.csv", "segment_metrics.csv", "summary.csv", "scenario_report.json"]


def compute_elasticity(cfg: RunConfig) -> pd.DataFrame:
    """Elasticity table at the configured week, with carry-over from simulating the weeks before it."""
    sim = cfg.simulation
    week = cfg.elasticity_week or sim.weeks
    catalog, pop, prices = build_world(sim)
    if week > 1:
        states = run_simulation(replace(sim, weeks=week - 1), world=None).final_states
    else:
        states = CustomerState.initial(np.arange(sim.n_customers))
    key = sim.root_key
    customers = sample_indices(key, sim.n_customers, cfg.elasticity_customers, 0)
    products = sample_indices(key, sim.n_products, cfg.elasticity_products, 1)
    table = elasticity_table(pop, catalog, prices, states, week, customers, products, key, sim.mode)
    return sort_by_average_elasticity(table)


def cmd_elasticity(cfg: RunConfig, out: Path) -> list[str]:
    table = compute_elasticity(cfg)
    _write_csv(table, out / "elasticity_table.csv")
    heat = elasticity_heatmap(table)
    _write_csv(heat.rename_axis(index="customer_id", columns=None), out / "heatmap_data.csv", index=True)
    _write_csv(table[["customer_id", "product_id", "e_overall", "expected_quantity"]], out / "scatter_data.csv")
    return ["elasticity_table.csv", "heatmap_data.csv", "scatter_data.csv"]


def load_references(directory, space) -> ReferenceDistributions:
    samples = {}
    for name in space.selected:
        candidates = [name, resolve(name, space.aliases)]
        path = next((Path(directory) / f"{c}.csv" for c in candidates if (Path(directory) / f"{c}.csv").exists()),
                    None)
        if path is None:
            raise FileNotFoundError(f"no reference file for distribution {name!r} in {directory}")
        samples[name] = ReferenceDistributions.from_dir(path.parent, [path.stem])[path.stem]
    return ReferenceDistributions(samples)


def cmd_calibrate(cfg: RunConfig, out: Path, reference_dir, workers: int | None = None) -> tuple[list[str], dict]:
    if cfg.calibration is None or not cfg.calibration.space.params:
        raise ConfigError("calibrate needs a calibration section with at least one parameter", "$.calibration")
    settings = cfg.calibration
    reference = load_references(reference_dir, settings.space)
    sim = cfg.simulation
    result = calibrate(settings.space, reference, sim, settings.budget, sim.root_key,
                       workers=workers or settings.workers)
    history = result.history_frame()
    _write_csv(history, out / "trials.csv")
    if not math.isfinite(result.best_objective):
        raise ShopsimError("every calibration trial failed; see trials.csv")
    best_priors = apply_params(sim, result.best_params).priors
    _write_json(config_with_priors(cfg.raw, best_priors), out / "best_params.json")
    extra = {"best_objective": result.best_objective, "best_params": result.best_params,
             "best_trial": int(history.loc[history["objective"].idxmax(), "trial"])}
    return ["best_params.json", "trials.csv"], extra


# ---------------------------------------------------------------------------
# Argument handling
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shopsim", description="Synthetic retail transaction simulator.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="JSON configuration file")
        p.add_argument("--out", help="output directory (default: config output.dir, else ./output)")
        p.add_argument("--seed", type=int, help="override the configured master seed")
        p.add_argument("--threads", type=int, help="worker threads; never changes outputs")
        return p

    common(sub.add_parser("simulate", help="simulate one run and write the transaction log"))
    common(sub.add_parser("scenario", help="compare discount policies on a shared customer base"))
    common(sub.add_parser("elasticity", help="stage-wise price elasticities for sampled pairs"))
    cal = common(sub.add_parser("calibrate", help="search priors to match reference distributions"))
    cal.add_argument("reference_dir", help="directory with one <name>.csv per selected distribution")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must lie in [0, 2**64)", "--seed")
            cfg = cfg.with_seed(args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("threads must be >= 1", "--threads")
            cfg = cfg.with_threads(args.threads)
        out = Path(args.out or cfg.output_dir or "output")
        out.mkdir(parents=True, exist_ok=True)
        extra = None
        if args.command == "simulate":
            outputs = cmd_simulate(cfg, out)
        elif args.command == "scenario":
            outputs = cmd_scenario(cfg, out)
        elif args.command == "elasticity":
            outputs = cmd_elasticity(cfg, out)
        else:
            outputs, extra = cmd_calibrate(cfg, out, args.reference_dir, args.threads)
        _write_manifest(out, args.command, args.config, cfg, outputs, started, extra)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ShopsimError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main() -> None:
    sys.exit(run())
