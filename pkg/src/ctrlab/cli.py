"""Batch experiment command line: run sweeps, verify property suites,
compare variants, and list the environment catalog.

Exit codes: 0 success, 1 verify-suite failure, 2 configuration error,
3 runtime failure.  ``PURE_LOG=debug|info`` controls log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import inspect
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .environments import CATALOG
from .pure import ALGORITHMS
from .verify import SUITES, run_suite

log = logging.getLogger("ctrlab")

EXIT_OK = 0
EXIT_VERIFY_FAIL = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SUMMARY_COLUMNS = ("seed", "final_subopt", "mean_subopt", "switch_count",
                   "rollout_count", "measurement_count", "coverage_ok")


def read_summary_csv(path) -> list[dict]:
    """Parse a sweep summary back into typed records (self-ingestion)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(SUMMARY_COLUMNS):
            raise ValueError(f"unexpected summary header {reader.fieldnames}")
        out = []
        for row in reader:
            out.append({
                "seed": int(row["seed"]),
                "final_subopt": float(row["final_subopt"]),
                "mean_subopt": float(row["mean_subopt"]),
                "switch_count": int(row["switch_count"]),
                "rollout_count": int(row["rollout_count"]),
                "measurement_count": int(row["measurement_count"]),
                "coverage_ok": None if row["coverage_ok"] == "" else bool(int(row["coverage_ok"])),
            })
        return out


def read_runlog_csv(path) -> list[dict]:
    """Parse a per-episode run-log CSV (self-ingestion)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["episode", "subopt", "switchF", "switchR", "meas", "rollouts"]
        if reader.fieldnames != expected:
            raise ValueError(f"unexpected run-log header {reader.fieldnames}")
        return [{
            "episode": int(r["episode"]),
            "subopt": float(r["subopt"]),
            "switchF": bool(int(r["switchF"])),
            "switchR": bool(int(r["switchR"])),
            "meas": int(r["meas"]),
            "rollouts": int(r["rollouts"]),
        } for r in reader]


def _setup_logging() -> None:
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(
        os.environ.get("PURE_LOG", "").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _run_one_seed(canonical: dict, seed: int) -> dict:
    """Worker entry: rebuild everything from the canonical config and run."""
    from .config import parse_config

    cfg = parse_config(canonical, origin=canonical.get("name", "<config>"))
    run_config = cfg.build_run_config()
    started = time.perf_counter()
    runlog = ALGORITHMS[cfg.algorithm](replace(run_config, seed=seed))
    wall = time.perf_counter() - started
    return {"seed": seed, "wall_time_s": wall, "runlog": runlog.to_dict()}


def _summary_row(result: dict) -> list:
    rl = result["runlog"]
    coverage = None
    flags = [(e["truth_in_f"], e["truth_in_r"]) for e in rl["episodes"]]
    if all(f is not None and r is not None for f, r in flags):
        coverage = all(f and r for f, r in flags)
    mean_sub = float(np.mean([e["suboptimality"] for e in rl["episodes"]]))
    return [
        result["seed"],
        repr(rl["final_choice"]["suboptimality"]),
        repr(mean_sub),
        rl["totals"]["switch_count"],
        rl["totals"]["rollout_count"],
        rl["totals"]["measurement_count"],
        "" if coverage is None else int(coverage),
    ]


def run_sweep(cfg: ExperimentConfig, out_dir: Path, workers: int = 1) -> dict:
    """Execute every seed of a config, write per-seed logs and the summary."""
    out_dir.mkdir(parents=True, exist_ok=True)
    canonical = cfg.canonical()
    results: list[dict] = []
    if workers > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_one_seed, canonical, s) for s in cfg.seeds]
            results = [f.result() for f in futures]
    else:
        for s in cfg.seeds:
            log.info("running seed %d", s)
            results.append(_run_one_seed(canonical, s))
    results.sort(key=lambda r: r["seed"])

    for res in results:
        seed_path = out_dir / f"seed_{res['seed']}.json"
        tmp = seed_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(res["runlog"], indent=2, sort_keys=True) + "\n")
        tmp.replace(seed_path)

    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for res in results:
            w.writerow(_summary_row(res))

    finals = np.asarray([res["runlog"]["final_choice"]["suboptimality"] for res in results])
    aggregates = {
        "n_seeds": len(results),
        "final_subopt_mean": float(finals.mean()),
        "final_subopt_std": float(finals.std(ddof=1)) if len(finals) > 1 else 0.0,
        "final_subopt_quantiles": {
            "p10": float(np.quantile(finals, 0.1)),
            "p50": float(np.quantile(finals, 0.5)),
            "p90": float(np.quantile(finals, 0.9)),
        },
        "switch_count_mean": float(np.mean(
            [res["runlog"]["totals"]["switch_count"] for res in results])),
        "rollout_count_mean": float(np.mean(
            [res["runlog"]["totals"]["rollout_count"] for res in results])),
    }
    summary = {
        "name": cfg.name,
        "algorithm": cfg.algorithm,
        "aggregates": aggregates,
        "wall_time_s": {str(res["seed"]): res["wall_time_s"] for res in results},
        "provenance": {"config_hash": cfg.config_hash(), "version": __version__},
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed_count:
            base = cfg.seeds[0]
            cfg = ExperimentConfig(
                name=cfg.name, env_name=cfg.env_name, env_params=cfg.env_params,
                algorithm=cfg.algorithm, run=cfg.run,
                seeds=tuple(base + i for i in range(args.seed_count)),
                out=cfg.out, raw=cfg.raw,
            )
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out) if args.out else Path(cfg.out or f"runs/{cfg.name}")
    try:
        summary = run_sweep(cfg, out_dir, workers=args.workers)
    except Exception as e:  # noqa: BLE001 - the exit code is the contract
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cfg.name}: {summary['aggregates']['n_seeds']} seeds -> {out_dir}")
    print(f"  mean final suboptimality {summary['aggregates']['final_subopt_mean']:.6g}")
    print(f"  wall time per seed (s): "
          + ", ".join(f"{v:.2f}" for v in summary["wall_time_s"].values()))
    return EXIT_OK


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    reports = []
    for name in names:
        log.info("running suite %s", name)
        reports.append(run_suite(name))
    payload = {"suites": reports, "passed": all(r["passed"] for r in reports)}
    text = json.dumps(payload, indent=2, sort_keys=True, default=float)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "verify_report.json").write_text(text + "\n")
    print(text)
    for r in reports:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['suite']}", file=sys.stderr)
    return EXIT_OK if payload["passed"] else EXIT_VERIFY_FAIL


def cmd_compare(args) -> int:
    try:
        cfgs = [load_config(p) for p in args.configs]
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    if len(cfgs) < 2:
        print("config error: compare needs at least two configs", file=sys.stderr)
        return EXIT_CONFIG
    head = cfgs[0]
    for other in cfgs[1:]:
        if other.env_name != head.env_name or other.env_params != head.env_params:
            print("config error: compared configs must share the environment",
                  file=sys.stderr)
            return EXIT_CONFIG
        if other.run["N"] != head.run["N"]:
            print("config error: compared configs must share the budget N",
                  file=sys.stderr)
            return EXIT_CONFIG
    out_root = Path(args.out) if args.out else Path("runs/compare")
    rows = []
    try:
        for cfg in cfgs:
            summary = run_sweep(cfg, out_root / cfg.name, workers=args.workers)
            agg = summary["aggregates"]
            rows.append([
                cfg.name, cfg.algorithm,
                repr(agg["final_subopt_mean"]), repr(agg["final_subopt_std"]),
                repr(agg["switch_count_mean"]), repr(agg["rollout_count_mean"]),
                repr(float(np.mean(list(summary["wall_time_s"].values())))),
            ])
    except Exception as e:  # noqa: BLE001
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    out_root.mkdir(parents=True, exist_ok=True)
    path = out_root / "comparison.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "algorithm", "mean_final_subopt", "std_final_subopt",
                    "mean_switch_count", "mean_rollout_count", "mean_wall_time_s"])
        w.writerows(rows)
    print(path)
    return EXIT_OK


def cmd_catalog(args) -> int:
    items = []
    for name, factory in sorted(CATALOG.items()):
        sig = inspect.signature(factory)
        params = {k: (None if v.default is inspect.Parameter.empty else v.default)
                  for k, v in sig.parameters.items()}
        items.append({"name": name, "params": params})
    if args.format == "json":
        print(json.dumps(items, indent=2, sort_keys=True, default=repr))
    elif args.format == "csv":
        w = csv.writer(sys.stdout)
        w.writerow(["env", "param", "default"])
        for item in items:
            for k, v in item["params"].items():
                w.writerow([item["name"], k, repr(v)])
    else:
        for item in items:
            print(item["name"])
            for k, v in item["params"].items():
                print(f"  {k} = {v!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctrlab",
        description="Seeded experiment batches for optimistic SDE learners.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a config over its seed list")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--seed-count", type=int, default=None,
                       help="override the config's seed count")
    p_run.set_defaults(func=cmd_run)

    p_verify = sub.add_parser("verify", help="run a property suite")
    p_verify.add_argument("suite", choices=sorted(SUITES) + ["all"])
    p_verify.add_argument("--out", default=None)
    p_verify.set_defaults(func=cmd_verify)

    p_cmp = sub.add_parser("compare", help="side-by-side sweep aggregates")
    p_cmp.add_argument("configs", nargs="+")
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--workers", type=int, default=1)
    p_cmp.set_defaults(func=cmd_compare)

    p_cat = sub.add_parser("catalog", help="list environments")
    p_cat.add_argument("--format", choices=["csv", "json", "text"], default="text")
    p_cat.set_defaults(func=cmd_catalog)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
