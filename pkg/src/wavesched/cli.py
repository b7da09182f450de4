"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, _kernel
from .arrival import ArrivalModelError, fit_products, read_history_csv, sample_trajectory, save_models
from .hts import HtsConfig
from .simulator import (
    ComparisonTable,
    ConfigError,
    PlannerSpec,
    Scenario,
    ScenarioConfig,
    alpha_sweep,
    compare_policies,
    generate_scenario,
    run_episode,
    scenario_for_seed,
)

DEFAULT_ALPHAS = (0.5, 0.625, 0.75, 0.875, 1.0)


class UsageError(Exception):
    pass


def default_config() -> dict[str, Any]:
    return {
        "scenario": ScenarioConfig().to_json(),
        "hts": HtsConfig().to_json(),
        "planners": ["greedy", "hts"],
        "seeds": list(range(10)),
        "alphas": list(DEFAULT_ALPHAS),
        "parallel": 1,
    }


def _hts_from_json(data: Any) -> HtsConfig:
    if not isinstance(data, dict):
        raise ConfigError("hts", "expected an object")
    known = {f.name: f for f in dataclasses.fields(HtsConfig)}
    for k, v in data.items():
        if k not in known:
            raise ConfigError(f"hts.{k}", "unknown field")
        if v is not None and not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"hts.{k}", f"expected a number, got {v!r}")
    try:
        return HtsConfig(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError("hts", str(exc)) from None


def load_config(path: str | None) -> dict[str, Any]:
    cfg = default_config()
    if path is None:
        return cfg
    try:
        user = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    if not isinstance(user, dict):
        raise ConfigError("<root>", "expected an object")
    for k, v in user.items():
        if k not in cfg:
            raise ConfigError(k, "unknown field")
        if isinstance(cfg[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(k, "expected an object")
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    return cfg


def _resolve(cfg: dict[str, Any], args) -> tuple[ScenarioConfig, HtsConfig, dict[str, Any]]:
    """Apply command-line overrides, validate, and return the effective config."""
    if getattr(args, "alpha", None) is not None:
        cfg["scenario"]["alpha"] = args.alpha
    if getattr(args, "budget", None) is not None:
        cfg["hts"]["budget"] = args.budget
    if getattr(args, "seeds", None):
        cfg["seeds"] = args.seeds
    if getattr(args, "alphas", None):
        cfg["alphas"] = args.alphas
    if getattr(args, "planner", None):
        cfg["planners"] = args.planner
    if getattr(args, "parallel", None) is not None:
        cfg["parallel"] = args.parallel
    scen = ScenarioConfig.from_json(cfg["scenario"])
    hts = _hts_from_json(cfg["hts"])
    seeds = cfg["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds", "expected a non-empty list of non-negative integers")
    for a in cfg["alphas"]:
        if not isinstance(a, (int, float)) or not 0.5 <= a <= 1.0:
            raise ConfigError("alphas", f"alpha {a!r} outside [0.5, 1.0]")
    for p in cfg["planners"]:
        if p not in ("greedy", "hts"):
            raise ConfigError("planners", f"unknown planner {p!r} (expected greedy or hts)")
    if not isinstance(cfg["parallel"], int) or cfg["parallel"] < 1:
        raise ConfigError("parallel", "must be a positive integer")
    cfg["hts"] = hts.to_json()
    return scen, hts, cfg


def config_hash(cfg: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {path}: {exc.strerror}") from None
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {path} is not writable")
    return out


def write_manifest(out: Path, command: str, cfg: dict[str, Any], extra: dict[str, Any] | None = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "kernel_backend": _kernel.BACKEND,
        "config_hash": config_hash(cfg),
        "seeds": cfg.get("seeds"),
        "config": cfg,
        **(extra or {}),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _specs(cfg: dict[str, Any], hts: HtsConfig) -> list[PlannerSpec]:
    return [PlannerSpec(p, hts if p == "hts" else None) for p in cfg["planners"]]


def _csv(rows: list[dict]) -> str:
    return ComparisonTable._csv(rows)


def cmd_print_defaults(args) -> int:
    print(json.dumps(default_config(), indent=1))
    return 0


def cmd_gen_scenario(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["scenario"]["seed"] = args.seed
    if args.alpha is not None:
        cfg["scenario"]["alpha"] = args.alpha
    scen_cfg = ScenarioConfig.from_json(cfg["scenario"])
    scen = generate_scenario(scen_cfg)
    scen.save(args.out)
    print(f"wrote {args.out}: {len(scen.orders)} orders, {len(scen.arrival_times)} arrival epochs")
    return 0


def cmd_fit(args) -> int:
    hist = read_history_csv(args.history, T=args.T)
    models, report = fit_products(hist)
    save_models(args.out, models)
    for pid in report.low_data_products:
        print(f"warning: product {pid} has a single season; its model replays it", file=sys.stderr)
    if args.samples:
        rng = np.random.default_rng(args.seed)
        with open(args.samples_out or Path(args.out).with_suffix(".samples.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["product_id", "sample", "time_step", "state"])
            for pid in sorted(models):
                for k in range(args.samples):
                    for t, s in enumerate(sample_trajectory(models[pid], rng)):
                        w.writerow([pid, k, t, int(s)])
    print(f"wrote {args.out}: {len(models)} products, {sum(m.n_rows for m in models.values())} rows")
    return 0


def _simulate_rows(scen_cfg, hts, cfg, scenario_path: str | None, alpha: float | None) -> tuple[list[dict], list[dict]]:
    rows, diags = [], []
    fixed = Scenario.load(scenario_path) if scenario_path else None
    for seed in cfg["seeds"]:
        scen = fixed if fixed is not None else scenario_for_seed(scen_cfg, seed)
        for spec in _specs(cfg, hts):
            planner = spec.build()
            if spec.name == "hts":
                planner.record = True
            res = run_episode(scen, planner, alpha=alpha, seed=seed)
            rows.append({**res.to_row(), "conserved": res.conservation_holds()})
            if res.diagnostics:
                diags.append({"planner": spec.display, "seed": seed, "rounds": res.diagnostics})
    return rows, diags


def cmd_simulate(args) -> int:
    if args.replay:
        return _replay(args.replay)
    if not args.out:
        raise UsageError("simulate needs --out (or --replay RUN_DIR)")
    cfg = load_config(args.config)
    scen_cfg, hts, cfg = _resolve(cfg, args)
    out = _out_dir(args.out)
    scenario_path = str(Path(args.scenario).resolve()) if args.scenario else None
    # a saved scenario keeps its own alpha unless one is given explicitly
    alpha = args.alpha if scenario_path else scen_cfg.alpha
    t0 = time.perf_counter()
    rows, diags = _simulate_rows(scen_cfg, hts, cfg, scenario_path, alpha)
    (out / "results.csv").write_text(_csv(rows))
    if diags:
        (out / "diagnostics.json").write_text(json.dumps(diags) + "\n")
    extra = {"scenario_file": scenario_path, "alpha_override": alpha}
    if scenario_path:
        extra["scenario_sha256"] = hashlib.sha256(Path(scenario_path).read_bytes()).hexdigest()
    write_manifest(out, "simulate", cfg, extra)
    _print_summary(rows, time.perf_counter() - t0)
    return 0


def _replay(run_dir: str) -> int:
    src = Path(run_dir)
    try:
        manifest = json.loads((src / "manifest.json").read_text())
        archived = (src / "results.csv").read_text()
    except OSError as exc:
        raise UsageError(f"cannot replay {run_dir}: {exc.strerror}: {exc.filename}") from None
    if manifest.get("command") != "simulate":
        raise UsageError(f"{run_dir} was not produced by simulate")
    cfg = manifest["config"]
    scen_cfg = ScenarioConfig.from_json(cfg["scenario"])
    hts = _hts_from_json(cfg["hts"])
    path = manifest.get("scenario_file")
    if path and hashlib.sha256(Path(path).read_bytes()).hexdigest() != manifest.get("scenario_sha256"):
        print(f"replay: scenario file {path} changed since the run", file=sys.stderr)
        return 1
    rows, _ = _simulate_rows(scen_cfg, hts, cfg, path, manifest.get("alpha_override"))
    if _csv(rows) != archived:
        print("replay: results differ from the archived CSV", file=sys.stderr)
        return 1
    print(f"replay: {len(rows)} rows reproduced exactly")
    return 0


def _print_summary(rows: list[dict], elapsed: float) -> None:
    agg = ComparisonTable(rows).aggregate()
    for a in agg:
        print(
            f"{a['planner']:>8} alpha={a['alpha']:<6} on-time {a['on_time_pct_mean']:6.2f}%  "
            f"avg delay {a['avg_delay_late_days_mean']:.3f} d  seeds={a['n_seeds']}"
        )
    print(f"{len(rows)} episodes in {elapsed:.1f}s")


def _all_conserved(rows: list[dict]) -> bool:
    bad = [r for r in rows if not r.get("conserved", True)]
    for r in bad:
        print(f"conservation failed: {r['planner']} seed {r['seed']} alpha {r['alpha']}", file=sys.stderr)
    return not bad


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    scen_cfg, hts, cfg = _resolve(cfg, args)
    out = _out_dir(args.out)
    t0 = time.perf_counter()
    table = compare_policies(scen_cfg, _specs(cfg, hts), cfg["seeds"], workers=cfg["parallel"])
    elapsed = time.perf_counter() - t0
    (out / "rows.csv").write_text(table.rows_csv())
    (out / "aggregate.csv").write_text(table.aggregate_csv())
    write_manifest(out, "compare", cfg, {"elapsed_seconds": round(elapsed, 3)})
    _print_summary(table.rows, elapsed)
    return 0 if _all_conserved(table.rows) else 1


def trend_violations(table: ComparisonTable, alphas: Sequence[float], tol: float) -> list[str]:
    """Alphas where HTS misses more deadlines than greedy by more than ``tol`` points."""
    bad = []
    for a in alphas:
        h = table.mean("hts", "missed_pct", a)
        g = table.mean("greedy", "missed_pct", a)
        if h > g + tol:
            bad.append(f"alpha={a}: hts missed {h:.2f}% > greedy {g:.2f}% + {tol}")
    return bad


def cmd_sweep_alpha(args) -> int:
    cfg = load_config(args.config)
    scen_cfg, hts, cfg = _resolve(cfg, args)
    out = _out_dir(args.out)
    t0 = time.perf_counter()
    table = alpha_sweep(scen_cfg, [float(a) for a in cfg["alphas"]], _specs(cfg, hts), cfg["seeds"], workers=cfg["parallel"])
    elapsed = time.perf_counter() - t0
    (out / "sweep.csv").write_text(table.rows_csv())
    (out / "aggregate.csv").write_text(table.aggregate_csv())
    write_manifest(out, "sweep-alpha", cfg, {"elapsed_seconds": round(elapsed, 3)})
    _print_summary(table.rows, elapsed)
    code = 0 if _all_conserved(table.rows) else 1
    if args.trend_check:
        if set(cfg["planners"]) != {"greedy", "hts"}:
            raise UsageError("--trend-check needs both planners")
        bad = trend_violations(table, cfg["alphas"], args.tolerance)
        for line in bad:
            print(f"trend check failed: {line}", file=sys.stderr)
        code = code or (1 if bad else 0)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wavesched", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"wavesched {__version__} ({_kernel.BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("print-defaults", help="dump the full default config as JSON").set_defaults(func=cmd_print_defaults)

    g = sub.add_parser("gen-scenario", help="generate and save one scenario")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--alpha", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_scenario)

    f = sub.add_parser("fit", help="fit arrival models from a history CSV")
    f.add_argument("--history", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--T", type=int, help="season length (default: longest season in the file)")
    f.add_argument("--samples", type=int, default=0, help="also write this many sampled trajectories per product")
    f.add_argument("--samples-out")
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_fit)

    def common(sp, out_required=True):
        sp.add_argument("--config")
        sp.add_argument("--seeds", type=int, nargs="+")
        sp.add_argument("--budget", type=int)
        sp.add_argument("--parallel", type=int)
        sp.add_argument("--out", required=out_required)
        sp.add_argument("--planner", choices=["greedy", "hts"], action="append")

    s = sub.add_parser("simulate", help="run episodes and write per-seed results")
    common(s, out_required=False)
    s.add_argument("--alpha", type=float)
    s.add_argument("--scenario", help="scenario JSON to run instead of generating one per seed")
    s.add_argument("--replay", metavar="RUN_DIR", help="re-run an earlier simulate output and compare")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="paired greedy vs HTS comparison")
    common(c)
    c.add_argument("--alpha", type=float)
    c.set_defaults(func=cmd_compare)

    w = sub.add_parser("sweep-alpha", help="missed-deadline percentage across alpha")
    common(w)
    w.add_argument("--alphas", type=float, nargs="+")
    w.add_argument("--trend-check", action="store_true", help="exit 1 if HTS misses more than greedy at any alpha")
    w.add_argument("--tolerance", type=float, default=1.0, help="percentage points (default 1.0)")
    w.set_defaults(func=cmd_sweep_alpha)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ArrivalModelError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
