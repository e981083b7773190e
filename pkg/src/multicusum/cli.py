"""Command-line entry point: ``python -m multicusum <command> ...``.

Every command reads an optional JSON config, applies flag overrides, and writes
CSV/JSON files whose first line (CSV) or ``provenance`` key (JSON) records the
config hash and seed. Failures print a JSON error object to stderr and exit 1.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path
from typing import Any

from . import calibration, montecarlo, pde
from .detector import trace_to_csv
from .engine import BudgetExceeded, Scenario
from .io import config_hash, dumps, read_csv, write_csv, write_json
from .sde import SimConfig, parse_model, simulate_paths

ESTIMATE_COLUMNS = ["scenario_id", "gamma", "N", "threshold", "mean", "se", "reps", "censored"]

DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {"model": "constant:1", "n": 2, "tau": [0.0, math.inf], "dt": 1e-3,
                 "horizon": 50.0, "bridge": True},
    "calibrate": {"model": "constant:1", "n": 1, "gamma": 1000.0, "method": "exact",
                  "replications": 10_000, "dt": 0.25, "se_rel_target": 0.02,
                  "max_replications": 80_000},
    "mc": {"experiment": "delay", "model": "constant:1", "n": 1, "tau": None, "threshold": 2.0,
           "gamma": None, "gammas": [100.0, 1000.0], "dt": 1e-3, "replications": 10_000,
           "cal_dt": 0.25, "cal_replications": 10_000, "sensor_thresholds": None},
    "pde": {"problem": "both", "epsilons": [0.25, 0.2, 0.15, 0.125], "cells_per_layer": 32,
            "scheme": "central", "n_sensors": 2, "product_epsilons": [], "thresholds": [],
            "dump_field": False},
    "report": {},
}


class UsageError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="multicusum", description="Multi-chart CUSUM experiments")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="JSON config file; flags override its values")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        return sp

    s = common(sub.add_parser("simulate", help="sample paths and detector trace"))
    s.add_argument("--model")
    s.add_argument("--n", type=int)
    s.add_argument("--tau", type=_floats, help="comma-separated change points, inf allowed")
    s.add_argument("--dt", type=float)
    s.add_argument("--horizon", type=float)
    s.add_argument("--bridge", type=_bool)

    c = common(sub.add_parser("calibrate", help="threshold for a false-alarm target"))
    c.add_argument("--model")
    c.add_argument("--n", type=int)
    c.add_argument("--gamma", type=float)
    c.add_argument("--method", choices=["exact", "asymptotic", "mc"])
    c.add_argument("--replications", type=int)
    c.add_argument("--dt", type=float)
    c.add_argument("--se-rel-target", dest="se_rel_target", type=float)
    c.add_argument("--max-replications", dest="max_replications", type=int)

    m = common(sub.add_parser("mc", help="Monte Carlo delay / false-alarm / equalizer / gap"))
    m.add_argument("--experiment", choices=["delay", "false_alarm", "equalizer", "gap"])
    m.add_argument("--model")
    m.add_argument("--n", type=int)
    m.add_argument("--tau", type=_floats)
    m.add_argument("--threshold", type=float)
    m.add_argument("--gamma", type=float, help="calibrate the threshold to this target first")
    m.add_argument("--gammas", type=_floats)
    m.add_argument("--dt", type=float)
    m.add_argument("--replications", type=int)
    m.add_argument("--cal-dt", dest="cal_dt", type=float)
    m.add_argument("--cal-replications", dest="cal_replications", type=int)
    m.add_argument("--sensor-thresholds", dest="sensor_thresholds", type=_floats)

    d = common(sub.add_parser("pde", help="finite-difference corner values vs asymptotes"))
    d.add_argument("--problem", choices=["T", "S", "both"])
    d.add_argument("--epsilons", type=_floats)
    d.add_argument("--cells-per-layer", dest="cells_per_layer", type=int)
    d.add_argument("--scheme", choices=["central", "upwind"])
    d.add_argument("--n-sensors", dest="n_sensors", type=int)
    d.add_argument("--product-epsilons", dest="product_epsilons", type=_floats)
    d.add_argument("--thresholds", type=_floats, help="thresholds h for the cross-validation table")
    d.add_argument("--dump-field", dest="dump_field", type=_bool)

    r = common(sub.add_parser("report", help="join results found under --out"))
    r.add_argument("results", nargs="?", type=Path, help="results directory (default: --out)")
    return p


def resolve_config(args: argparse.Namespace) -> dict[str, Any]:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS[args.command])
    cfg.update({"seed": 0, "out": "results", "threads": None})
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError("config must be a JSON object")
        loaded = loaded.get(args.command, loaded)
        unknown = set(loaded) - set(cfg) - {"command"}
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        cfg.update({k: v for k, v in loaded.items() if k != "command"})
    for key, val in vars(args).items():
        if key in ("command", "config", "results") or val is None:
            continue
        cfg[key] = str(val) if isinstance(val, Path) else val
    for key in ("tau", "gammas", "epsilons", "product_epsilons", "thresholds", "sensor_thresholds"):
        if isinstance(cfg.get(key), list):
            cfg[key] = [float(x) for x in cfg[key]]
    cfg["command"] = args.command
    return cfg


def _identity(cfg: dict) -> dict:
    """Config fields that determine results (output location and threads excluded)."""
    return {k: v for k, v in cfg.items() if k not in ("out", "threads")}


def _provenance(cfg: dict) -> dict:
    return {"config_hash": config_hash(_identity(cfg)), "seed": cfg["seed"], "command": cfg["command"]}


def _comment(cfg: dict) -> str:
    p = _provenance(cfg)
    return f"config_hash={p['config_hash']} seed={p['seed']} command={p['command']}"


def _out(cfg: dict) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise UsageError(f"output directory {out} is not writable: {exc}") from exc
    return out


def cmd_simulate(cfg: dict) -> dict:
    model = parse_model(cfg["model"])
    n = int(cfg["n"])
    model.check_sensors(n)
    tau = cfg["tau"]
    if len(tau) != n:
        raise UsageError(f"--tau needs {n} values, got {len(tau)}")
    sim = SimConfig(n, float(cfg["dt"]), float(cfg["horizon"]), tuple(tau), seed=int(cfg["seed"]))
    out = _out(cfg)
    paths = simulate_paths(sim, model)
    comment = _comment(cfg)
    paths.to_csv(out / "paths.csv", model=model, header_comment=comment)
    trace_to_csv(out / "trace.csv", paths, model, bridge=bool(cfg["bridge"]), comment=comment)
    return {"files": ["paths.csv", "trace.csv"]}


def _mc_params(cfg: dict, dt_key: str = "dt", reps_key: str = "replications") -> calibration.McParams:
    kw = {"replications": int(cfg[reps_key]), "dt": float(cfg[dt_key]), "seed": int(cfg["seed"]),
          "threads": cfg["threads"]}
    for key in ("se_rel_target", "max_replications"):
        if key in cfg:
            kw[key] = cfg[key]
    return calibration.McParams(**kw)


def calibrate(cfg: dict) -> calibration.CalibrationResult:
    gamma, n = float(cfg["gamma"]), int(cfg["n"])
    method = cfg["method"]
    if method == "exact":
        if n != 1:
            raise UsageError("the exact formula applies to one sensor; use --method mc or asymptotic")
        return calibration.solve_nu(gamma)
    if method == "asymptotic":
        h = calibration.asymptotic_h(gamma, n)
        return calibration.CalibrationResult(h, gamma, math.nan, calibration.Method.ASYMPTOTIC_N)
    model = parse_model(cfg["model"])
    model.check_sensors(n)
    return calibration.calibrate_h_mc(gamma, n, model, _mc_params(cfg))


def cmd_calibrate(cfg: dict) -> dict:
    out = _out(cfg)
    res = calibrate(cfg)
    write_json(out / "calibration.json", {"provenance": _provenance(cfg), "config": cfg,
                                          "result": res.to_dict()})
    return res.to_dict()


def _estimate_row(sid: str, gamma, n: int, h: float, est) -> list:
    return [sid, gamma if gamma is not None else math.nan, n, h, est.mean, est.std_error,
            est.replications_used, est.censored_count]


def cmd_mc(cfg: dict) -> dict:
    out = _out(cfg)
    model = parse_model(cfg["model"])
    n = int(cfg["n"])
    model.check_sensors(n)
    exp = cfg["experiment"]
    threads = cfg["threads"]
    seed = int(cfg["seed"])
    summary: dict[str, Any] = {"provenance": _provenance(cfg), "config": cfg, "experiment": exp}
    rows = []
    gamma = cfg.get("gamma")
    h = float(cfg["threshold"])
    if gamma is not None and exp in ("delay", "false_alarm", "equalizer"):
        cal_cfg = dict(cfg, method="exact" if n == 1 else "mc", dt=cfg["cal_dt"],
                       replications=cfg["cal_replications"])
        cal = calibrate(cal_cfg)
        h = cal.threshold
        summary["calibration"] = cal.to_dict()
    common = dict(model=model, threshold=h, dt=float(cfg["dt"]), replications=int(cfg["replications"]),
                  seed=seed)
    if exp in ("delay", "false_alarm"):
        tau = cfg["tau"]
        if tau is None:
            tau = [0.0] + [math.inf] * (n - 1) if exp == "delay" else [math.inf] * n
        if len(tau) != n:
            raise UsageError(f"--tau needs {n} values, got {len(tau)}")
        st = cfg.get("sensor_thresholds")
        sc = Scenario(n, tuple(tau), sensor_thresholds=tuple(st) if st else None, **common)
        fn = montecarlo.estimate_delay if exp == "delay" else montecarlo.estimate_false_alarm
        est = fn(sc, threads=threads)
        rows.append(_estimate_row(exp, gamma, n, h, est))
        summary["estimate"] = est.to_dict()
        summary["scenario"] = sc.to_dict()
        if exp == "delay" and gamma is not None:
            summary["leading_order_delay"] = montecarlo.leading_order_delay(float(gamma), n)
    elif exp == "equalizer":
        st = cfg.get("sensor_thresholds")
        base = Scenario.worst_case(n, sensor_thresholds=tuple(st) if st else None, **common)
        rep = montecarlo.equalizer_test(base, threads=threads)
        for i, est in enumerate(rep.estimates):
            rows.append(_estimate_row(f"equalizer_sensor{i + 1}", gamma, n, h, est))
        summary["equalizer"] = rep.to_dict()
    elif exp == "gap":
        mc = calibration.McParams(replications=int(cfg["cal_replications"]), dt=float(cfg["cal_dt"]),
                                  seed=seed, threads=threads)
        table = montecarlo.excess_delay_table(cfg["gammas"], n, model, mc, delay_dt=float(cfg["dt"]),
                                        delay_reps=int(cfg["replications"]), seed=seed, threads=threads)
        for r in table:
            rows.append(_estimate_row(f"gap_gamma{r.gamma:g}", r.gamma, n, r.h, r.delay))
        summary["gap"] = [r.to_dict() for r in table]
    else:
        raise UsageError(f"unknown experiment {exp!r}")
    write_csv(out / "estimates.csv", ESTIMATE_COLUMNS, rows, comment=_comment(cfg))
    write_json(out / "mc_summary.json", summary)
    return summary


def cmd_pde(cfg: dict) -> dict:
    out = _out(cfg)
    problems = {"T": [pde.Problem.MEAN_EXIT_NO_CHANGE], "S": [pde.Problem.MEAN_EXIT_ONE_CHANGED],
                "both": list(pde.Problem)}[cfg["problem"]]
    rows = []
    for prob in problems:
        rows += pde.sweep(cfg["epsilons"], prob, int(cfg["cells_per_layer"]), cfg["scheme"],
                          int(cfg["n_sensors"]))
    comment = _comment(cfg)
    write_csv(out / "sweep.csv", pde.SWEEP_COLUMNS, [r.as_row() for r in rows], comment=comment)
    summary: dict[str, Any] = {"provenance": _provenance(cfg), "config": cfg,
                               "sweep": [dict(zip(pde.SWEEP_COLUMNS, r.as_row())) for r in rows]}
    summary["products"] = [pde.product_check(e, scheme=cfg["scheme"]).to_dict()
                           for e in cfg["product_epsilons"]]
    cross = []
    for h in cfg["thresholds"]:
        eps = 1.0 / h
        sol = pde.solve_T(pde.Grid2D.resolved(eps, int(cfg["cells_per_layer"])), cfg["scheme"])
        cross.append({"threshold": h, "epsilon": eps, "n_cells": sol.grid.n_cells,
                      "gamma_fd": sol.corner_value / eps,
                      "gamma_asymptote": pde.asymptote_T(eps, int(cfg["n_sensors"])) / eps})
    summary["cross"] = cross
    if cfg["dump_field"]:
        for prob in problems:
            grid = pde.Grid2D.resolved(cfg["epsilons"][0], int(cfg["cells_per_layer"]))
            solver = pde.solve_T if prob is pde.Problem.MEAN_EXIT_NO_CHANGE else pde.solve_S
            solver(grid, cfg["scheme"]).to_csv(out / f"field_{prob.value}.csv", comment=comment)
    write_json(out / "pde_summary.json", summary)
    return summary


def _load_all(root: Path, name: str) -> list[dict]:
    return [json.loads(p.read_text()) for p in sorted(root.rglob(name))]


def build_report(root: Path) -> dict:
    """Join MC, calibration and PDE outputs found anywhere under ``root``."""
    mc = _load_all(root, "mc_summary.json")
    cals = _load_all(root, "calibration.json")
    pdes = _load_all(root, "pde_summary.json")
    estimates = []
    for path in sorted(root.rglob("estimates.csv")):
        estimates += read_csv(path)

    fd_by_h = {}
    for s in pdes:
        for c in s.get("cross", []):
            fd_by_h[round(float(c["threshold"]), 9)] = c
    cross = []
    for s in mc:
        if s.get("experiment") != "false_alarm":
            continue
        n = int(s["config"]["n"])
        h = float(s["scenario"]["threshold"])
        est = s["estimate"]
        fd = fd_by_h.get(round(h, 9)) if n == 2 else None
        row = {"N": n, "threshold": h, "mc_gamma": est["mean"], "mc_se": est["se"],
               "asymptote_gamma": math.exp(h) / n,
               "fd_gamma": fd["gamma_fd"] if fd else None}
        vals = {"mc": row["mc_gamma"], "asymptote": row["asymptote_gamma"], "fd": row["fd_gamma"]}
        agree = {}
        for a, b in (("mc", "fd"), ("mc", "asymptote"), ("fd", "asymptote")):
            if vals[a] is None or vals[b] is None:
                agree[f"{a}_vs_{b}"] = None
                continue
            se = est["se"] if "mc" in (a, b) else 0.0
            tol = max(3 * se, 0.1 * abs(vals[b]))
            agree[f"{a}_vs_{b}"] = abs(vals[a] - vals[b]) <= tol
        row["agree"] = agree
        cross.append(row)

    gaps = []
    for s in mc:
        for g in s.get("gap", []):
            gaps.append(g)
    for s in mc:
        # single-sensor delay runs at a calibrated threshold yield a gap directly
        if s.get("experiment") == "delay" and "calibration" in s and int(s["config"]["n"]) == 1:
            gamma = float(s["calibration"]["gamma_target"])
            nu = calibration.solve_nu(gamma).threshold
            lower = calibration.f_cusum(-nu)
            gaps.append({"gamma": gamma, "N": 1, "nu": nu, "f_neg_nu": lower,
                         "h": s["calibration"]["threshold"], "delay": s["estimate"]["mean"],
                         "delay_se": s["estimate"]["se"], "gap": s["estimate"]["mean"] - lower,
                         "gap_se": s["estimate"]["se"], "log_N": 0.0})
    return {
        "root": str(root),
        "counts": {"mc": len(mc), "calibration": len(cals), "pde": len(pdes), "estimate_rows": len(estimates)},
        "pde_present": bool(pdes),
        "estimates": estimates,
        "calibrations": [c["result"] for c in cals],
        "cross_validation": cross,
        "gap_table": gaps,
        "pde_sweep": [row for s in pdes for row in s.get("sweep", [])],
    }


def format_report(rep: dict) -> str:
    def num(x, spec=".4g"):
        return "absent" if x is None else format(x, spec)

    lines = [f"results: {rep['root']}", f"files: {rep['counts']}",
             "PDE results: " + ("present" if rep["pde_present"] else "absent"), ""]
    lines.append("cross-validation (false-alarm energy)")
    lines.append(f"{'N':>3} {'h':>8} {'mc':>12} {'se':>10} {'fd':>12} {'asymptote':>12}")
    for r in rep["cross_validation"]:
        lines.append(f"{r['N']:>3} {r['threshold']:>8.4g} {r['mc_gamma']:>12.5g} {r['mc_se']:>10.3g} "
                     f"{num(r['fd_gamma'], '.5g'):>12} {r['asymptote_gamma']:>12.5g}")
    lines.append("")
    lines.append("gap table (delay of multi-chart rule minus one-sensor delay)")
    lines.append(f"{'N':>3} {'gamma':>10} {'h':>8} {'delay':>10} {'gap':>9} {'se':>8} {'log N':>8}")
    for g in rep["gap_table"]:
        lines.append(f"{g['N']:>3} {g['gamma']:>10.6g} {g['h']:>8.4f} {g['delay']:>10.4f} "
                     f"{g['gap']:>9.4f} {g['gap_se']:>8.4f} {g['log_N']:>8.4f}")
    if rep["pde_sweep"]:
        lines.append("")
        lines.append("PDE sweep")
        for s in rep["pde_sweep"]:
            lines.append(f"{s['problem']:>20} eps={s['epsilon']:<6g} n={s['n_cells']:<5} "
                         f"corner={s['corner']:.6g} asymptote={s['asymptote']:.6g} rel_err={s['rel_err']:.3g}")
    return "\n".join(lines) + "\n"


def cmd_report(cfg: dict, root: Path | None) -> dict:
    root = Path(root or cfg["out"])
    if not root.is_dir():
        raise UsageError(f"results directory {root} does not exist")
    rep = build_report(root)
    text = format_report(rep)
    (root / "report.txt").write_text(text)
    write_json(root / "report.json", rep)
    sys.stdout.write(text)
    return rep


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if cfg["threads"] is None:
            cfg_threads = os.cpu_count() or 1
            cfg = dict(cfg, threads=cfg_threads)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "calibrate":
            res = cmd_calibrate(cfg)
            sys.stdout.write(dumps(res) + "\n")
        elif args.command == "mc":
            cmd_mc(cfg)
        elif args.command == "pde":
            cmd_pde(cfg)
        else:
            cmd_report(cfg, args.results)
    except (UsageError, ValueError, ArithmeticError, BudgetExceeded, OSError) as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        partial = getattr(exc, "partial", None)
        if partial is not None and hasattr(partial, "to_dict"):
            err["partial"] = partial.to_dict()
        sys.stderr.write(dumps(err) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
