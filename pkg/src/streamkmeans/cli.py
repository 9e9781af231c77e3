"""Command-line front end.

Subcommands: ``run``, ``check-gradient``, ``check-bounds``, ``concentration``,
``sweep`` and ``plot``.  Configs are YAML documents carrying a
``schema_version``; the top level holds engine run settings and optional
sections named after the other subcommands.

Exit codes: 0 pass, 1 usage or config error, 2 contract violation or failed
check, 3 internal error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import itertools
import json
import logging
import math
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import analysis
from .core import ConfigError, ContractViolation, InputError, StreamKMeansError
from .engine import RunConfig, check_trajectory, run, write_summary_json, write_trace_csv

log = logging.getLogger("streamkmeans")

SCHEMA_VERSION = 1
SEED_ENV = "STREAMKMEANS_SEED"
SECTIONS = ("check_gradient", "check_bounds", "concentration", "sweep")

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


# -- config handling ----------------------------------------------------------


def load_config(path: Optional[str]) -> dict:
    if path is None:
        return {"schema_version": SCHEMA_VERSION}
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    version = doc.get("schema_version")
    if version is None:
        raise ConfigError(f"{path}: missing schema_version (current is {SCHEMA_VERSION})")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    return doc


def resolve_seed(flag: Optional[int], config_seed) -> int:
    """Seed precedence: ``--seed`` flag, then ``$STREAMKMEANS_SEED``, then config."""
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env!r} is not an integer")
    return int(config_seed or 0)


def run_settings(doc: dict, args) -> dict:
    d = {k: v for k, v in doc.items() if k not in SECTIONS}
    d["seed"] = resolve_seed(args.seed, d.get("seed"))
    if args.stride is not None:
        d["stride"] = args.stride
    return d


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def prepare_out(path: Optional[str], force: bool, default: Optional[str] = None) -> Path:
    if path is None:
        if default is None:
            raise UsageError("--out is required")
        path = default
    out = Path(path)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise UsageError(f"output directory {out} exists and is not empty; pass --force to overwrite")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        from dataclasses import asdict

        return asdict(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _finite(obj):
    """Replace non-finite floats by ``None`` so reports stay strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


# -- run ----------------------------------------------------------------------


def execute_run(settings: dict, out: Path) -> dict:
    """Run one engine config into ``out``; returns the report dict."""
    cfg = RunConfig.from_dict(settings)
    trace = run(cfg)
    write_trace_csv(trace, out / "trace.csv")
    extra = {"config_hash": config_hash(cfg.as_dict())}
    summary = write_summary_json(trace, out / "summary.json", extra)
    report = {"config_hash": extra["config_hash"], "seed": cfg.seed, "error": trace.error}
    if trace.n_rows and trace.error is None:
        report["trajectory"] = summary["trajectory"]
        if trace.rows_gradnorm[-1] is not None:
            report["verdict"] = analysis.convergence_verdict(trace).as_dict()
        if cfg.schedule.policy == analysis.GENERALIZED:
            checks = analysis.accumulated_rate_checks(trace)
            report["accumulated_rate"] = [c.__dict__ for c in checks]
        margins = [m for _, m in trace.descent]
        report["descent_worst_margin"] = min(margins) if margins else None
    report["status"] = _run_status(trace, report)
    write_json(out / "report.json", _finite(report))
    return report


def _run_status(trace, report) -> str:
    if trace.error is not None:
        return "contract_violation" if trace.error["type"] in ("ContractViolation", "DegenerateCentersError") else "error"
    traj = report.get("trajectory", {})
    if traj and not traj["passed"]:
        return "contract_violation"
    dm = report.get("descent_worst_margin")
    if dm is not None and dm < -1e-10:
        return "contract_violation"
    rates = report.get("accumulated_rate", [])
    if any(c["margin"] is not None and c["margin"] < -1e-12 for c in rates):
        return "contract_violation"
    return "ok"


def _status_code(status: str) -> int:
    return {"ok": EXIT_OK, "contract_violation": EXIT_VIOLATION}.get(status, EXIT_INTERNAL)


def cmd_run(args) -> int:
    doc = load_config(args.config)
    settings = run_settings(doc, args)
    RunConfig.from_dict(settings)  # validate before touching the output dir
    out = prepare_out(args.out, args.force)
    report = execute_run(settings, out)
    print(f"{out}: {report['status']}")
    return _status_code(report["status"])


# -- checks -------------------------------------------------------------------


def _section(doc: dict, name: str, allowed) -> dict:
    sec = doc.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(sec) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return sec


def _emit(args, name: str, report: dict):
    report = _finite(report)
    if args.out:
        out = prepare_out(args.out, args.force)
        write_json(out / "report.json", report)
    print(json.dumps(report, indent=2, sort_keys=True, default=_jsonable) if args.verbose else f"{name}: "
          f"{'PASS' if report['passed'] else 'FAIL'}")


def cmd_check_gradient(args) -> int:
    doc = load_config(args.config)
    sec = _section(doc, "check_gradient", ("configs", "h", "tol", "ks", "distributions"))
    seed = resolve_seed(args.seed, doc.get("seed"))
    kw = dict(sec)
    if "ks" in kw:
        kw["ks"] = tuple(kw["ks"])
    if "distributions" in kw:
        kw["distributions"] = tuple(kw["distributions"])
    report = analysis.gradient_check(seed=seed, **kw)
    _emit(args, "check-gradient", report)
    return EXIT_OK if report["passed"] else EXIT_VIOLATION


def cmd_check_bounds(args) -> int:
    doc = load_config(args.config)
    sec = _section(doc, "check_bounds", ("r", "m_max", "harmonic_m_max", "pairs", "displacement_n"))
    seed = resolve_seed(args.seed, doc.get("seed"))
    rs = sec.get("r", [0.1, math.log(2)])
    horizons = [analysis.horizon_bounds_check(float(r), int(sec.get("m_max", 10_000))) for r in rs]
    harmonic = analysis.harmonic_sweep(int(sec.get("harmonic_m_max", 1000)))
    surrogate = analysis.surrogate_bound_check(int(sec.get("pairs", 1000)), seed=seed)
    trace = run(RunConfig({"type": "uniform", "low": 0.0, "high": 1.0}, k=2,
                          n_max=int(sec.get("displacement_n", 10_000)), seed=seed))
    displacement = check_trajectory(trace, seed=seed)
    stated_ok = all(h["lower_violations"] == 0 and h["upper_violations"] == 0 for h in horizons)
    weak_ok = all(h["weak_lower_violations"] == 0 and h["upper_violations"] == 0 for h in horizons)
    report = {
        "horizon": horizons,
        "horizon_stated_bounds_hold": stated_ok,
        "horizon_weak_bounds_hold": weak_ok,
        "harmonic": harmonic,
        "surrogate": surrogate,
        "displacement": displacement,
    }
    report["passed"] = (stated_ok and harmonic["lower_violations"] == 0 and harmonic["upper_violations"] == 0
                        and surrogate["passed"] and displacement["passed"])
    _emit(args, "check-bounds", report)
    if not args.verbose:
        print(f"{'r':>10} {'checked':>8} {'lower':>6} {'weak':>5} {'upper':>6}")
        for h in horizons:
            print(f"{h['r']:>10.6g} {h['checked']:>8} {h['lower_violations']:>6} "
                  f"{h['weak_lower_violations']:>5} {h['upper_violations']:>6}")
        print(f"harmonic: {harmonic['checked']} pairs, "
              f"{harmonic['lower_violations'] + harmonic['upper_violations']} violations")
        print(f"surrogate: {surrogate['surrogate_violations'] + surrogate['quadratic_violations']} violations; "
              f"displacement: {displacement['displacement_violations']} violations")
    return EXIT_OK if report["passed"] else EXIT_VIOLATION


def cmd_concentration(args) -> int:
    doc = load_config(args.config)
    sec = _section(doc, "concentration", ("distribution", "k", "alpha", "beta", "checkpoints", "n_max",
                                          "points", "runs", "c", "lipschitz"))
    kw = dict(sec)
    kw["seed"] = resolve_seed(args.seed, doc.get("seed"))
    kw["jobs"] = args.jobs
    if "n_max" in kw:
        n_max = kw.pop("n_max")
        points = kw.pop("points", 6)
        cfg = analysis.ConcentrationConfig.log_spaced(n_max, points, **kw)
    else:
        kw.pop("points", None)
        cfg = analysis.ConcentrationConfig(**kw)
    report = analysis.concentration_experiment(cfg).as_dict()
    _emit(args, "concentration", report)
    if report["substituted"]:
        print(report["note"], file=sys.stderr)
    return EXIT_OK if report["passed"] else EXIT_VIOLATION


# -- sweep --------------------------------------------------------------------


def _set_path(d: dict, dotted: str, value):
    keys = dotted.split(".")
    for key in keys[:-1]:
        d = d.setdefault(key, {})
    d[keys[-1]] = value


def sweep_jobs(base: dict, sec: dict) -> list:
    """Expand ``grid`` (dotted key -> list of values) times ``seeds`` into run settings."""
    grid = sec.get("grid") or {}
    seeds = sec.get("seeds")
    if seeds is None:
        seeds = [base.get("seed", 0) + i for i in range(int(sec.get("runs", 1)))]
    keys = sorted(grid)
    jobs = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        for seed in seeds:
            d = copy.deepcopy(base)
            for key, value in zip(keys, combo):
                _set_path(d, key, value)
            d["seed"] = int(seed)
            jobs.append(d)
    return jobs


def _sweep_job(args):
    idx, settings, out = args
    job_dir = Path(out) / f"job_{idx:04d}"
    job_dir.mkdir()
    try:
        report = execute_run(settings, job_dir)
    except StreamKMeansError as exc:
        report = {"status": "config_error", "error": str(exc)}
    return idx, settings, report


def cmd_sweep(args) -> int:
    doc = load_config(args.config)
    sec = _section(doc, "sweep", ("grid", "seeds", "runs"))
    base = run_settings(doc, args)
    jobs = sweep_jobs(base, sec)
    for j in jobs:
        RunConfig.from_dict(j)
    out = prepare_out(args.out, args.force)
    work = [(i, j, str(out)) for i, j in enumerate(jobs)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_sweep_job, work))
    else:
        results = [_sweep_job(w) for w in work]
    results.sort(key=lambda r: r[0])
    rows = []
    for idx, settings, rep in results:
        v = rep.get("verdict") or {}
        rows.append({
            "job": idx,
            "seed": settings["seed"],
            "status": rep["status"],
            "final_gradnorm": v.get("final_gradnorm"),
            "final_cost": v.get("final_cost"),
            "distance_to_stationary": v.get("distance_to_stationary"),
            "verdict_passed": v.get("passed"),
        })
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["job"], lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: "" if v is None else v for k, v in r.items()})
    write_json(out / "report.json", _finite({"jobs": rows, "grid": sec.get("grid") or {}}))
    worst = max((_status_code(r["status"]) if r["status"] != "config_error" else EXIT_CONFIG for r in rows),
                default=EXIT_OK)
    print(f"{out}: {len(rows)} jobs, " + ", ".join(
        f"{s}={sum(r['status'] == s for r in rows)}" for s in sorted({r['status'] for r in rows})))
    return worst


# -- plot ---------------------------------------------------------------------


def read_trace_csv(path: Path) -> dict:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None:
            return {}
        rows = list(rd)
    cols = {h: np.array([float(r[i]) if r[i] != "" else np.nan for r in rows]) for i, h in enumerate(header)}
    return cols


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("svg")
    matplotlib.rcParams["svg.hashsalt"] = "streamkmeans"  # stable element ids
    import matplotlib.pyplot as plt

    run_dir = Path(args.run_dir)
    trace_path = run_dir / "trace.csv" if run_dir.is_dir() else run_dir
    if not trace_path.exists():
        raise UsageError(f"no trace at {trace_path}")
    cols = read_trace_csv(trace_path)
    if not cols or cols["n"].size == 0:
        print(f"{trace_path}: no rows", file=sys.stderr)
        return EXIT_CONFIG
    summary_path = trace_path.parent / "summary.json"
    meta = {}
    if summary_path.exists():
        with open(summary_path) as fh:
            s = json.load(fh)
        meta = {"config_hash": s.get("config_hash", ""), "seed": str(s.get("seed", ""))}
    out = Path(args.out) if args.out else trace_path.parent
    out.mkdir(parents=True, exist_ok=True)
    target = out / "trace.svg"
    if target.exists() and not args.force:
        raise UsageError(f"{target} exists; pass --force to overwrite")
    n = cols["n"]
    k = sum(1 for h in cols if h.startswith("gradnorm_"))
    fig, axes = plt.subplots(3, 1, figsize=(7, 9), sharex=True)
    axes[0].plot(n, cols["f"], lw=1)
    axes[0].set_ylabel("cost f")
    for i in range(k):
        axes[1].semilogy(n, cols[f"gradnorm_{i}"], lw=1, label=f"center {i}")
    axes[1].set_ylabel("gradient norm")
    axes[1].legend(fontsize="small")
    for i in range(k):
        axes[2].plot(n, cols[f"Phat_{i}"], lw=1, label=f"Phat_{i}")
    axes[2].set_ylabel("mass estimate")
    axes[2].set_xlabel("n")
    axes[2].legend(fontsize="small")
    fig.tight_layout()
    md = {"Title": "streamkmeans trace", "Description": json.dumps(meta, sort_keys=True), "Date": None}
    fig.savefig(target, format="svg", metadata=md)
    plt.close(fig)
    print(target)
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="streamkmeans", description="Streaming k-means experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="print full JSON reports and debug logs")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True, out=True):
        if config:
            sp.add_argument("--config", metavar="PATH", help="YAML config file")
        if out:
            sp.add_argument("--out", metavar="DIR", help="output directory")
        sp.add_argument("--seed", type=int, metavar="U64", help=f"seed (overrides ${SEED_ENV} and the config)")
        sp.add_argument("--jobs", type=int, default=1, metavar="N", help="parallel worker processes")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
        sp.add_argument("--stride", type=int, metavar="N", help="audit stride")

    sp = sub.add_parser("run", help="run one streaming k-means configuration")
    common(sp)
    sp.set_defaults(func=cmd_run)
    sp = sub.add_parser("check-gradient", help="analytic gradient vs finite differences")
    common(sp)
    sp.set_defaults(func=cmd_check_gradient)
    sp = sub.add_parser("check-bounds", help="horizon, harmonic, surrogate and displacement bounds")
    common(sp)
    sp.set_defaults(func=cmd_check_bounds)
    sp = sub.add_parser("concentration", help="mass-estimate concentration over seeded runs")
    common(sp)
    sp.set_defaults(func=cmd_concentration)
    sp = sub.add_parser("sweep", help="grid of runs, in parallel")
    common(sp)
    sp.set_defaults(func=cmd_sweep)
    sp = sub.add_parser("plot", help="SVG of cost, gradient norms and mass estimates")
    sp.add_argument("run_dir", help="run directory or trace.csv")
    common(sp, config=False)
    sp.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.stride is not None and args.stride < 1:
        print("error: --stride must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (UsageError, ConfigError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
