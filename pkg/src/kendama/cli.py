"""Command-line entry point: ``kendama <subcommand> [--config PATH] [--out DIR] ...``.

Exit codes: 0 success, 1 configuration or I/O error, 2 solver non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import gzip
import io
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .controller import build_tightened_sets
from .noise import ConfidenceSupport, InsufficientSamples, sample_noise
from .report import ReportError, render_report
from .sets import NoConvergence
from .sim import _ROLLOUT, RolloutRecord, Trace, _rng, fit_support_with_escalation, run_rollout, run_sweep
from .swingup import InfeasibleBounds, NoRelease, release_consistency, rollout_openloop, solve_swingup, verify_terminal

log = logging.getLogger("kendama")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2
_CALIBRATE = 5  # seed stream tag for calibrate-noise


class SolverFailure(RuntimeError):
    pass


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to lists, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, doc: dict, stamp: bool):
    doc = dict(doc)
    if stamp:
        doc["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    path.write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v) -> str:
    return repr(float(v))


def _read_samples(path: str) -> np.ndarray:
    try:
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
    except OSError as exc:
        raise ConfigError(f"cannot read samples {path}: {exc}") from exc
    if not rows or [c.strip() for c in rows[0][:2]] != ["v_x", "v_z"]:
        raise ConfigError(f"{path}: expected a header starting with v_x,v_z")
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=float)
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"{path}: bad sample row: {exc}") from exc
    return data.reshape(-1, 2)


def _read_json(path: str, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed {what} JSON in {path}: {exc}") from exc


# ---------------------------------------------------------------- commands


def cmd_plan_swingup(cfg: RunConfig, out: Path, stamp: bool) -> int:
    params = cfg.physical.build()
    prob = cfg.swingup.problem(params)
    try:
        sol = solve_swingup(prob, cfg.swingup.options())
    except InfeasibleBounds as exc:
        raise SolverFailure(str(exc)) from exc

    Ts = prob.Ts
    _write_csv(out / "F_star.csv", ["t", "F_x", "F_z"], ([_num(k * Ts), _num(a), _num(b)] for k, (a, b) in enumerate(sol.F_star)))
    _write_csv(
        out / "trajectory.csv",
        ["t", "x", "z", "phi", "x_dot", "z_dot", "phi_dot"],
        ([_num(k * Ts), *map(_num, row)] for k, row in enumerate(sol.x_traj)),
    )
    x_N = sol.x_traj[-1]
    _, _, vanish = verify_terminal(x_N, params)
    rel = release_consistency(params)
    manifest = {
        "converged": sol.converged,
        "cost": sol.cost,
        "terminal_residual": sol.terminal_residual,
        "kkt_residual": sol.kkt_residual,
        "bound_violation": sol.bound_violation,
        "outer_iterations": sol.outer_iterations,
        "N": prob.N,
        "Ts": Ts,
        "terminal_state": x_N,
        "gap_vanish_time": vanish,
        "release_check": rel,
    }
    try:
        nominal = rollout_openloop(sol.F_star, prob.x_init, params, Ts)
        pert = rollout_openloop(sol.F_star, prob.x_init, params, Ts, cfg.swingup.perturbation_for(cfg.seed))
        manifest["release_nominal"] = {
            "time": nominal.release_time, "state": nominal.release_state, "e0": nominal.e0,
        }
        manifest["release_perturbed"] = {
            "time": pert.release_time, "state": pert.release_state, "e0": pert.e0,
        }
    except NoRelease as exc:
        manifest["release_error"] = str(exc)
    _write_json(out / "manifest.json", manifest, stamp)
    if not sol.converged:
        print(f"solver failure: swing-up did not converge (terminal residual {sol.terminal_residual:.3e})", file=sys.stderr)
        return EXIT_SOLVER
    log.info("swing-up converged: cost %.4f, terminal residual %.2e", sol.cost, sol.terminal_residual)
    return EXIT_OK


def cmd_calibrate_noise(cfg: RunConfig, out: Path, stamp: bool) -> int:
    samples = sample_noise(cfg.noise.build(), _rng(cfg.seed, _CALIBRATE), cfg.noise.n)
    _write_csv(out / "samples.csv", ["v_x", "v_z"], ([_num(a), _num(b)] for a, b in samples))
    log.info("wrote %d samples", len(samples))
    return EXIT_OK


def _learn(cfg: RunConfig):
    exp = cfg.experiment_config()
    if cfg.paths.samples:
        samples = _read_samples(cfg.paths.samples)
    else:
        samples = sample_noise(exp.noise, _rng(cfg.seed, _CALIBRATE), cfg.noise.n)
    try:
        return exp, fit_support_with_escalation(exp, samples)
    except InsufficientSamples as exc:
        raise ConfigError(str(exc)) from exc


def cmd_learn_support(cfg: RunConfig, out: Path, stamp: bool) -> int:
    _, (cs, _, ts) = _learn(cfg)
    doc = cs.to_dict()
    doc["tightened_sets_empty"] = ts.empty
    doc["requested_epsilon"] = cfg.noise.epsilon
    _write_json(out / "support.json", doc, stamp)
    if ts.empty:
        log.warning("tightened sets are empty even at eps=%.3g; roll-outs will end in trial failure P2", cs.epsilon)
    return EXIT_OK


def cmd_rollout(cfg: RunConfig, out: Path, stamp: bool) -> int:
    exp = cfg.experiment_config()
    if cfg.paths.support:
        try:
            cs = ConfidenceSupport.from_dict(_read_json(cfg.paths.support, "support"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid support file: {exc}") from exc
        ccfg = exp.controller_config(cs.box)
        ts = build_tightened_sets(ccfg)
    else:
        exp, (cs, ccfg, ts) = _learn(cfg)
    rec = run_rollout(exp, ccfg, ts, (cfg.seed, _ROLLOUT, cs.n, 0), keep_trace=True, n=cs.n, epsilon=cs.epsilon)
    _write_csv(out / "trace.csv", Trace.header, _trace_rows(rec.trace))
    doc = {
        "n": rec.n, "seed": rec.seed, "e0": rec.e0, "outcome": rec.outcome.value, "category": rec.category,
        "hit": rec.hit, "hit_center": rec.hit_center, "impact_step": rec.impact_step,
        "impact_rel_vz": rec.impact_rel_vz, "catch": rec.catch, "epsilon": rec.epsilon,
    }
    doc["vhat"] = {"lo": cs.box.lo, "hi": cs.box.hi}
    _write_json(out / "record.json", doc, stamp)
    log.info("roll-out outcome: %s", rec.category)
    return EXIT_OK


def _trace_rows(trace: Trace):
    for row in trace.rows():
        yield [row[0], *(_num(v) for v in row[1:-1]), row[-1]]


def cmd_sweep(cfg: RunConfig, out: Path, stamp: bool) -> int:
    exp = cfg.experiment_config()
    keep = cfg.experiment.keep_traces
    res = run_sweep(exp, keep_traces=keep)
    _write_csv(out / "records.csv", RolloutRecord.csv_header, (r.csv_row() for r in res.records))
    summary = res.to_dict()
    summary["config"] = cfg.model_dump(mode="json")
    _write_json(out / "summary.json", summary, stamp)
    if keep:
        tdir = out / "traces"
        tdir.mkdir(exist_ok=True)
        for r in res.records:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(Trace.header)
            w.writerows(_trace_rows(r.trace))
            # mtime pinned so reruns are byte-identical
            with gzip.GzipFile(tdir / f"n{r.n}_{r.index:05d}.csv.gz", "wb", mtime=0) as f:
                f.write(buf.getvalue().encode())
    return EXIT_OK


def cmd_report(cfg: RunConfig, out: Path, stamp: bool) -> int:
    path = cfg.paths.summary or str(out / "summary.json")
    try:
        paths = render_report(_read_json(path, "summary"), out)
    except ReportError as exc:
        raise ConfigError(str(exc)) from exc
    log.info("wrote %s", ", ".join(p.name for p in paths))
    return EXIT_OK


COMMANDS = {
    "plan-swingup": (cmd_plan_swingup, "solve the open-loop swing-up and write F*, trajectory and manifest"),
    "calibrate-noise": (cmd_calibrate_noise, "draw synthetic camera-noise samples"),
    "learn-support": (cmd_learn_support, "fit the confidence support V_hat(n) from samples"),
    "rollout": (cmd_rollout, "run one closed-loop catch roll-out"),
    "sweep": (cmd_sweep, "run the Monte Carlo sweep over sample sizes"),
    "report": (cmd_report, "render SVG charts from a sweep summary"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kendama", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="JSON run config (defaults apply when omitted)")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--no-timestamp", action="store_true", help="omit generated_at from JSON outputs")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    fn = COMMANDS[args.command][0]
    try:
        if args.seed is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = load_config(args.config).with_seed(args.seed)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return fn(cfg, out, not args.no_timestamp)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, NoConvergence) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
