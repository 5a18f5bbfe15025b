"""Command line front end: simulate, sweep, bc-check, analyze, selftest.

Configuration files hold ``key = value`` lines.  Recognised keys:

    model        beta, lambda, alpha, gamma, kappa, delta, n
    integrator   T, dt, exchange (event | tau-leap), bath (true | false),
                 sample_dt, window_buffer
    sweep axes   n_grid, kappa_grid, delta_grid, eps_grid, ell_grid
    observables  H (comma separated test-function ids), dynkin (true | false)
    run          replicas, seed, checkpoint_every

Every output directory receives a ``summary.json`` carrying the SHA-256 hash
of the resolved configuration.  Replica ``r`` of grid cell ``g`` uses
``RandomStreams(seed, (stage, g, r))``; reruns with the same seed write the
same bytes.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (IntegratorConfig, RandomStreams, load_checkpoint, resume, run)
from .experiments import CRITERIA, map_jobs, regime_label, run_criterion
from .invariants import run_all
from .field import FieldObserver, MomentsObserver, local_boundary_observer
from .model import ModelParams, ParameterError, derive_params, parse_keyvalue
from .stats import mean_se, scaling_report, write_csv, write_json
from .testfn import get_test_function

logger = logging.getLogger("bclab")

MODEL_KEYS = {"beta", "lambda", "alpha", "gamma", "kappa", "delta", "n"}
INTEGRATOR_KEYS = {"T": "t_macro_max", "dt": "dt_micro", "exchange": "exchange_mode", "bath": "bath_enabled",
                   "sample_dt": "sample_dt", "window_buffer": "window_buffer"}
AXIS_KEYS = {"n_grid": "n", "kappa_grid": "kappa", "delta_grid": "delta", "eps_grid": "eps", "ell_grid": "ell"}
RUN_KEYS = {"replicas", "seed", "checkpoint_every", "H", "dynkin"}

DEFAULT_AXES = {"n": [16, 32, 64], "kappa": [0.5, 1.0], "delta": [-2.0, 0.0, 2.0], "eps": [0.25, 0.125, 0.0625],
                "ell": [2]}


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending field path."""


@dataclass
class ExperimentConfig:
    params: ModelParams = field(default_factory=ModelParams)
    integrator: IntegratorConfig = field(default_factory=lambda: IntegratorConfig(t_macro_max=0.5))
    axes: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_AXES.items()})
    test_functions: list = field(default_factory=lambda: ["sdir:odd-gauss:1"])
    dynkin: bool = True
    replicas: int = 16
    seed: int = 0
    checkpoint_every: int = 0

    def as_dict(self) -> dict:
        return {"model": self.params.as_dict(), "integrator": self.integrator.as_dict(),
                "axes": self.axes, "test_functions": list(self.test_functions), "dynkin": self.dynkin,
                "replicas": self.replicas, "seed": self.seed, "checkpoint_every": self.checkpoint_every}

    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _as_list(v) -> list:
    return list(v) if isinstance(v, list) else [v]


def config_from_values(values: dict) -> ExperimentConfig:
    """Build and validate a configuration from parsed ``key=value`` entries."""
    unknown = set(values) - MODEL_KEYS - set(INTEGRATOR_KEYS) - set(AXIS_KEYS) - RUN_KEYS
    if unknown:
        raise ConfigError(f"config.{sorted(unknown)[0]}: unknown key")
    try:
        params = ModelParams.from_dict({k: values[k] for k in MODEL_KEYS if k in values})
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"model: {exc}") from None
    integ = {INTEGRATOR_KEYS[k]: values[k] for k in INTEGRATOR_KEYS if k in values}
    integ.setdefault("t_macro_max", 0.5)
    try:
        integrator = IntegratorConfig(**integ)
    except (ParameterError, TypeError) as exc:
        raise ConfigError(f"integrator: {exc}") from None
    axes = {k: list(v) for k, v in DEFAULT_AXES.items()}
    for key, name in AXIS_KEYS.items():
        if key in values:
            axes[name] = _as_list(values[key])
            if not axes[name]:
                raise ConfigError(f"axes.{key}: must be nonempty")
            if not all(isinstance(x, (int, float)) for x in axes[name]):
                raise ConfigError(f"axes.{key}: entries must be numbers")
    if any(int(n) != n or n < 2 for n in axes["n"]):
        raise ConfigError("axes.n_grid: entries must be integers >= 2")
    if any(k < 0.5 for k in axes["kappa"]):
        raise ConfigError("axes.kappa_grid: entries must be >= 1/2")
    if any(int(e) != e or e < 1 for e in axes["ell"]):
        raise ConfigError("axes.ell_grid: entries must be positive integers")
    axes["n"] = [int(n) for n in axes["n"]]
    axes["ell"] = [int(e) for e in axes["ell"]]
    tfs = [str(x) for x in _as_list(values.get("H", ["sdir:odd-gauss:1"]))]
    for ident in tfs:
        try:
            get_test_function(ident)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"observables.H: {exc}") from None
    cfg = ExperimentConfig(params, integrator, axes, tfs, bool(values.get("dynkin", True)),
                           int(values.get("replicas", 16)), int(values.get("seed", 0)),
                           int(values.get("checkpoint_every", 0)))
    if cfg.replicas < 1:
        raise ConfigError("run.replicas: must be positive")
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("run.seed: must be an unsigned 64-bit integer")
    if cfg.checkpoint_every < 0:
        raise ConfigError("run.checkpoint_every: must be nonnegative")
    return cfg


def load_config(path=None, seed: int | None = None, replicas: int | None = None) -> ExperimentConfig:
    values = parse_keyvalue(Path(path).read_text()) if path else {}
    if seed is not None:
        values["seed"] = seed
    if replicas is not None:
        values["replicas"] = replicas
    return config_from_values(values)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, default=_plain)


def _plain(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serialisable: {type(x)!r}")


def _summary(out: Path, cfg: ExperimentConfig, command: str, body: dict):
    doc = {"command": command, "config": cfg.as_dict(), "config_hash": cfg.hash(), "version": __version__}
    doc.update(body)
    write_json(doc, out / "summary.json")


# ---------------------------------------------------------------- simulate


def _observers(idents, dynkin):
    obs = [FieldObserver(get_test_function(i), name=i, dynkin=dynkin) for i in idents]
    return obs + [MomentsObserver()]


def _simulate_replica(job):
    p, integ, seed, r, idents, dynkin, out, every, want_resume = job
    ckpt = out / "checkpoints" / f"replica_{r:04d}.json"
    done = out / "replicas" / f"replica_{r:04d}.json"
    if want_resume and done.exists():
        return json.loads(done.read_text())
    obs = _observers(idents, dynkin)
    if want_resume and ckpt.exists():
        logger.info("replica %d: resuming from %s", r, ckpt)
        tr = resume(ckpt, obs, checkpoint_every=every)
    else:
        tr = run(p, integ, obs, rng=RandomStreams(seed, (0, 0, r)),
                 checkpoint_path=ckpt if every else None, checkpoint_every=every)
    result = {"replica": r, "times": tr.times, "records": tr.records,
              "log": {"exchanges": tr.log.exchange_count, "bath_steps": tr.log.bath_steps,
                      "bath_accepted": tr.log.bath_accepted}}
    result = json.loads(_dump(result))
    done.write_text(_dump(result))
    if ckpt.exists():
        ckpt.unlink()
    return result


def cmd_simulate(cfg: ExperimentConfig, out, resume_run: bool = False) -> dict:
    """Replica trajectories: JSONL observations, a CSV of final values, JSON summary."""
    out = Path(out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "replicas").mkdir(parents=True, exist_ok=True)
    if not resume_run:
        for stale in list((out / "replicas").glob("*.json")) + list((out / "checkpoints").glob("*.json")):
            stale.unlink()
    jobs = [(cfg.params, cfg.integrator, cfg.seed, r, cfg.test_functions, cfg.dynkin, out, cfg.checkpoint_every,
             resume_run) for r in range(cfg.replicas)]
    results = map_jobs(_simulate_replica, jobs)
    with (out / "observations.jsonl").open("w") as fh:
        for res in results:
            for name in sorted(res["records"]):
                for rec in res["records"][name]:
                    fh.write(_dump({"replica": res["replica"], "observer": name, **rec}) + "\n")
    rows = []
    for res in results:
        for ident in cfg.test_functions:
            last = res["records"][ident][-1]
            row = {"replica": res["replica"], "H": ident, "t": last["t"], "Y": last["Y"]}
            if cfg.dynkin:
                row.update({"M": last["M"], "QV": last["QV"], "RQV": last["RQV"]})
            rows.append(row)
    write_csv(rows, out / "report.csv")
    finals = defaultdict(list)
    for row in rows:
        finals[row["H"]].append(row)
    body = {"replicas": cfg.replicas, "final": {}}
    for ident, rs in finals.items():
        entry = {}
        for key in ("Y", "M", "QV"):
            if key in rs[0] and len(rs) > 1:
                m, s = mean_se([r[key] for r in rs])
                entry[key] = {"mean": m, "se": s}
        body["final"][ident] = entry
    _summary(out, cfg, "simulate", body)
    return body


# ---------------------------------------------------------------- sweep and boundary check


def _cell_job(job):
    p, integ, seed, key, ell = job
    obs = [local_boundary_observer([ell], p.n), MomentsObserver()]
    tr = run(p, integ, obs, rng=RandomStreams(seed, key))
    rec = tr.records["moments"][-1]
    return float(tr.records["bc"][-1]["sup_sq"][0]), rec["mean"], rec["m2"]


def _boundary_samples(cfg: ExperimentConfig, kappa: float, delta: float, stage: int, cell: int):
    ell = cfg.axes["ell"][0]
    per_n, moments = [], []
    for ni, n in enumerate(cfg.axes["n"]):
        p = cfg.params.with_(kappa=kappa, delta=delta, n=n)
        jobs = [(p, cfg.integrator, cfg.seed, (stage, 100 * cell + ni, r), ell) for r in range(cfg.replicas)]
        out = map_jobs(_cell_job, jobs)
        per_n.append(np.array([o[0] for o in out]))
        moments.append((p, np.array([o[1] for o in out]), np.array([o[2] for o in out])))
    return per_n, moments


def cmd_bc_check(cfg: ExperimentConfig, out):
    """Slope in n of the boundary functional at the configured (kappa, delta)."""
    out = Path(out)
    p = cfg.params
    samples, _ = _boundary_samples(cfg, p.kappa, p.delta, 2, 0)
    rep = scaling_report(f"boundary:kappa={p.kappa:g},delta={p.delta:g}", cfg.axes["n"], samples,
                         target=p.delta - 1.0, ell=cfg.axes["ell"][0])
    write_csv(rep.rows(), out / "bc_check.csv")
    _summary(out, cfg, "bc-check", {"report": rep.as_dict(), "regime": regime_label(p.kappa, p.delta)})
    return rep


def cmd_sweep(cfg: ExperimentConfig, out) -> list:
    """One row per (kappa, delta) cell: expected regime and the empirical boundary verdict."""
    out = Path(out)
    rows = []
    cell = 0
    for kappa in cfg.axes["kappa"]:
        for delta in cfg.axes["delta"]:
            samples, moments = _boundary_samples(cfg, kappa, delta, 1, cell)
            cell += 1
            rep = scaling_report("boundary", cfg.axes["n"], samples, target=delta - 1.0)
            decays = rep.ci[1] < 0.0
            expects_bc = delta < 1
            worst = 0.0
            if cfg.replicas > 1:
                for p, means, m2 in moments:
                    d = derive_params(p)
                    for arr, target in ((means, d.rho), (m2, d.sigma2)):
                        m, s = mean_se(arr)
                        worst = max(worst, abs(m - target) / s if s > 0 else 0.0)
            rows.append({"kappa": kappa, "delta": delta, "regime": regime_label(kappa, delta),
                         "bc_expected": expects_bc, "bc_slope": rep.slope, "bc_ci_lo": rep.ci[0],
                         "bc_ci_hi": rep.ci[1], "bc_decay_observed": decays,
                         "bc_agrees": decays == expects_bc, "gibbs_max_z": worst})
    write_csv(rows, out / "sweep.csv")
    _summary(out, cfg, "sweep", {"cells": rows})
    return rows


# ---------------------------------------------------------------- analyze


def cmd_analyze(paths, out) -> list:
    """Mean and standard error over replicas of every numeric record field, per observer and time."""
    out = Path(out)
    groups = defaultdict(list)
    for path in paths:
        with Path(path).open() as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                name, t = rec.get("observer"), rec.get("t")
                for key, val in rec.items():
                    if key in ("observer", "t", "replica"):
                        continue
                    if isinstance(val, (int, float)) and not isinstance(val, bool):
                        groups[(name, t, key)].append(float(val))
                    elif isinstance(val, dict):
                        for sub, v in val.items():
                            if isinstance(v, (int, float)) and not isinstance(v, bool):
                                groups[(name, t, f"{key}.{sub}")].append(float(v))
    rows = []
    for (name, t, key) in sorted(groups, key=lambda g: (str(g[0]), g[1], g[2])):
        vals = groups[(name, t, key)]
        m = float(np.mean(vals))
        s = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else float("nan")
        rows.append({"observer": name, "t": t, "field": key, "count": len(vals), "mean": m, "se": s})
    write_csv(rows, out / "analysis.csv")
    write_json({"command": "analyze", "inputs": [str(p) for p in paths], "rows": len(rows)},
               out / "summary.json")
    return rows


# ---------------------------------------------------------------- selftest


def cmd_selftest(out=None, criteria=(), seed: int = 0) -> dict:
    """Exact invariants, plus any acceptance protocols named in ``criteria``."""
    results = run_all()
    for line in results:
        print(f"{'PASS' if line['pass'] else 'FAIL'} {line['check']}: {line['info']}")
    crit = []
    for name in criteria:
        res = run_criterion(name, seed=seed)
        print(res.line())
        for d in res.details:
            print(f"    {d}")
        crit.append(res.as_dict())
    bundle = {"checks": results, "criteria": crit,
              "pass": all(r["pass"] for r in results) and all(c["passed"] for c in crit)}
    if out is not None:
        write_json(bundle, Path(out) / "selftest.json")
    return bundle


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bclab", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"bclab {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", type=Path, help="key=value configuration file")
            p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
            p.add_argument("--replicas", type=int, help="replicas per grid point")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    p = sub.add_parser("simulate", help="run replicas and store trajectories")
    common(p)
    p.add_argument("--resume", action="store_true", help="continue from checkpoints and finished replicas")
    p = sub.add_parser("sweep", help="phase-diagram sweep over kappa and delta")
    common(p)
    p = sub.add_parser("bc-check", help="boundary functional scaling at one (kappa, delta)")
    common(p)
    p = sub.add_parser("analyze", help="summarise JSONL observation files")
    p.add_argument("paths", nargs="+", type=Path)
    common(p, config=False)
    p = sub.add_parser("selftest", help="fast invariant checks and optional acceptance protocols")
    common(p, config=False)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--criteria", default="", help=f"comma separated subset of {', '.join(CRITERIA)} or 'all'")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "analyze":
            rows = cmd_analyze(args.paths, args.out)
            print(f"{len(rows)} rows written to {args.out / 'analysis.csv'}")
            return 0
        if args.command == "selftest":
            names = list(CRITERIA) if args.criteria == "all" else [c for c in args.criteria.split(",") if c]
            unknown = [c for c in names if c not in CRITERIA]
            if unknown:
                raise ConfigError(f"criteria: unknown protocol {unknown[0]!r}")
            bundle = cmd_selftest(args.out, names, args.seed)
            return 0 if bundle["pass"] else 1
        cfg = load_config(args.config, args.seed, args.replicas)
        if args.command == "simulate":
            body = cmd_simulate(cfg, args.out, args.resume)
            print(f"{body['replicas']} replicas written to {args.out}")
        elif args.command == "sweep":
            for row in cmd_sweep(cfg, args.out):
                print(f"kappa={row['kappa']:g} delta={row['delta']:g} {row['regime']}: "
                      f"bc slope {row['bc_slope']:+.2f} [{row['bc_ci_lo']:+.2f}, {row['bc_ci_hi']:+.2f}] "
                      f"agrees={row['bc_agrees']}")
        elif args.command == "bc-check":
            rep = cmd_bc_check(cfg, args.out)
            print(rep.summary(), "PASS" if rep.verdict else "FAIL")
        return 0
    except (ConfigError, ParameterError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
