"""
``dapo`` command-line interface.

Subcommands: ``run``, ``sweep``, ``compare``, ``verify`` and ``gen-mdp``.
Exit codes: 0 success, 1 a verified inequality failed, 2 configuration
error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import config as C
from . import theory as T
from .engine import IterationLog, run
from .errors import ConfigError, DapoError
from .mdp import gridworld, random_mdp, save_mdp
from .mirror_maps import MirrorMap

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
VERIFY_SELECTORS = ("all", "conjugate", *T.campaign_names())


class _Out:
    def __init__(self, quiet: bool):
        self.quiet = quiet

    def __call__(self, msg: str) -> None:
        if not self.quiet:
            print(msg, flush=True)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x) -> str:
    return format(float(x), ".17g")


def confidence(samples: np.ndarray, axis: int = 0):
    """Mean and 95% t-interval half-width along ``axis``; the half-width is None for one sample."""
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[axis]
    mean = samples.mean(axis=axis)
    if n < 2:
        return mean, None
    half = stats.t.ppf(0.975, n - 1) * samples.std(axis=axis, ddof=1) / np.sqrt(n)
    return mean, half


def aggregate(logs: list[IterationLog]) -> dict:
    gaps = np.stack([lg.column("value_gap") for lg in logs])
    mean, half = confidence(gaps)
    doc = {"n_runs": len(logs), "k": [int(r["k"]) for r in logs[0].records], "value_gap_mean": mean.tolist()}
    if half is None:
        doc.update(value_gap_ci95_low=None, value_gap_ci95_high=None, value_gap_ci95_half_width=None)
    else:
        doc.update(value_gap_ci95_low=(mean - half).tolist(), value_gap_ci95_high=(mean + half).tolist(),
                   value_gap_ci95_half_width=half.tolist())
    fm, fh = confidence(gaps[:, -1])
    doc["final_gap_mean"] = float(fm)
    doc["final_gap_ci95_half_width"] = None if fh is None else float(fh)
    return doc


def _execute(exp: C.ExperimentConfig, out_dir: Path, say) -> dict:
    """All repetitions of one configuration; returns the aggregate."""
    mdp, feats = exp.mdp.build(exp.seed, exp.base_dir)
    feats = feats if exp.run.approx == "mlp" else None
    logs = []
    for rep in range(exp.repetitions):
        cfg = replace(exp.run, seed=exp.rep_seed(rep))
        log = run(mdp, cfg, state_features=feats)
        log.save(out_dir / f"run_{rep}.csv", out_dir / f"run_{rep}.json")
        say(f"run {rep}: final gap {log.records[-1]['value_gap']:.6g} after {cfg.iterations} iterations")
        logs.append(log)
    agg = aggregate(logs)
    _write(out_dir / "aggregate.json", json.dumps(agg, indent=1, allow_nan=False) + "\n")
    return agg


# -- subcommands --------------------------------------------------------------------


def cmd_run(args, say) -> int:
    exp = _load(args)
    out = Path(exp.output_dir)
    _write(out / "config.toml", exp.to_toml())
    agg = _execute(exp, out, say)
    say(f"wrote {exp.repetitions} run(s) to {out}; mean final gap {agg['final_gap_mean']:.6g}")
    return EXIT_OK


def _apply_point(exp: C.ExperimentConfig, point: dict) -> C.ExperimentConfig:
    d = exp.to_dict()
    d.pop("sweep", None)
    run_d = d["run"]
    for key, value in point.items():
        if key == "eta":
            run_d["schedule"] = {**run_d.get("schedule", {}), "eta0": value}
        else:
            run_d[key] = value
    return C.from_dict(d, exp.base_dir)


def sweep_points(sweep: dict) -> list[dict]:
    keys = [k for k in C.SWEEP_KEYS if k in sweep]
    if not keys or any(len(sweep[k]) == 0 for k in keys):
        raise ConfigError("sweep: needs at least one key with a non-empty list of values")
    return [dict(zip(keys, values)) for values in itertools.product(*(sweep[k] for k in keys))]


def _point_name(i: int, point: dict) -> str:
    return f"p{i:03d}_" + "_".join(f"{k}-{v}" for k, v in point.items())


def cmd_sweep(args, say) -> int:
    exp = _load(args)
    points = sweep_points(exp.sweep)
    out = Path(exp.output_dir)
    _write(out / "config.toml", exp.to_toml())

    def one(item):
        i, point = item
        name = _point_name(i, point)
        try:
            sub = _apply_point(exp, point)
            agg = _execute(sub, out / name, lambda m: None)
            return name, point, "ok", agg["final_gap_mean"], agg["final_gap_ci95_half_width"]
        except DapoError as exc:
            return name, point, f"failed: {exc}", None, None

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(one, enumerate(points)))
    keys = list(points[0])
    rows = []
    for name, point, status, mean, half in results:
        say(f"{name}: {status}" + ("" if mean is None else f", final gap {mean:.6g}"))
        rows.append([name, *(point[k] for k in keys), status, "" if mean is None else _num(mean),
                     "" if half is None else _num(half)])
    _write(out / "summary.csv", _csv_text(["point", *keys, "status", "final_gap_mean", "final_gap_ci95"], rows))
    failed = sum(r[2] != "ok" for r in results)
    say(f"{len(points) - failed}/{len(points)} grid points completed; summary in {out / 'summary.csv'}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_compare(args, say) -> int:
    exp = _load(args)
    cmp = exp.compare
    algorithms = cmp.get("algorithms", [])
    if len(algorithms) < 2:
        raise ConfigError("compare.algorithms: list at least two algorithms")
    steps = cmp.get("actor_steps", [1, 10])
    n_seeds = int(cmp.get("seeds", exp.repetitions))
    if n_seeds < 1:
        raise ConfigError("compare.seeds: must be >= 1")
    overrides = cmp.get("overrides", {})
    cfgs = {}
    for alg, m in itertools.product(algorithms, steps):
        try:
            cfg = replace(exp.run, algorithm=alg, actor_steps=m)
            over = dict(overrides.get(alg, {}))
            if "eta" in over:
                cfg = replace(cfg, schedule=replace(cfg.schedule, eta0=over.pop("eta")))
            cfgs[alg, m] = replace(cfg, **over)
        except ConfigError as exc:
            raise ConfigError(f"compare ({alg}, m={m}): {exc}") from exc
    out = Path(exp.output_dir)
    _write(out / "config.toml", exp.to_toml())

    def one(i):
        seed = exp.rep_seed(i)
        mdp, feats = exp.mdp.build(seed, exp.base_dir)
        res = {}
        for (alg, m), cfg in cfgs.items():
            use = feats if cfg.approx == "mlp" else None
            log = run(mdp, replace(cfg, seed=seed), state_features=use)
            log.save(out / f"{alg}_m{m}_seed{i}.csv")
            res[alg, m] = log.column("value_gap")
        return res

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        per_seed = list(pool.map(one, range(n_seeds)))
    long_rows, summary = [], []
    for (alg, m) in cfgs:
        finals = []
        for i, res in enumerate(per_seed):
            gaps = res[alg, m]
            long_rows.extend([alg, m, i, k, _num(g)] for k, g in enumerate(gaps))
            finals.append(gaps[-1])
        med = float(np.median(finals))
        summary.append([alg, m, _num(med), _num(np.mean(finals))])
        say(f"{alg} m={m}: median final gap {med:.6g} over {n_seeds} seed(s)")
    _write(out / "compare.csv", _csv_text(["algorithm", "m", "seed", "k", "value_gap"], long_rows))
    _write(out / "compare_summary.csv",
           _csv_text(["algorithm", "m", "median_final_gap", "mean_final_gap"], summary))
    return EXIT_OK


def cmd_verify(args, say) -> int:
    names = T.campaign_names() if args.selector == "all" else [args.selector]
    conj = args.selector in ("all", "conjugate")
    if args.selector == "conjugate":
        names = []
    seed = 0 if args.seed is None else args.seed
    wdir = Path(args.out or ".") / "witnesses"
    failed = False
    if conj:
        for key in ("l2", "negent_orthant", "negent_simplex"):
            rep = T.check_conjugate_identities(MirrorMap.from_key(key), args.samples, seed)
            ok = rep.holds()
            say(f"conjugate[{key}]: inverse err {rep.inverse_err:.3e}, shift err {rep.shift_err:.3e} "
                f"[{'ok' if ok else 'VIOLATED'}]")
            if not ok:
                failed = True
                path = wdir / f"conjugate_{key}_seed{seed}.json"
                _write(path, json.dumps(rep.__dict__, indent=2) + "\n")
                print(f"witness: {path}", file=sys.stderr)
    for name in names:
        res = T.run_campaign(name, args.samples, seed, witness_dir=wdir, l2_scale=args.l2_scale)
        say(res.summary())
        if not res.holds:
            failed = True
            for path in res.witnesses[:1]:
                print(f"{name}: {res.violations} violation(s); witness: {path}", file=sys.stderr)
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_gen_mdp(args, say) -> int:
    if args.out is None:
        raise ConfigError("--out: path of the MDP file to write is required")
    if args.config:
        exp = _load(args)
        mdp, _ = exp.mdp.build(exp.seed, exp.base_dir)
    else:
        seed = 0 if args.seed is None else args.seed
        try:
            if args.kind == "random":
                mdp = random_mdp(args.states, args.actions, args.gamma, seed)
            else:
                mdp = gridworld(args.size, args.slip, args.gamma, seed if args.seed is not None else None)
        except DapoError as exc:
            raise ConfigError(str(exc)) from exc
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_mdp(mdp, path)
    say(f"wrote {mdp.n_states}-state, {mdp.n_actions}-action MDP to {path}")
    return EXIT_OK


# -- plumbing -----------------------------------------------------------------------


def _load(args) -> C.ExperimentConfig:
    if not args.config:
        raise ConfigError("--config: a TOML configuration file is required")
    exp = C.load(args.config)
    return exp.with_overrides(seed=args.seed, output_dir=args.out)


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment configuration")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=_seed, help="master seed (overrides the config)")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = argparse.ArgumentParser(prog="dapo", description="Dual approximation policy optimization experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="repeated seeded runs of one configuration")
    for name, text in (("sweep", "grid over the [sweep] lists"), ("compare", "algorithms side by side")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--jobs", type=int, default=1, help="worker threads")
    v = sub.add_parser("verify", parents=[common], help="fuzz the convergence-analysis inequalities")
    v.add_argument("selector", nargs="?", default="all", choices=VERIFY_SELECTORS)
    v.add_argument("--samples", type=int, default=10_000)
    v.add_argument("--l2-scale", type=float, default=1.0,
                   help=f"factor on the Euclidean bounds ({T.SIMPLEX_DIAMETER!r} is the simplex diameter)")
    g = sub.add_parser("gen-mdp", parents=[common], help="write an MDP file")
    g.add_argument("--kind", choices=("random", "gridworld"), default="random")
    g.add_argument("--states", type=int, default=5)
    g.add_argument("--actions", type=int, default=3)
    g.add_argument("--gamma", type=float, default=0.9)
    g.add_argument("--size", type=int, default=4)
    g.add_argument("--slip", type=float, default=0.1)
    return p


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "compare": cmd_compare, "verify": cmd_verify,
            "gen-mdp": cmd_gen_mdp}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    say = _Out(args.quiet)
    try:
        return COMMANDS[args.command](args, say)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DapoError, ArithmeticError, OSError) as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
