"""Command-line front end.

Subcommands: attack, privacy-attack, fpc-bench, game, distinguish, sweep,
replay.  A JSON config file (--config) supplies defaults; explicit flags
win.  Output directory defaults under $SQLAB_OUT (or ./sqlab-out).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .attacks import AttackConfig
from .errors import ConfigError, ParameterError, ProtocolViolation, ResourceError
from .harness import (
    ExperimentConfig,
    config_hash,
    replay,
    run_experiment,
    run_sweep,
    wilson_interval,
)
from .oracles import OracleSpec


def _out_root() -> Path:
    return Path(os.environ.get("SQLAB_OUT", "sqlab-out"))


def _add_oracle_flags(sub):
    sub.add_argument("--oracle", default="empirical",
                     choices=["empirical", "noisy", "subsample", "cheating"])
    sub.add_argument("--sigma", type=float, default=0.0, help="noise scale")
    sub.add_argument("--law", default="gaussian", choices=["gaussian", "laplace"])
    sub.add_argument("--fraction", type=float, default=1.0, help="subsample fraction")


def _add_common_flags(sub):
    sub.add_argument("--trials", type=int, default=1)
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", default=None, help="output directory (default under $SQLAB_OUT)")
    sub.add_argument("--workers", type=int, default=1)
    sub.add_argument("--config", default=None, help="JSON config file; flags override it")


def _add_attack_flags(sub, privacy: bool):
    sub.add_argument("--n", type=int, required=False)
    sub.add_argument("--ell", type=int, default=None, help="code length override")
    sub.add_argument("--eps", type=float, default=0.01, help="code accusation-error target")
    sub.add_argument("--trace-rule", default="residual", choices=["residual", "binary"])
    sub.add_argument("--rounds", type=int, default=None)
    sub.add_argument("--dim", type=int, default=None)
    sub.add_argument("--scheme", default="otp", choices=["otp", "prs"])
    sub.add_argument("--prs-bits", type=int, default=128)
    if not privacy:
        sub.add_argument("--mode", default="natural",
                         choices=["natural", "encrypted", "ideal"])
        sub.add_argument("--kappa", type=int, default=2000, help="population = kappa * n")
        sub.add_argument("--s0", type=int, default=500, help="recovery reserve")
        sub.add_argument("--phi", type=float, default=1.0 / 500.0, help="attack-phase bias")
        sub.add_argument("--tol", type=float, default=1.0 / 2000.0, help="final tolerance")
    else:
        sub.add_argument("--mode", default="privacy", choices=["privacy", "ideal-privacy"])


def build_parser():
    parser = argparse.ArgumentParser(prog="sqlab",
                                     description="adaptive statistical-query attack lab")
    subs = parser.add_subparsers(dest="command", required=True)
    submap = {}

    attack = subs.add_parser("attack", help="accuracy-game attack trials")
    _add_attack_flags(attack, privacy=False)
    _add_oracle_flags(attack)
    _add_common_flags(attack)
    submap["attack"] = attack

    priv = subs.add_parser("privacy-attack", help="reconstruction attack trials")
    _add_attack_flags(priv, privacy=True)
    _add_oracle_flags(priv)
    _add_common_flags(priv)
    submap["privacy-attack"] = priv

    bench = subs.add_parser("fpc-bench", help="fingerprinting completeness/soundness")
    bench.add_argument("--p", type=int, required=False, help="user count")
    bench.add_argument("--S", type=int, required=False, help="coalition size")
    bench.add_argument("--ell", type=int, default=None)
    bench.add_argument("--eps", type=float, default=0.01)
    _add_common_flags(bench)
    submap["fpc-bench"] = bench

    game = subs.add_parser("game", help="accuracy game with fixed random queries")
    game.add_argument("--n", type=int, required=False)
    game.add_argument("--d", type=int, default=10)
    game.add_argument("--k", type=int, required=False)
    game.add_argument("--alpha", type=float, default=0.1)
    _add_oracle_flags(game)
    _add_common_flags(game)
    submap["game"] = game

    dist = subs.add_parser("distinguish", help="two-world event-frequency comparison")
    dist.add_argument("--event", default="recovery",
                      choices=["consistency", "recovery", "final", "1", "2", "3"])
    _add_attack_flags(dist, privacy=False)
    _add_oracle_flags(dist)
    _add_common_flags(dist)
    submap["distinguish"] = dist

    sweep = subs.add_parser("sweep", help="grid of experiments to one CSV")
    sweep.add_argument("--config", required=True, help="JSON with base and grid blocks")
    sweep.add_argument("--out", default=None)
    submap["sweep"] = sweep

    rep = subs.add_parser("replay", help="re-run a recorded experiment and compare")
    rep.add_argument("path", help="experiment directory or its manifest.json")
    submap["replay"] = rep

    return parser, submap


def _merge_config_file(args: argparse.Namespace, argv) -> argparse.Namespace:
    """Config-file values become defaults; explicit flags still win."""
    if getattr(args, "config", None) is None:
        return args
    with open(args.config, "r", encoding="utf-8") as fh:
        file_values = json.load(fh)
    if not isinstance(file_values, dict):
        raise ConfigError("config file must hold a JSON object")
    parser, submap = build_parser()
    sub = submap[args.command]
    known = {action.dest for action in sub._actions}
    mapped = {}
    for key, value in file_values.items():
        dest = key.replace("-", "_")
        if dest not in known:
            raise ConfigError(f"config file key {key!r} is not a known flag")
        mapped[dest] = value
    sub.set_defaults(**mapped)
    return parser.parse_args(argv)


def _oracle_from_args(args) -> OracleSpec:
    return OracleSpec(kind=args.oracle, sigma=args.sigma, law=args.law,
                      fraction=args.fraction)


def _attack_from_args(args, privacy: bool) -> AttackConfig:
    if args.n is None:
        raise ConfigError("--n is required (flag or config file)")
    common = dict(
        n=args.n,
        mode=args.mode,
        rounds=args.rounds,
        code_length=args.ell,
        code_error=args.eps,
        scheme=args.scheme,
        prs_bits=args.prs_bits,
        dim=args.dim,
        trace_rule=args.trace_rule,
    )
    if privacy:
        return AttackConfig(**common)
    return AttackConfig(
        population_factor=args.kappa,
        reserve=args.s0,
        attack_bias=args.phi,
        final_tolerance=args.tol,
        **common,
    )


def _default_outdir(args) -> str:
    if args.out is not None:
        return args.out
    return str(_out_root() / f"{args.command}-seed{args.seed}")


def _print_aggregates(result) -> None:
    print(f"config hash: {config_hash(result.config)}")
    if result.outdir is not None:
        print(f"artifacts:   {result.outdir}")
    print(f"{'metric':<32} {'rate':>8} {'95% interval':>20} {'trials':>7}")
    for name, (successes, trials) in result.aggregates.items():
        rate = successes / trials if trials else 0.0
        low, high = wilson_interval(successes, trials)
        print(f"{name:<32} {rate:>8.4f} [{low:>8.4f}, {high:>8.4f}] {trials:>7d}")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, _ = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "replay":
            report = replay(args.path)
            status = "identical" if report["identical"] else "MISMATCH"
            print(f"replay of {args.path}: {status} "
                  f"(transcripts_equal={report['transcripts_equal']}, "
                  f"summary_equal={report['summary_equal']}, trials={report['trials']})")
            return 0 if report["identical"] else 1

        if args.command == "sweep":
            with open(args.config, "r", encoding="utf-8") as fh:
                spec = json.load(fh)
            base = spec.get("base")
            grid = spec.get("grid", {})
            if base is None:
                raise ConfigError("sweep config needs a 'base' block")
            outdir = args.out or str(_out_root() / "sweep")
            rows = run_sweep(base, grid, outdir=outdir)
            failures = [r for r in rows if r.get("error")]
            print(f"sweep: {len(rows)} cells, {len(failures)} failed; CSV in {outdir}")
            for row in rows:
                tag = row.get("error") or "ok"
                print(f"  {row['cell']}: {tag}")
            return 0

        args = _merge_config_file(args, argv)
        if args.command == "attack":
            cfg = ExperimentConfig(
                kind="attack",
                attack=_attack_from_args(args, privacy=False),
                oracle=_oracle_from_args(args),
                trials=args.trials, seed=args.seed,
                outdir=_default_outdir(args), workers=args.workers,
            )
        elif args.command == "privacy-attack":
            cfg = ExperimentConfig(
                kind="privacy-attack",
                attack=_attack_from_args(args, privacy=True),
                oracle=_oracle_from_args(args),
                trials=args.trials, seed=args.seed,
                outdir=_default_outdir(args), workers=args.workers,
            )
        elif args.command == "fpc-bench":
            if args.p is None or args.S is None:
                raise ConfigError("--p and --S are required (flag or config file)")
            cfg = ExperimentConfig(
                kind="fpc-bench",
                bench_users=args.p, bench_coalition=args.S,
                bench_length=args.ell, bench_error=args.eps,
                trials=args.trials, seed=args.seed,
                outdir=_default_outdir(args), workers=args.workers,
            )
        elif args.command == "game":
            if args.n is None or args.k is None:
                raise ConfigError("--n and --k are required (flag or config file)")
            cfg = ExperimentConfig(
                kind="game",
                oracle=_oracle_from_args(args),
                game_n=args.n, game_dim=args.d, game_k=args.k, game_alpha=args.alpha,
                trials=args.trials, seed=args.seed,
                outdir=_default_outdir(args), workers=args.workers,
            )
        elif args.command == "distinguish":
            event = {"1": "consistency", "2": "recovery", "3": "final"}.get(
                args.event, args.event)
            cfg = ExperimentConfig(
                kind="distinguish",
                attack=_attack_from_args(args, privacy=False),
                oracle=_oracle_from_args(args),
                event=event,
                trials=args.trials, seed=args.seed,
                outdir=_default_outdir(args), workers=args.workers,
            )
        else:  # pragma: no cover
            raise ConfigError(f"unhandled command {args.command!r}")
        result = run_experiment(cfg)
        _print_aggregates(result)
        if cfg.kind == "distinguish":
            n = len(result.rows)
            gap = abs(result.aggregates["world0"][0] - result.aggregates["world1"][0]) / n
            print(f"|world frequency gap| = {gap:.4f} over {n} paired trials")
        return 0
    except (ConfigError, ParameterError, ResourceError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ProtocolViolation as exc:
        print(f"protocol violation: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
