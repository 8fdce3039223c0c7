"""Experiment orchestration: seeded trials, persistence, and summaries.

Every experiment gets a base seed; trial t derives its own substream
family from (base, "trial", t), so trials are independent and
individually replayable.  Each trial's transcript is flushed to its own
line-delimited file before the next trial starts; summaries are CSV.
A manifest records the config, its hash, the seed, and the code version,
which is what ``replay`` uses to re-run and compare byte-for-byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, attacks, fpcode
from .attacks import AttackConfig, run_attack, run_distinguisher, run_privacy_attack
from .errors import ConfigError
from .oracles import OracleSpec
from .rng import child_seed, substream
from .sqcore import TableQuery, judge_accuracy

SUMMARY_FIELDS = [
    "trial", "mode", "n", "kappa", "s0", "ell", "seed", "missed", "k",
    "probe_bias", "final_answer", "final_true_mean",
    "event_consistency", "event_recovery", "event_final",
]


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str  # attack | privacy-attack | fpc-bench | game | distinguish
    attack: AttackConfig | None = None
    oracle: OracleSpec = OracleSpec()
    trials: int = 1
    seed: int = 0
    outdir: str | None = None
    workers: int = 1
    full_transcripts: bool = False
    # fpc-bench fields
    bench_users: int = 0
    bench_coalition: int = 0
    bench_length: int | None = None
    bench_error: float = 0.01
    # game fields
    game_n: int = 0
    game_dim: int = 10
    game_k: int = 0
    game_alpha: float = 0.1
    # distinguisher field
    event: str = "recovery"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = asdict(cfg)
    out["attack"] = None if cfg.attack is None else asdict(cfg.attack)
    out["oracle"] = asdict(cfg.oracle)
    return out


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    if data.get("attack") is not None:
        data["attack"] = AttackConfig(**data["attack"])
    if isinstance(data.get("oracle"), dict):
        data["oracle"] = OracleSpec(**data["oracle"])
    return ExperimentConfig(**data)


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(config_to_dict(cfg), sort_keys=True)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054):
    """95% score interval for a binomial rate."""
    if trials == 0:
        return (0.0, 1.0)
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z * z / (4 * trials * trials)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def trial_seed(base_seed: int, trial: int) -> int:
    return child_seed(base_seed, "trial", trial)


# ----------------------------------------------------------------------
# Attack experiments


def _attack_trial(cfg: ExperimentConfig, trial: int) -> dict:
    seed = trial_seed(cfg.seed, trial)
    outcome = run_attack(cfg.oracle, cfg.attack, seed)
    return {"trial": trial, "seed": seed, "outcome": outcome}


def _privacy_trial(cfg: ExperimentConfig, trial: int) -> dict:
    seed = trial_seed(cfg.seed, trial)
    outcome = run_privacy_attack(cfg.oracle, cfg.attack, seed)
    return {"trial": trial, "seed": seed, "outcome": outcome}


def _worker_init():
    try:
        import numba

        numba.set_num_threads(1)
    except Exception:
        pass


def _map_trials(fn, cfg: ExperimentConfig):
    if cfg.workers == 1:
        for t in range(cfg.trials):
            yield fn(cfg, t)
        return
    with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_worker_init) as pool:
        futures = [pool.submit(fn, cfg, t) for t in range(cfg.trials)]
        for fut in futures:
            yield fut.result()


def attack_summary_row(trial: int, seed: int, outcome) -> dict:
    return {
        "trial": trial,
        "mode": outcome.mode,
        "n": outcome.n,
        "kappa": outcome.population // outcome.n,
        "s0": outcome.reserve,
        "ell": outcome.length,
        "seed": seed,
        "missed": outcome.missed,
        "k": outcome.queries_issued,
        "probe_bias": outcome.probe_bias,
        "final_answer": outcome.final_answer,
        "final_true_mean": outcome.final_true_mean,
        "event_consistency": int(outcome.event_consistency),
        "event_recovery": int(outcome.event_recovery),
        "event_final": int(outcome.event_final),
    }


def _attack_transcript(cfg: ExperimentConfig, seed: int, outcome) -> str:
    plan_kappa = outcome.population // outcome.n
    header = {
        "type": "header",
        "kind": "attack",
        "mode": outcome.mode,
        "n": outcome.n,
        "kappa": plan_kappa,
        "s0": outcome.reserve,
        "ell": outcome.length,
        "rounds": outcome.rounds,
        "population": outcome.population,
        "seed": seed,
        "oracle": asdict(cfg.oracle),
        "scheme": cfg.attack.scheme if cfg.attack.mode != "natural" else None,
        "trace_rule": cfg.attack.trace_rule,
        "attack_bias": cfg.attack.attack_bias,
        "final_tolerance": cfg.attack.final_tolerance,
        "consistency_fraction": 0.99,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for entry in outcome.trace_log:
        lines.append(json.dumps({"type": "round", **entry}, sort_keys=True))
    lines.append(json.dumps({
        "type": "final",
        "probe_bias": outcome.probe_bias,
        "final_answer": outcome.final_answer,
        "final_true_mean": outcome.final_true_mean,
        "missed": outcome.missed,
        "recovery_fraction": outcome.recovery_fraction,
        "queries_issued": outcome.queries_issued,
        "claim_bound_ok": outcome.claim_bound_ok,
        "events": outcome.events,
    }, sort_keys=True))
    return "\n".join(lines) + "\n"


def _privacy_transcript(cfg: ExperimentConfig, seed: int, outcome) -> str:
    header = {
        "type": "header",
        "kind": "privacy-attack",
        "mode": outcome.mode,
        "n": outcome.n,
        "ell": outcome.length,
        "rounds": outcome.rounds,
        "population": outcome.population,
        "seed": seed,
        "oracle": asdict(cfg.oracle),
        "trace_rule": cfg.attack.trace_rule,
    }
    lines = [json.dumps(header, sort_keys=True)]
    for entry in outcome.trace_log:
        lines.append(json.dumps({"type": "round", **entry}, sort_keys=True))
    lines.append(json.dumps({
        "type": "final",
        "sym_diff": outcome.sym_diff,
        "recovered_count": len(outcome.recovered),
        "queries_issued": outcome.queries_issued,
        "rescale_checked": sum(1 for c in outcome.rescale_checked if c),
        "rescale_all_ok": all(outcome.rescale_ok),
    }, sort_keys=True))
    return "\n".join(lines) + "\n"


def recompute_events(transcript_text: str) -> dict:
    """Re-derive the three event flags from a serialized attack transcript."""
    header = None
    rounds = []
    final = None
    for line in transcript_text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if obj["type"] == "header":
            header = obj
        elif obj["type"] == "round":
            rounds.append(obj)
        elif obj["type"] == "final":
            final = obj
    if header is None or final is None:
        raise ConfigError("transcript is missing header or final record")
    fraction = header.get("consistency_fraction", 0.99)
    ell = header["ell"]
    consistency = all(r["consistent_cols"] >= fraction * ell - 1e-9 for r in rounds)
    recovery = final["missed"] <= header["s0"]
    final_flag = recovery and (
        abs(final["final_answer"] - final["probe_bias"]) <= header["final_tolerance"]
    )
    return {"consistency": consistency, "recovery": recovery, "final": final_flag}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    aggregates: dict
    outdir: Path | None = None


def _prepare_outdir(cfg: ExperimentConfig):
    if cfg.outdir is None:
        return None
    out = Path(cfg.outdir)
    (out / "trials").mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": cfg.kind,
        "config": config_to_dict(cfg),
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "trials": cfg.trials,
        "code_version": __version__,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def _write_trial(outdir: Path | None, trial: int, text: str) -> None:
    if outdir is None:
        return
    path = outdir / "trials" / f"trial-{trial:05d}.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
        fh.flush()
        os.fsync(fh.fileno())


def _write_summary(outdir: Path | None, fieldnames: list, rows: list) -> None:
    if outdir is None:
        return
    with open(outdir / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _write_aggregates(outdir: Path | None, aggregates: dict) -> None:
    if outdir is None:
        return
    with open(outdir / "aggregate.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "rate", "successes", "trials", "ci_low", "ci_high"])
        for name, (successes, trials) in aggregates.items():
            rate = successes / trials if trials else 0.0
            low, high = wilson_interval(successes, trials)
            writer.writerow([name, repr(rate), successes, trials, repr(low), repr(high)])


def _aggregate_rates(rows: list, flags: list) -> dict:
    out = {}
    for flag in flags:
        successes = sum(int(bool(r[flag])) for r in rows)
        out[flag] = (successes, len(rows))
    return out


def run_attack_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.attack is None:
        raise ConfigError("attack experiments need an attack config block")
    attacks.resolve(cfg.attack)  # validate before spending any time
    outdir = _prepare_outdir(cfg)
    rows = []
    for result in _map_trials(_attack_trial, cfg):
        outcome = result["outcome"]
        row = attack_summary_row(result["trial"], result["seed"], outcome)
        row["recovery_succeeded"] = int(outcome.recovery_succeeded)
        row["final_accurate"] = int(outcome.final_accurate)
        row["fooled"] = int(outcome.recovery_succeeded and not outcome.final_accurate)
        row["claim_bound_ok"] = int(outcome.claim_bound_ok)
        row["recovery_fraction"] = outcome.recovery_fraction
        rows.append(row)
        _write_trial(outdir, result["trial"], _attack_transcript(cfg, result["seed"], outcome))
    fields = SUMMARY_FIELDS + ["recovery_succeeded", "final_accurate", "fooled",
                               "claim_bound_ok", "recovery_fraction"]
    _write_summary(outdir, fields, rows)
    aggregates = _aggregate_rates(rows, ["event_consistency", "event_recovery",
                                         "event_final", "recovery_succeeded", "fooled"])
    _write_aggregates(outdir, aggregates)
    return ExperimentResult(config=cfg, rows=rows, aggregates=aggregates, outdir=outdir)


def run_privacy_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.attack is None:
        raise ConfigError("privacy experiments need an attack config block")
    attacks.resolve(cfg.attack)
    outdir = _prepare_outdir(cfg)
    rows = []
    for result in _map_trials(_privacy_trial, cfg):
        outcome = result["outcome"]
        rows.append({
            "trial": result["trial"],
            "mode": outcome.mode,
            "n": outcome.n,
            "ell": outcome.length,
            "rounds": outcome.rounds,
            "seed": result["seed"],
            "sym_diff": outcome.sym_diff,
            "k": outcome.queries_issued,
            "within_tenth": int(outcome.sym_diff <= 0.1 * outcome.n),
            "rescale_all_ok": int(all(outcome.rescale_ok)),
            "rescale_checked": sum(1 for c in outcome.rescale_checked if c),
        })
        _write_trial(outdir, result["trial"], _privacy_transcript(cfg, result["seed"], outcome))
    fields = ["trial", "mode", "n", "ell", "rounds", "seed", "sym_diff", "k",
              "within_tenth", "rescale_all_ok", "rescale_checked"]
    _write_summary(outdir, fields, rows)
    aggregates = _aggregate_rates(rows, ["within_tenth", "rescale_all_ok"])
    _write_aggregates(outdir, aggregates)
    return ExperimentResult(config=cfg, rows=rows, aggregates=aggregates, outdir=outdir)


# ----------------------------------------------------------------------
# Fingerprinting bench


def bench_words(code: fpcode.CodeMatrix, coalition_ids, rng: np.random.Generator) -> dict:
    """The three bench adversaries, all functions of the coalition rows only."""
    view = fpcode.restrict(code, coalition_ids)
    averaging = view.column_means()
    copy_row = view.bits()[0].astype(np.float64)
    noisy = averaging.copy()
    hit = rng.random(code.length) < 0.1
    noisy[hit] = np.clip(noisy[hit] + rng.uniform(-0.25, 0.25, int(hit.sum())), 0.0, 1.0)
    return {"averaging": averaging, "copy": copy_row, "noisy": noisy}


def _bench_trial(cfg: ExperimentConfig, trial: int) -> dict:
    seed = trial_seed(cfg.seed, trial)
    users = cfg.bench_users
    length = cfg.bench_length or fpcode.plan_length(users, cfg.bench_error)
    params = fpcode.CodeParams(users=users, error=cfg.bench_error, length=length)
    code = fpcode.gen(params, substream(seed, "code"))
    coalition = np.sort(substream(seed, "coalition").choice(
        users, size=cfg.bench_coalition, replace=False) + 1)
    words = bench_words(code, coalition, substream(seed, "adversary"))
    coalition_set = set(int(u) for u in coalition)
    row = {"trial": trial, "seed": seed, "p": users, "ell": length,
           "coalition": cfg.bench_coalition}
    for name, word in words.items():
        outcome = fpcode.trace(code, word)
        consistent = fpcode.is_consistent(fpcode.restrict(code, coalition), word)
        accused_in = outcome.is_accusation and outcome.accused in coalition_set
        row[f"{name}_accused"] = outcome.accused or 0
        row[f"{name}_accused_in_coalition"] = int(accused_in)
        row[f"{name}_consistent"] = int(consistent)
        row[f"{name}_sound_violation"] = int(consistent and outcome.is_accusation
                                             and not accused_in)
    return row


def run_bench_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.bench_users < 1 or cfg.bench_coalition < 1:
        raise ConfigError("fpc-bench needs users and a coalition size")
    if cfg.bench_coalition > cfg.bench_users:
        raise ConfigError("coalition cannot exceed the user count")
    outdir = _prepare_outdir(cfg)
    rows = list(_map_trials(_bench_trial, cfg))
    fields = list(rows[0].keys())
    _write_summary(outdir, fields, rows)
    aggregates = _aggregate_rates(rows, ["averaging_accused_in_coalition",
                                         "averaging_sound_violation",
                                         "copy_sound_violation",
                                         "noisy_sound_violation"])
    _write_aggregates(outdir, aggregates)
    return ExperimentResult(config=cfg, rows=rows, aggregates=aggregates, outdir=outdir)


# ----------------------------------------------------------------------
# Accuracy game (fixed random queries; the non-adaptive contrast)


class FixedRandomAnalyst:
    """Non-adaptive analyst: k pre-drawn random table queries."""

    def __init__(self, universe_size: int, k: int, rng: np.random.Generator):
        from .sqcore import Distribution, Element

        self.universe_size = universe_size
        self.k = k
        self._dist = Distribution.uniform_over(
            Element(i) for i in range(1, universe_size + 1))
        self._tables = (rng.random((k, universe_size)) < 0.5).astype(np.uint8)
        self._issued = 0

    def distribution(self, rng):
        return self._dist

    def next_query(self, transcript):
        if self._issued >= self.k:
            return None
        q = TableQuery(self._tables[self._issued], qid=f"fixed-{self._issued}")
        self._issued += 1
        return q


def _game_trial(cfg: ExperimentConfig, trial: int) -> dict:
    from .oracles import build_factory
    from .sqcore import run_acc_game

    seed = trial_seed(cfg.seed, trial)
    universe_size = 2 ** cfg.game_dim
    analyst = FixedRandomAnalyst(universe_size, cfg.game_k, substream(seed, "analyst"))
    factory = build_factory(cfg.oracle)
    transcript = run_acc_game(
        analyst, lambda s, r: factory(s, r, None), cfg.game_n, cfg.game_dim,
        cfg.game_k, substream(seed, "game"),
    )
    accurate = judge_accuracy(transcript, cfg.game_alpha)
    worst = max((abs(r.answer - r.true_mean) for r in transcript.records), default=0.0)
    return {"trial": trial, "seed": seed, "n": cfg.game_n, "k": cfg.game_k,
            "alpha": cfg.game_alpha, "accurate": int(accurate),
            "worst_error": worst}


def run_game_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.game_n < 1 or cfg.game_k < 1:
        raise ConfigError("game experiments need n and k")
    outdir = _prepare_outdir(cfg)
    rows = list(_map_trials(_game_trial, cfg))
    _write_summary(outdir, list(rows[0].keys()), rows)
    aggregates = _aggregate_rates(rows, ["accurate"])
    _write_aggregates(outdir, aggregates)
    return ExperimentResult(config=cfg, rows=rows, aggregates=aggregates, outdir=outdir)


# ----------------------------------------------------------------------
# Distinguisher experiment


def _distinguish_trial(cfg: ExperimentConfig, trial: int) -> dict:
    seed = trial_seed(cfg.seed, trial)
    out0 = run_distinguisher(cfg.event, cfg.oracle, 0, cfg.attack, seed)
    out1 = run_distinguisher(cfg.event, cfg.oracle, 1, cfg.attack, seed)
    return {"trial": trial, "seed": seed, "event": cfg.event,
            "world0": out0, "world1": out1}


def run_distinguish_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.attack is None:
        raise ConfigError("distinguish experiments need an attack config block")
    outdir = _prepare_outdir(cfg)
    rows = list(_map_trials(_distinguish_trial, cfg))
    _write_summary(outdir, list(rows[0].keys()), rows)
    n0 = sum(r["world0"] for r in rows)
    n1 = sum(r["world1"] for r in rows)
    aggregates = {"world0": (n0, len(rows)), "world1": (n1, len(rows))}
    _write_aggregates(outdir, aggregates)
    return ExperimentResult(config=cfg, rows=rows, aggregates=aggregates, outdir=outdir)


RUNNERS = {
    "attack": run_attack_experiment,
    "privacy-attack": run_privacy_experiment,
    "fpc-bench": run_bench_experiment,
    "game": run_game_experiment,
    "distinguish": run_distinguish_experiment,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    try:
        runner = RUNNERS[cfg.kind]
    except KeyError:
        raise ConfigError(f"unknown experiment kind {cfg.kind!r}") from None
    return runner(cfg)


# ----------------------------------------------------------------------
# Sweeps


def expand_grid(base: dict, grid: dict) -> list:
    """Cartesian product of grid axes over a base config dict.

    Axis keys address nested blocks with dots, e.g. ``attack.n`` or
    ``oracle.sigma``.
    """
    cells = [dict()]
    for key, values in grid.items():
        if not isinstance(values, list):
            raise ConfigError(f"grid axis {key!r} must be a list")
        cells = [dict(cell, **{key: v}) for cell in cells for v in values]
    configs = []
    for cell in cells:
        data = json.loads(json.dumps(base))  # deep copy
        for key, value in cell.items():
            target = data
            parts = key.split(".")
            for part in parts[:-1]:
                target = target.setdefault(part, {})
            target[parts[-1]] = value
        configs.append((cell, config_from_dict(data)))
    return configs


def run_sweep(base: dict, grid: dict, outdir=None) -> list:
    """One aggregate row per grid cell; cell failures recorded, sweep continues."""
    cells = expand_grid(base, grid)
    rows = []
    for cell, cfg in cells:
        label = json.dumps(cell, sort_keys=True)
        try:
            sub = replace(cfg, outdir=None)
            result = run_experiment(sub)
            row = {"cell": label, "error": ""}
            for name, (successes, trials) in result.aggregates.items():
                low, high = wilson_interval(successes, trials)
                row[f"{name}_rate"] = successes / trials if trials else 0.0
                row[f"{name}_ci_low"] = low
                row[f"{name}_ci_high"] = high
                row[f"{name}_trials"] = trials
            rows.append(row)
        except Exception as exc:  # record and continue
            rows.append({"cell": label, "error": f"{type(exc).__name__}: {exc}"})
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        fieldnames = sorted({k for row in rows for k in row},
                            key=lambda k: (k != "cell", k))
        with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames, restval="")
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
    return rows


# ----------------------------------------------------------------------
# Replay


def replay(path) -> dict:
    """Re-run an experiment from its manifest and compare artifacts."""
    root = Path(path)
    if root.is_file():
        root = root.parent
    with open(root / "manifest.json", "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    cfg = config_from_dict(manifest["config"])
    stored_hash = manifest["config_hash"]
    if config_hash(cfg) != stored_hash:
        raise ConfigError("manifest config hash does not match its config block")
    old_files = {
        p.name: p.read_bytes() for p in sorted((root / "trials").glob("*.jsonl"))
    }
    old_summary = (root / "summary.csv").read_bytes()
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        rerun = replace(cfg, outdir=tmp)
        run_experiment(rerun)
        new_root = Path(tmp)
        new_files = {
            p.name: p.read_bytes() for p in sorted((new_root / "trials").glob("*.jsonl"))
        }
        new_summary = (new_root / "summary.csv").read_bytes()
    transcripts_equal = old_files == new_files
    summary_equal = old_summary == new_summary
    return {
        "transcripts_equal": transcripts_equal,
        "summary_equal": summary_equal,
        "trials": len(old_files),
        "identical": transcripts_equal and summary_equal,
    }
