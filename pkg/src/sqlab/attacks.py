"""Adaptive analysts: recovery-phase tracing plus the final biased probe.

The attack plants a uniform distribution over p indexed points (optionally
carrying per-point secret keys), then runs rounds of code-column queries.
Each round's answers form a combined word that is traced to one sampled
point, which later queries mask out.  Once all but a small reserve of the
sample is recovered, a final query encodes a secret biased subset that an
oracle ignorant of its unrecovered points cannot answer tightly.

Modes:
  natural        bare-index queries, code bits in the clear
  encrypted      per-point keys; query values are ciphertext decryptions
  ideal          like encrypted but off-sample ciphertexts encrypt zero
  privacy        reconstruction-only variant on a 2n-point universe with
                 per-round answer rescaling; no final probe
  ideal-privacy  privacy with off-sample ciphertexts encrypting zero

The distinguisher harness replays the encrypted attack with off-sample
ciphertexts supplied by a two-world encryption oracle, so world 1
reproduces the encrypted attack and world 0 the ideal one.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import bitmat, crypto, fpcode
from .errors import ConfigError, ParameterError, ProtocolViolation
from .oracles import OracleSpec, UniverseDecl, build_factory
from .rng import substream
from .sqcore import Distribution, Element, Query, Sample

ACC_MODES = ("natural", "encrypted", "ideal")
PRIVACY_MODES = ("privacy", "ideal-privacy")
MODES = ACC_MODES + PRIVACY_MODES
EVENT_NAMES = ("consistency", "recovery", "final")
DEFAULT_MAX_BITS = 2**33


@dataclass(frozen=True)
class AttackConfig:
    """Experiment-level attack parameters (paper-shaped defaults)."""

    n: int
    mode: str = "natural"
    population_factor: int = 2000
    reserve: int = 500
    rounds: int | None = None
    attack_bias: float = 1.0 / 500.0
    final_tolerance: float = 1.0 / 2000.0
    code_length: int | None = None
    code_error: float = 0.01
    scheme: str = "otp"  # otp | prs (ignored in natural mode)
    prs_bits: int = 128
    dim: int | None = None
    trace_rule: str = "residual"
    max_bits: int = DEFAULT_MAX_BITS


@dataclass(frozen=True)
class AttackPlan:
    """Resolved sizes for one attack run."""

    cfg: AttackConfig
    population: int
    rounds: int
    length: int
    dim: int
    cipher_count: int  # encryptions each key must support
    encrypted: bool
    ideal: bool
    privacy: bool

    @property
    def params(self) -> fpcode.CodeParams:
        return fpcode.CodeParams(
            users=self.population, error=self.cfg.code_error, length=self.length
        )

    @property
    def query_budget(self) -> int:
        return self.rounds * self.length + (0 if self.privacy else 1)


def resolve(cfg: AttackConfig) -> AttackPlan:
    if cfg.mode not in MODES:
        raise ConfigError(f"unknown mode {cfg.mode!r}; expected one of {MODES}")
    if cfg.n < 1:
        raise ConfigError("n must be >= 1")
    if not 0.0 < cfg.final_tolerance < 1.0:
        raise ConfigError("final tolerance must be in (0, 1)")

    privacy = cfg.mode in PRIVACY_MODES
    if privacy:
        population = 2 * cfg.n
        if population < 4:
            raise ConfigError("privacy mode needs n >= 2")
        rounds = cfg.rounds if cfg.rounds is not None else int(math.floor(0.99 * cfg.n))
        if not 1 <= rounds < cfg.n:
            raise ConfigError(f"privacy rounds must be in [1, n), got {rounds}")
    else:
        population = cfg.population_factor * cfg.n
        if population < 4:
            raise ConfigError("population must be at least 4")
        if cfg.n <= cfg.reserve:
            raise ConfigError(f"n={cfg.n} must exceed the reserve {cfg.reserve}")
        rounds = cfg.rounds if cfg.rounds is not None else cfg.n - cfg.reserve
        if rounds < 0:
            raise ConfigError("rounds must be nonnegative")
        bias_count = cfg.attack_bias * population
        if abs(bias_count - round(bias_count)) > 1e-9:
            raise ConfigError(
                f"attack bias {cfg.attack_bias} times population {population} "
                "must be an integer"
            )

    length = cfg.code_length if cfg.code_length is not None else fpcode.plan_length(
        population, cfg.code_error
    )
    if length < 1:
        raise ConfigError("code length must be >= 1")

    encrypted = cfg.mode != "natural"
    ideal = cfg.mode in ("ideal", "ideal-privacy")
    cipher_count = rounds * length + (0 if privacy else 1) if encrypted else 0
    index_bits = max(1, (population - 1).bit_length())
    if encrypted:
        if cfg.scheme == "otp":
            key_bits = cipher_count
        elif cfg.scheme == "prs":
            key_bits = cfg.prs_bits
        else:
            raise ConfigError(f"unknown scheme {cfg.scheme!r}; expected otp or prs")
        minimal_dim = key_bits + index_bits
    else:
        minimal_dim = index_bits
    dim = cfg.dim if cfg.dim is not None else minimal_dim
    if dim < minimal_dim:
        raise ConfigError(
            f"dim={dim} cannot pack index and key bits; minimal dim is {minimal_dim}"
        )

    code_bits = rounds * population * length
    pad_bits = population * cipher_count if (encrypted and cfg.scheme == "otp") else 0
    total = code_bits * (2 if encrypted else 1) + pad_bits
    if total > cfg.max_bits:
        per_len = population * rounds * (3 if (encrypted and cfg.scheme == "otp")
                                         else 2 if encrypted else 1)
        feasible = cfg.max_bits // max(1, per_len)
        raise ConfigError(
            f"run needs {total} matrix bits, over the budget of {cfg.max_bits}; "
            f"largest feasible code length here is about {feasible}"
        )
    return AttackPlan(
        cfg=cfg, population=population, rounds=rounds, length=length, dim=dim,
        cipher_count=cipher_count, encrypted=encrypted, ideal=ideal, privacy=privacy,
    )


# ----------------------------------------------------------------------
# Planted universe


@dataclass
class PlantedUniverse:
    dist: Distribution
    keys: list | None
    pad_matrix: np.ndarray | None  # (population, cipher_count) uint8, otp only


def _build_universe(plan: AttackPlan, rng: np.random.Generator) -> PlantedUniverse:
    p = plan.population
    if not plan.encrypted:
        elements = tuple(Element(i) for i in range(1, p + 1))
        return PlantedUniverse(dist=Distribution.uniform_over(elements),
                               keys=None, pad_matrix=None)
    if plan.cfg.scheme == "otp":
        pad_matrix = rng.integers(0, 256, size=(p, plan.cipher_count), dtype=np.uint8) & 1
        keys = [crypto.pad_key_from_bits(pad_matrix[i]) for i in range(p)]
    else:
        pad_matrix = None
        kind = crypto.PseudorandomStream(bits=plan.cfg.prs_bits)
        keys = [crypto.key_gen(kind, rng) for _ in range(p)]
    elements = tuple(Element(i + 1, keys[i]) for i in range(p))
    return PlantedUniverse(dist=Distribution.uniform_over(elements),
                           keys=keys, pad_matrix=pad_matrix)


def build_planted_distribution(cfg: AttackConfig, rng: np.random.Generator):
    """The planted distribution and its key table (None in natural mode)."""
    universe = _build_universe(resolve(cfg), rng)
    return universe.dist, universe.keys


def _key_stream_columns(universe: PlantedUniverse, start: int, count: int) -> np.ndarray:
    """Key-stream/pad bits for every key at positions [start, start+count)."""
    if universe.pad_matrix is not None:
        return universe.pad_matrix[:, start : start + count]
    return np.stack([crypto.stream_bits(k.material, start, count) for k in universe.keys])


# ----------------------------------------------------------------------
# Attack queries


class RecoveryQuery(Query):
    """Round-r, column-j challenge query: zero on traced points."""

    def __init__(self, state: "AttackState", round_idx: int, column: int):
        self.state = state
        self.round_idx = round_idx  # 1-based
        self.column = column  # 1-based
        self.masked_rows = state.t_mask  # live view
        self.position = (round_idx - 1) * state.plan.length + (column - 1)
        super().__init__(self._point, size=state.plan.population,
                         qid=f"r{round_idx}c{column}")

    def _payload_bit(self, row: int) -> int:
        table = (self.state.payloads[self.round_idx - 1] if self.state.plan.encrypted
                 else self.state.codes[self.round_idx - 1].packed)
        return int(bitmat.get_bits(table, np.array([row]), np.array([self.column - 1]))[0])

    def _point(self, element: Element) -> int:
        p = self.state.plan.population
        if not 1 <= element.index <= p or self.masked_rows[element.index - 1]:
            return 0
        payload = self._payload_bit(element.index - 1)
        if not self.state.plan.encrypted or element.key is None:
            return payload
        return crypto.decrypt(element.key, crypto.Ciphertext(payload=payload,
                                                             position=self.position))

    def eval_rows(self, rows: np.ndarray) -> np.ndarray:
        """Vector evaluation on planted-support rows (0-based)."""
        self.calls += len(rows)
        cols = np.full(rows.shape, self.column - 1)
        if self.state.plan.encrypted:
            bits = bitmat.get_bits(self.state.payloads[self.round_idx - 1], rows, cols)
            bits = bits ^ self.state.key_bits_at(rows, self.position)
        else:
            bits = bitmat.get_bits(self.state.codes[self.round_idx - 1].packed, rows, cols)
        bits[self.masked_rows[rows]] = 0
        return bits

    def population_table(self) -> np.ndarray:
        """Plaintext query values over the whole universe (natural mode)."""
        if self.state.plan.encrypted:
            raise ParameterError("encrypted queries expose no plaintext table")
        self.calls += self.state.plan.population
        col = bitmat.get_column(self.state.codes[self.round_idx - 1].packed,
                                self.state.plan.length, self.column - 1)
        col = col.copy()
        col[self.masked_rows] = 0
        return col


class FinalQuery(Query):
    """The biased-subset probe: secret bit per point, zero on traced points."""

    def __init__(self, state: "AttackState", payload_col: np.ndarray):
        self.state = state
        self.masked_rows = state.t_mask
        self.payload_col = payload_col  # ciphertext payloads, or plaintext when natural
        self.position = state.plan.rounds * state.plan.length
        super().__init__(self._point, size=state.plan.population, qid="final")

    def _point(self, element: Element) -> int:
        p = self.state.plan.population
        if not 1 <= element.index <= p or self.masked_rows[element.index - 1]:
            return 0
        payload = int(self.payload_col[element.index - 1])
        if not self.state.plan.encrypted or element.key is None:
            return payload
        return crypto.decrypt(element.key, crypto.Ciphertext(payload=payload,
                                                             position=self.position))

    def eval_rows(self, rows: np.ndarray) -> np.ndarray:
        self.calls += len(rows)
        bits = self.payload_col[rows].copy()
        if self.state.plan.encrypted:
            bits = bits ^ self.state.key_bits_at(rows, self.position)
        bits[self.masked_rows[rows]] = 0
        return bits

    def population_table(self) -> np.ndarray:
        if self.state.plan.encrypted:
            raise ParameterError("encrypted queries expose no plaintext table")
        self.calls += self.state.plan.population
        col = self.payload_col.copy()
        col[self.masked_rows] = 0
        return col


# ----------------------------------------------------------------------
# Attack state


@dataclass
class AttackState:
    plan: AttackPlan
    universe: PlantedUniverse
    sample: Sample
    codes: list
    payloads: list | None
    threshold: float | None = None
    hidden_pads: np.ndarray | None = None  # distinguisher-world key material
    distinguisher_world: int | None = None
    t_mask: np.ndarray | None = None
    t_order: list = field(default_factory=list)
    answers: list = field(default_factory=list)
    consistent_cols: list = field(default_factory=list)
    round_flags: list = field(default_factory=list)
    trace_log: list = field(default_factory=list)
    rescale_checked: list = field(default_factory=list)
    rescale_ok: list = field(default_factory=list)
    queries_issued: int = 0
    probe_bias: float | None = None
    final_answer: float | None = None
    final_true_mean: float | None = None
    claim_bound_ok: bool | None = None

    def __post_init__(self):
        if self.t_mask is None:
            self.t_mask = np.zeros(self.plan.population, dtype=bool)

    @property
    def sample_ids(self) -> frozenset:
        return self.sample.index_set

    def sample_rows_mask(self) -> np.ndarray:
        mask = np.zeros(self.plan.population, dtype=bool)
        mask[np.unique(self.sample.indices) - 1] = True
        return mask

    def key_bits_at(self, rows: np.ndarray, position: int) -> np.ndarray:
        """Planted-key stream bits at one position, for genuine-support rows."""
        if self.universe.pad_matrix is not None:
            return self.universe.pad_matrix[rows, position]
        keys = self.universe.keys
        return np.fromiter((keys[int(r)].bit(position) for r in rows),
                           dtype=np.uint8, count=len(rows))

    def missed_count(self) -> int:
        return sum(1 for i in self.sample_ids if not self.t_mask[i - 1])

    def remaining_ids(self) -> list:
        return sorted(i for i in self.sample_ids if not self.t_mask[i - 1])


def _checked(answer, state) -> float:
    if not isinstance(answer, (int, float)) or not math.isfinite(answer) \
            or not 0.0 <= answer <= 1.0:
        raise ProtocolViolation(f"oracle answered {answer!r} outside [0, 1]",
                                transcript=state)
    return float(answer)


# ----------------------------------------------------------------------
# Phases


def make_recovery_query(state: AttackState, round_idx: int, column: int) -> RecoveryQuery:
    if not 1 <= round_idx <= state.plan.rounds:
        raise ParameterError(f"round {round_idx} outside [1, {state.plan.rounds}]")
    if not 1 <= column <= state.plan.length:
        raise ParameterError(f"column {column} outside [1, {state.plan.length}]")
    return RecoveryQuery(state, round_idx, column)


def run_recovery_phase(oracle, state: AttackState) -> AttackState:
    plan = state.plan
    n = plan.cfg.n
    for r in range(1, plan.rounds + 1):
        answers = np.empty(plan.length, dtype=np.float64)
        for j in range(1, plan.length + 1):
            query = make_recovery_query(state, r, j)
            answers[j - 1] = _checked(oracle.answer(query), state)
            state.queries_issued += 1
        if plan.privacy:
            _record_rescale_identity(state, r, answers)
            word = np.clip((n / (n - r)) * answers, 0.0, 1.0)
        else:
            word = answers
        state.answers.append(answers)

        code = state.codes[r - 1]
        remaining = state.remaining_ids()
        if remaining:
            count = fpcode.consistent_column_count(fpcode.restrict(code, remaining), word)
            ok = count >= code.params.consistency_fraction * plan.length - 1e-9
        else:
            count, ok = plan.length, True  # nothing left to be consistent with
        state.consistent_cols.append(count)
        state.round_flags.append(bool(ok))

        outcome = fpcode.trace(code, word, rule=plan.cfg.trace_rule,
                               threshold=state.threshold)
        fresh = outcome.is_accusation and not state.t_mask[outcome.accused - 1]
        if fresh:
            state.t_mask[outcome.accused - 1] = True
            state.t_order.append(outcome.accused)
        state.trace_log.append({
            "round": r,
            "accused": outcome.accused,
            "fresh": bool(fresh),
            "in_sample": (outcome.accused in state.sample_ids)
            if outcome.is_accusation else None,
            "score": outcome.score,
            "consistent_cols": count,
        })
    return state


def _record_rescale_identity(state: AttackState, round_idx: int, answers) -> None:
    """Check the per-round rescaling identity against the coalition mean.

    Meaningful only when every prior accusation landed on a distinct sample
    point, so exactly round_idx - 1 sample points are masked and the
    unmasked coalition has n - round_idx ... n - round_idx + 1 members under
    the figure's indexing; the check compares against the actual coalition.
    """
    n = state.plan.cfg.n
    prior_all_fresh = (
        len(state.t_order) == round_idx - 1
        and all(i in state.sample_ids for i in state.t_order)
    )
    if not prior_all_fresh or n == round_idx:
        state.rescale_checked.append(False)
        state.rescale_ok.append(True)
        return
    remaining = np.asarray(state.remaining_ids(), dtype=np.int64)
    if remaining.size != n - round_idx + 1:
        state.rescale_checked.append(False)
        state.rescale_ok.append(True)
        return
    code = state.codes[round_idx - 1]
    counts = bitmat.column_counts(code.packed, state.plan.length, rows=remaining - 1)
    # answers are coalition counts over n; the round's factor n/(n-r) lifts
    # them to the mean over a coalition of n-r members, the size after this
    # round's trace also lands in the sample.
    rescaled = (n / (n - round_idx)) * answers
    expected = counts / (n - round_idx)
    state.rescale_checked.append(True)
    state.rescale_ok.append(bool(np.allclose(rescaled, expected, rtol=1e-9, atol=1e-9)))


def run_attack_phase(oracle, state: AttackState, rng: np.random.Generator) -> "AttackOutcome":
    plan = state.plan
    if plan.privacy:
        raise ParameterError("privacy runs have no final probe")
    p = plan.population
    probe_bias = 0.0 if rng.random() < 0.5 else plan.cfg.attack_bias
    members = np.zeros(p, dtype=np.uint8)
    if probe_bias > 0:
        picks = rng.choice(p, size=int(round(probe_bias * p)), replace=False)
        members[picks] = 1

    position = plan.rounds * plan.length
    if plan.encrypted:
        sample_mask = state.sample_rows_mask()
        plain = members.copy()
        if state.hidden_pads is not None:
            if state.distinguisher_world == 0:
                plain[~sample_mask] = 0
            pad_col = state.universe.pad_matrix[:, position].copy()
            pad_col[~sample_mask] = state.hidden_pads[~sample_mask, position]
        else:
            if plan.ideal:
                plain[~sample_mask] = 0
            pad_col = _key_stream_columns(state.universe, position, 1)[:, 0].copy()
        payload_col = plain ^ pad_col
        for key in state.universe.keys:
            key.used = max(key.used, position + 1)
    else:
        payload_col = members
    query = FinalQuery(state, payload_col)
    state.final_answer = _checked(oracle.answer(query), state)
    state.queries_issued += 1

    true_mean = int((members.astype(bool) & ~state.t_mask).sum()) / p
    bound = (plan.cfg.n - plan.cfg.reserve) / p
    state.probe_bias = probe_bias
    state.final_true_mean = true_mean
    state.claim_bound_ok = abs(true_mean - probe_bias) <= bound + 1e-12
    if not state.claim_bound_ok:
        raise AssertionError(
            f"final-probe bound violated: |{true_mean} - {probe_bias}| > {bound}"
        )
    return finish_outcome(state)


# ----------------------------------------------------------------------
# Outcomes


@dataclass(frozen=True)
class AttackOutcome:
    """Verdicts and accounting for one completed attack run."""

    mode: str
    n: int
    population: int
    length: int
    rounds: int
    reserve: int
    missed: int
    recovery_fraction: float
    probe_bias: float
    final_answer: float
    final_true_mean: float
    queries_issued: int
    recovery_succeeded: bool
    final_accurate: bool
    event_consistency: bool
    event_recovery: bool
    event_final: bool
    claim_bound_ok: bool
    trace_log: tuple = ()

    @property
    def events(self) -> dict:
        return {
            "consistency": self.event_consistency,
            "recovery": self.event_recovery,
            "final": self.event_final,
        }


def evaluate_events(state: AttackState) -> tuple[bool, bool, bool]:
    """The judged events: every round's word consistent with the unmasked
    coalition, recovery within the reserve, and (given recovery) a final
    answer within tolerance of the drawn bias."""
    plan = state.plan
    consistency = all(state.round_flags) if state.round_flags else True
    recovery = state.missed_count() <= plan.cfg.reserve
    final = False
    if state.final_answer is not None and state.probe_bias is not None:
        final = recovery and (
            abs(state.final_answer - state.probe_bias) <= plan.cfg.final_tolerance
        )
    return consistency, recovery, final


def finish_outcome(state: AttackState) -> AttackOutcome:
    plan = state.plan
    consistency, recovery, final = evaluate_events(state)
    missed = state.missed_count()
    sample_unique = len(state.sample_ids)
    recovered = sample_unique - missed
    final_accurate = (
        abs(state.final_answer - state.final_true_mean) <= plan.cfg.final_tolerance
        if state.final_answer is not None else False
    )
    return AttackOutcome(
        mode=plan.cfg.mode,
        n=plan.cfg.n,
        population=plan.population,
        length=plan.length,
        rounds=plan.rounds,
        reserve=plan.cfg.reserve,
        missed=missed,
        recovery_fraction=recovered / sample_unique if sample_unique else 0.0,
        probe_bias=float("nan") if state.probe_bias is None else state.probe_bias,
        final_answer=float("nan") if state.final_answer is None else state.final_answer,
        final_true_mean=float("nan") if state.final_true_mean is None else state.final_true_mean,
        queries_issued=state.queries_issued,
        recovery_succeeded=bool(recovery),
        final_accurate=bool(final_accurate),
        event_consistency=bool(consistency),
        event_recovery=bool(recovery),
        event_final=bool(final),
        claim_bound_ok=True if state.claim_bound_ok is None else bool(state.claim_bound_ok),
        trace_log=tuple(state.trace_log),
    )


# ----------------------------------------------------------------------
# End-to-end runs


def _prepare_state(plan: AttackPlan, seed: int, oracle_factory,
                   distinguisher=None):
    universe = _build_universe(plan, substream(seed, "keys"))
    if plan.privacy:
        sample = universe.dist.sample_subset(plan.cfg.n, substream(seed, "sample"))
    else:
        sample = universe.dist.sample(plan.cfg.n, substream(seed, "sample"))
    codes = [
        fpcode.gen(plan.params, substream(seed, "code", r), max_bits=plan.cfg.max_bits)
        for r in range(1, plan.rounds + 1)
    ]
    payloads = None
    if plan.encrypted:
        sample_mask = np.zeros(plan.population, dtype=bool)
        sample_mask[np.unique(sample.indices) - 1] = True
        payloads = []
        for r, code in enumerate(codes):
            plain = code.packed
            zero_off_sample = plan.ideal if distinguisher is None else distinguisher[0] == 0
            if zero_off_sample:
                plain = plain.copy()
                plain[~sample_mask] = 0
            pad_cols = _key_stream_columns(universe, r * plan.length, plan.length)
            if distinguisher is not None:
                pad_cols = pad_cols.copy()
                hidden = distinguisher[1]
                pad_cols[~sample_mask] = hidden[~sample_mask,
                                                r * plan.length:(r + 1) * plan.length]
            payloads.append(plain ^ bitmat.pack_rows(pad_cols))
        for key in universe.keys:
            key.used = plan.rounds * plan.length
    threshold = fpcode.get_threshold(plan.params, rule=plan.cfg.trace_rule)
    state = AttackState(plan=plan, universe=universe, sample=sample, codes=codes,
                        payloads=payloads, threshold=threshold)
    if distinguisher is not None:
        state.distinguisher_world, state.hidden_pads = distinguisher
    oracle = _make_oracle(oracle_factory, plan, universe, sample, seed)
    return state, oracle


def _make_oracle(oracle_factory, plan, universe, sample, seed):
    decl = UniverseDecl(
        population=plan.population,
        dim=plan.dim,
        elements=None if plan.encrypted else universe.dist.elements,
    )
    factory = build_factory(oracle_factory) if isinstance(oracle_factory, OracleSpec) \
        else oracle_factory
    sig = inspect.signature(factory)
    accepts_universe = len(sig.parameters) >= 3 or any(
        p.kind == inspect.Parameter.VAR_POSITIONAL for p in sig.parameters.values()
    )
    if accepts_universe:
        return factory(sample, substream(seed, "oracle"), decl)
    return factory(sample, substream(seed, "oracle"))


def run_attack(oracle_factory, cfg: AttackConfig, seed: int) -> AttackOutcome:
    """Plant, recover, probe: the full accuracy-game attack."""
    plan = resolve(cfg)
    if plan.privacy:
        raise ConfigError("use run_privacy_attack for privacy modes")
    state, oracle = _prepare_state(plan, seed, oracle_factory)
    run_recovery_phase(oracle, state)
    outcome = run_attack_phase(oracle, state, substream(seed, "phi"))
    assert outcome.queries_issued == plan.query_budget
    return outcome


@dataclass(frozen=True)
class PrivacyOutcome:
    mode: str
    n: int
    population: int
    length: int
    rounds: int
    recovered: frozenset
    sym_diff: int
    queries_issued: int
    rescale_checked: tuple
    rescale_ok: tuple
    trace_log: tuple = ()


def run_privacy_attack(oracle_factory, cfg: AttackConfig, seed: int) -> PrivacyOutcome:
    """Reconstruction-only attack on a hidden half of a 2n-point universe."""
    plan = resolve(cfg)
    if not plan.privacy:
        raise ConfigError("run_privacy_attack requires a privacy mode")
    state, oracle = _prepare_state(plan, seed, oracle_factory)
    run_recovery_phase(oracle, state)
    assert state.queries_issued == plan.query_budget
    recovered = frozenset(state.t_order)
    return PrivacyOutcome(
        mode=plan.cfg.mode,
        n=cfg.n,
        population=plan.population,
        length=plan.length,
        rounds=plan.rounds,
        recovered=recovered,
        sym_diff=len(state.sample_ids ^ recovered),
        queries_issued=state.queries_issued,
        rescale_checked=tuple(state.rescale_checked),
        rescale_ok=tuple(state.rescale_ok),
        trace_log=tuple(state.trace_log),
    )


def run_distinguisher(event, oracle_factory, world: int, cfg: AttackConfig,
                      seed: int) -> int:
    """Simulate the attack with off-sample ciphertexts from a two-world
    encryption oracle; output whether the selected event occurred."""
    if world not in (0, 1):
        raise ParameterError("world must be 0 or 1")
    if isinstance(event, int):
        if not 1 <= event <= 3:
            raise ParameterError("event index must be 1, 2 or 3")
        event = EVENT_NAMES[event - 1]
    if event not in EVENT_NAMES:
        raise ParameterError(f"unknown event {event!r}")
    plan = resolve(replace(cfg, mode="encrypted"))
    if plan.cfg.scheme != "otp":
        raise ConfigError("the distinguisher harness is built for the pad scheme")
    hidden = substream(seed, "ekeys").integers(
        0, 256, size=(plan.population, plan.cipher_count), dtype=np.uint8) & 1
    state, oracle = _prepare_state(plan, seed, oracle_factory,
                                   distinguisher=(world, hidden))
    run_recovery_phase(oracle, state)
    run_attack_phase(oracle, state, substream(seed, "phi"))
    consistency, recovery, final = evaluate_events(state)
    return int({"consistency": consistency, "recovery": recovery, "final": final}[event])
