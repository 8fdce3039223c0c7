"""Error-robust, fully collusion-resilient binary fingerprinting codes.

A code is a p x L bit matrix whose columns are independent Bernoulli draws
with per-column biases from the arcsine family.  Any combined word that
stays close to the column means of a row coalition can be traced back to a
coalition member; tracing scores every user against the word's per-column
residual signal and accuses the top scorer when it clears an empirically
calibrated threshold.

Tracing thresholds are calibrated per (users, length, error) configuration
as the (1 - error) quantile of normalized innocent scores over seeded
calibration runs, and cached on disk (see ``calibrate_threshold``).
"""

from __future__ import annotations

import io
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bitmat
from .errors import FormatError, ParameterError, ResourceError
from .rng import row_seeds, substream

LENGTH_CONSTANT = 100.0
BIAS_CUTOFF_FACTOR = 300.0
DEFAULT_MAX_BITS = 2**33  # ~1 GiB packed
MAGIC = b"FPC1"

_CAL_SEED = 0x5EEDC0DE  # fixed root so thresholds never depend on caller streams
_CAL_SAMPLES = 1000
_CAL_BLOCK = 40

_threshold_cache: dict[str, float] = {}


@dataclass(frozen=True)
class CodeParams:
    """Code-generation and judging parameters for one configuration."""

    users: int
    error: float
    length: int
    consistency_fraction: float = 0.99
    consistency_slack: float = 1.0 / 3.0
    agreement_slack: float = 1.0 / 6.0

    def __post_init__(self):
        if self.users < 1:
            raise ParameterError(f"users must be >= 1, got {self.users}")
        if not 0.0 < self.error < 1.0:
            raise ParameterError(f"error must be in (0, 1), got {self.error}")
        if self.length < 1:
            raise ParameterError(f"length must be >= 1, got {self.length}")
        if not 0.0 < self.consistency_fraction <= 1.0:
            raise ParameterError("consistency_fraction must be in (0, 1]")
        if not 0.0 < self.consistency_slack < 0.5:
            raise ParameterError("consistency_slack must be in (0, 1/2)")
        if not 0.0 < self.agreement_slack < 0.5:
            raise ParameterError("agreement_slack must be in (0, 1/2)")


def plan_length(users: int, error: float, constant: float = LENGTH_CONSTANT) -> int:
    """Column count needed for full-collusion tracing among ``users``."""
    if users < 1:
        raise ParameterError(f"users must be >= 1, got {users}")
    if not 0.0 < error < 1.0:
        raise ParameterError(f"error must be in (0, 1), got {error}")
    return int(math.ceil(constant * users * users * math.log(users / error)))


def sample_biases(params: CodeParams, rng: np.random.Generator) -> np.ndarray:
    """Per-column one-probabilities: sin^2 of a truncated uniform angle.

    The truncation keeps every bias inside
    [1/(300 users), 1 - 1/(300 users)].
    """
    cutoff = math.asin(math.sqrt(1.0 / (BIAS_CUTOFF_FACTOR * params.users)))
    angles = rng.uniform(cutoff, math.pi / 2.0 - cutoff, params.length)
    return np.sin(angles) ** 2


@dataclass
class CodeMatrix:
    """A generated code: packed bits, the bias vector, and generation seeds."""

    params: CodeParams
    biases: np.ndarray
    packed: np.ndarray  # (users, n_words(length)) uint64
    seeds: np.ndarray | None = None  # per-row generation seeds, None if loaded

    @property
    def users(self) -> int:
        return self.params.users

    @property
    def length(self) -> int:
        return self.params.length

    def column_means(self, user_ids=None) -> np.ndarray:
        """Mean of each column, optionally over a subset of 1-based users."""
        rows = None if user_ids is None else _rows_from_ids(self, user_ids)
        count = self.users if rows is None else len(rows)
        if count == 0:
            raise ParameterError("cannot take column means over an empty user set")
        return bitmat.column_counts(self.packed, self.length, rows=rows) / count

    def bit(self, user_id: int, column: int) -> int:
        """Entry for a 1-based user and 1-based column."""
        if not 1 <= user_id <= self.users:
            raise ParameterError(f"user {user_id} outside [1, {self.users}]")
        if not 1 <= column <= self.length:
            raise ParameterError(f"column {column} outside [1, {self.length}]")
        return int(bitmat.get_bits(self.packed, np.array([user_id - 1]), np.array([column - 1]))[0])


def _rows_from_ids(code: CodeMatrix, user_ids) -> np.ndarray:
    rows = np.asarray(sorted(set(int(u) for u in user_ids)), dtype=np.int64)
    if rows.size and (rows[0] < 1 or rows[-1] > code.users):
        raise ParameterError(f"user ids must lie in [1, {code.users}]")
    return rows - 1


def gen(params: CodeParams, rng: np.random.Generator, max_bits: int = DEFAULT_MAX_BITS) -> CodeMatrix:
    """Draw biases, then independent Bernoulli(bias_j) entries, bit-packed."""
    total = params.users * params.length
    if total > max_bits:
        feasible = max_bits // params.users
        raise ResourceError(
            f"matrix of {total} bits exceeds budget of {max_bits}; "
            f"largest feasible length at users={params.users} is {feasible}"
        )
    biases = sample_biases(params, rng)
    seeds = row_seeds(rng, params.users)
    packed = bitmat.bernoulli_pack(biases, seeds)
    return CodeMatrix(params=params, biases=biases, packed=packed, seeds=seeds)


@dataclass
class CodeView:
    """Row-filtered view of a code: the sub-code of a user coalition."""

    code: CodeMatrix
    user_ids: np.ndarray  # sorted, 1-based

    @property
    def rows(self) -> np.ndarray:
        return self.user_ids - 1

    @property
    def size(self) -> int:
        return len(self.user_ids)

    @property
    def length(self) -> int:
        return self.code.length

    def column_means(self) -> np.ndarray:
        if self.size == 0:
            raise ParameterError("empty coalition has no column means")
        counts = bitmat.column_counts(self.code.packed, self.code.length, rows=self.rows)
        return counts / self.size

    def bits(self) -> np.ndarray:
        """Materialize the coalition rows as a 0/1 matrix."""
        return bitmat.unpack_rows(self.code.packed, self.code.length, rows=self.rows)


def restrict(code: CodeMatrix, user_ids) -> CodeView:
    """Sub-code seen by a coalition (the rows the adversary may combine)."""
    rows = _rows_from_ids(code, user_ids)
    return CodeView(code=code, user_ids=rows + 1)


def as_word(values, length: int) -> np.ndarray:
    """Validate and clamp a combined word to [0, 1]."""
    word = np.asarray(values, dtype=np.float64)
    if word.shape != (length,):
        raise ParameterError(f"word must have length {length}, got shape {word.shape}")
    if not np.all(np.isfinite(word)):
        raise ParameterError("word entries must be finite")
    return np.clip(word, 0.0, 1.0)


def is_consistent(view: CodeView, word, fraction: float | None = None, slack: float | None = None) -> bool:
    """Does the word track the coalition's column means on enough columns?"""
    if isinstance(view, CodeMatrix):
        view = restrict(view, range(1, view.users + 1))
    if view.size == 0:
        raise ParameterError("consistency is undefined for an empty coalition")
    params = view.code.params
    fraction = params.consistency_fraction if fraction is None else fraction
    slack = params.consistency_slack if slack is None else slack
    word = as_word(word, view.length)
    close = np.abs(word - view.column_means()) <= slack
    return int(close.sum()) >= fraction * view.length - 1e-9


def consistent_column_count(view: CodeView, word, slack: float | None = None) -> int:
    """Number of columns where the word is within ``slack`` of the coalition mean."""
    if view.size == 0:
        raise ParameterError("consistency is undefined for an empty coalition")
    slack = view.code.params.consistency_slack if slack is None else slack
    word = as_word(word, view.length)
    return int((np.abs(word - view.column_means()) <= slack).sum())


def agreement_fraction(code: CodeMatrix, user_ids, slack: float | None = None) -> float:
    """Fraction of columns where the full-population and coalition means agree."""
    rows = _rows_from_ids(code, user_ids)
    if rows.size == 0:
        raise ParameterError("agreement is undefined for an empty coalition")
    slack = code.params.agreement_slack if slack is None else slack
    full = code.column_means()
    sub = bitmat.column_counts(code.packed, code.length, rows=rows) / rows.size
    return float((np.abs(full - sub) <= slack).mean())


def hoeffding_tail(tau: float, m: int, two_sided: bool = False) -> float:
    """Concentration bound exp(-2 tau^2 m) for a mean of m [0,1] variables."""
    if tau < 0:
        raise ParameterError(f"deviation must be nonnegative, got {tau}")
    if m < 1:
        raise ParameterError(f"sample count must be >= 1, got {m}")
    bound = math.exp(-2.0 * tau * tau * m)
    return 2.0 * bound if two_sided else bound


# ----------------------------------------------------------------------
# Tracing


@dataclass(frozen=True)
class TraceOutcome:
    """Either an accused 1-based user or no accusation."""

    accused: int | None
    score: float = 0.0
    threshold: float = float("inf")

    @property
    def is_accusation(self) -> bool:
        return self.accused is not None


def _score_weights(biases: np.ndarray):
    qj = 1.0 - biases
    span = 1.0 / np.sqrt(biases * qj)  # per-column gap between the two score values
    low = -np.sqrt(biases / qj)  # score contribution of a zero bit
    return span, low


def _residual_signal(word: np.ndarray, biases: np.ndarray):
    """Least-squares scale fit of the word against the biases, and residuals.

    The fitted scale absorbs answer shrinkage (oracles whose answers carry
    only part of the population mass), so residuals isolate the per-column
    signal that correlates with individual rows.
    """
    denom = float(biases @ biases)
    scale = float(word @ biases) / denom
    res = word - scale * biases
    rss = float(res @ res)
    return res, rss, scale


def trace(
    code: CodeMatrix,
    word,
    rule: str = "residual",
    threshold: float | None = None,
    cache_dir=None,
) -> TraceOutcome:
    """Accuse the user whose row best explains the combined word.

    ``residual`` scores every row against the word's scale-fitted residuals;
    ``binary`` rounds the word at 1/2 (ties round to 1) and scores rows over
    the selected columns only.  Both normalize so an innocent row's score
    has unit variance, and accuse argmax only above the calibrated
    threshold.
    """
    word = as_word(word, code.length)
    span, low = _score_weights(code.biases)
    if rule == "residual":
        res, rss, _ = _residual_signal(word, code.biases)
        if rss <= 1e-30:
            return TraceOutcome(accused=None)
        weights = res * span
        base = float(res @ low)
        scale = math.sqrt(rss)
    elif rule == "binary":
        selected = word >= 0.5  # tie rounds to 1
        count = int(selected.sum())
        if count == 0:
            return TraceOutcome(accused=None)
        sel = selected.astype(np.float64)
        weights = sel * span
        base = float(sel @ low)
        scale = math.sqrt(count)
    else:
        raise ParameterError(f"unknown trace rule {rule!r}")
    if threshold is None:
        threshold = get_threshold(code.params, rule=rule, cache_dir=cache_dir)
    scores = (bitmat.row_weight_sums(code.packed, code.length, weights) + base) / scale
    top = int(np.argmax(scores))
    top_score = float(scores[top])
    if top_score > threshold:
        return TraceOutcome(accused=top + 1, score=top_score, threshold=threshold)
    return TraceOutcome(accused=None, score=top_score, threshold=threshold)


# ----------------------------------------------------------------------
# Threshold calibration


def _cache_path(cache_dir=None) -> Path:
    if cache_dir is not None:
        return Path(cache_dir) / "thresholds.json"
    root = os.environ.get("SQLAB_CACHE")
    if root is None:
        root = Path.home() / ".cache" / "sqlab"
    return Path(root) / "thresholds.json"


def _cache_key(users: int, length: int, error: float, rule: str) -> str:
    return f"{users}:{length}:{error!r}:{rule}"


def calibrate_threshold(
    params: CodeParams,
    rule: str = "residual",
    samples: int = _CAL_SAMPLES,
    cache_dir=None,
) -> float:
    """(1 - error) quantile of normalized innocent scores, seeded and cached.

    Each calibration run draws fresh biases, a small coalition whose column
    means form the combined word, and a block of independent innocent rows;
    only the innocent rows' normalized scores enter the quantile.
    """
    key = _cache_key(params.users, params.length, params.error, rule)
    if key in _threshold_cache:
        return _threshold_cache[key]
    disk = _load_disk_cache(cache_dir)
    if key in disk:
        _threshold_cache[key] = disk[key]
        return disk[key]

    rng = substream(_CAL_SEED, "calibration", params.users, params.length, repr(params.error), rule)
    coalition = min(20, max(2, params.users // 5))
    collected = []
    while len(collected) < samples:
        biases = sample_biases(params, rng)
        span, low = _score_weights(biases)
        word_rows = bitmat.bernoulli_pack(biases, row_seeds(rng, coalition))
        word = bitmat.column_counts(word_rows, params.length) / coalition
        if rule == "residual":
            res, rss, _ = _residual_signal(word, biases)
            if rss <= 1e-30:
                continue
            weights, base, scale = res * span, float(res @ low), math.sqrt(rss)
        else:
            sel = (word >= 0.5).astype(np.float64)
            count = sel.sum()
            if count == 0:
                continue
            weights, base, scale = sel * span, float(sel @ low), math.sqrt(count)
        innocents = bitmat.bernoulli_pack(biases, row_seeds(rng, _CAL_BLOCK))
        scores = (bitmat.row_weight_sums(innocents, params.length, weights) + base) / scale
        collected.extend(scores.tolist())
    z = float(np.quantile(np.array(collected[:samples]), 1.0 - params.error, method="higher"))
    _threshold_cache[key] = z
    _store_disk_cache(key, z, cache_dir)
    return z


def get_threshold(params: CodeParams, rule: str = "residual", cache_dir=None) -> float:
    return calibrate_threshold(params, rule=rule, cache_dir=cache_dir)


def _load_disk_cache(cache_dir=None) -> dict:
    path = _cache_path(cache_dir)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return {}


def _store_disk_cache(key: str, value: float, cache_dir=None) -> None:
    path = _cache_path(cache_dir)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        data = _load_disk_cache(cache_dir)
        data[key] = value
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=0, sort_keys=True)
        os.replace(tmp, path)
    except OSError:
        pass  # cache is an optimization only


# ----------------------------------------------------------------------
# Serialization: versioned binary container
#
#   magic "FPC1" | u64 users | u64 length | float64 biases[length]
#   | users rows of ceil(length/8) bytes, little bit order, row-major


def save_code(code: CodeMatrix, dest) -> None:
    own = isinstance(dest, (str, os.PathLike))
    fh = open(dest, "wb") if own else dest
    try:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", code.users, code.length))
        fh.write(np.ascontiguousarray(code.biases, dtype="<f8").tobytes())
        row_bytes = (code.length + 7) // 8
        as_bytes = np.ascontiguousarray(code.packed).view(np.uint8)
        fh.write(np.ascontiguousarray(as_bytes[:, :row_bytes]).tobytes())
    finally:
        if own:
            fh.close()


def load_code(src, error: float = 0.01) -> CodeMatrix:
    """Read a serialized code.  ``error`` restores the judging parameter,
    which the container intentionally does not carry."""
    own = isinstance(src, (str, os.PathLike))
    fh = open(src, "rb") if own else src
    try:
        magic = fh.read(4)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
        header = fh.read(16)
        if len(header) != 16:
            raise FormatError("truncated header")
        users, length = struct.unpack("<QQ", header)
        if users < 1 or length < 1:
            raise FormatError(f"invalid dimensions {users}x{length}")
        bias_raw = fh.read(8 * length)
        if len(bias_raw) != 8 * length:
            raise FormatError("truncated bias vector")
        biases = np.frombuffer(bias_raw, dtype="<f8").copy()
        if np.any(biases <= 0.0) or np.any(biases >= 1.0):
            raise FormatError("biases must lie strictly inside (0, 1)")
        row_bytes = (length + 7) // 8
        raw = fh.read(users * row_bytes)
        if len(raw) != users * row_bytes:
            raise FormatError("truncated bit matrix")
        rows = np.frombuffer(raw, dtype=np.uint8).reshape(users, row_bytes)
        padded = np.zeros((users, bitmat.n_words(length) * 8), dtype=np.uint8)
        padded[:, :row_bytes] = rows
        packed = np.ascontiguousarray(padded).view(np.uint64)
        params = CodeParams(users=int(users), error=error, length=int(length))
        return CodeMatrix(params=params, biases=biases, packed=packed, seeds=None)
    finally:
        if own:
            fh.close()


def code_to_bytes(code: CodeMatrix) -> bytes:
    buf = io.BytesIO()
    save_code(code, buf)
    return buf.getvalue()


def code_from_bytes(raw: bytes, error: float = 0.01) -> CodeMatrix:
    return load_code(io.BytesIO(raw), error=error)
