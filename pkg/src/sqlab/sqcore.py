"""Statistical-query universe: distributions, queries, transcripts, games.

A query is a 0/1 predicate over universe elements; its distribution answer
is the weighted mean over a finite support and its sample answer the mean
over an ordered tuple (duplicates counted).  The accuracy game feeds an
adaptive analyst's queries to a stateful oracle and logs every exchange;
the non-privacy game additionally scores how much of the hidden sample the
analyst reconstructs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .crypto import SecretKey
from .errors import ParameterError, ProtocolViolation


@dataclass(frozen=True, eq=False)
class Element:
    """A universe point: a 1-based index, optionally carrying a secret key."""

    index: int
    key: SecretKey | None = None

    def __repr__(self):
        return f"Element({self.index}{', keyed' if self.key is not None else ''})"


def element_bits(element: Element, dim: int, population: int) -> np.ndarray:
    """The element as a d-bit string: index bits, then key bits, zero padding."""
    index_bits = max(1, (population - 1).bit_length())
    key_bits = 0 if element.key is None else element.key.key_bits
    if index_bits + key_bits > dim:
        raise ParameterError(
            f"element needs {index_bits + key_bits} bits but dim is {dim}"
        )
    out = np.zeros(dim, dtype=np.uint8)
    value = element.index - 1
    for b in range(index_bits):
        out[b] = (value >> b) & 1
    if element.key is not None:
        for b in range(key_bits):
            out[index_bits + b] = element.key.bit(b)
    return out


def element_from_bits(bits: np.ndarray, population: int, key_budget: int = 0) -> Element:
    """Inverse of ``element_bits`` (pad-key elements only)."""
    from .crypto import pad_key_from_bits

    bits = np.asarray(bits, dtype=np.uint8)
    index_bits = max(1, (population - 1).bit_length())
    value = 0
    for b in range(index_bits):
        value |= int(bits[b]) << b
    key = None
    if key_budget:
        key = pad_key_from_bits(bits[index_bits : index_bits + key_budget].copy())
    return Element(index=value + 1, key=key)


class Query:
    """An evaluable 0/1 predicate with declared description size."""

    def __init__(self, fn, size: int = 1, qid: str = ""):
        self._fn = fn
        self.size = size
        self.qid = qid
        self.calls = 0  # total point evaluations

    def evaluate(self, element: Element) -> int:
        self.calls += 1
        value = self._fn(element)
        if value not in (0, 1):
            raise ParameterError(f"query {self.qid!r} returned non-bit {value!r}")
        return value

    def evaluate_many(self, elements) -> np.ndarray:
        self.calls += len(elements)
        out = np.fromiter((self._fn(e) for e in elements), dtype=np.uint8, count=len(elements))
        if out.size and (out.max() > 1):
            raise ParameterError(f"query {self.qid!r} returned non-bit values")
        return out


class TableQuery(Query):
    """Predicate given by an explicit 0/1 table over indices 1..population."""

    def __init__(self, table, qid: str = ""):
        self.table = np.asarray(table, dtype=np.uint8)
        if self.table.ndim != 1 or np.any(self.table > 1):
            raise ParameterError("table must be a flat 0/1 vector")
        super().__init__(self._lookup, size=self.table.size, qid=qid)

    def _lookup(self, element: Element) -> int:
        if not 1 <= element.index <= self.table.size:
            return 0
        return int(self.table[element.index - 1])

    def evaluate_many(self, elements) -> np.ndarray:
        self.calls += len(elements)
        idx = np.fromiter((e.index for e in elements), dtype=np.int64, count=len(elements))
        ok = (idx >= 1) & (idx <= self.table.size)
        out = np.zeros(len(elements), dtype=np.uint8)
        out[ok] = self.table[idx[ok] - 1]
        return out


@dataclass
class Distribution:
    """Finite-support distribution over universe elements."""

    elements: tuple
    weights: np.ndarray
    uniform: bool = False

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if len(self.elements) != self.weights.size:
            raise ParameterError("support and weights must have equal length")
        if len(self.elements) == 0:
            raise ParameterError("support must be nonempty")
        if np.any(self.weights < 0):
            raise ParameterError("weights must be nonnegative")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise ParameterError("weights must sum to 1 within 1e-12")
        indices = [e.index for e in self.elements]
        if len(set(indices)) != len(indices):
            raise ParameterError("support elements must be distinct")

    @classmethod
    def uniform_over(cls, elements) -> "Distribution":
        elements = tuple(elements)
        n = len(elements)
        if n == 0:
            raise ParameterError("support must be nonempty")
        return cls(elements=elements, weights=np.full(n, 1.0 / n), uniform=True)

    @property
    def support_size(self) -> int:
        return len(self.elements)

    def sample(self, n: int, rng: np.random.Generator) -> "Sample":
        """n iid draws (with replacement)."""
        if n < 1:
            raise ParameterError(f"sample size must be >= 1, got {n}")
        if self.uniform:
            picks = rng.integers(0, self.support_size, size=n)
        else:
            picks = rng.choice(self.support_size, size=n, replace=True, p=self.weights)
        return Sample(elements=tuple(self.elements[int(i)] for i in picks))

    def sample_subset(self, n: int, rng: np.random.Generator) -> "Sample":
        """n distinct draws (without replacement), uniform support only."""
        if not self.uniform:
            raise ParameterError("subset sampling requires a uniform distribution")
        if not 1 <= n <= self.support_size:
            raise ParameterError(f"subset size {n} outside [1, {self.support_size}]")
        picks = rng.choice(self.support_size, size=n, replace=False)
        picks.sort()
        return Sample(elements=tuple(self.elements[int(i)] for i in picks))


@dataclass
class Sample:
    """Ordered tuple of drawn elements plus derived index structure."""

    elements: tuple

    def __post_init__(self):
        self.indices = np.fromiter((e.index for e in self.elements), dtype=np.int64,
                                   count=len(self.elements))
        self.index_set = frozenset(int(i) for i in self.indices)

    @property
    def n(self) -> int:
        return len(self.elements)


def true_mean(query: Query, dist: Distribution) -> float:
    """Exact query mean under the distribution.

    Uniform supports take the count/size path so the result is bit-identical
    to an oracle that averages the same 0/1 values.
    """
    values = query.evaluate_many(dist.elements)
    if dist.uniform:
        return float(int(values.sum(dtype=np.int64)) / dist.support_size)
    return float(dist.weights @ values)


def empirical_mean(query: Query, sample: Sample) -> float:
    """Query mean over the sample tuple, duplicates counted."""
    if sample.n < 1:
        raise ParameterError("sample must be nonempty")
    values = query.evaluate_many(sample.elements)
    return float(int(values.sum(dtype=np.int64)) / sample.n)


# ----------------------------------------------------------------------
# Transcripts


@dataclass(frozen=True)
class Record:
    seq: int
    round_label: str
    query_id: str
    answer: float
    true_mean: float | None = None
    empirical_mean: float | None = None


@dataclass
class Transcript:
    """Append-only ordered log of (query, answer) exchanges."""

    meta: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    aborted: bool = False

    def append(self, round_label: str, query_id: str, answer: float,
               true_mean: float | None = None, empirical_mean: float | None = None) -> Record:
        rec = Record(
            seq=len(self.records),
            round_label=str(round_label),
            query_id=str(query_id),
            answer=float(answer),
            true_mean=None if true_mean is None else float(true_mean),
            empirical_mean=None if empirical_mean is None else float(empirical_mean),
        )
        self.records.append(rec)
        return rec

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "header", **self.meta}, sort_keys=True)]
        for r in self.records:
            lines.append(json.dumps(
                {
                    "type": "record",
                    "seq": r.seq,
                    "round": r.round_label,
                    "query_id": r.query_id,
                    "answer": r.answer,
                    "true_mean": r.true_mean,
                    "empirical_mean": r.empirical_mean,
                },
                sort_keys=True,
            ))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        t = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = obj.pop("type", "record")
            if kind == "header":
                t.meta = obj
            else:
                t.records.append(Record(
                    seq=obj["seq"],
                    round_label=obj["round"],
                    query_id=obj["query_id"],
                    answer=obj["answer"],
                    true_mean=obj.get("true_mean"),
                    empirical_mean=obj.get("empirical_mean"),
                ))
        return t


def judge_accuracy(transcript: Transcript, alpha: float) -> bool:
    """Every answer within alpha of the distribution mean (closed bound)."""
    return all(
        r.true_mean is not None and abs(r.answer - r.true_mean) <= alpha
        for r in transcript.records
    ) if transcript.records else True


def judge_sample_accuracy(transcript: Transcript, alpha: float) -> bool:
    """Every answer within alpha of the sample mean (closed bound)."""
    return all(
        r.empirical_mean is not None and abs(r.answer - r.empirical_mean) <= alpha
        for r in transcript.records
    ) if transcript.records else True


# ----------------------------------------------------------------------
# Games


def _checked_answer(oracle, query, transcript):
    answer = oracle.answer(query)
    if not isinstance(answer, (int, float)) or not math.isfinite(answer) or not 0.0 <= answer <= 1.0:
        transcript.aborted = True
        raise ProtocolViolation(
            f"oracle answered {answer!r} outside [0, 1]", transcript=transcript
        )
    return float(answer)


def run_acc_game(analyst, oracle_factory, n: int, d: int, k: int,
                 rng: np.random.Generator) -> Transcript:
    """Accuracy game: analyst picks the distribution, oracle holds a sample.

    Stops after k queries or when the analyst returns None.  The returned
    transcript carries ``distribution`` and ``sample`` attributes for
    in-process judging.
    """
    dist = analyst.distribution(rng)
    sample = dist.sample(n, rng)
    oracle = oracle_factory(sample, rng)
    transcript = Transcript(meta={"game": "accuracy", "n": n, "d": d, "k": k})
    for j in range(k):
        query = analyst.next_query(transcript)
        if query is None:
            break
        answer = _checked_answer(oracle, query, transcript)
        transcript.append(
            round_label=str(j + 1),
            query_id=query.qid or f"q{j + 1}",
            answer=answer,
            true_mean=true_mean(query, dist),
            empirical_mean=empirical_mean(query, sample),
        )
    transcript.distribution = dist
    transcript.sample = sample
    return transcript


@dataclass
class NonPrivacyResult:
    transcript: Transcript
    sample: Sample
    recovered: frozenset
    sym_diff: int


def run_nonprivacy_game(analyst, oracle_factory, n: int, d: int, k: int,
                        rng: np.random.Generator) -> NonPrivacyResult:
    """Reconstruction game: hidden size-n subset of the analyst's 2n points."""
    universe = analyst.choose_universe(rng)
    if len(universe.elements) != 2 * n:
        raise ParameterError(f"universe must have 2n = {2 * n} points")
    sample = universe.sample_subset(n, rng)
    oracle = oracle_factory(sample, rng)
    transcript = Transcript(meta={"game": "non-privacy", "n": n, "d": d, "k": k})
    for j in range(k):
        query = analyst.next_query(transcript)
        if query is None:
            break
        answer = _checked_answer(oracle, query, transcript)
        transcript.append(
            round_label=str(j + 1),
            query_id=query.qid or f"q{j + 1}",
            answer=answer,
            empirical_mean=empirical_mean(query, sample),
        )
    recovered = frozenset(int(i) for i in analyst.recover(transcript))
    sym = symmetric_difference(sample.index_set, recovered)
    return NonPrivacyResult(transcript=transcript, sample=sample,
                            recovered=recovered, sym_diff=sym)


def symmetric_difference(left, right) -> int:
    return len(frozenset(left) ^ frozenset(right))
