"""Answer oracles the attacks run against.

The empirical oracle returns exact sample means; the noisy oracle
perturbs them (the stand-in for noise-addition answer mechanisms); the
subsample oracle averages over a fixed random subsample; the cheating
oracle ignores its sample where it can and answers from the declared
universe instead, which makes it distribution-accurate but non-natural.

``naturalness_audit`` tests the defining property of natural oracles:
queries that agree on the sample must produce identically distributed
answers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import ParameterError
from .rng import substream
from .sqcore import Query, Sample, TableQuery, empirical_mean


@dataclass(frozen=True)
class UniverseDecl:
    """What the harness declares to an oracle about the planted universe."""

    population: int
    dim: int
    elements: tuple | None = None  # bare elements in table mode, else None


@dataclass(frozen=True)
class OracleSpec:
    kind: str = "empirical"  # empirical | noisy | subsample | cheating
    sigma: float = 0.0
    law: str = "gaussian"  # or "laplace"
    fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in ("empirical", "noisy", "subsample", "cheating"):
            raise ParameterError(f"unknown oracle kind {self.kind!r}")
        if self.sigma < 0:
            raise ParameterError("noise scale must be nonnegative")
        if self.law not in ("gaussian", "laplace"):
            raise ParameterError(f"unknown noise law {self.law!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ParameterError("subsample fraction must be in (0, 1]")


def _rows0(sample: Sample) -> np.ndarray:
    return sample.indices - 1


class EmpiricalOracle:
    """Answers the exact sample mean of every query."""

    natural = True

    def __init__(self, sample: Sample):
        self.sample = sample
        self._rows = _rows0(sample)

    def answer(self, query: Query) -> float:
        if hasattr(query, "eval_rows"):
            bits = query.eval_rows(self._rows)
            return float(int(bits.sum(dtype=np.int64)) / self.sample.n)
        return empirical_mean(query, self.sample)


class NoisyOracle:
    """Sample mean plus independent per-query noise, clamped to [0, 1]."""

    natural = True

    def __init__(self, sample: Sample, sigma: float, law: str, rng: np.random.Generator):
        if sigma < 0:
            raise ParameterError("noise scale must be nonnegative")
        self._inner = EmpiricalOracle(sample)
        self.sigma = sigma
        self.law = law
        self._rng = rng

    def answer(self, query: Query) -> float:
        base = self._inner.answer(query)
        if self.sigma == 0:
            return base
        if self.law == "gaussian":
            noise = self._rng.normal(0.0, self.sigma)
        else:
            noise = self._rng.laplace(0.0, self.sigma)
        return float(min(1.0, max(0.0, base + noise)))


class SubsampleOracle:
    """Sample mean over a fixed random subsample of the sample."""

    natural = True

    def __init__(self, sample: Sample, fraction: float, rng: np.random.Generator):
        if not 0.0 < fraction <= 1.0:
            raise ParameterError("subsample fraction must be in (0, 1]")
        size = max(1, int(round(fraction * sample.n)))
        picks = np.sort(rng.choice(sample.n, size=size, replace=False))
        self.sample = sample
        self.sub = Sample(elements=tuple(sample.elements[int(i)] for i in picks))
        self._inner = EmpiricalOracle(self.sub)

    def answer(self, query: Query) -> float:
        return self._inner.answer(query)


class CheatingOracle:
    """Evaluates queries over the declared universe, not just its sample.

    In table mode (the universe's bare elements are declared) the answer is
    the exact population mean.  For encrypted queries the oracle can only
    decrypt rows whose keys appear in its sample; unknown rows contribute
    one half each.
    """

    natural = False

    def __init__(self, sample: Sample, universe: UniverseDecl):
        if universe is None:
            raise ParameterError("cheating oracle needs a declared universe")
        self.sample = sample
        self.universe = universe
        by_index = {}
        for element in sample.elements:
            by_index.setdefault(element.index, element)
        self._held = tuple(by_index.values())
        self._held_rows = np.array([e.index - 1 for e in self._held], dtype=np.int64)

    def answer(self, query: Query) -> float:
        p = self.universe.population
        if self.universe.elements is not None:
            if hasattr(query, "population_table"):
                table = query.population_table()
            else:
                table = query.evaluate_many(self.universe.elements)
            return float(int(table.sum(dtype=np.int64)) / p)
        masked = getattr(query, "masked_rows", None)
        if masked is None or not hasattr(query, "eval_rows"):
            raise ParameterError(
                "cheating oracle without a table universe only answers "
                "ciphertext queries"
            )
        keep = ~masked[self._held_rows]
        known = self._held_rows[keep]
        bits = query.eval_rows(known)
        unknown = p - int(masked.sum()) - known.size
        return float((int(bits.sum(dtype=np.int64)) + 0.5 * unknown) / p)


def empirical_oracle(sample: Sample) -> EmpiricalOracle:
    return EmpiricalOracle(sample)


def noisy_oracle(sample: Sample, sigma: float, law: str, rng: np.random.Generator) -> NoisyOracle:
    return NoisyOracle(sample, sigma, law, rng)


def cheating_oracle(sample: Sample, universe: UniverseDecl) -> CheatingOracle:
    return CheatingOracle(sample, universe)


def build_factory(spec: OracleSpec):
    """Factory with signature (sample, rng, universe=None) -> oracle."""

    def make(sample: Sample, rng: np.random.Generator, universe: UniverseDecl | None = None):
        if spec.kind == "empirical":
            return EmpiricalOracle(sample)
        if spec.kind == "noisy":
            return NoisyOracle(sample, spec.sigma, spec.law, rng)
        if spec.kind == "subsample":
            return SubsampleOracle(sample, spec.fraction, rng)
        return CheatingOracle(sample, universe)

    make.spec = spec
    return make


# ----------------------------------------------------------------------
# Naturalness audit


@dataclass
class AuditReport:
    pairs: int
    rejections: int
    significance: float
    passed: bool

    @property
    def rejection_rate(self) -> float:
        return self.rejections / self.pairs if self.pairs else 0.0


def naturalness_audit(
    oracle_factory,
    pairs: int = 200,
    population: int = 64,
    n: int = 16,
    draws_per_side: int = 24,
    significance: float = 0.01,
    seed: int = 0,
) -> AuditReport:
    """Probe whether answers depend on a query's off-sample values.

    Each trial builds two table queries that agree on the fixed sample but
    differ off it, collects answers from fresh oracle instances, and runs a
    two-sample test.  A natural oracle's rejection rate stays at the test's
    significance level; answer distributions that actually differ are
    rejected almost surely.
    """
    from .sqcore import Element

    rng = substream(seed, "audit")
    elements = tuple(Element(i) for i in range(1, population + 1))
    sample_rows = rng.choice(population, size=n, replace=False)
    sample = Sample(elements=tuple(elements[int(i)] for i in sample_rows))
    off_sample = np.array(sorted(set(range(population)) - set(int(i) for i in sample_rows)))
    if off_sample.size == 0:
        raise ParameterError("audit needs off-sample universe points")

    rejections = 0
    for pair in range(pairs):
        table = (rng.random(population) < 0.5).astype(np.uint8)
        twin = table.copy()
        twin[int(rng.choice(off_sample))] ^= 1  # minimal off-sample disagreement
        base_q = TableQuery(table, qid=f"audit-{pair}-a")
        twin_q = TableQuery(twin, qid=f"audit-{pair}-b")
        left = np.array([
            oracle_factory(sample, substream(seed, "audit-draw", pair, 0, t)).answer(base_q)
            for t in range(draws_per_side)
        ])
        right = np.array([
            oracle_factory(sample, substream(seed, "audit-draw", pair, 1, t)).answer(twin_q)
            for t in range(draws_per_side)
        ])
        if np.array_equal(left, right):
            continue
        result = stats.ks_2samp(left, right, method="auto")
        if result.pvalue < significance:
            rejections += 1
    limit = significance + 3.0 * np.sqrt(significance * (1 - significance) / pairs) + 1e-9
    return AuditReport(
        pairs=pairs,
        rejections=rejections,
        significance=significance,
        passed=(rejections / pairs) <= limit,
    )
