"""Random batch divisions and the batchmate-exchange coupling.

A division splits {0, ..., n-1} into n/p blocks of equal size p.  The
canonical form sorts each block ascending and orders blocks by their
smallest element, so equal partitions compare and hash equal.

The coupling: given a uniformly drawn division xi and an anchor particle i,
keep xi with probability (p-1)/(n-1); otherwise pick j uniformly outside
i's block and swap i's batchmates with j's (i joins j's old block, j joins
i's old block).  The resulting division has two exact properties that
``joint_coupling_law`` lets tests check in rational arithmetic:

* its marginal law is again uniform over divisions, and
* conditioned on the outcome, each j != i lies in i's *source* block with
  probability exactly (p-1)/(n-1).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterator

import numpy as np

from .errors import CapacityError, ValidationError

ENUMERATION_LIMIT = 12  # n above which exact division enumeration is refused
JOINT_LAW_LIMIT = 8  # n above which the exact coupling law is refused


def _check_sizes(n: int, p: int) -> None:
    if p < 2:
        raise ValidationError(f"block size must be >= 2, got {p}")
    if n < p:
        raise ValidationError(f"need n >= p, got n={n}, p={p}")
    if n % p != 0:
        raise ValidationError(f"block size {p} does not divide particle count {n}")


def _canonical(blocks) -> tuple[tuple[int, ...], ...]:
    return tuple(sorted((tuple(sorted(b)) for b in blocks), key=lambda b: b[0]))


@dataclass(frozen=True)
class BatchDivision:
    """Canonical equal-block partition of {0, ..., n-1}."""

    blocks: tuple[tuple[int, ...], ...]
    _owner: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        blocks = self.blocks
        if not blocks:
            raise ValidationError("division needs at least one block")
        p = len(blocks[0])
        n = p * len(blocks)
        _check_sizes(n, p)
        if any(len(b) != p for b in blocks):
            raise ValidationError("blocks must have equal size")
        members = sorted(i for b in blocks for i in b)
        if members != list(range(n)):
            raise ValidationError(f"blocks must partition range({n})")
        if blocks != _canonical(blocks):
            raise ValidationError("blocks not in canonical order; use from_blocks()")
        owner = [0] * n
        for bi, b in enumerate(blocks):
            for i in b:
                owner[i] = bi
        object.__setattr__(self, "_owner", tuple(owner))

    @classmethod
    def from_blocks(cls, blocks) -> "BatchDivision":
        """Build from any iterable of blocks, canonicalizing order."""
        return cls(_canonical(blocks))

    @property
    def n(self) -> int:
        return len(self._owner)

    @property
    def p(self) -> int:
        return len(self.blocks[0])

    def block_of(self, i: int) -> tuple[int, ...]:
        return self.blocks[self._owner[i]]

    def mates(self, i: int) -> tuple[int, ...]:
        """Members of i's block other than i."""
        return tuple(m for m in self.block_of(i) if m != i)

    def block_array(self) -> np.ndarray:
        """(n/p, p) int array of the blocks, canonical order."""
        return np.asarray(self.blocks, dtype=np.intp)


def division_count(n: int, p: int) -> int:
    """Number of distinct divisions: n! / ((p!)^(n/p) (n/p)!)."""
    _check_sizes(n, p)
    k = n // p
    return math.factorial(n) // (math.factorial(p) ** k * math.factorial(k))


def sample_division(n: int, p: int, rng: np.random.Generator) -> BatchDivision:
    """Uniform random division via a uniform permutation cut into blocks."""
    _check_sizes(n, p)
    perm = rng.permutation(n)
    return BatchDivision.from_blocks(perm[k : k + p] for k in range(0, n, p))


def enumerate_divisions(n: int, p: int) -> list[tuple[BatchDivision, Fraction]]:
    """All divisions with their uniform probabilities, deterministic
    (lexicographic) order.

    Refuses n > ENUMERATION_LIMIT: counts grow like n!/((p!)^(n/p)(n/p)!)
    (already 5775 at n=12, p=4).
    """
    _check_sizes(n, p)
    if n > ENUMERATION_LIMIT:
        raise CapacityError(
            f"exact enumeration capped at n <= {ENUMERATION_LIMIT}, got n={n}"
        )

    def rec(remaining: tuple[int, ...]) -> Iterator[tuple[tuple[int, ...], ...]]:
        if not remaining:
            yield ()
            return
        head, rest = remaining[0], remaining[1:]
        for mates in combinations(rest, p - 1):
            block = (head,) + mates
            left = tuple(x for x in rest if x not in mates)
            for tail in rec(left):
                yield (block,) + tail

    divisions = [BatchDivision(blocks) for blocks in rec(tuple(range(n)))]
    assert len(divisions) == division_count(n, p)
    prob = Fraction(1, len(divisions))
    return [(d, prob) for d in divisions]


def exchange_batchmates(division: BatchDivision, i: int, j: int) -> BatchDivision:
    """Swap the batchmates of i and j: i keeps index i but adopts j's old
    mates, and vice versa.  Requires i and j to be in different blocks."""
    if not (0 <= i < division.n and 0 <= j < division.n):
        raise ValidationError("particle index out of range")
    bi, bj = division.block_of(i), division.block_of(j)
    if bi is bj:
        raise ValidationError(f"particles {i} and {j} share a block; nothing to exchange")
    new_bi = (i,) + tuple(m for m in bj if m != j)
    new_bj = (j,) + tuple(m for m in bi if m != i)
    others = (b for b in division.blocks if b is not bi and b is not bj)
    return BatchDivision.from_blocks([new_bi, new_bj, *others])


def couple_division(
    division: BatchDivision, i: int, rng: np.random.Generator
) -> BatchDivision:
    """Draw the coupled division for anchor i from a uniformly drawn source.

    With probability (p-1)/(n-1) the source is kept; otherwise j is drawn
    uniformly from the n-p particles outside i's block and the batchmates
    of i and j are exchanged.
    """
    n, p = division.n, division.p
    if not 0 <= i < n:
        raise ValidationError("anchor index out of range")
    keep = Fraction(p - 1, n - 1)
    if rng.random() < float(keep):
        return division
    block = set(division.block_of(i))
    outside = [j for j in range(n) if j not in block]
    j = outside[int(rng.integers(len(outside)))]
    return exchange_batchmates(division, i, j)


@dataclass(frozen=True)
class CouplingOutcome:
    """One atom of the joint (source, coupled) law for a fixed anchor."""

    source: BatchDivision
    coupled: BatchDivision
    probability: Fraction


@dataclass(frozen=True)
class CouplingLaw:
    """Exact joint law of (source, coupled) divisions for anchor i."""

    n: int
    p: int
    anchor: int
    outcomes: tuple[CouplingOutcome, ...]

    def total_probability(self) -> Fraction:
        return sum((o.probability for o in self.outcomes), Fraction(0))

    def coupled_marginal(self) -> dict[BatchDivision, Fraction]:
        out: dict[BatchDivision, Fraction] = {}
        for o in self.outcomes:
            out[o.coupled] = out.get(o.coupled, Fraction(0)) + o.probability
        return out

    def membership_given_coupled(self, j: int) -> dict[BatchDivision, Fraction]:
        """P(j in source block of anchor | coupled division), exactly.

        Keys are all coupled divisions with positive probability; the
        headline identity is that every value equals (p-1)/(n-1) when
        j != anchor.
        """
        if j == self.anchor:
            raise ValidationError("membership is only defined for j != anchor")
        tot: dict[BatchDivision, Fraction] = {}
        hit: dict[BatchDivision, Fraction] = {}
        for o in self.outcomes:
            tot[o.coupled] = tot.get(o.coupled, Fraction(0)) + o.probability
            if j in o.source.block_of(self.anchor):
                hit[o.coupled] = hit.get(o.coupled, Fraction(0)) + o.probability
        return {s: hit.get(s, Fraction(0)) / q for s, q in tot.items()}


def joint_coupling_law(n: int, p: int, i: int) -> CouplingLaw:
    """Enumerate the exact joint law of (source, coupled) for anchor i.

    Rational arithmetic throughout; refuses n > JOINT_LAW_LIMIT because the
    outcome count is (number of divisions) x (1 + n - p).
    """
    _check_sizes(n, p)
    if n > JOINT_LAW_LIMIT:
        raise CapacityError(f"exact coupling law capped at n <= {JOINT_LAW_LIMIT}, got n={n}")
    if not 0 <= i < n:
        raise ValidationError("anchor index out of range")
    keep = Fraction(p - 1, n - 1)
    outcomes: list[CouplingOutcome] = []
    for source, uniform in enumerate_divisions(n, p):
        outcomes.append(CouplingOutcome(source, source, uniform * keep))
        if n == p:
            continue  # keep-probability is 1; no exchange branch
        per_j = uniform * (1 - keep) / (n - p)
        block = set(source.block_of(i))
        for j in range(n):
            if j not in block:
                outcomes.append(
                    CouplingOutcome(source, exchange_batchmates(source, i, j), per_j)
                )
    return CouplingLaw(n=n, p=p, anchor=i, outcomes=tuple(outcomes))
