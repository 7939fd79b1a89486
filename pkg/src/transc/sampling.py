"""Negative triple generation.

Corruptions replace one side of a positive triple. The replacement is drawn
from a typed pool of *siblings* of the replaced entity when one exists:

* instances: other instances sharing at least one concept (training instanceOf)
* concepts: other concepts sharing at least one super-concept (training subClassOf)

and from the whole instance/concept space otherwise. Every candidate is
rejection-sampled against the training triples.
"""

from __future__ import annotations

import bisect
import enum
import itertools
import weakref
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .kg import KINDS, KnowledgeGraph, LabeledNegatives, Triple, TripleKind

MAX_ATTEMPTS = 100

HEAD, TAIL = 0, 1


class SamplingExhaustedError(RuntimeError):
    pass


class SamplingStrategy(str, enum.Enum):
    UNIF = "unif"
    BERN = "bern"


@dataclass(frozen=True)
class BernTable:
    """Probability of replacing the head, per relation and for the two isA kinds."""

    relational: np.ndarray
    instance_of: float
    sub_class_of: float

    def head_probability(self, kind: TripleKind, relation: int = -1) -> float:
        if kind is TripleKind.RELATIONAL:
            return float(self.relational[relation])
        if kind is TripleKind.INSTANCE_OF:
            return self.instance_of
        return self.sub_class_of


def _bern_probability(heads: np.ndarray, tails: np.ndarray) -> float:
    if len(heads) == 0:
        return 0.5
    pairs = np.unique(np.stack([heads, tails], axis=1), axis=0)
    tph = len(pairs) / len(np.unique(pairs[:, 0]))
    hpt = len(pairs) / len(np.unique(pairs[:, 1]))
    return tph / (tph + hpt)


def build_bern_table(kg: KnowledgeGraph) -> BernTable:
    """``tph / (tph + hpt)`` per relation over training triples; 0.5 when a relation is unused."""
    rel = kg.train.relational
    probs = np.full(kg.n_relations, 0.5)
    for r in range(kg.n_relations):
        sel = rel[rel[:, 1] == r]
        probs[r] = _bern_probability(sel[:, 0], sel[:, 2])
    io = kg.train.instance_of
    sc = kg.train.sub_class_of
    return BernTable(probs, _bern_probability(io[:, 0], io[:, 1]), _bern_probability(sc[:, 0], sc[:, 1]))


class UniformStream:
    """Buffered uniforms drawn from a numpy Generator.

    Scalar draws straight from the Generator dominate the sampling cost; this
    reads them in blocks. Consumption order is fixed, so runs stay reproducible.
    """

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self._buf: List[float] = []
        self._pos = 0

    def random(self) -> float:
        if self._pos >= len(self._buf):
            self._buf = self.rng.random(self.block).tolist()
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def integers(self, n: int) -> int:
        return min(int(self.random() * n), n - 1)


def _stream(rng) -> UniformStream:
    return rng if isinstance(rng, UniformStream) else UniformStream(rng)


class SiblingPool:
    """Uniform draws from ``M = (members(g_1) ∪ ... ∪ members(g_n)) \\ {e}``.

    ``groups_of[e]`` are the groups of entity ``e`` and ``members_of[g]`` the
    entities of group ``g``. The union is never materialised: a group is
    picked proportionally to its size, a member uniformly within it, and the
    draw is accepted with probability ``1 / |groups shared with e|``, which
    makes the overall draw uniform over the union.
    """

    def __init__(self, groups_of: Sequence[np.ndarray], members_of: Sequence[np.ndarray]):
        self.groups_of = [[int(g) for g in gs] for gs in groups_of]
        self.members_of = [[int(m) for m in ms] for ms in members_of]
        self._group_sets = [frozenset(g) for g in self.groups_of]
        sizes = [len(m) for m in self.members_of]
        self._cum = [list(itertools.accumulate(sizes[g] for g in gs)) for gs in self.groups_of]
        # an entity has siblings iff some group holds someone besides itself
        self._has_siblings = [any(sizes[g] > 1 for g in gs) for gs in self.groups_of]

    def has_siblings(self, entity: int) -> bool:
        return self._has_siblings[entity]

    def siblings(self, entity: int) -> np.ndarray:
        """Materialised pool; used by tests and small graphs."""
        union = set()
        for g in self.groups_of[entity]:
            union.update(self.members_of[g])
        union.discard(entity)
        return np.array(sorted(union), dtype=np.int64)

    def draw(self, entity: int, rng) -> int:
        return self._draw(entity, _stream(rng))

    def _draw(self, entity: int, stream: UniformStream) -> int:
        groups = self.groups_of[entity]
        cum = self._cum[entity]
        total = cum[-1]
        single = len(groups) == 1
        own = self._group_sets[entity]
        rand = stream.random
        while True:
            g = groups[bisect.bisect_right(cum, int(rand() * total))] if not single else groups[0]
            members = self.members_of[g]
            a = members[int(rand() * len(members))]
            if a == entity:
                continue
            if single:
                return a
            shared = len(own & self._group_sets[a])
            if shared == 1 or rand() * shared < 1.0:
                return a


def _invert(pairs: np.ndarray, n_left: int, n_right: int):
    """For pairs (x, y): groups_of[x] = ys and members_of[y] = xs."""
    groups_of: List[List[int]] = [[] for _ in range(n_left)]
    members_of: List[List[int]] = [[] for _ in range(n_right)]
    for x, y in np.unique(pairs, axis=0).tolist() if len(pairs) else []:
        groups_of[x].append(y)
        members_of[y].append(x)
    return groups_of, members_of


class NegativeSampler:
    """Corrupts training triples of all three kinds.

    Parameters
    ----------
    kg : KnowledgeGraph
        Graph whose training split defines the pools and the rejection set.
    strategy : {"unif", "bern"}
        How the corrupted side is chosen.
    typed : bool
        Draw replacements from sibling pools (default) or uniformly from the
        whole space.
    """

    def __init__(self, kg: KnowledgeGraph, strategy="bern", typed: bool = True):
        self.kg = kg
        self.strategy = SamplingStrategy(strategy)
        self.typed = typed
        self.bern = build_bern_table(kg)
        self.instance_pool = SiblingPool(kg.instance_concepts, kg.concept_members)
        supers_of, subs_of = _invert(kg.train.sub_class_of, kg.n_concepts, kg.n_concepts)
        self.concept_pool = SiblingPool(supers_of, subs_of)

    def head_probability(self, kind: TripleKind, relation: int = -1) -> float:
        if self.strategy is SamplingStrategy.UNIF:
            return 0.5
        return self.bern.head_probability(kind, relation)

    def _space(self, kind: TripleKind, side: int) -> Tuple[int, SiblingPool]:
        if kind is TripleKind.RELATIONAL or (kind is TripleKind.INSTANCE_OF and side == HEAD):
            return self.kg.n_instances, self.instance_pool
        return self.kg.n_concepts, self.concept_pool

    def _try_side(self, kind, row, side, stream, reject) -> Optional[Tuple[int, ...]]:
        pos = _position(kind, side)
        original = row[pos]
        n, pool = self._space(kind, side)
        candidate = list(row)
        # a concept is trivially its own subclass, so self loops are no negatives
        self_loop = kind is TripleKind.SUB_CLASS_OF
        if self.typed and pool.has_siblings(original):
            for _ in range(MAX_ATTEMPTS):
                candidate[pos] = pool._draw(original, stream)
                cand = tuple(candidate)
                if cand not in reject and not (self_loop and cand[0] == cand[1]):
                    return cand
        if n < 2:
            return None
        for _ in range(MAX_ATTEMPTS):
            # uniform over the space minus the original entity
            c = int(stream.random() * (n - 1))
            candidate[pos] = c + (c >= original)
            cand = tuple(candidate)
            if cand not in reject and not (self_loop and cand[0] == cand[1]):
                return cand
        return None

    def _corrupt(self, kind, row, stream, reject, p_head):
        side = HEAD if stream.random() < p_head else TAIL
        for s in (side, 1 - side):
            neg = self._try_side(kind, row, s, stream, reject)
            if neg is not None:
                return neg, s
        raise SamplingExhaustedError(f"no valid corruption for {kind.value} triple {row}")

    def corrupt(self, kind, row: Sequence[int], rng: np.random.Generator, reject=None) -> Tuple[Tuple[int, ...], int]:
        """Return ``(negative_row, side)`` for one positive row."""
        kind = TripleKind(kind)
        row = tuple(int(x) for x in row)
        if reject is None:
            reject = self.kg.train_rows(kind)
        relation = row[1] if kind is TripleKind.RELATIONAL else -1
        return self._corrupt(kind, row, _stream(rng), reject, self.head_probability(kind, relation))

    def corrupt_batch(self, kind, rows: np.ndarray, rng: np.random.Generator, reject=None, distinct: bool = False):
        """Corrupt every row; returns ``(negatives, sides)``.

        With ``distinct`` no negative is produced twice.
        """
        kind = TripleKind(kind)
        stream = _stream(rng)
        if reject is None:
            reject = self.kg.train_rows(kind)
        if distinct:
            reject = set(reject)
        relational = kind is TripleKind.RELATIONAL
        if self.strategy is SamplingStrategy.UNIF:
            probs = None
            fixed = 0.5
        elif relational:
            probs = self.bern.relational.tolist()
        else:
            probs = None
            fixed = self.head_probability(kind)
        out, sides = [], []
        for row in map(tuple, rows.tolist()):
            p = probs[row[1]] if probs is not None else fixed
            neg, s = self._corrupt(kind, row, stream, reject, p)
            if distinct:
                reject.add(neg)
            out.append(neg)
            sides.append(s)
        width = rows.shape[1] if rows.ndim == 2 else 0
        return (np.array(out, dtype=np.int64).reshape(-1, width), np.array(sides, dtype=np.int8))


def _position(kind: TripleKind, side: int) -> int:
    if kind is TripleKind.RELATIONAL:
        return 0 if side == HEAD else 2
    return side


_SAMPLERS: "weakref.WeakKeyDictionary[KnowledgeGraph, Dict]" = weakref.WeakKeyDictionary()


def _sampler(kg: KnowledgeGraph, strategy) -> NegativeSampler:
    cache = _SAMPLERS.setdefault(kg, {})
    key = SamplingStrategy(strategy)
    if key not in cache:
        cache[key] = NegativeSampler(kg, key)
    return cache[key]


def _as_triple(kind: TripleKind, row) -> Triple:
    if kind is TripleKind.RELATIONAL:
        return Triple.relational(*row)
    if kind is TripleKind.INSTANCE_OF:
        return Triple.instance_of(*row)
    return Triple.sub_class_of(*row)


def corrupt_relational(t: Triple, kg: KnowledgeGraph, strategy, rng) -> Triple:
    row, _ = _sampler(kg, strategy).corrupt(TripleKind.RELATIONAL, t.as_row(), rng)
    return _as_triple(TripleKind.RELATIONAL, row)


def corrupt_instance_of(t: Triple, kg: KnowledgeGraph, rng, strategy="unif") -> Triple:
    row, _ = _sampler(kg, strategy).corrupt(TripleKind.INSTANCE_OF, t.as_row(), rng)
    return _as_triple(TripleKind.INSTANCE_OF, row)


def corrupt_sub_class_of(t: Triple, kg: KnowledgeGraph, rng, strategy="unif") -> Triple:
    row, _ = _sampler(kg, strategy).corrupt(TripleKind.SUB_CLASS_OF, t.as_row(), rng)
    return _as_triple(TripleKind.SUB_CLASS_OF, row)


def classification_negatives(
    kg: KnowledgeGraph, split: str, rng: np.random.Generator, typed: bool = False
) -> LabeledNegatives:
    """One distinct negative per positive of ``split``, absent from every loaded split.

    The corrupted side is chosen uniformly at random and recorded.
    """
    sampler = NegativeSampler(kg, SamplingStrategy.UNIF, typed=typed)
    triples, sides = {}, {}
    for kind in KINDS:
        rows = kg.splits[split][kind]
        triples[kind], sides[kind] = sampler.corrupt_batch(kind, rows, rng, reject=kg.known_rows(kind), distinct=True)
    return LabeledNegatives(triples, sides)
