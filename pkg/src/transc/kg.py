"""Knowledge graph data model with separate instance, concept and relation spaces.

Triples live in three disjoint stores per split:

* relational  ``(head_instance, relation, tail_instance)``  -> int array ``(n, 3)``
* instanceOf  ``(instance, concept)``                       -> int array ``(n, 2)``
* subClassOf  ``(sub_concept, super_concept)``              -> int array ``(n, 2)``

The on-disk layout is the OpenKE-style directory used by the published
YAGO39K splits (count header, then one tab separated record per line).
Note that relational files store ``head tail relation`` while the in-memory
arrays use ``head relation tail``.
"""

from __future__ import annotations

import enum
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class TripleKind(str, enum.Enum):
    INSTANCE_OF = "instanceOf"
    SUB_CLASS_OF = "subClassOf"
    RELATIONAL = "relational"


KINDS = (TripleKind.RELATIONAL, TripleKind.INSTANCE_OF, TripleKind.SUB_CLASS_OF)

_FILE_STEM = {
    TripleKind.RELATIONAL: "triple2id",
    TripleKind.INSTANCE_OF: "instanceOf2id",
    TripleKind.SUB_CLASS_OF: "subClassOf2id",
}
_WIDTH = {TripleKind.RELATIONAL: 3, TripleKind.INSTANCE_OF: 2, TripleKind.SUB_CLASS_OF: 2}


class KGError(Exception):
    """Base class for data errors raised while reading or validating a KG."""


class KGParseError(KGError):
    def __init__(self, path, lineno, message):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {message}")


class KGRangeError(KGParseError):
    pass


class UnknownNameError(KGError, KeyError):
    pass


class Triple(NamedTuple):
    """A single fact. ``relation`` is only meaningful for relational triples."""

    kind: TripleKind
    head: int
    tail: int
    relation: int = -1

    @classmethod
    def relational(cls, head, relation, tail):
        return cls(TripleKind.RELATIONAL, int(head), int(tail), int(relation))

    @classmethod
    def instance_of(cls, instance, concept):
        return cls(TripleKind.INSTANCE_OF, int(instance), int(concept))

    @classmethod
    def sub_class_of(cls, sub, sup):
        return cls(TripleKind.SUB_CLASS_OF, int(sub), int(sup))

    @classmethod
    def from_row(cls, kind, row: Sequence[int]) -> "Triple":
        """Inverse of :meth:`as_row`."""
        kind = TripleKind(kind)
        if kind is TripleKind.RELATIONAL:
            h, r, t = row
            return cls.relational(h, r, t)
        return cls(kind, int(row[0]), int(row[1]))

    def as_row(self) -> Tuple[int, ...]:
        if self.kind is TripleKind.RELATIONAL:
            return (self.head, self.relation, self.tail)
        return (self.head, self.tail)


class Vocabulary:
    """Bidirectional mapping between names and dense 0-based ids."""

    def __init__(self, names: Iterable[str] = ()):
        self._names: List[str] = []
        self._ids: Dict[str, int] = {}
        for name in names:
            self.add(name)

    def add(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self._names)
            self._names.append(name)
            self._ids[name] = idx
        return idx

    def id(self, name: str) -> int:
        try:
            return self._ids[name]
        except KeyError:
            raise UnknownNameError(f"unknown identifier {name!r}") from None

    def name(self, idx: int) -> str:
        return self._names[idx]

    @property
    def names(self) -> List[str]:
        return list(self._names)

    def __contains__(self, name) -> bool:
        return name in self._ids

    def __len__(self) -> int:
        return len(self._names)

    def __iter__(self):
        return iter(self._names)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._names == other._names

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"


def _empty(kind: TripleKind) -> np.ndarray:
    return np.zeros((0, _WIDTH[kind]), dtype=np.int64)


@dataclass
class TripleSet:
    """The three triple stores of one split."""

    relational: np.ndarray = field(default_factory=lambda: _empty(TripleKind.RELATIONAL))
    instance_of: np.ndarray = field(default_factory=lambda: _empty(TripleKind.INSTANCE_OF))
    sub_class_of: np.ndarray = field(default_factory=lambda: _empty(TripleKind.SUB_CLASS_OF))

    def __post_init__(self):
        for kind in KINDS:
            arr = np.asarray(self[kind], dtype=np.int64).reshape(-1, _WIDTH[kind])
            arr.setflags(write=False)
            setattr(self, _ATTR[kind], arr)

    def __getitem__(self, kind) -> np.ndarray:
        return getattr(self, _ATTR[TripleKind(kind)])

    def __len__(self) -> int:
        return sum(len(self[k]) for k in KINDS)

    def counts(self) -> Dict[str, int]:
        return {k.value: len(self[k]) for k in KINDS}


_ATTR = {
    TripleKind.RELATIONAL: "relational",
    TripleKind.INSTANCE_OF: "instance_of",
    TripleKind.SUB_CLASS_OF: "sub_class_of",
}


@dataclass
class LabeledNegatives:
    """Persisted classification negatives for one split, one array per kind.

    ``sides`` records which position was corrupted (0 = head, 1 = tail).
    """

    triples: Dict[TripleKind, np.ndarray]
    sides: Dict[TripleKind, np.ndarray]


def _row_keys(rows: np.ndarray) -> set:
    return set(map(tuple, rows.tolist()))


class KnowledgeGraph:
    """Interned knowledge graph ``{C, I, R, S}`` with train/valid/test splits.

    Immutable after construction: arrays are read-only and the derived
    indexes are built once.
    """

    def __init__(
        self,
        instances: Vocabulary,
        concepts: Vocabulary,
        relations: Vocabulary,
        splits: Optional[Dict[str, TripleSet]] = None,
        negatives: Optional[Dict[str, LabeledNegatives]] = None,
    ):
        self.instances = instances
        self.concepts = concepts
        self.relations = relations
        splits = dict(splits or {})
        for name in SPLITS:
            splits.setdefault(name, TripleSet())
        self.splits: Dict[str, TripleSet] = splits
        self.negatives: Dict[str, LabeledNegatives] = dict(negatives or {})
        self._check_ranges()
        self._known = {k: set() for k in KINDS}
        self._train_keys = {k: _row_keys(self.train[k]) for k in KINDS}
        for ts in self.splits.values():
            for k in KINDS:
                self._known[k] |= _row_keys(ts[k])
        self.concept_members, self.instance_concepts = _membership(
            self.train.instance_of, len(instances), len(concepts)
        )

    # -- basic accessors -------------------------------------------------
    @property
    def train(self) -> TripleSet:
        return self.splits["train"]

    @property
    def valid(self) -> TripleSet:
        return self.splits["valid"]

    @property
    def test(self) -> TripleSet:
        return self.splits["test"]

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    @property
    def n_concepts(self) -> int:
        return len(self.concepts)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def __repr__(self) -> str:
        return (
            f"KnowledgeGraph(instances={self.n_instances}, concepts={self.n_concepts}, "
            f"relations={self.n_relations}, train={self.train.counts()})"
        )

    # -- membership ------------------------------------------------------
    def contains(self, t: Triple) -> bool:
        """True iff ``t`` appears in any loaded split."""
        return t.as_row() in self._known[t.kind]

    def in_train(self, kind, row: Sequence[int]) -> bool:
        return tuple(int(x) for x in row) in self._train_keys[TripleKind(kind)]

    def known_rows(self, kind) -> set:
        return self._known[TripleKind(kind)]

    def train_rows(self, kind) -> set:
        return self._train_keys[TripleKind(kind)]

    def all_triples(self, kind) -> np.ndarray:
        kind = TripleKind(kind)
        return np.concatenate([self.splits[s][kind] for s in SPLITS])

    def coverage(self) -> Dict[str, Dict[str, int]]:
        """Count valid/test entities that never occur in training."""
        seen_i = set(self.train.relational[:, 0]) | set(self.train.relational[:, 2])
        seen_i |= set(self.train.instance_of[:, 0])
        seen_c = set(self.train.instance_of[:, 1]) | set(self.train.sub_class_of.ravel())
        report = {}
        for split in ("valid", "test"):
            ts = self.splits[split]
            inst = set(ts.relational[:, 0]) | set(ts.relational[:, 2]) | set(ts.instance_of[:, 0])
            conc = set(ts.instance_of[:, 1]) | set(ts.sub_class_of.ravel())
            report[split] = {
                "unseen_instances": len(inst - seen_i),
                "unseen_concepts": len(conc - seen_c),
            }
        return report

    def with_splits(self, splits: Dict[str, TripleSet], negatives=None) -> "KnowledgeGraph":
        return KnowledgeGraph(self.instances, self.concepts, self.relations, splits, negatives)

    def _check_ranges(self):
        limits = {
            TripleKind.RELATIONAL: (self.n_instances, self.n_relations, self.n_instances),
            TripleKind.INSTANCE_OF: (self.n_instances, self.n_concepts),
            TripleKind.SUB_CLASS_OF: (self.n_concepts, self.n_concepts),
        }
        for split, ts in self.splits.items():
            for kind in KINDS:
                arr = ts[kind]
                if len(arr) == 0:
                    continue
                bad = (arr < 0) | (arr >= np.asarray(limits[kind]))
                if bad.any():
                    row = int(np.nonzero(bad.any(axis=1))[0][0])
                    raise KGError(f"{split} {kind.value} triple {row} has an id out of range: {arr[row]}")


def _membership(instance_of: np.ndarray, n_instances: int, n_concepts: int):
    members: List[np.ndarray]
    order = np.argsort(instance_of[:, 1], kind="stable")
    by_c = instance_of[order]
    bounds = np.searchsorted(by_c[:, 1], np.arange(n_concepts + 1))
    members = [by_c[bounds[c]:bounds[c + 1], 0].copy() for c in range(n_concepts)]
    order = np.argsort(instance_of[:, 0], kind="stable")
    by_i = instance_of[order]
    bounds = np.searchsorted(by_i[:, 0], np.arange(n_instances + 1))
    concepts = [by_i[bounds[i]:bounds[i + 1], 1].copy() for i in range(n_instances)]
    return members, concepts


# ---------------------------------------------------------------------------
# File IO


def _read_lines(path: Path):
    with open(path, "r", encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            yield lineno, line.rstrip("\n").rstrip("\r")


def _read_header(path: Path, lines) -> int:
    try:
        lineno, first = next(lines)
    except StopIteration:
        raise KGParseError(path, 1, "missing count header") from None
    try:
        return int(first.strip())
    except ValueError:
        raise KGParseError(path, lineno, f"count header is not an integer: {first!r}") from None


def read_vocabulary(path) -> Vocabulary:
    path = Path(path)
    lines = _read_lines(path)
    count = _read_header(path, lines)
    names: List[Optional[str]] = [None] * count
    for lineno, line in lines:
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise KGParseError(path, lineno, f"expected 2 tab separated fields, got {len(parts)}")
        name, raw_id = parts
        try:
            idx = int(raw_id)
        except ValueError:
            raise KGParseError(path, lineno, f"id is not an integer: {raw_id!r}") from None
        if not 0 <= idx < count:
            raise KGRangeError(path, lineno, f"id {idx} outside declared range [0, {count})")
        if names[idx] is not None:
            raise KGParseError(path, lineno, f"id {idx} assigned twice")
        names[idx] = name
    missing = [i for i, n in enumerate(names) if n is None]
    if missing:
        raise KGParseError(path, count + 1, f"{len(missing)} declared ids missing, first is {missing[0]}")
    vocab = Vocabulary(names)
    if len(vocab) != count:
        raise KGParseError(path, 1, "duplicate names in vocabulary")
    return vocab


def read_triples(path, width: int, limits: Sequence[int], extra_columns: int = 0):
    """Read a count-prefixed id file; returns ``(rows, extra)`` with duplicates dropped."""
    path = Path(path)
    lines = _read_lines(path)
    count = _read_header(path, lines)
    rows: List[Tuple[int, ...]] = []
    extra: List[List[str]] = []
    seen = set()
    n_dup = 0
    n_fields = width + extra_columns
    for lineno, line in lines:
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != n_fields:
            raise KGParseError(path, lineno, f"expected {n_fields} tab separated fields, got {len(parts)}")
        try:
            row = tuple(int(p) for p in parts[:width])
        except ValueError:
            raise KGParseError(path, lineno, f"non-integer id in {line!r}") from None
        for value, limit in zip(row, limits):
            if not 0 <= value < limit:
                raise KGRangeError(path, lineno, f"id {value} outside declared range [0, {limit})")
        if row in seen:
            n_dup += 1
            continue
        seen.add(row)
        rows.append(row)
        extra.append(parts[width:])
    if n_dup:
        logger.warning("%s: dropped %d duplicate triple(s)", path, n_dup)
    if len(rows) + n_dup != count:
        logger.warning("%s: header declares %d records, found %d", path, count, len(rows) + n_dup)
    arr = np.array(rows, dtype=np.int64).reshape(-1, width)
    return arr, extra


def _to_internal(kind: TripleKind, arr: np.ndarray) -> np.ndarray:
    # relational files are (head, tail, relation)
    if kind is TripleKind.RELATIONAL:
        return arr[:, [0, 2, 1]]
    return arr


def _to_file(kind: TripleKind, arr: np.ndarray) -> np.ndarray:
    if kind is TripleKind.RELATIONAL:
        return arr[:, [0, 2, 1]]
    return arr


def _file_limits(kind: TripleKind, n_i: int, n_c: int, n_r: int):
    if kind is TripleKind.RELATIONAL:
        return (n_i, n_i, n_r)
    if kind is TripleKind.INSTANCE_OF:
        return (n_i, n_c)
    return (n_c, n_c)


def triple_file(directory, kind, split: str, negative: bool = False) -> Path:
    suffix = "_neg" if negative else ""
    return Path(directory) / f"{_FILE_STEM[TripleKind(kind)]}_{split}{suffix}.txt"


def load_kg(directory) -> KnowledgeGraph:
    """Load the directory layout into a :class:`KnowledgeGraph`.

    Missing split files are treated as empty. Negative files
    (``*_{valid,test}_neg.txt``) are loaded when present.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise KGError(f"{directory} is not a directory")
    instances = read_vocabulary(directory / "instance2id.txt")
    concepts = read_vocabulary(directory / "concept2id.txt")
    relations = read_vocabulary(directory / "relation2id.txt")
    n_i, n_c, n_r = len(instances), len(concepts), len(relations)

    splits = {}
    negatives = {}
    for split in SPLITS:
        stores = {}
        neg_triples, neg_sides = {}, {}
        for kind in KINDS:
            limits = _file_limits(kind, n_i, n_c, n_r)
            path = triple_file(directory, kind, split)
            if path.exists():
                arr, _ = read_triples(path, _WIDTH[kind], limits)
                stores[_ATTR[kind]] = _to_internal(kind, arr)
            npath = triple_file(directory, kind, split, negative=True)
            if npath.exists():
                arr, extra = read_triples(npath, _WIDTH[kind], limits, extra_columns=1)
                neg_triples[kind] = _to_internal(kind, arr)
                neg_sides[kind] = np.array([0 if e[0] == "h" else 1 for e in extra], dtype=np.int8)
        splits[split] = TripleSet(**stores)
        if neg_triples:
            for kind in KINDS:
                neg_triples.setdefault(kind, _empty(kind))
                neg_sides.setdefault(kind, np.zeros(0, dtype=np.int8))
            negatives[split] = LabeledNegatives(neg_triples, neg_sides)
    return KnowledgeGraph(instances, concepts, relations, splits, negatives)


def _write_atomic(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_vocabulary(path, vocab: Vocabulary):
    lines = [str(len(vocab))] + [f"{name}\t{i}" for i, name in enumerate(vocab)]
    _write_atomic(Path(path), "\n".join(lines) + "\n")


def write_triples(path, rows: np.ndarray, extra: Optional[Sequence[str]] = None):
    lines = [str(len(rows))]
    for i, row in enumerate(rows.tolist()):
        fields = [str(v) for v in row]
        if extra is not None:
            fields.append(extra[i])
        lines.append("\t".join(fields))
    _write_atomic(Path(path), "\n".join(lines) + "\n")


def save_kg(kg: KnowledgeGraph, directory, sort: bool = False):
    """Write ``kg`` in the directory layout read by :func:`load_kg`.

    With ``sort=True`` every triple file is written in canonical
    (lexicographic file-column) order.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_vocabulary(directory / "instance2id.txt", kg.instances)
    write_vocabulary(directory / "concept2id.txt", kg.concepts)
    write_vocabulary(directory / "relation2id.txt", kg.relations)
    for split in SPLITS:
        ts = kg.splits[split]
        for kind in KINDS:
            rows = _to_file(kind, ts[kind])
            if sort:
                rows = canonical_sort(rows)
            write_triples(triple_file(directory, kind, split), rows)
        if split in kg.negatives:
            save_negatives(directory, split, kg.negatives[split])


def save_negatives(directory, split: str, negatives: LabeledNegatives):
    for kind in KINDS:
        rows = _to_file(kind, negatives.triples[kind])
        sides = ["h" if s == 0 else "t" for s in negatives.sides[kind].tolist()]
        write_triples(triple_file(directory, kind, split, negative=True), rows, sides)


def canonical_sort(rows: np.ndarray) -> np.ndarray:
    if len(rows) == 0:
        return rows
    order = np.lexsort(rows.T[::-1])
    return rows[order]


def resolve_triple(kg: KnowledgeGraph, kind, head: str, tail: str, relation: Optional[str] = None) -> Triple:
    """Intern a triple given by names; unknown names raise :class:`UnknownNameError`."""
    kind = TripleKind(kind)
    if kind is TripleKind.RELATIONAL:
        return Triple.relational(kg.instances.id(head), kg.relations.id(relation), kg.instances.id(tail))
    if kind is TripleKind.INSTANCE_OF:
        return Triple.instance_of(kg.instances.id(head), kg.concepts.id(tail))
    return Triple.sub_class_of(kg.concepts.id(head), kg.concepts.id(tail))


def membership_consistent(kg: KnowledgeGraph) -> bool:
    """Rebuild the membership index from training instanceOf and compare."""
    members, concepts = _membership(kg.train.instance_of, kg.n_instances, kg.n_concepts)
    same_m = all(sorted(a.tolist()) == sorted(b.tolist()) for a, b in zip(members, kg.concept_members))
    same_c = all(sorted(a.tolist()) == sorted(b.tolist()) for a, b in zip(concepts, kg.instance_concepts))
    return same_m and same_c
