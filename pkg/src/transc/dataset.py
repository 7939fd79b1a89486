"""Dataset construction.

``build_subset`` turns a raw export (string triples) into a knowledge graph by
sampling relational triples and keeping only the isA facts that touch the
sampled instances. ``build_m_extension`` augments valid/test with isA triples
derived by transitivity from training facts. ``split`` produces random
train/valid/test partitions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .kg import KINDS, KGError, KnowledgeGraph, TripleKind, TripleSet, Vocabulary
from .sampling import classification_negatives
from .utils import derive_rng

logger = logging.getLogger(__name__)

INSTANCE_OF = "instanceOf"
SUB_CLASS_OF = "subClassOf"

RAW_FILES = {"relational": "relational.tsv", "instance_of": "instanceOf.tsv", "sub_class_of": "subClassOf.tsv"}


@dataclass
class RawExport:
    """String triples: relational ``(head, relation, tail)``, instanceOf ``(instance, concept)``,
    subClassOf ``(sub, super)``."""

    relational: List[Tuple[str, str, str]] = field(default_factory=list)
    instance_of: List[Tuple[str, str]] = field(default_factory=list)
    sub_class_of: List[Tuple[str, str]] = field(default_factory=list)


def _read_tsv(path: Path, width: int):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != width:
                raise KGError(f"{path}:{lineno}: expected {width} tab separated fields, got {len(parts)}")
            rows.append(tuple(parts))
    return rows


def read_raw_export(relational, instance_of, sub_class_of) -> RawExport:
    return RawExport(_read_tsv(Path(relational), 3), _read_tsv(Path(instance_of), 2), _read_tsv(Path(sub_class_of), 2))


def write_raw_export(raw: RawExport, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for attr, fname in RAW_FILES.items():
        with open(directory / fname, "w", encoding="utf-8", newline="\n") as fh:
            for row in getattr(raw, attr):
                fh.write("\t".join(row) + "\n")


def kg_to_raw(kg: KnowledgeGraph, splits: Sequence[str] = ("train", "valid", "test")) -> RawExport:
    inst, conc, rel = kg.instances.name, kg.concepts.name, kg.relations.name
    raw = RawExport()
    for s in splits:
        ts = kg.splits[s]
        raw.relational += [(inst(h), rel(r), inst(t)) for h, r, t in ts.relational.tolist()]
        raw.instance_of += [(inst(i), conc(c)) for i, c in ts.instance_of.tolist()]
        raw.sub_class_of += [(conc(a), conc(b)) for a, b in ts.sub_class_of.tolist()]
    return raw


def _dedupe(rows):
    return list(dict.fromkeys(rows))


def build_subset(raw: RawExport, sample_size: Optional[int], seed: int = 0) -> KnowledgeGraph:
    """Sample ``sample_size`` relational triples and keep the isA facts they reach.

    1. sample the relational triples;
    2. collect their instances and relations;
    3. keep instanceOf triples whose instance was collected;
    4. collect the concepts of those triples;
    5. keep subClassOf triples with both concepts collected;
    6. assemble the graph (relation set ``{instanceOf, subClassOf} ∪ R_l``).

    ``sample_size=None`` keeps every relational triple. Everything lands in
    the train split.
    """
    relational = _dedupe(raw.relational)
    n = len(relational)
    if sample_size is None:
        sample_size = n
    if sample_size < 0 or sample_size > n:
        raise ValueError(f"sample_size {sample_size} outside [0, {n}] raw relational triples")
    rng = derive_rng(seed, "subset")
    chosen = np.sort(rng.choice(n, size=sample_size, replace=False)) if sample_size < n else np.arange(n)
    s_l = [relational[i] for i in chosen.tolist()]

    instances, relations, concepts = Vocabulary(), Vocabulary(), Vocabulary()
    for h, r, t in s_l:
        instances.add(h)
        relations.add(r)
        instances.add(t)
    s_e = [(i, c) for i, c in _dedupe(raw.instance_of) if i in instances]
    for _, c in s_e:
        concepts.add(c)
    s_c = [(a, b) for a, b in _dedupe(raw.sub_class_of) if a in concepts and b in concepts]

    train = TripleSet(
        relational=np.array([(instances.id(h), relations.id(r), instances.id(t)) for h, r, t in s_l], dtype=np.int64),
        instance_of=np.array([(instances.id(i), concepts.id(c)) for i, c in s_e], dtype=np.int64),
        sub_class_of=np.array([(concepts.id(a), concepts.id(b)) for a, b in s_c], dtype=np.int64),
    )
    return KnowledgeGraph(instances, concepts, relations, {"train": train})


def relation_set(kg: KnowledgeGraph) -> List[str]:
    """``R = {r_e, r_c} ∪ R_l``."""
    return [INSTANCE_OF, SUB_CLASS_OF] + list(kg.relations)


# ---------------------------------------------------------------------------
# splitting


@dataclass
class SplitReport:
    sizes: Dict[str, Dict[str, int]]
    # held-out triples whose entities do not otherwise occur in train
    violations: Dict[str, int]


def _entity_keys(kind: TripleKind, row) -> List[tuple]:
    if kind is TripleKind.RELATIONAL:
        return [("i", row[0]), ("i", row[2])]
    if kind is TripleKind.INSTANCE_OF:
        return [("i", row[0]), ("c", row[1])]
    return [("c", row[0]), ("c", row[1])]


def _sizes(n: int, holdout) -> Tuple[int, int]:
    if isinstance(holdout, tuple) and all(isinstance(x, (int, np.integer)) for x in holdout) and len(holdout) == 2:
        n_valid, n_test = (int(x) for x in holdout)
    else:
        ratios = np.asarray(holdout, dtype=np.float64)
        if ratios.shape != (3,) or np.any(ratios < 0) or not np.isclose(ratios.sum(), 1.0):
            raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {holdout!r}")
        n_valid = int(round(ratios[1] * n))
        n_test = int(round(ratios[2] * n))
    if n_valid + n_test > n:
        raise ValueError(f"cannot hold out {n_valid}+{n_test} of {n} triples")
    return n_valid, n_test


def split(
    kg: KnowledgeGraph,
    ratios: Union[Sequence[float], Dict[str, Tuple[int, int]]] = (0.9, 0.05, 0.05),
    seed: int = 0,
):
    """Random disjoint train/valid/test split per triple kind.

    ``ratios`` is either ``(train, valid, test)`` fractions applied to every
    kind, or ``{kind: (n_valid, n_test)}`` absolute counts. Held-out triples
    are preferably chosen so that each of their entities still occurs in
    train; the returned report counts the held-out triples for which that was
    impossible. Returns ``(kg, report)``.
    """
    rng = derive_rng(seed, "split")
    pools = {k: kg.all_triples(k) for k in KINDS}
    degree: Dict[tuple, int] = {}
    for kind in KINDS:
        for row in pools[kind].tolist():
            for key in _entity_keys(kind, row):
                degree[key] = degree.get(key, 0) + 1

    out = {s: {} for s in ("train", "valid", "test")}
    violations = {}
    for kind in KINDS:
        rows = pools[kind]
        holdout = ratios.get(kind.value, (0, 0)) if isinstance(ratios, dict) else ratios
        if isinstance(holdout, list):
            holdout = tuple(holdout)
        n_valid, n_test = _sizes(len(rows), holdout)
        order = rng.permutation(len(rows))
        held: List[int] = []
        rest: List[int] = []
        need = n_valid + n_test
        for idx in order.tolist():
            keys = _entity_keys(kind, rows[idx])
            if len(held) < need and all(degree[k] > 1 for k in keys) and len(set(keys)) == len(keys):
                held.append(idx)
                for k in keys:
                    degree[k] -= 1
            else:
                rest.append(idx)
        n_bad = need - len(held)
        if n_bad:
            held += rest[:n_bad]
            rest = rest[n_bad:]
        violations[kind.value] = n_bad
        held_arr = np.array(held, dtype=np.int64)
        out["valid"][kind] = rows[np.sort(held_arr[:n_valid])]
        out["test"][kind] = rows[np.sort(held_arr[n_valid:])]
        out["train"][kind] = rows[np.sort(np.array(rest, dtype=np.int64))]

    splits = {
        s: TripleSet(out[s][TripleKind.RELATIONAL], out[s][TripleKind.INSTANCE_OF], out[s][TripleKind.SUB_CLASS_OF])
        for s in out
    }
    sizes = {s: splits[s].counts() for s in splits}
    if any(violations.values()):
        logger.warning("split: held-out triples with entities missing from train: %s", violations)
    return kg.with_splits(splits), SplitReport(sizes, violations)


# ---------------------------------------------------------------------------
# M-extension


def _hop(rows: np.ndarray, parents: Dict[int, List[int]]) -> List[Tuple[int, int]]:
    out = []
    for head, tail in rows.tolist():
        for sup in parents.get(tail, ()):
            out.append((head, sup))
    return out


def m_extension_triples(kg: KnowledgeGraph, split_name: str, closure: bool = False, exclude_train: bool = False):
    """New (instanceOf, subClassOf) rows for one split, each derived by one transitivity hop.

    instanceOf: ``(i, c) in split  and  (c, c_j) in train  ->  (i, c_j)``.
    subClassOf: ``(c_i, c_j) in split  and  (c_j, c_k) in train  ->  (c_i, c_k)``.
    With ``closure`` the hop is re-applied to newly derived rows until nothing
    new appears.
    """
    parents: Dict[int, List[int]] = {}
    for a, b in kg.train.sub_class_of.tolist():
        parents.setdefault(a, []).append(b)
    ts = kg.splits[split_name]
    result = []
    for kind, rows in ((TripleKind.INSTANCE_OF, ts.instance_of), (TripleKind.SUB_CLASS_OF, ts.sub_class_of)):
        have = set(map(tuple, rows.tolist()))
        if exclude_train:
            have |= kg.train_rows(kind)
        new: Dict[Tuple[int, int], None] = {}
        frontier = rows
        while len(frontier):
            fresh = [t for t in _hop(frontier, parents) if t not in have and t not in new]
            fresh = list(dict.fromkeys(fresh))
            for t in fresh:
                new[t] = None
            if not closure:
                break
            frontier = np.array(fresh, dtype=np.int64).reshape(-1, 2)
        result.append(np.array(list(new), dtype=np.int64).reshape(-1, 2))
    return result[0], result[1]


def build_m_extension(
    kg: KnowledgeGraph, closure: bool = False, exclude_train: bool = False, negative_seed: Optional[int] = 0
) -> KnowledgeGraph:
    """Append transitivity-derived isA triples to valid and test.

    Classification negatives of valid/test are regenerated afterwards (from
    ``negative_seed``; pass ``None`` to drop them) so positives and negatives
    stay balanced.
    """
    splits = dict(kg.splits)
    for name in ("valid", "test"):
        new_e, new_c = m_extension_triples(kg, name, closure, exclude_train)
        ts = kg.splits[name]
        splits[name] = TripleSet(
            ts.relational,
            np.concatenate([ts.instance_of, new_e]),
            np.concatenate([ts.sub_class_of, new_c]),
        )
    out = kg.with_splits(splits)
    if negative_seed is None:
        return out
    return with_classification_negatives(out, negative_seed)


def with_classification_negatives(kg: KnowledgeGraph, seed: int, typed: bool = False) -> KnowledgeGraph:
    negatives = {
        name: classification_negatives(kg, name, derive_rng(seed, f"negatives-{name}"), typed=typed)
        for name in ("valid", "test")
    }
    return kg.with_splits(kg.splits, negatives)


# ---------------------------------------------------------------------------
# synthetic data


@dataclass
class ConceptTree:
    kg: KnowledgeGraph
    parent: Dict[int, int]
    leaf_of: np.ndarray  # most specific concept of each instance
    depth: Dict[int, int]


def make_concept_tree(
    n_instances: int = 100,
    branching: int = 3,
    levels: int = 3,
    n_relations: int = 5,
    tails_per_head: Tuple[int, int] = (2, 4),
    closure: bool = True,
    seed: int = 0,
) -> ConceptTree:
    """Synthetic graph with a balanced concept tree and leaf-structured relations.

    Concepts form a tree of ``levels`` levels (``1 + b + b^2 + ...``
    concepts). Every instance belongs to one leaf and, when ``closure`` is
    set, to every ancestor of it as well; subClassOf holds the parent edges
    (plus all ancestor edges when ``closure`` is set). Each relation links an
    instance to a few random instances sharing its leaf (even relation ids)
    or its leaf's parent (odd ids), so instances of one subtree behave alike
    and a translation can model every relation.
    """
    rng = derive_rng(seed, "concept-tree")
    concepts = Vocabulary()
    parent: Dict[int, int] = {}
    depth: Dict[int, int] = {}
    level = [concepts.add("c0")]
    depth[level[0]] = 0
    for d in range(1, levels):
        nxt = []
        for p in level:
            for j in range(branching):
                c = concepts.add(f"{concepts.name(p)}.{j}")
                parent[c] = p
                depth[c] = d
                nxt.append(c)
        level = nxt
    leaves = np.array(level, dtype=np.int64)

    def ancestors(c):
        out = []
        while c in parent:
            c = parent[c]
            out.append(c)
        return out

    instances = Vocabulary(f"e{i}" for i in range(n_instances))
    leaf_of = leaves[np.arange(n_instances) % len(leaves)]
    leaf_of = leaf_of[rng.permutation(n_instances)]
    members = {int(l): np.nonzero(leaf_of == l)[0] for l in leaves}

    io = []
    for i, leaf in enumerate(leaf_of.tolist()):
        io.append((i, leaf))
        if closure:
            io += [(i, a) for a in ancestors(leaf)]
    sc = []
    for c in sorted(parent):
        sc.append((c, parent[c]))
        if closure:
            sc += [(c, a) for a in ancestors(c)[1:]]

    # relation r links instances under a common ancestor at depth scopes[r]
    scopes = [levels - 1 - (r % 2 if levels > 2 else 0) for r in range(n_relations)]
    under: Dict[Tuple[int, int], np.ndarray] = {}

    def scope_members(leaf, d):
        c = leaf
        while depth[c] > d:
            c = parent[c]
        key = (c, d)
        if key not in under:
            under[key] = np.nonzero([_descends(int(l), c, parent) for l in leaf_of])[0]
        return under[key]

    relations = Vocabulary(f"r{k}" for k in range(n_relations))
    rel = []
    lo, hi = tails_per_head
    for r in range(n_relations):
        for h in range(n_instances):
            pool = scope_members(int(leaf_of[h]), scopes[r])
            pool = pool[pool != h]
            k = min(len(pool), int(rng.integers(lo, hi)))
            for t in rng.choice(pool, size=k, replace=False).tolist():
                rel.append((h, r, t))

    train = TripleSet(np.array(rel), np.array(io), np.array(sc))
    kg = KnowledgeGraph(instances, concepts, relations, {"train": train})
    return ConceptTree(kg, parent, leaf_of, depth)


def _descends(c: int, ancestor: int, parent: Dict[int, int]) -> bool:
    while True:
        if c == ancestor:
            return True
        if c not in parent:
            return False
        c = parent[c]
