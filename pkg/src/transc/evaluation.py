"""Link prediction and triple classification."""

from __future__ import annotations

import csv
import json
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .geometry import EmbeddingSpace
from .gradients import kind_scores
from .kg import KINDS, KnowledgeGraph, LabeledNegatives, Triple, TripleKind
from .sampling import classification_negatives
from .utils import check_scores, derive_rng

HITS_AT = (1, 3, 10)


class EvaluationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Link prediction


@dataclass(frozen=True)
class RankResult:
    triple: Triple
    position: str  # "head" or "tail"
    raw_rank: int
    filter_rank: int


class _FilterIndex:
    """Known heads per (relation, tail) and tails per (head, relation) over all splits."""

    def __init__(self, kg: KnowledgeGraph):
        rows = kg.all_triples(TripleKind.RELATIONAL)
        self.tails: Dict[tuple, np.ndarray] = _group(rows[:, [0, 1]], rows[:, 2])
        self.heads: Dict[tuple, np.ndarray] = _group(rows[:, [1, 2]], rows[:, 0])


def _group(keys: np.ndarray, values: np.ndarray) -> Dict[tuple, np.ndarray]:
    out: Dict[tuple, list] = {}
    for key, value in zip(map(tuple, keys.tolist()), values.tolist()):
        out.setdefault(key, []).append(value)
    return {k: np.unique(v) for k, v in out.items()}


_FILTERS: "weakref.WeakKeyDictionary[KnowledgeGraph, _FilterIndex]" = weakref.WeakKeyDictionary()


def _filter_index(kg: KnowledgeGraph) -> _FilterIndex:
    idx = _FILTERS.get(kg)
    if idx is None:
        idx = _FILTERS[kg] = _FilterIndex(kg)
    return idx


def tie_rank(scores: np.ndarray, true_index: int, exclude: Optional[np.ndarray] = None) -> int:
    """``1 + #better + ceil(#tied / 2)`` with the true entity excluded from the ties."""
    target = scores[true_index]
    keep = np.ones(len(scores), dtype=bool)
    keep[true_index] = False
    if exclude is not None and len(exclude):
        keep[exclude] = False
        keep[true_index] = False
    s = scores[keep]
    better = int(np.count_nonzero(s < target))
    tied = int(np.count_nonzero(s == target))
    return 1 + better + (tied + 1) // 2


def candidate_scores(space: EmbeddingSpace, t: Triple, position: str) -> np.ndarray:
    """f_r for every instance substituted at ``position``."""
    ents = space.instance_vecs
    r = space.relation_vecs[t.relation]
    if position == "tail":
        diff = (ents[t.head] + r) - ents
    else:
        diff = ents + (r - ents[t.tail])
    return np.einsum("ij,ij->i", diff, diff)


def rank_triple(space: EmbeddingSpace, kg: KnowledgeGraph, t: Triple, position: str) -> RankResult:
    if position not in ("head", "tail"):
        raise ValueError(f"position must be 'head' or 'tail', got {position!r}")
    scores = candidate_scores(space, t, position)
    index = _filter_index(kg)
    if position == "tail":
        true = t.tail
        known = index.tails.get((t.head, t.relation))
    else:
        true = t.head
        known = index.heads.get((t.relation, t.tail))
    raw = tie_rank(scores, true)
    filt = tie_rank(scores, true, exclude=known)
    return RankResult(t, position, raw, filt)


@dataclass
class LinkPredictionReport:
    mrr_raw: float
    mrr_filter: float
    hits_filter: Dict[int, float]
    hits_raw: Dict[int, float]
    n_rankings: int


def summarize_ranks(results: Sequence[RankResult]) -> LinkPredictionReport:
    raw = np.array([r.raw_rank for r in results], dtype=np.float64)
    filt = np.array([r.filter_rank for r in results], dtype=np.float64)
    return LinkPredictionReport(
        mrr_raw=float(np.mean(1.0 / raw)),
        mrr_filter=float(np.mean(1.0 / filt)),
        hits_filter={n: float(100.0 * np.mean(filt <= n)) for n in HITS_AT},
        hits_raw={n: float(100.0 * np.mean(raw <= n)) for n in HITS_AT},
        n_rankings=len(results),
    )


def rank_all(space, kg, split: str = "test", threads: int = 1) -> List[RankResult]:
    rows = kg.splits[split].relational
    if len(rows) == 0:
        raise EvaluationError(f"no relational triples in the {split} split")
    triples = [Triple.relational(h, r, t) for h, r, t in rows.tolist()]

    def work(t):
        return [rank_triple(space, kg, t, "head"), rank_triple(space, kg, t, "tail")]

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            nested = list(pool.map(work, triples, chunksize=64))
    else:
        nested = [work(t) for t in triples]
    return [r for pair in nested for r in pair]


def link_prediction(space, kg, split: str = "test", threads: int = 1) -> LinkPredictionReport:
    return summarize_ranks(rank_all(space, kg, split, threads))


def write_rank_csv(path, results: Sequence[RankResult], kg: Optional[KnowledgeGraph] = None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["head", "relation", "tail", "position", "raw_rank", "filter_rank"])
        for r in results:
            t = r.triple
            if kg is not None:
                names = [kg.instances.name(t.head), kg.relations.name(t.relation), kg.instances.name(t.tail)]
            else:
                names = [t.head, t.relation, t.tail]
            writer.writerow(names + [r.position, r.raw_rank, r.filter_rank])


# ---------------------------------------------------------------------------
# Threshold fitting


def best_threshold(scores, labels):
    """Threshold maximising accuracy of ``score < threshold  =>  positive``.

    Cuts are taken between consecutive distinct scores (midpoints), below the
    smallest and above the largest score; ties go to the smallest cut.
    Returns ``(threshold, accuracy)``.
    """
    scores = check_scores(scores)
    labels = np.asarray(labels, dtype=bool).reshape(-1)
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    if len(scores) == 0:
        raise ValueError("cannot fit a threshold without scores")
    values, inverse = np.unique(scores, return_inverse=True)
    pos_per_value = np.bincount(inverse, weights=labels, minlength=len(values))
    neg_per_value = np.bincount(inverse, weights=~labels, minlength=len(values))
    # j = number of distinct values predicted positive
    pos_le = np.concatenate([[0.0], np.cumsum(pos_per_value)])
    neg_le = np.concatenate([[0.0], np.cumsum(neg_per_value)])
    correct = pos_le + (neg_le[-1] - neg_le)
    j = int(np.argmax(correct))
    if j == 0:
        threshold = float(values[0])
    elif j == len(values):
        last = float(values[-1])
        threshold = max(last + 1.0, float(np.nextafter(last, np.inf)))
    else:
        lo, hi = float(values[j - 1]), float(values[j])
        threshold = lo + (hi - lo) / 2.0
        if not lo < threshold:
            threshold = hi
    accuracy = float(np.mean((scores < threshold) == labels))
    return threshold, accuracy


class ThresholdClassifier(ClassifierMixin, BaseEstimator):
    """Per-group score thresholds fitted for validation accuracy.

    ``X`` is a 1-d array of scores (lower means more plausible); ``groups``
    names the relation of each score. A score is classified positive iff it
    is strictly below its group's threshold. Groups unseen at fit time use
    the median of all fitted scores and are listed in ``flagged_``.
    """

    def fit(self, X, y, groups=None):
        scores = check_scores(X, "X")
        y = np.asarray(y, dtype=bool).reshape(-1)
        if len(y) != len(scores):
            raise ValueError("X and y differ in length")
        if len(scores) == 0:
            raise ValueError("ThresholdClassifier needs at least one score")
        groups = _groups(groups, len(scores))
        self.classes_ = np.array([False, True])
        self.thresholds_ = {}
        self.accuracies_ = {}
        for g in _unique(groups):
            sel = groups == g
            self.thresholds_[g], self.accuracies_[g] = best_threshold(scores[sel], y[sel])
        self.fallback_ = float(np.median(scores))
        self.flagged_ = []
        return self

    def threshold_for(self, group):
        check_is_fitted(self, "thresholds_")
        if group in self.thresholds_:
            return self.thresholds_[group]
        if group not in self.flagged_:
            self.flagged_.append(group)
        return self.fallback_

    def decision_function(self, X, groups=None):
        scores = check_scores(X, "X")
        groups = _groups(groups, len(scores))
        thresholds = np.array([self.threshold_for(g) for g in groups.tolist()], dtype=np.float64)
        return thresholds - scores

    def predict(self, X, groups=None):
        return self.decision_function(X, groups) > 0.0

    def score(self, X, y, groups=None, sample_weight=None):
        return float(np.mean(self.predict(X, groups) == np.asarray(y, dtype=bool)))


def _groups(groups, n):
    if groups is None:
        return np.zeros(n, dtype=np.int64)
    groups = np.asarray(groups).reshape(-1)
    if len(groups) != n:
        raise ValueError("groups must align with X")
    return groups


def _unique(groups):
    return [g.item() if hasattr(g, "item") else g for g in np.unique(groups)]


@dataclass
class ThresholdTable:
    """``relational[r]`` per relation id, one threshold per isA kind."""

    relational: Dict[int, float]
    instance_of: float
    sub_class_of: float
    flagged: List[str] = field(default_factory=list)

    def threshold(self, t: Triple) -> float:
        if t.kind is TripleKind.RELATIONAL:
            return self.relational[t.relation]
        if t.kind is TripleKind.INSTANCE_OF:
            return self.instance_of
        return self.sub_class_of

    def to_json(self, kg: Optional[KnowledgeGraph] = None) -> dict:
        def name(r):
            return kg.relations.name(r) if kg is not None else str(r)

        return {
            "relational": {name(r): v for r, v in sorted(self.relational.items())},
            "instanceOf": self.instance_of,
            "subClassOf": self.sub_class_of,
            "flagged": list(self.flagged),
        }

    @classmethod
    def from_json(cls, data: dict, kg: Optional[KnowledgeGraph] = None) -> "ThresholdTable":
        def rid(key):
            return kg.relations.id(key) if kg is not None else int(key)

        rel = {rid(k): float(v) for k, v in data["relational"].items()}
        return cls(rel, float(data["instanceOf"]), float(data["subClassOf"]), list(data.get("flagged", [])))

    def save(self, path, kg=None):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(kg), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path, kg=None) -> "ThresholdTable":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh), kg)


def split_negatives(kg: KnowledgeGraph, split: str, seed: int = 0) -> LabeledNegatives:
    """Persisted negatives if the split has them, else a deterministic regeneration."""
    if split in kg.negatives:
        return kg.negatives[split]
    return classification_negatives(kg, split, derive_rng(seed, f"negatives-{split}"))


def labeled_scores(space, kg, kind: TripleKind, split: str, negatives: LabeledNegatives, mode: str = "transc"):
    pos = kg.splits[split][kind]
    neg = negatives.triples[kind]
    rows = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos), bool), np.zeros(len(neg), bool)])
    scores = kind_scores(space, kind.value, rows, mode) if len(rows) else np.zeros(0)
    return rows, scores, labels


def fit_thresholds(space, kg, split: str = "valid", negatives=None, mode: str = "transc", seed: int = 0) -> ThresholdTable:
    """Fit every relation's threshold (and one per isA kind) on a labelled split."""
    if negatives is None:
        negatives = split_negatives(kg, split, seed)
    flagged = []
    rows, scores, labels = labeled_scores(space, kg, TripleKind.RELATIONAL, split, negatives, mode)
    relational = {}
    if len(rows):
        clf = ThresholdClassifier().fit(scores, labels, groups=rows[:, 1])
        for r in range(kg.n_relations):
            relational[r] = clf.threshold_for(r)
        flagged += [kg.relations.name(r) for r in clf.flagged_]
    else:
        relational = {r: 0.0 for r in range(kg.n_relations)}
        flagged += list(kg.relations)
    isa = {}
    for kind in (TripleKind.INSTANCE_OF, TripleKind.SUB_CLASS_OF):
        _, s, y = labeled_scores(space, kg, kind, split, negatives, mode)
        if len(s):
            isa[kind] = ThresholdClassifier().fit(s, y).thresholds_[0]
        else:
            isa[kind] = 0.0
            flagged.append(kind.value)
    return ThresholdTable(relational, isa[TripleKind.INSTANCE_OF], isa[TripleKind.SUB_CLASS_OF], flagged)


def classify(space, thresholds: ThresholdTable, t: Triple, mode: str = "transc") -> bool:
    """Positive iff the triple's score is strictly below its threshold."""
    score = float(kind_scores(space, t.kind.value, np.array([t.as_row()]), mode)[0])
    return score < thresholds.threshold(t)


@dataclass
class ClassificationMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int


def confusion_metrics(predicted, labels) -> ClassificationMetrics:
    predicted = np.asarray(predicted, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    tp = int(np.count_nonzero(predicted & labels))
    fp = int(np.count_nonzero(predicted & ~labels))
    tn = int(np.count_nonzero(~predicted & ~labels))
    fn = int(np.count_nonzero(~predicted & labels))
    n = tp + fp + tn + fn
    accuracy = (tp + tn) / n if n else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassificationMetrics(100 * accuracy, 100 * precision, 100 * recall, 100 * f1, tp, fp, tn, fn)


def triple_classification(
    space, kg, thresholds: ThresholdTable, split: str = "test", negatives=None, mode: str = "transc", seed: int = 0
) -> Dict[str, ClassificationMetrics]:
    if negatives is None:
        negatives = split_negatives(kg, split, seed)
    out = {}
    for kind in KINDS:
        rows, scores, labels = labeled_scores(space, kg, kind, split, negatives, mode)
        if len(rows) == 0:
            continue
        if kind is TripleKind.RELATIONAL:
            cut = np.array([thresholds.relational[r] for r in rows[:, 1].tolist()])
        else:
            cut = np.full(len(rows), thresholds.instance_of if kind is TripleKind.INSTANCE_OF else thresholds.sub_class_of)
        out[kind.value] = confusion_metrics(scores < cut, labels)
    return out


# ---------------------------------------------------------------------------
# Reports


@dataclass
class EvalReport:
    link_prediction: Optional[LinkPredictionReport] = None
    classification: Dict[str, ClassificationMetrics] = field(default_factory=dict)
    flagged: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out: dict = {}
        if self.link_prediction is not None:
            lp = self.link_prediction
            out.update(
                mrr_raw=lp.mrr_raw,
                mrr_filter=lp.mrr_filter,
                hits={f"hits@{n}": v for n, v in lp.hits_filter.items()},
                hits_raw={f"hits@{n}": v for n, v in lp.hits_raw.items()},
                n_rankings=lp.n_rankings,
            )
        if self.classification:
            out["classification"] = {k: asdict(v) for k, v in self.classification.items()}
        if self.flagged:
            out["flagged_thresholds"] = list(self.flagged)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self) -> str:
        lines = []
        if self.link_prediction is not None:
            lp = self.link_prediction
            head = ["", "MRR"] + [f"Hits@{n}" for n in HITS_AT]
            rows = [
                ["Raw", f"{lp.mrr_raw:.3f}"] + [f"{lp.hits_raw[n]:.1f}" for n in HITS_AT],
                ["Filter", f"{lp.mrr_filter:.3f}"] + [f"{lp.hits_filter[n]:.1f}" for n in HITS_AT],
            ]
            lines += _table(head, rows)
        if self.classification:
            if lines:
                lines.append("")
            head = ["kind", "Accuracy", "Precision", "Recall", "F1"]
            rows = [
                [k, f"{m.accuracy:.1f}", f"{m.precision:.1f}", f"{m.recall:.1f}", f"{m.f1:.1f}"]
                for k, m in self.classification.items()
            ]
            lines += _table(head, rows)
        return "\n".join(lines) + "\n"


def _table(head, rows):
    widths = [max(len(str(r[i])) for r in [head] + rows) for i in range(len(head))]
    fmt = lambda r: "  ".join(str(c).rjust(w) if i else str(c).ljust(w) for i, (c, w) in enumerate(zip(r, widths)))
    return [fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
