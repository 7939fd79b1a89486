"""Joint margin-ranking training of instanceOf, subClassOf and relational triples.

The objective is ``L = L_e + L_c + L_l`` where each term sums
``max(0, margin + f(pos) - f(neg))`` over (positive, negative) pairs. It is
minimised by plain SGD, one negative per positive, with projection of every
touched vector back into the unit ball and radii clamped at ``RADIUS_FLOOR``.
"""

from __future__ import annotations

import dataclasses
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .geometry import RADIUS_FLOOR, EmbeddingSpace, project_rows, sphere_positions
from .gradients import kind_grads
from .kg import KINDS, KnowledgeGraph, TripleKind
from .sampling import NegativeSampler
from .utils import check_choice, check_non_negative_int, check_positive, derive_rng

logger = logging.getLogger(__name__)

MODES = ("transc", "transe", "transe-isa")
# modes that learn from the isA hinges; "transe" only scores them
_ISA_LEARNING = {"transc", "transe-isa"}
LOSS_KEYS = {TripleKind.INSTANCE_OF: "L_e", TripleKind.SUB_CLASS_OF: "L_c", TripleKind.RELATIONAL: "L_l"}


class NumericalError(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    dim: int = 100
    lr: float = 0.001
    margin_l: float = 1.0
    margin_e: float = 0.1
    margin_c: float = 1.0
    sampling: str = "bern"
    epochs: int = 1000
    batch_size: int = 512
    seed: int = 0
    mode: str = "transc"
    threads: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        check_positive("dim", self.dim, integer=True)
        check_positive("lr", self.lr)
        check_positive("margin_l", self.margin_l)
        check_positive("margin_e", self.margin_e)
        check_positive("margin_c", self.margin_c)
        check_choice("sampling", self.sampling, {"unif", "bern"})
        check_non_negative_int("epochs", self.epochs)
        check_positive("batch_size", self.batch_size, integer=True)
        check_non_negative_int("seed", self.seed)
        check_choice("mode", self.mode, set(MODES))
        check_positive("threads", self.threads, integer=True)
        check_non_negative_int("checkpoint_every", self.checkpoint_every)

    def margin(self, kind: TripleKind) -> float:
        return {
            TripleKind.RELATIONAL: self.margin_l,
            TripleKind.INSTANCE_OF: self.margin_e,
            TripleKind.SUB_CLASS_OF: self.margin_c,
        }[TripleKind(kind)]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


@dataclass
class TrainState:
    space: EmbeddingSpace
    epoch: int = 0
    loss_trace: List[Dict[str, float]] = field(default_factory=list)


@dataclass
class Batch:
    """Positive/negative index rows per kind; ``negatives[kind]`` aligns with ``positives[kind]``."""

    positives: Dict[TripleKind, np.ndarray]
    negatives: Dict[TripleKind, np.ndarray]


def init_space(n_instances: int, n_concepts: int, n_relations: int, config: TrainConfig, rng) -> EmbeddingSpace:
    """Uniform(-6/sqrt(k), 6/sqrt(k)) coordinates projected into the unit ball."""
    k = config.dim
    bound = 6.0 / np.sqrt(k)
    inst = rng.uniform(-bound, bound, size=(n_instances, k))
    rel = rng.uniform(-bound, bound, size=(n_relations, k))
    centers = rng.uniform(-bound, bound, size=(n_concepts, k))
    isa = rng.uniform(-bound, bound, size=(2, k))
    radii = 0.5 * rng.random(n_concepts) + RADIUS_FLOOR
    for arr in (inst, rel, centers, isa):
        project_rows(arr)
    return EmbeddingSpace(inst, rel, centers, radii, isa)


def hinge(positive_score, negative_score, margin):
    return np.maximum(0.0, margin + np.asarray(positive_score) - np.asarray(negative_score))


def _check_finite(kind, rows, scores, contribs, label):
    bad = ~np.isfinite(scores)
    for c in contribs:
        g = c.grad if c.grad.ndim == 2 else c.grad[:, None]
        bad |= ~np.all(np.isfinite(g), axis=1)
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        raise NumericalError(f"non-finite score or gradient for {label} {kind.value} triple {rows[i].tolist()}")


def batch_losses(space: EmbeddingSpace, batch: Batch, config: TrainConfig) -> Dict[str, float]:
    """Hinge totals per kind at the current parameters."""
    out = {v: 0.0 for v in LOSS_KEYS.values()}
    for kind, pos in batch.positives.items():
        if len(pos) == 0:
            continue
        ps = kind_grads(space, kind.value, pos, config.mode)[0]
        ns = kind_grads(space, kind.value, batch.negatives[kind], config.mode)[0]
        out[LOSS_KEYS[kind]] += float(hinge(ps, ns, config.margin(kind)).sum())
    return out


def step_batch(state: TrainState, batch: Batch, config: TrainConfig) -> Dict[str, float]:
    """One SGD step over ``batch``; returns the hinge totals before the step.

    All gradients are taken at the pre-step parameters (the subClassOf case
    is frozen there too), then applied together.
    """
    space = state.space
    params = space.arrays()
    losses = {v: 0.0 for v in LOSS_KEYS.values()}
    updates = []
    for kind in KINDS:
        pos = batch.positives.get(kind)
        if pos is None or len(pos) == 0:
            continue
        neg = batch.negatives[kind]
        pos_case = neg_case = None
        if kind is TripleKind.SUB_CLASS_OF and config.mode != "transe-isa":
            pos_case = sphere_positions(space, pos)
            neg_case = sphere_positions(space, neg)
        ps, pc = kind_grads(space, kind.value, pos, config.mode, pos_case)
        ns, nc = kind_grads(space, kind.value, neg, config.mode, neg_case)
        _check_finite(kind, pos, ps, pc, "positive")
        _check_finite(kind, neg, ns, nc, "negative")
        h = hinge(ps, ns, config.margin(kind))
        losses[LOSS_KEYS[kind]] = float(h.sum())
        active = h > 0.0
        if kind is not TripleKind.RELATIONAL and config.mode not in _ISA_LEARNING:
            continue
        if not active.any():
            continue
        for c in pc:
            updates.append((c.param, c.index[active], -config.lr * c.grad[active]))
        for c in nc:
            updates.append((c.param, c.index[active], config.lr * c.grad[active]))

    touched: Dict[str, List[np.ndarray]] = {}
    for name, idx, delta in updates:
        np.add.at(params[name], idx, delta)
        touched.setdefault(name, []).append(idx)
    for name, idx_list in touched.items():
        rows = np.unique(np.concatenate(idx_list))
        if name == "radii":
            params[name][rows] = np.maximum(params[name][rows], RADIUS_FLOOR)
        else:
            project_rows(params[name], rows)
    return losses


def _training_stream(kg: KnowledgeGraph):
    kinds = np.concatenate([np.full(len(kg.train[k]), i, dtype=np.int8) for i, k in enumerate(KINDS)])
    offsets = np.concatenate([np.arange(len(kg.train[k])) for k in KINDS]).astype(np.int64)
    return kinds, offsets


def _make_batch(kg, sampler, kinds, offsets, rng) -> Batch:
    positives, negatives = {}, {}
    for i, kind in enumerate(KINDS):
        sel = offsets[kinds == i]
        if len(sel) == 0:
            continue
        pos = kg.train[kind][sel]
        positives[kind] = pos
        negatives[kind] = sampler.corrupt_batch(kind, pos, rng)[0]
    return Batch(positives, negatives)


BatchCallback = Callable[[int, Batch, Dict[str, float]], None]


def run_epoch(state, kg, sampler, config, rng, callback: Optional[BatchCallback] = None) -> Dict[str, float]:
    kinds, offsets = _training_stream(kg)
    order = rng.permutation(len(kinds))
    totals = {v: 0.0 for v in LOSS_KEYS.values()}
    for start in range(0, len(order), config.batch_size):
        sel = order[start:start + config.batch_size]
        batch = _make_batch(kg, sampler, kinds[sel], offsets[sel], rng)
        losses = step_batch(state, batch, config)
        if callback is not None:
            callback(state.epoch, batch, losses)
        for key, value in losses.items():
            totals[key] += value
    return totals


def _run_epoch_parallel(state, kg, sampler, config, seed_rng, workers: int) -> Dict[str, float]:
    """Lock-free workers updating the shared tables; results are nondeterministic."""
    kinds, offsets = _training_stream(kg)
    order = seed_rng.permutation(len(kinds))
    chunks = np.array_split(order, workers)
    results: List[Dict[str, float]] = [dict() for _ in range(workers)]
    errors: List[BaseException] = []
    base = int(seed_rng.integers(2**31))

    def work(w):
        try:
            rng = np.random.default_rng(base + w)
            results[w] = run_epoch_slice(state, kg, sampler, config, rng, chunks[w], kinds, offsets)
        except BaseException as exc:  # surfaced in the caller thread
            errors.append(exc)

    threads = [threading.Thread(target=work, args=(w,)) for w in range(workers)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[0]
    totals = {v: 0.0 for v in LOSS_KEYS.values()}
    for r in results:
        for key, value in r.items():
            totals[key] += value
    return totals


def run_epoch_slice(state, kg, sampler, config, rng, order, kinds, offsets):
    totals = {v: 0.0 for v in LOSS_KEYS.values()}
    for start in range(0, len(order), config.batch_size):
        sel = order[start:start + config.batch_size]
        batch = _make_batch(kg, sampler, kinds[sel], offsets[sel], rng)
        for key, value in step_batch(state, batch, config).items():
            totals[key] += value
    return totals


def train(
    kg: KnowledgeGraph,
    config: TrainConfig,
    callback: Optional[BatchCallback] = None,
    checkpoint_dir=None,
    state: Optional[TrainState] = None,
) -> TrainState:
    """Train for ``config.epochs`` passes over the shuffled training triples.

    With ``config.threads == 1`` the run is bit-for-bit reproducible from
    ``config.seed``. ``callback(epoch, batch, losses)`` is called after each
    single-threaded step.
    """
    config.validate()
    if state is None:
        space = init_space(kg.n_instances, kg.n_concepts, kg.n_relations, config, derive_rng(config.seed, "init"))
        state = TrainState(space)
    rng = derive_rng(config.seed, "train")
    sampler = NegativeSampler(kg, config.sampling)
    for _ in range(config.epochs):
        if config.threads == 1:
            totals = run_epoch(state, kg, sampler, config, rng, callback)
        else:
            totals = _run_epoch_parallel(state, kg, sampler, config, rng, config.threads)
        state.epoch += 1
        totals["total"] = totals["L_e"] + totals["L_c"] + totals["L_l"]
        state.loss_trace.append(totals)
        if state.epoch % 100 == 0:
            logger.info("epoch %d loss %.4f", state.epoch, totals["total"])
        if checkpoint_dir is not None and config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
            from .checkpoint import save_checkpoint

            save_checkpoint(Path(checkpoint_dir) / f"epoch-{state.epoch:05d}", state, config)
    return state
