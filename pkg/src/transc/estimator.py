"""Estimator interface.

``TransC`` follows the scikit-learn conventions: hyperparameters are
constructor arguments (``get_params``/``set_params``/``clone`` work), ``fit``
learns from a :class:`~transc.kg.KnowledgeGraph` and sets trailing-underscore
attributes, and the scoring methods validate their inputs.

>>> model = TransC(dim=20, epochs=50).fit(kg)            # doctest: +SKIP
>>> model.score_triples("instanceOf", [[0, 3], [1, 4]])  # doctest: +SKIP
>>> model.fit_thresholds(kg)                              # doctest: +SKIP
>>> model.predict("instanceOf", [[0, 3], [1, 4]])         # doctest: +SKIP
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import evaluation
from .checkpoint import load_checkpoint, save_checkpoint
from .gradients import kind_scores
from .inference import infer_instance_of, infer_sub_class_of
from .kg import KnowledgeGraph, TripleKind
from .training import TrainConfig, TrainState, train
from .utils import check_rows

_WIDTH = {TripleKind.RELATIONAL: 3, TripleKind.INSTANCE_OF: 2, TripleKind.SUB_CLASS_OF: 2}


class TransC(BaseEstimator):
    """Concepts as spheres, instances as points, relations as translations.

    Parameters
    ----------
    dim : int
        Embedding dimension ``k``.
    lr : float
        SGD learning rate.
    margin_l, margin_e, margin_c : float
        Ranking margins for relational, instanceOf and subClassOf pairs.
    sampling : {"bern", "unif"}
        Which side of a triple to corrupt.
    epochs, batch_size : int
        Passes over the training triples and pairs per SGD step.
    mode : {"transc", "transe", "transe-isa"}
        ``"transe"`` is the baseline without sphere learning: only relational
        triples produce gradients, isA pairs are still scored against the
        (untrained) spheres. ``"transe-isa"`` instead treats instanceOf and
        subClassOf as two more translation relations with concepts as points.
    seed : int
        Master seed; single-threaded fits are bit-for-bit reproducible.
    threads : int
        Lock-free parallel workers (nondeterministic when > 1).
    """

    def __init__(
        self,
        dim=100,
        lr=0.001,
        margin_l=1.0,
        margin_e=0.1,
        margin_c=1.0,
        sampling="bern",
        epochs=1000,
        batch_size=512,
        mode="transc",
        seed=0,
        threads=1,
    ):
        self.dim = dim
        self.lr = lr
        self.margin_l = margin_l
        self.margin_e = margin_e
        self.margin_c = margin_c
        self.sampling = sampling
        self.epochs = epochs
        self.batch_size = batch_size
        self.mode = mode
        self.seed = seed
        self.threads = threads

    def _config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    def fit(self, kg: KnowledgeGraph, y=None, callback=None):
        if not isinstance(kg, KnowledgeGraph):
            raise TypeError(f"fit expects a KnowledgeGraph, got {type(kg).__name__}")
        config = self._config()
        state = train(kg, config, callback=callback)
        self._set_state(state, kg)
        return self

    def _set_state(self, state: TrainState, kg: Optional[KnowledgeGraph]):
        self.state_ = state
        self.space_ = state.space
        self.loss_trace_ = state.loss_trace
        self.n_epochs_ = state.epoch
        if kg is not None:
            self.n_instances_ = kg.n_instances
            self.n_concepts_ = kg.n_concepts
            self.n_relations_ = kg.n_relations
        else:
            self.n_instances_ = len(state.space.instance_vecs)
            self.n_concepts_ = len(state.space.centers)
            self.n_relations_ = len(state.space.relation_vecs)

    def _validate_rows(self, kind, rows) -> np.ndarray:
        check_is_fitted(self, "space_")
        kind = TripleKind(kind)
        rows = check_rows(rows, _WIDTH[kind])
        if kind is TripleKind.RELATIONAL:
            limits = (self.n_instances_, self.n_relations_, self.n_instances_)
        elif kind is TripleKind.INSTANCE_OF:
            limits = (self.n_instances_, self.n_concepts_)
        else:
            limits = (self.n_concepts_, self.n_concepts_)
        if len(rows) and (np.any(rows < 0) or np.any(rows >= np.asarray(limits))):
            raise ValueError(f"{kind.value} ids out of range for the fitted vocabularies")
        return rows

    def score_triples(self, kind, rows) -> np.ndarray:
        """Score of each row; lower means more plausible."""
        kind = TripleKind(kind)
        rows = self._validate_rows(kind, rows)
        return kind_scores(self.space_, kind.value, rows, self.mode)

    def evaluate(self, kg: KnowledgeGraph, thresholds=None, link_prediction=True) -> evaluation.EvalReport:
        """Link prediction on test plus classification with thresholds fitted on valid."""
        check_is_fitted(self, "space_")
        report = evaluation.EvalReport()
        if link_prediction and len(kg.test.relational):
            report.link_prediction = evaluation.link_prediction(self.space_, kg, "test", self.threads)
        if thresholds is None:
            thresholds = self.fit_thresholds(kg)
        report.classification = evaluation.triple_classification(
            self.space_, kg, thresholds, "test", mode=self.mode, seed=self.seed
        )
        report.flagged = list(thresholds.flagged)
        return report

    def fit_thresholds(self, kg: KnowledgeGraph, split: str = "valid") -> evaluation.ThresholdTable:
        """Fit classification thresholds on a labelled split and keep them as ``thresholds_``."""
        check_is_fitted(self, "space_")
        self.thresholds_ = evaluation.fit_thresholds(self.space_, kg, split, mode=self.mode, seed=self.seed)
        return self.thresholds_

    def predict(self, kind, rows, thresholds: Optional[evaluation.ThresholdTable] = None) -> np.ndarray:
        """Boolean plausibility of each row: score strictly below its threshold.

        Uses ``thresholds`` or, if omitted, the table from :meth:`fit_thresholds`.
        """
        kind = TripleKind(kind)
        if thresholds is None:
            check_is_fitted(self, "thresholds_", msg="call fit_thresholds before predict or pass thresholds")
            thresholds = self.thresholds_
        rows = self._validate_rows(kind, rows)
        scores = kind_scores(self.space_, kind.value, rows, self.mode)
        if kind is TripleKind.RELATIONAL:
            cut = np.array([thresholds.relational[r] for r in rows[:, 1].tolist()], dtype=np.float64)
        elif kind is TripleKind.INSTANCE_OF:
            cut = np.full(len(scores), thresholds.instance_of)
        else:
            cut = np.full(len(scores), thresholds.sub_class_of)
        return scores < cut

    def infer(self, kg: KnowledgeGraph, slack: float = 0.0):
        """New ``(instanceOf, subClassOf)`` facts from sphere containment."""
        check_is_fitted(self, "space_")
        if self.mode != "transc":
            raise ValueError("containment inference needs a model trained with mode='transc'")
        return infer_instance_of(self.space_, kg, slack), infer_sub_class_of(self.space_, kg, slack)

    def save(self, directory):
        check_is_fitted(self, "space_")
        save_checkpoint(directory, self.state_, self._config())

    @classmethod
    def load(cls, directory) -> "TransC":
        state, config = load_checkpoint(directory)
        params = config.to_dict()
        params.pop("checkpoint_every", None)
        model = cls(**params)
        model._set_state(state, None)
        return model
