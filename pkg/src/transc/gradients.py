"""Analytic subgradients of the per-triple scores.

Each function returns ``(scores, contributions)`` where a contribution is
``(param_name, row_indices, d score / d param_row)``. ``radii`` gradients are
1-d; every other gradient has one ``k``-vector per row.

Kink convention: the gradient of ``||x||`` at ``x = 0`` is taken as 0.
"""

from __future__ import annotations

from typing import List, NamedTuple, Optional

import numpy as np

from .geometry import EmbeddingSpace, SpherePosition, _classify


class Contribution(NamedTuple):
    param: str
    index: np.ndarray
    grad: np.ndarray


def _unit(diff: np.ndarray):
    norm = np.linalg.norm(diff, axis=1)
    safe = np.where(norm > 0.0, norm, 1.0)
    return norm, diff / safe[:, None] * (norm > 0.0)[:, None]


def instance_of_grads(space: EmbeddingSpace, rows: np.ndarray):
    """``f = ||i - p|| - m``: df/di = u, df/dp = -u, df/dm = -1."""
    i_idx, c_idx = rows[:, 0], rows[:, 1]
    norm, u = _unit(space.instance_vecs[i_idx] - space.centers[c_idx])
    scores = norm - space.radii[c_idx]
    contribs = [
        Contribution("instance_vecs", i_idx, u),
        Contribution("centers", c_idx, -u),
        Contribution("radii", c_idx, -np.ones(len(rows))),
    ]
    return scores, contribs


def sub_class_of_grads(space: EmbeddingSpace, rows: np.ndarray, positions: Optional[np.ndarray] = None):
    """Piecewise subClassOf score.

    Outside the contains case ``f = d + m_i - m_j`` with df/dp_i = u,
    df/dp_j = -u. In the contains case ``f = m_i - m_j`` and the centers get
    no gradient. ``positions`` freezes the case per row; by default it is
    computed from the current parameters.
    """
    a, b = rows[:, 0], rows[:, 1]
    d, u = _unit(space.centers[a] - space.centers[b])
    m_i, m_j = space.radii[a], space.radii[b]
    if positions is None:
        positions = _classify(d, m_i, m_j)
    contains = positions == SpherePosition.CONTAINS
    u = np.where(contains[:, None], 0.0, u)
    scores = np.where(contains, 0.0, d) + m_i - m_j
    n = len(rows)
    contribs = [
        Contribution("centers", a, u),
        Contribution("centers", b, -u),
        Contribution("radii", a, np.ones(n)),
        Contribution("radii", b, -np.ones(n)),
    ]
    return scores, contribs


def relational_grads(space: EmbeddingSpace, rows: np.ndarray):
    """``f = ||h + r - t||^2``: df/dh = df/dr = 2(h + r - t), df/dt = -2(h + r - t)."""
    h, r, t = rows[:, 0], rows[:, 1], rows[:, 2]
    diff = space.instance_vecs[h] + space.relation_vecs[r] - space.instance_vecs[t]
    scores = np.einsum("ij,ij->i", diff, diff)
    g = 2.0 * diff
    contribs = [
        Contribution("instance_vecs", h, g),
        Contribution("relation_vecs", r, g),
        Contribution("instance_vecs", t, -g),
    ]
    return scores, contribs


def translated_isa_grads(space: EmbeddingSpace, rows: np.ndarray, sub_class: bool):
    """isA as translation: ``||head + r_isa - p_tail||^2`` with concepts as points."""
    head_param = "centers" if sub_class else "instance_vecs"
    rel_row = 1 if sub_class else 0
    heads = getattr(space, head_param)[rows[:, 0]]
    diff = heads + space.isa_relation_vecs[rel_row] - space.centers[rows[:, 1]]
    scores = np.einsum("ij,ij->i", diff, diff)
    g = 2.0 * diff
    contribs = [
        Contribution(head_param, rows[:, 0], g),
        Contribution("isa_relation_vecs", np.full(len(rows), rel_row), g),
        Contribution("centers", rows[:, 1], -g),
    ]
    return scores, contribs


def kind_grads(space: EmbeddingSpace, kind: str, rows: np.ndarray, mode: str = "transc", positions=None):
    """Dispatch on triple kind and model mode.

    ``"transc"`` and ``"transe"`` score isA pairs with the sphere functions;
    ``"transe-isa"`` treats them as two extra translation relations.
    """
    if kind == "relational":
        return relational_grads(space, rows)
    if mode == "transe-isa":
        return translated_isa_grads(space, rows, sub_class=(kind == "subClassOf"))
    if kind == "instanceOf":
        return instance_of_grads(space, rows)
    return sub_class_of_grads(space, rows, positions)


def kind_scores(space: EmbeddingSpace, kind: str, rows: np.ndarray, mode: str = "transc") -> np.ndarray:
    return kind_grads(space, kind, rows, mode)[0]


def numeric_gradient(fn, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``fn`` at ``x`` (any shape)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for j in range(flat.size):
        old = flat[j]
        flat[j] = old + eps
        hi = fn(x)
        flat[j] = old - eps
        lo = fn(x)
        flat[j] = old
        g[j] = (hi - lo) / (2.0 * eps)
    return grad


def all_params(contribs: List[Contribution]):
    return sorted({c.param for c in contribs})
