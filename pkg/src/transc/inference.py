"""Discovering isA facts from a trained space by containment tests."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from .geometry import EmbeddingSpace, SpherePosition, _classify
from .kg import KnowledgeGraph, TripleKind

Inferred = List[Tuple[int, int, float]]

_CHUNK = 4096


def infer_instance_of(space: EmbeddingSpace, kg: KnowledgeGraph, slack: float = 0.0) -> Inferred:
    """Unknown ``(instance, concept)`` pairs with ``||i - p|| - m <= -slack``, best first."""
    if slack < 0:
        raise ValueError("slack must be non-negative")
    known = kg.known_rows(TripleKind.INSTANCE_OF)
    found = []
    centers, radii = space.centers, space.radii
    sq_c = np.einsum("ij,ij->i", centers, centers)
    for start in range(0, len(space.instance_vecs), _CHUNK):
        vecs = space.instance_vecs[start:start + _CHUNK]
        sq_i = np.einsum("ij,ij->i", vecs, vecs)
        # cheap squared-distance prefilter, exact norm below
        approx = sq_i[:, None] + sq_c[None, :] - 2.0 * vecs @ centers.T
        bound = np.maximum(radii - slack, 0.0) + 1e-9
        cand_i, cand_c = np.nonzero(approx <= (bound**2)[None, :] + 1e-9)
        if len(cand_i) == 0:
            continue
        diff = vecs[cand_i] - centers[cand_c]
        scores = np.linalg.norm(diff, axis=1) - radii[cand_c]
        for i, c, s in zip((cand_i + start).tolist(), cand_c.tolist(), scores.tolist()):
            if s <= -slack and (i, c) not in known:
                found.append((i, c, s))
    found.sort(key=lambda x: (x[2], x[0], x[1]))
    return found


def infer_sub_class_of(space: EmbeddingSpace, kg: KnowledgeGraph, slack: float = 0.0) -> Inferred:
    """Unknown ``(sub, super)`` pairs whose spheres are nested with margin ``slack``.

    A pair qualifies when ``d + m_i + slack <= m_j`` (inside with room to
    spare). Identical spheres never qualify for ``slack > 0``; self pairs are
    skipped. Scores are ``d + m_i - m_j``.
    """
    if slack < 0:
        raise ValueError("slack must be non-negative")
    known = kg.known_rows(TripleKind.SUB_CLASS_OF)
    centers, radii = space.centers, space.radii
    found = []
    sq = np.einsum("ij,ij->i", centers, centers)
    for start in range(0, len(centers), _CHUNK):
        block = centers[start:start + _CHUNK]
        approx = np.maximum(sq[start:start + _CHUNK, None] + sq[None, :] - 2.0 * block @ centers.T, 0.0)
        # prefilter: a nested center lies within the outer radius
        rows, cols = np.nonzero(approx <= (radii**2)[None, :] + 1e-9)
        rows = rows + start
        keep = rows != cols
        rows, cols = rows[keep], cols[keep]
        if len(rows) == 0:
            continue
        d = np.linalg.norm(centers[rows] - centers[cols], axis=1)
        inside = _classify(d + slack, radii[rows], radii[cols]) == SpherePosition.INSIDE
        for a, b, dist in zip(rows[inside].tolist(), cols[inside].tolist(), d[inside].tolist()):
            if (a, b) not in known:
                found.append((a, b, dist + float(radii[a] - radii[b])))
    found.sort(key=lambda x: (x[2], x[0], x[1]))
    return found


def write_inferred(path, facts: Inferred, kg: KnowledgeGraph, kind):
    kind = TripleKind(kind)
    head_name = kg.instances.name if kind is TripleKind.INSTANCE_OF else kg.concepts.name
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, t, s in facts:
            fh.write(f"{head_name(h)}\t{kg.concepts.name(t)}\t{s!r}\n")
