"""Score functions for instances (vectors), concepts (spheres) and relations.

Lower is better for every score. ``instance_of`` and ``sub_class_of`` are
negative when the containment they describe holds; ``relational`` is the
squared translation residual and is never negative.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

RADIUS_FLOOR = 1e-4
NORM_TOL = 1e-12


class SpherePosition(enum.IntEnum):
    INSIDE = 0  # s_i inside s_j
    SEPARATE = 1
    INTERSECT = 2
    CONTAINS = 3  # s_j inside s_i


@dataclass(frozen=True)
class ConceptSphere:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.shape[-1]


@dataclass
class EmbeddingSpace:
    """All trainable parameters.

    ``isa_relation_vecs`` holds translation vectors for instanceOf and
    subClassOf; only the ``"transe-isa"`` mode uses them, treating concepts
    as points located at the sphere centers.
    """

    instance_vecs: np.ndarray
    relation_vecs: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    isa_relation_vecs: np.ndarray

    @property
    def dim(self) -> int:
        return self.instance_vecs.shape[1]

    def sphere(self, concept: int) -> ConceptSphere:
        return ConceptSphere(self.centers[concept], self.radii[concept])

    def copy(self) -> "EmbeddingSpace":
        return EmbeddingSpace(
            self.instance_vecs.copy(),
            self.relation_vecs.copy(),
            self.centers.copy(),
            self.radii.copy(),
            self.isa_relation_vecs.copy(),
        )

    def arrays(self):
        return {
            "instance_vecs": self.instance_vecs,
            "relation_vecs": self.relation_vecs,
            "centers": self.centers,
            "radii": self.radii,
            "isa_relation_vecs": self.isa_relation_vecs,
        }

    def equals(self, other: "EmbeddingSpace") -> bool:
        mine, theirs = self.arrays(), other.arrays()
        return all(np.array_equal(mine[k], theirs[k]) for k in mine)

    def check_invariants(self, tol: float = NORM_TOL) -> bool:
        for arr in (self.instance_vecs, self.relation_vecs, self.centers, self.isa_relation_vecs):
            if len(arr) and np.linalg.norm(arr, axis=1).max() > 1.0 + tol:
                return False
        return bool(np.all(self.radii >= RADIUS_FLOOR))


def _check_dims(a: np.ndarray, b: np.ndarray):
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"dimension mismatch: {a.shape[-1]} != {b.shape[-1]}")


def score_instance_of(instance, sphere: ConceptSphere) -> float:
    """``||i - p|| - m``; negative iff the instance lies strictly inside."""
    i = np.asarray(instance, dtype=np.float64)
    _check_dims(i, sphere.center)
    return float(np.linalg.norm(i - sphere.center) - sphere.radius)


def classify_spheres(s_i: ConceptSphere, s_j: ConceptSphere) -> SpherePosition:
    _check_dims(s_i.center, s_j.center)
    d = float(np.linalg.norm(s_i.center - s_j.center))
    return SpherePosition(int(_classify(d, s_i.radius, s_j.radius)))


def _classify(d, m_i, m_j):
    """Vectorised case selection with the boundary tie-breaks."""
    d, m_i, m_j = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (d, m_i, m_j)))
    out = np.full(d.shape, SpherePosition.INTERSECT, dtype=np.int8)
    out[d >= m_i + m_j] = SpherePosition.SEPARATE
    out[d + m_j < m_i] = SpherePosition.CONTAINS
    out[d + m_i <= m_j] = SpherePosition.INSIDE
    return out


def score_sub_class_of(s_i: ConceptSphere, s_j: ConceptSphere) -> float:
    """Piecewise subClassOf score.

    ``m_i - m_j`` when ``s_j`` lies inside ``s_i``, otherwise
    ``d + m_i - m_j`` (shared by separate, intersecting and the already
    correct inside configuration, where it is negative).
    """
    _check_dims(s_i.center, s_j.center)
    d = float(np.linalg.norm(s_i.center - s_j.center))
    if _classify(d, s_i.radius, s_j.radius) == SpherePosition.CONTAINS:
        return s_i.radius - s_j.radius
    return d + s_i.radius - s_j.radius


def score_relational(h, r, t) -> float:
    h, r, t = (np.asarray(x, dtype=np.float64) for x in (h, r, t))
    _check_dims(h, r)
    _check_dims(r, t)
    diff = h + r - t
    return float(diff @ diff)


# -- batched forms over index arrays -----------------------------------------


def instance_of_scores(space: EmbeddingSpace, rows: np.ndarray) -> np.ndarray:
    diff = space.instance_vecs[rows[:, 0]] - space.centers[rows[:, 1]]
    return np.linalg.norm(diff, axis=1) - space.radii[rows[:, 1]]


def sphere_positions(space: EmbeddingSpace, rows: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(space.centers[rows[:, 0]] - space.centers[rows[:, 1]], axis=1)
    return _classify(d, space.radii[rows[:, 0]], space.radii[rows[:, 1]])


def sub_class_of_scores(space: EmbeddingSpace, rows: np.ndarray) -> np.ndarray:
    d = np.linalg.norm(space.centers[rows[:, 0]] - space.centers[rows[:, 1]], axis=1)
    m_i = space.radii[rows[:, 0]]
    m_j = space.radii[rows[:, 1]]
    contains = _classify(d, m_i, m_j) == SpherePosition.CONTAINS
    return np.where(contains, 0.0, d) + m_i - m_j


def relational_scores(space: EmbeddingSpace, rows: np.ndarray) -> np.ndarray:
    diff = space.instance_vecs[rows[:, 0]] + space.relation_vecs[rows[:, 1]] - space.instance_vecs[rows[:, 2]]
    return np.einsum("ij,ij->i", diff, diff)


def translated_isa_scores(space: EmbeddingSpace, rows: np.ndarray, sub_class: bool) -> np.ndarray:
    """isA as translation (``"transe-isa"`` mode): concepts are points at their sphere centers."""
    if sub_class:
        heads = space.centers[rows[:, 0]]
        rel = space.isa_relation_vecs[1]
    else:
        heads = space.instance_vecs[rows[:, 0]]
        rel = space.isa_relation_vecs[0]
    diff = heads + rel - space.centers[rows[:, 1]]
    return np.einsum("ij,ij->i", diff, diff)


def project_rows(arr: np.ndarray, rows=None) -> None:
    """In-place projection onto the unit ball of ``arr[rows]`` (all rows if None)."""
    sub = arr if rows is None else arr[rows]
    norms = np.linalg.norm(sub, axis=1)
    # rescaled rows can land an ulp above 1; the tolerance keeps projection idempotent
    over = norms > 1.0 + NORM_TOL
    if not over.any():
        return
    if rows is None:
        arr[over] /= norms[over, None]
    else:
        idx = np.asarray(rows)[over]
        arr[idx] = sub[over] / norms[over, None]
