"""Training-set construction.

The automatic sampler fits a total-least-squares plane to the neighbourhood
of each of a few thousand random candidate points. Points whose
neighbourhoods scatter far from their plane become leaf samples. Points
whose neighbourhoods hug it become wood samples.

Two reference samplers are provided as well. ``seed_sphere_training``
grows spheres around given seed points. ``training_from_labels`` draws a
random labelled subset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingleClassError
from .features import EPS_TRACE, compute_features, covariance_batch, eigh_sym3
from .io import LEAF, WOOD, as_labels
from .spatial import CHUNK, knn_many

DEFAULT_CANDIDATES = 2000


@dataclass(frozen=True)
class PlaneFit:
    centroid: np.ndarray
    normal: np.ndarray
    sigma: float


@dataclass(frozen=True)
class SampleProfile:
    n_leaf: int
    n_wood: int
    n_candidates: int = DEFAULT_CANDIDATES

    def __post_init__(self):
        if min(self.n_leaf, self.n_wood, self.n_candidates) < 1:
            raise ConfigError("sample counts must be positive")
        if self.n_leaf + self.n_wood > self.n_candidates:
            raise ConfigError(
                f"n_leaf + n_wood = {self.n_leaf + self.n_wood} exceeds "
                f"n_candidates = {self.n_candidates}"
            )


PROFILES = {
    "leafy": SampleProfile(1200, 800),
    "balanced": SampleProfile(1000, 1000),
    "woody": SampleProfile(800, 1200),
}


def get_profile(name: str, n_candidates: int | None = None) -> SampleProfile:
    try:
        base = PROFILES[name]
    except KeyError:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
    if n_candidates is None or n_candidates == base.n_candidates:
        return base
    # Keep the preset's leaf/wood/discard proportions for other candidate counts.
    scale = n_candidates / base.n_candidates
    return SampleProfile(max(1, round(base.n_leaf * scale)), max(1, round(base.n_wood * scale)),
                         n_candidates)


@dataclass
class SampleAudit:
    """Every candidate of an automatic selection: sigma and class (-1 if unused)."""

    indices: np.ndarray
    sigma: np.ndarray
    classes: np.ndarray


@dataclass
class TrainingSet:
    """Labelled feature rows, ordered by ascending source point index."""

    indices: np.ndarray
    classes: np.ndarray
    features: np.ndarray
    audit: SampleAudit | None = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.classes = as_labels(self.classes, self.indices.shape[0])
        self.features = np.asarray(self.features, dtype=np.float64).reshape(len(self.indices), -1)
        if np.unique(self.indices).shape[0] != self.indices.shape[0]:
            raise ValueError("training indices must be unique")

    def __len__(self):
        return self.indices.shape[0]

    def counts(self):
        n_leaf = int(np.count_nonzero(self.classes == LEAF))
        return n_leaf, len(self) - n_leaf

    def require_both_classes(self):
        n_leaf, n_wood = self.counts()
        if n_leaf == 0 or n_wood == 0:
            raise SingleClassError(
                f"training set needs both classes (leaf={n_leaf}, wood={n_wood})"
            )


def _make_set(indices, classes, cloud, index, k, features, workers, audit=None):
    indices = np.asarray(indices, dtype=np.int64)
    order = np.argsort(indices, kind="stable")
    indices = indices[order]
    classes = np.asarray(classes)[order]
    if features is None:
        feats = compute_features(cloud, index, k, indices=indices, workers=workers)
    else:
        feats = np.asarray(features)[indices]
    return TrainingSet(indices, classes, feats, audit)


# --- plane fitting -----------------------------------------------------------


def _plane_groups(groups):
    cov = covariance_batch(groups)
    _, normal = eigh_sym3(cov)
    centroid = groups.mean(axis=1)
    signed = np.einsum("mnd,md->mn", groups - centroid[:, None, :], normal)
    sigma = signed.std(axis=1)
    # Coincident points: fixed normal, zero residual.
    flat = np.trace(cov, axis1=1, axis2=2) < EPS_TRACE
    sigma[flat] = 0.0
    normal[flat] = (0.0, 0.0, 1.0)
    return centroid, normal, sigma


def fit_plane(cloud, nbh) -> PlaneFit:
    """Orthogonal-distance plane through the centre and its neighbours.

    The normal is the covariance eigenvector of the smallest eigenvalue.
    ``sigma`` is the population standard deviation of the signed
    point-to-plane distances. When all points coincide the fit degenerates
    to ``sigma = 0`` with normal ``(0, 0, 1)``.
    """
    if nbh.k < 2:
        raise ConfigError("a plane fit needs at least 2 neighbours (3 points)")
    pts = np.vstack([cloud.points[nbh.center_index][None, :],
                     cloud.points[nbh.neighbor_indices]])
    centroid, normal, sigma = _plane_groups(pts[None])
    return PlaneFit(centroid[0], normal[0], float(sigma[0]))


def plane_sigmas(cloud, index, centers, k: int, workers: int = 1) -> np.ndarray:
    """Plane-fit residual sigma for the k-neighbourhood of each centre."""
    if k < 2:
        raise ConfigError("a plane fit needs k >= 2")
    centers = np.asarray(centers, dtype=np.int64)
    out = np.empty(len(centers))
    for start in range(0, len(centers), CHUNK):
        sl = slice(start, start + CHUNK)
        nbr, _ = knn_many(index, centers[sl], k, workers=workers)
        groups = np.concatenate([cloud.points[centers[sl]][:, None, :],
                                 cloud.points[nbr]], axis=1)
        out[sl] = _plane_groups(groups)[2]
    return out


# --- samplers ----------------------------------------------------------------


def select_candidates(cloud, n: int, seed: int) -> np.ndarray:
    """``n`` distinct point indices drawn uniformly without replacement."""
    total = len(cloud)
    if n > total:
        raise ConfigError(f"cannot draw {n} candidates from {total} points")
    if n < 0:
        raise ConfigError("candidate count must be non-negative")
    rng = np.random.default_rng(seed)
    return rng.choice(total, size=n, replace=False).astype(np.int64)


def auto_select_training(cloud, index, profile: SampleProfile, k: int = 100, seed: int = 42,
                         features=None, workers: int = 1) -> TrainingSet:
    """Self-sampled training set from plane-fit residuals.

    Candidates are ranked by sigma descending, ties by ascending index. The
    top ``n_leaf`` become leaf samples, the bottom ``n_wood`` wood samples,
    and the rest are dropped. ``features`` may hold precomputed rows for the
    whole cloud; otherwise they are computed for the selected points only.
    """
    candidates = select_candidates(cloud, profile.n_candidates, seed)
    sigma = plane_sigmas(cloud, index, candidates, k, workers=workers)
    order = np.lexsort((candidates, -sigma))
    leaf = order[:profile.n_leaf]
    wood = order[len(order) - profile.n_wood:]

    classes = np.full(len(candidates), -1, dtype=np.int8)
    classes[leaf] = LEAF
    classes[wood] = WOOD
    audit_order = np.argsort(candidates)
    audit = SampleAudit(candidates[audit_order], sigma[audit_order], classes[audit_order])

    chosen = np.concatenate([leaf, wood])
    return _make_set(candidates[chosen], classes[chosen], cloud, index, k, features,
                     workers, audit)


def seed_sphere_training(cloud, index, leaf_seeds, wood_seeds, radius: float = 0.1, k: int = 100,
                         features=None, workers: int = 1) -> TrainingSet:
    """Training set from spheres around seed points.

    Points within ``radius`` of a leaf seed are leaf samples, and likewise
    for wood. A point inside both unions takes the class of its nearest
    seed, with ties going to leaf.
    """
    if not radius > 0:
        raise ConfigError("sphere radius must be positive")
    leaf_seeds = np.asarray(leaf_seeds, dtype=np.int64)
    wood_seeds = np.asarray(wood_seeds, dtype=np.int64)
    n = len(cloud)
    for s in (leaf_seeds, wood_seeds):
        if s.size and (s.min() < 0 or s.max() >= n):
            raise IndexError("seed index out of range")

    def union(seeds):
        found = [np.asarray(x, dtype=np.int64)
                 for x in index.tree.query_ball_point(cloud.points[seeds], radius)]
        return np.unique(np.concatenate(found)) if found else np.empty(0, dtype=np.int64)

    in_leaf = union(leaf_seeds)
    in_wood = union(wood_seeds)
    if in_leaf.size == 0 or in_wood.size == 0:
        raise SingleClassError("seed spheres produced an empty class")

    both = np.intersect1d(in_leaf, in_wood)
    members = np.union1d(in_leaf, in_wood)
    classes = np.where(np.isin(members, in_leaf), LEAF, WOOD).astype(np.int8)
    if both.size:
        pts = cloud.points[both]
        d_leaf = np.min(np.linalg.norm(pts[:, None] - cloud.points[leaf_seeds][None], axis=2), axis=1)
        d_wood = np.min(np.linalg.norm(pts[:, None] - cloud.points[wood_seeds][None], axis=2), axis=1)
        pos = np.searchsorted(members, both)
        classes[pos] = np.where(d_leaf <= d_wood, LEAF, WOOD)
    ts = _make_set(members, classes, cloud, index, k, features, workers)
    ts.require_both_classes()
    return ts


def random_class_seeds(labels, n_per_class: int, seed: int):
    """Pick ``n_per_class`` random leaf and wood seed points from true labels."""
    labels = as_labels(labels)
    rng = np.random.default_rng(seed)
    leaf_pool = np.flatnonzero(labels == LEAF)
    wood_pool = np.flatnonzero(labels == WOOD)
    if leaf_pool.size == 0 or wood_pool.size == 0:
        raise SingleClassError("seed selection needs both classes in the labels")
    leaf = rng.choice(leaf_pool, size=min(n_per_class, leaf_pool.size), replace=False)
    wood = rng.choice(wood_pool, size=min(n_per_class, wood_pool.size), replace=False)
    return np.sort(leaf), np.sort(wood)


def training_from_labels(cloud, index, labels, n: int, seed: int, k: int = 100,
                         features=None, workers: int = 1) -> TrainingSet:
    """Random labelled subset of ``n`` points with their features."""
    labels = as_labels(labels, len(cloud))
    chosen = select_candidates(cloud, n, seed)
    ts = _make_set(chosen, labels[chosen], cloud, index, k, features, workers)
    ts.require_both_classes()
    return ts
