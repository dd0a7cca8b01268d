"""Embedding, k-means, centroid-member selection, and cluster schedules.

The clustering routines are written against plain numpy arrays and are fully
deterministic given (vectors, k, seed): k-means++ seeding draws from a seeded
generator, Lloyd iterations stop on a fixed shift tolerance or iteration cap,
and cluster indices are canonicalized by descending cluster size (ties going
to the lowest member row) so downstream ordering never depends on run-to-run
accidents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .extraction import SubModule

KMEANS_MAX_ITER = 100
KMEANS_SHIFT_TOL = 1e-6
SCHEDULE_SCHEMES = ("fixed", "decreasing", "increasing", "dynamic")


class SilhouetteUndefinedError(ValueError):
    pass


@dataclass
class ClusterAssignment:
    labels: list[int]
    means: np.ndarray  # (effective_k, dim); row k is the arithmetic mean of cluster k
    inertia: float
    centroid_member_indices: list[int]  # row index of the member closest to each mean
    effective_k: int
    inertia_history: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class ClusterSchedule:
    scheme: str = "fixed"
    base_k: int = 5

    def __post_init__(self) -> None:
        if self.scheme not in SCHEDULE_SCHEMES:
            raise ValueError(f"unknown schedule scheme: {self.scheme!r}")
        if self.base_k < 1:
            raise ValueError("base_k must be >= 1")


def embed(submodules: list[SubModule], provider) -> np.ndarray:
    """Embed sub-module texts (header + docstring + body, verbatim)."""
    if not submodules:
        raise ValueError("embed requires at least one sub-module")
    return provider.embed_texts([sm.text() for sm in submodules])


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def _plusplus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]), dtype=np.float64)
    centers[0] = points[rng.integers(n)]
    for j in range(1, k):
        d2 = _sq_dists(points, centers[:j]).min(axis=1)
        total = d2.sum()
        if total <= 0.0:  # cannot happen while k <= #distinct points, kept defensive
            centers[j] = points[rng.integers(n)]
            continue
        centers[j] = points[rng.choice(n, p=d2 / total)]
    return centers


def kmeans(vectors, k: int, seed: int) -> ClusterAssignment:
    """Lloyd's algorithm with k-means++ initialization.

    k is clamped to the number of distinct vectors, so the call never fails on
    small inputs. Clusters that fall empty mid-iteration are reseeded with the
    point farthest from its current mean. The returned means are exactly the
    arithmetic means of their final members.
    """
    points = np.asarray(vectors, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("vectors must be a non-empty 2d array")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = points.shape[0]
    distinct = np.unique(points, axis=0).shape[0]
    k_eff = min(k, distinct)

    rng = np.random.default_rng(seed)
    centers = _plusplus_init(points, k_eff, rng)

    labels = np.zeros(n, dtype=np.int64)
    history: list[float] = []
    for _ in range(KMEANS_MAX_ITER):
        d2 = _sq_dists(points, centers)
        labels = d2.argmin(axis=1)
        labels = _repair_empty(points, centers, labels, k_eff)
        history.append(float(_sq_dists(points, centers)[np.arange(n), labels].sum()))
        new_centers = np.vstack([points[labels == j].mean(axis=0) for j in range(k_eff)])
        shift = float(np.linalg.norm(new_centers - centers, axis=1).max())
        centers = new_centers
        if shift < KMEANS_SHIFT_TOL:
            break

    # final alignment pass so labels, means, and inertia agree exactly
    labels = _sq_dists(points, centers).argmin(axis=1)
    labels = _repair_empty(points, centers, labels, k_eff)
    centers = np.vstack([points[labels == j].mean(axis=0) for j in range(k_eff)])
    inertia = float(_sq_dists(points, centers)[np.arange(n), labels].sum())
    history.append(inertia)

    labels, centers = _canonicalize(labels, centers, k_eff)
    centroid_members = _closest_members(points, labels, centers, k_eff)
    return ClusterAssignment(
        labels=[int(x) for x in labels],
        means=centers,
        inertia=inertia,
        centroid_member_indices=centroid_members,
        effective_k=k_eff,
        inertia_history=history,
    )


def _repair_empty(
    points: np.ndarray, centers: np.ndarray, labels: np.ndarray, k_eff: int
) -> np.ndarray:
    labels = labels.copy()
    for j in range(k_eff):
        if (labels == j).any():
            continue
        dist_to_own = np.linalg.norm(points - centers[labels], axis=1)
        # do not steal the last member of another cluster
        counts = np.bincount(labels, minlength=k_eff)
        eligible = counts[labels] > 1
        if not eligible.any():
            eligible = np.ones_like(dist_to_own, dtype=bool)
        candidates = np.where(eligible, dist_to_own, -1.0)
        taken = int(candidates.argmax())
        centers[j] = points[taken]
        labels[taken] = j
    return labels


def _canonicalize(labels: np.ndarray, centers: np.ndarray, k_eff: int):
    order = sorted(
        range(k_eff),
        key=lambda j: (-int((labels == j).sum()), int(np.flatnonzero(labels == j).min())),
    )
    remap = {old: new for new, old in enumerate(order)}
    new_labels = np.asarray([remap[int(l)] for l in labels], dtype=np.int64)
    return new_labels, centers[order]


def _closest_members(
    points: np.ndarray, labels: np.ndarray, centers: np.ndarray, k_eff: int
) -> list[int]:
    out = []
    for j in range(k_eff):
        members = np.flatnonzero(labels == j)
        dists = np.linalg.norm(points[members] - centers[j], axis=1)
        out.append(int(members[dists.argmin()]))  # argmin ties go to the lowest row
    return out


def select_centroid_indices(
    assignment: ClusterAssignment, vectors, tie_keys: list
) -> list[int]:
    """Per cluster, the row index of the member closest to the cluster mean.

    Distance ties mean equality of the correctly rounded float64 squared
    distance, which math.fsum delivers independent of summation order (a
    duplicate point or the two members of a midpoint pair always tie).
    ``tie_keys[i]`` orders such ties; the row index itself is the final
    tiebreaker. Output is ordered by cluster index, which after
    canonicalization means by descending cluster size.
    """
    points = np.asarray(vectors, dtype=np.float64)
    if len(tie_keys) != points.shape[0]:
        raise ValueError("one tie-break key per vector is required")
    labels = np.asarray(assignment.labels)
    chosen: list[int] = []
    for j in range(assignment.effective_k):
        members = [int(i) for i in np.flatnonzero(labels == j)]
        mean = assignment.means[j]
        sq = {
            i: math.fsum(float(points[i, d] - mean[d]) ** 2 for d in range(points.shape[1]))
            for i in members
        }
        chosen.append(min(members, key=lambda i: (sq[i], tie_keys[i], i)))
    return chosen


def select_centroids(
    assignment: ClusterAssignment, vectors, submodules: list[SubModule]
) -> list[SubModule]:
    """Pick, per cluster, the sub-module closest to the cluster mean.

    Exact distance ties break on the lowest (source_sample_id, position)
    pair.
    """
    keys = [sm.source_sample_id for sm in submodules]
    return [submodules[i] for i in select_centroid_indices(assignment, vectors, keys)]


def silhouette(assignment: ClusterAssignment, vectors) -> float:
    """Mean silhouette score over all points.

    a(i) is the mean distance to the other members of i's cluster, b(i) the
    smallest mean distance to any other cluster. Singleton-cluster members
    score 0 by convention. Undefined when only one effective cluster exists.
    """
    if assignment.effective_k < 2:
        raise SilhouetteUndefinedError("silhouette needs at least 2 clusters")
    points = np.asarray(vectors, dtype=np.float64)
    labels = np.asarray(assignment.labels)
    n = points.shape[0]
    diff = points[:, None, :] - points[None, :, :]
    dist = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))

    scores = np.zeros(n, dtype=np.float64)
    for i in range(n):
        own = labels == labels[i]
        own_count = int(own.sum())
        if own_count <= 1:
            scores[i] = 0.0
            continue
        a = dist[i, own].sum() / (own_count - 1)
        b = min(
            dist[i, labels == other].mean()
            for other in range(assignment.effective_k)
            if other != labels[i]
        )
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def schedule_k(
    schedule: ClusterSchedule,
    round_index: int,
    vectors=None,
    seed: int = 0,
) -> int:
    """Cluster count for a revision round (rounds are numbered from 1)."""
    if round_index < 1:
        raise ValueError("revision rounds are numbered from 1")
    if schedule.scheme == "fixed":
        return schedule.base_k
    if schedule.scheme == "decreasing":
        return max(schedule.base_k - (round_index - 1), 1)
    if schedule.scheme == "increasing":
        return schedule.base_k + (round_index - 1)

    # dynamic: silhouette-maximizing k, falling back to fixed on tiny inputs
    if vectors is None:
        return schedule.base_k
    points = np.asarray(vectors, dtype=np.float64)
    if points.shape[0] < 3:
        return schedule.base_k
    best_k, best_score = None, None
    for k in range(2, min(schedule.base_k + 3, points.shape[0]) + 1):
        assignment = kmeans(points, k, seed)
        if assignment.effective_k < 2:
            continue
        score = silhouette(assignment, points)
        if best_score is None or score > best_score:
            best_k, best_score = k, score
    return best_k if best_k is not None else schedule.base_k
