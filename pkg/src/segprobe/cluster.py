"""K-means over patch tokens.

Frozen backbone features carry enough shape information that clustering a
single image's tokens already outlines its objects; this module provides
kmeans (tokens are rows) and a per-image wrapper that reshapes the
assignments back onto the patch grid and renders an index map at pixel
resolution. Indices are categorical, so that last upsampling step is
nearest-neighbor, never bilinear.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericsError
from .store import FeatureMap


@dataclass
class ClusterResult:
    """assignments: (N,) from kmeans, (grid_h, grid_w) from cluster_map."""

    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations_run: int


def _pairwise_sq_dists(tokens: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # |t - c|^2 = |t|^2 - 2 t.c + |c|^2; cheaper than broadcasting the
    # difference tensor, and only used for argmin so slack is tolerable.
    d2 = (
        np.einsum("nz,nz->n", tokens, tokens)[:, None]
        - 2.0 * (tokens @ centroids.T)
        + np.einsum("kz,kz->k", centroids, centroids)[None, :]
    )
    return np.maximum(d2, 0.0)


def _exact_sq_dists_to_assigned(tokens, centroids, assignments) -> np.ndarray:
    diff = tokens - centroids[assignments]
    return np.einsum("nz,nz->n", diff, diff)


def _seed_centroids(tokens: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ : spread initial centroids by D^2-proportional sampling."""
    n = tokens.shape[0]
    centroids = np.empty((k, tokens.shape[1]), dtype=tokens.dtype)
    centroids[0] = tokens[rng.integers(n)]
    d2 = _exact_sq_dists_to_assigned(tokens, centroids[:1], np.zeros(n, dtype=np.intp))
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            pick = int(rng.integers(n))  # all points covered; any point works
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centroids[j] = tokens[pick]
        diff = tokens - centroids[j]
        d2 = np.minimum(d2, np.einsum("nz,nz->n", diff, diff))
    return centroids


def kmeans(tokens: np.ndarray, k: int, seed: int,
           max_iter: int = 300, tol: float = 1e-6) -> ClusterResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops at an assignment fixpoint, when the relative inertia change
    drops below ``tol``, or after ``max_iter`` iterations. An empty
    cluster is re-seeded to the token currently farthest from its
    assigned centroid. Inertia is checked to be non-increasing every
    iteration. Deterministic given the seed.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2:
        raise InvalidArgumentError(f"tokens must be (N, Z), got shape {tokens.shape}")
    n = tokens.shape[0]
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"k must be in [1, {n}] for {n} tokens, got {k}")
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(tokens, k, rng)

    assignments = np.full(n, -1, dtype=np.intp)
    inertia = np.inf
    iterations_run = 0
    for _ in range(max_iter):
        iterations_run += 1
        new_assignments = np.argmin(_pairwise_sq_dists(tokens, centroids), axis=1)

        counts = np.bincount(new_assignments, minlength=k)
        empties = np.flatnonzero(counts == 0)
        if empties.size:
            # Farthest points become the new homes, one per empty cluster.
            far_order = np.argsort(
                -_exact_sq_dists_to_assigned(tokens, centroids, new_assignments),
                kind="stable")
            for cluster_id, point in zip(empties, far_order):
                new_assignments[point] = cluster_id

        for j in range(k):
            members = tokens[new_assignments == j]
            centroids[j] = members.mean(axis=0)

        new_inertia = float(_exact_sq_dists_to_assigned(tokens, centroids, new_assignments).sum())
        if new_inertia > inertia * (1.0 + 1e-9) + 1e-12:
            raise NumericsError(
                f"inertia increased from {inertia!r} to {new_inertia!r}; "
                "Lloyd iterations must be non-increasing"
            )
        converged_fixpoint = np.array_equal(new_assignments, assignments)
        converged_tol = np.isfinite(inertia) and (inertia - new_inertia) <= tol * max(inertia, 1e-300)
        assignments, inertia = new_assignments, new_inertia
        if converged_fixpoint or converged_tol:
            break

    return ClusterResult(assignments=assignments, centroids=centroids,
                         inertia=inertia, iterations_run=iterations_run)


def nearest_index_map(n_in: int, n_out: int) -> np.ndarray:
    """Nearest source index per output position, same endpoint-aligned
    geometry as the bilinear resize (categorical data rounds instead of
    blending)."""
    if n_out == 1 or n_in == 1:
        return np.zeros(n_out, dtype=np.intp)
    src = np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))
    return np.rint(src).astype(np.intp)


def render_index_map(assignments_grid: np.ndarray, image_h: int, image_w: int) -> np.ndarray:
    """Upsample a (grid_h, grid_w) index grid to (image_h, image_w) uint8."""
    if assignments_grid.ndim != 2:
        raise InvalidArgumentError(
            f"assignments grid must be 2-D, got shape {assignments_grid.shape}"
        )
    if np.any(assignments_grid < 0) or np.any(assignments_grid > 255):
        raise InvalidArgumentError("index maps render at most 256 clusters")
    rows = nearest_index_map(assignments_grid.shape[0], image_h)
    cols = nearest_index_map(assignments_grid.shape[1], image_w)
    return assignments_grid.astype(np.uint8)[np.ix_(rows, cols)]


def cluster_map(features: FeatureMap, k: int, seed: int,
                max_iter: int = 300, tol: float = 1e-6,
                l2_normalize: bool = False):
    """Cluster one image's tokens; returns (ClusterResult, uint8 index map).

    The result's assignments are reshaped to the patch grid; the index map
    is the nearest-neighbor rendering at pixel resolution. ``l2_normalize``
    switches to cosine-style geometry by unit-normalizing tokens first.
    """
    tokens = features.values.reshape(-1, features.dim).astype(np.float64)
    if l2_normalize:
        norms = np.linalg.norm(tokens, axis=1, keepdims=True)
        tokens = tokens / np.maximum(norms, 1e-12)
    result = kmeans(tokens, k, seed, max_iter=max_iter, tol=tol)
    grid = result.assignments.reshape(features.grid_h, features.grid_w)
    result = ClusterResult(assignments=grid, centroids=result.centroids,
                           inertia=result.inertia, iterations_run=result.iterations_run)
    return result, render_index_map(grid, features.image_h, features.image_w)
