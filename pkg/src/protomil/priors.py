"""Frozen teacher prototypes from K-means over the pooled instance population.

Lloyd's algorithm with k-means++ initialization and multiple restarts; the
best run by inertia wins.  The resulting centroids act as fixed anchors for
the learnable prior experts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import seeding
from .numerics import NORM_GUARD, as_f64


@dataclass
class PrototypeBank:
    """K-means result over a pooled population."""

    teachers: np.ndarray      # (K, D) centroids, unnormalized
    inertia: float            # sum of squared distances to assigned centroid
    assignments: np.ndarray   # (N,) cluster id per input row


def l2_normalize_rows(m: np.ndarray) -> np.ndarray:
    """Rows scaled to unit norm (zero rows left as zeros via norm guard)."""
    m = as_f64(m)
    return m / (np.linalg.norm(m, axis=-1, keepdims=True) + NORM_GUARD)


def assign_nearest(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest-centroid id per point; ties broken toward the lowest id."""
    points, centroids = as_f64(points), as_f64(centroids)
    if points.shape[-1] != centroids.shape[-1]:
        raise ValueError(f"dim mismatch: points {points.shape[-1]} "
                         f"vs centroids {centroids.shape[-1]}")
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    return d2.argmin(axis=1)


def _inertia(points, centroids, ids) -> float:
    return float(((points - centroids[ids]) ** 2).sum())


def _kmeans_pp_init(points: np.ndarray, k: int, rng) -> np.ndarray:
    """k-means++ seeding; degenerate duplicate mass falls back to a uniform
    re-draw."""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((points - points[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(k - 1):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return points[chosen].copy()


def _repair_empty(points, centroids, ids):
    """Reseed each empty cluster at the point farthest from its assigned
    centroid.  Returns updated (centroids, ids) with no empty cluster."""
    k = centroids.shape[0]
    taken = np.zeros(points.shape[0], dtype=bool)
    for c in range(k):
        if np.any(ids == c):
            continue
        dist = ((points - centroids[ids]) ** 2).sum(axis=1)
        dist[taken] = -1.0
        far = int(dist.argmax())
        centroids = centroids.copy()
        centroids[c] = points[far]
        ids = assign_nearest(points, centroids)
        ids[far] = c
        taken[far] = True
    return centroids, ids


def _lloyd(points, centroids, max_iters, tol):
    """One Lloyd run from given centroids.  Inertia after each assignment
    step is checked to be nonincreasing."""
    prev = np.inf
    ids = assign_nearest(points, centroids)
    for _ in range(max_iters):
        centroids, ids = _repair_empty(points, centroids, ids)
        inertia = _inertia(points, centroids, ids)
        if inertia > prev + 1e-9 * max(1.0, prev):
            raise RuntimeError(
                f"inertia increased during Lloyd iteration: {prev} -> {inertia}")
        prev = inertia
        new_centroids = np.stack(
            [points[ids == c].mean(axis=0) for c in range(centroids.shape[0])])
        shift = np.abs(new_centroids - centroids).max()
        centroids = new_centroids
        ids = assign_nearest(points, centroids)
        if shift < tol:
            break
    centroids, ids = _repair_empty(points, centroids, ids)
    return centroids, ids, _inertia(points, centroids, ids)


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iters: int = 100,
           tol: float = 1e-6, restarts: int = 10) -> PrototypeBank:
    """Cluster rows of ``points`` into ``k`` groups.

    Runs ``restarts`` independent k-means++ initializations (child streams
    of ``seed``) and keeps the lowest-inertia result; ties prefer the
    earliest restart, so the output is deterministic for a fixed seed.
    """
    points = as_f64(points)
    if points.ndim != 2:
        raise ValueError(f"points must be 2-D, got shape {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")

    best = None
    for r in range(restarts):
        rng = seeding.child_rng(seed, seeding.KMEANS, r)
        init = _kmeans_pp_init(points, k, rng)
        centroids, ids, inertia = _lloyd(points, init, max_iters, tol)
        if best is None or inertia < best[2]:
            best = (centroids, ids, inertia)
    centroids, ids, inertia = best
    return PrototypeBank(teachers=centroids, inertia=inertia,
                         assignments=ids.astype(np.int64))
