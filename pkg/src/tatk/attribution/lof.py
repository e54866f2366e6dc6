"""Local Outlier Factor of query points against a reference set.

Neighbourhoods follow the original density-based definition: the
k-neighbourhood of a point holds every reference point no farther than its
k-distance, so ties can make it larger than ``k``.
"""

from __future__ import annotations

import warnings

import numpy as np
from scipy.spatial.distance import cdist

EPS = 1e-12
_TIE = 1e-12


class DegenerateNeighborhoodWarning(RuntimeWarning):
    """Zero reachability distances forced the density clamp."""


def _flatten(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(len(X), -1)


class LOF:
    """Reference set with precomputed k-distances and local reachability densities."""

    def __init__(self, X, k: int = 5):
        X = _flatten(X)
        if k < 1:
            raise ValueError("k must be >= 1")
        if len(X) < k + 1:
            raise ValueError(f"LOF needs at least k+1={k + 1} reference points, got {len(X)}")
        self.X, self.k = X, int(k)
        D = cdist(X, X)
        np.fill_diagonal(D, np.inf)
        self.k_dist = np.sort(D, axis=1)[:, k - 1]
        neigh = D <= self.k_dist[:, None] * (1 + _TIE)
        reach = np.maximum(self.k_dist[None, :], D)
        mean_reach = np.where(neigh, reach, 0.0).sum(axis=1) / neigh.sum(axis=1)
        self.clamped = mean_reach < EPS
        self.lrd = 1.0 / np.maximum(mean_reach, EPS)

    def score(self, points) -> tuple[np.ndarray, np.ndarray]:
        """LOF of each query point and a flag telling whether a density was clamped."""
        P = _flatten(points)
        if P.shape[1] != self.X.shape[1]:
            raise ValueError(f"query dimension {P.shape[1]} != reference dimension {self.X.shape[1]}")
        D = cdist(P, self.X)
        k_dist = np.sort(D, axis=1)[:, self.k - 1]
        neigh = D <= k_dist[:, None] * (1 + _TIE)
        reach = np.maximum(self.k_dist[None, :], D)
        count = neigh.sum(axis=1)
        mean_reach = np.where(neigh, reach, 0.0).sum(axis=1) / count
        lrd_p = 1.0 / np.maximum(mean_reach, EPS)
        lof = (np.where(neigh, self.lrd[None, :], 0.0).sum(axis=1) / count) / lrd_p
        flags = (mean_reach < EPS) | (neigh & self.clamped[None, :]).any(axis=1)
        return lof, flags


def lof_score(x, X, k: int = 5) -> float:
    """LOF of a single (flattened) point ``x`` with respect to the set ``X``."""
    lof, flags = LOF(X, k).score(np.asarray(x, dtype=np.float64).reshape(1, -1))
    if flags[0]:
        warnings.warn("degenerate neighbourhood: reachability densities clamped",
                      DegenerateNeighborhoodWarning, stacklevel=2)
    return float(lof[0])


def similarity_score(lof: np.ndarray) -> np.ndarray:
    return 1.0 / np.maximum(1.0, lof)
