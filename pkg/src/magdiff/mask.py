"""Step-dependent receptive field and top-k nearest-condition attention masks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MaskScheduleConfig:
    k_min: int = 32
    k_max: int = 1000
    T: int = 1000

    def __post_init__(self):
        if not 1 <= self.k_min <= self.k_max:
            raise ValueError(f"need 1 <= k_min <= k_max, got ({self.k_min}, {self.k_max})")
        if self.T < 1:
            raise ValueError("T must be >= 1")


@dataclass(frozen=True)
class ReceptiveMask:
    allow: np.ndarray  # bool [n_ta, n_co]

    @property
    def shape(self) -> tuple[int, int]:
        return self.allow.shape


def k_of_t(t: int, cfg: MaskScheduleConfig) -> int:
    """floor(k_min + t/T * (k_max - k_min)), clamped to [1, k_max]."""
    if not 0 <= t <= cfg.T:
        raise ValueError(f"step {t} outside 0..{cfg.T}")
    # integer arithmetic keeps the endpoints exact
    k = cfg.k_min + (t * (cfg.k_max - cfg.k_min)) // cfg.T
    return max(1, min(int(k), cfg.k_max))


def sq_distances(m_ta, m_co) -> np.ndarray:
    m_ta = np.asarray(m_ta, dtype=np.float64).reshape(-1, 2)
    m_co = np.asarray(m_co, dtype=np.float64).reshape(-1, 2)
    if len(m_co) == 0:
        raise ValueError("empty condition set")
    dx = m_ta[:, 0, None] - m_co[None, :, 0]
    dy = m_ta[:, 1, None] - m_co[None, :, 1]
    return dx * dx + dy * dy


def neighbor_order(m_ta, m_co) -> np.ndarray:
    """Per target row, condition indices sorted by distance (ties: lower index first)."""
    return np.argsort(sq_distances(m_ta, m_co), axis=1, kind="stable")


def topk_mask(d2: np.ndarray, k: int) -> ReceptiveMask:
    """Top-k mask straight from a squared-distance matrix, without a full sort.

    Selects the same set as a stable sort: everything strictly closer than the
    k-th distance, then tied entries in index order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n_ta, n_co = d2.shape
    if k >= n_co:
        return ReceptiveMask(np.ones((n_ta, n_co), dtype=bool))
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1:k]
    allow = d2 < kth
    missing = k - allow.sum(axis=1, keepdims=True)
    tie = d2 == kth
    allow |= tie & (np.cumsum(tie, axis=1) <= missing)
    return ReceptiveMask(allow)


def mask_from_order(order: np.ndarray, k: int) -> ReceptiveMask:
    if k < 1:
        raise ValueError("k must be >= 1")
    n_ta, n_co = order.shape
    k = min(k, n_co)
    allow = np.zeros((n_ta, n_co), dtype=bool)
    np.put_along_axis(allow, order[:, :k], True, axis=1)
    return ReceptiveMask(allow)


def knn_mask(m_ta, m_co, k: int) -> ReceptiveMask:
    """Allow, per target, the ``min(k, n_co)`` Euclidean-nearest conditions."""
    return topk_mask(sq_distances(m_ta, m_co), k)


def full_mask(n_ta: int, n_co: int) -> ReceptiveMask:
    if n_co < 1:
        raise ValueError("empty condition set")
    return ReceptiveMask(np.ones((n_ta, n_co), dtype=bool))
