"""Denoising MSE and the neighbourhood variogram-matching loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcalc as dc


@dataclass(frozen=True)
class KrigingLossConfig:
    n_neighbors: int = 8
    lam: float = 0.1

    def __post_init__(self):
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")


def epsilon_loss(eps_true, eps_hat) -> dc.Tensor:
    eps_true, eps_hat = dc._as_tensor(eps_true), dc._as_tensor(eps_hat)
    if eps_true.shape != eps_hat.shape:
        raise dc.ShapeError(f"epsilon_loss: {eps_true.shape} vs {eps_hat.shape}")
    return dc.mean(dc.square(dc.sub(eps_hat, eps_true)))


def variogram(xi, xj):
    return 0.5 * (np.asarray(xi, dtype=np.float64) - np.asarray(xj, dtype=np.float64)) ** 2


def target_neighbors(m_ta, n_neighbors: int) -> np.ndarray:
    """Indices (n, k) of each target's nearest *other* targets, ties to the lower index."""
    m = np.asarray(m_ta, dtype=np.float64).reshape(-1, 2)
    n = len(m)
    if n < 2:
        raise ValueError("kriging loss needs at least 2 targets")
    if not 1 <= n_neighbors < n:
        raise ValueError(f"n_neighbors must lie in 1..{n - 1}, got {n_neighbors}")
    d2 = ((m[:, None, :] - m[None, :, :]) ** 2).sum(axis=-1)
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :n_neighbors]


def kriging_loss(x_true, x_pred, m_ta, n_neighbors: int, neighbors: np.ndarray | None = None) -> dc.Tensor:
    """Mean over targets and their k nearest neighbours of (gamma_pred - gamma_true)^2.

    ``x_pred`` may be a tensor on a graph (shape (n,) or (n, 1)); the loss is
    differentiable with respect to it. ``neighbors`` may be passed to reuse
    a precomputed :func:`target_neighbors` result.
    """
    x_pred = dc._as_tensor(x_pred)
    xt = np.asarray(x_true, dtype=np.float64).reshape(x_pred.shape)
    if len(xt) != len(np.asarray(m_ta).reshape(-1, 2)):
        raise ValueError("x_true, x_pred and m_ta must have equal lengths")
    nbr = target_neighbors(m_ta, n_neighbors) if neighbors is None else neighbors
    rows = np.broadcast_to(np.arange(len(nbr))[:, None], nbr.shape)
    gamma_true = variogram(xt[rows], xt[nbr])
    diff = dc.sub(dc.gather_rows(x_pred, rows), dc.gather_rows(x_pred, nbr))
    gamma_pred = dc.scale(dc.square(diff), 0.5)
    return dc.mean(dc.square(dc.sub(gamma_pred, dc.constant(gamma_true))))


def total_loss(l_eps, l_kriging, lam: float) -> dc.Tensor:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    l_eps, l_kriging = dc._as_tensor(l_eps), dc._as_tensor(l_kriging)
    if lam == 0:
        return l_eps
    return dc.add(l_eps, dc.scale(l_kriging, lam))
