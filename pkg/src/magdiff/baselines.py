"""Classical scattered-data interpolators: IDW, ordinary kriging, Gaussian RBF."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares


class SingularSystemError(np.linalg.LinAlgError):
    pass


def _pts(m) -> np.ndarray:
    return np.asarray(m, dtype=np.float64).reshape(-1, 2)


def _dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))


def _check_conditions(m_co, x_co):
    m_co, x_co = _pts(m_co), np.asarray(x_co, dtype=np.float64).reshape(-1)
    if len(m_co) == 0:
        raise ValueError("empty condition set")
    if len(m_co) != len(x_co):
        raise ValueError("condition coordinates and values differ in length")
    return m_co, x_co


def idw(m_co, x_co, m_ta, power: float = 2.0) -> np.ndarray:
    m_co, x_co = _check_conditions(m_co, x_co)
    if power <= 0:
        raise ValueError("power must be positive")
    m_ta = _pts(m_ta)
    d = _dist(m_ta, m_co)
    out = np.empty(len(m_ta))
    hit = d < 1e-12
    exact = hit.any(axis=1)
    if exact.any():
        out[exact] = x_co[np.argmax(hit[exact], axis=1)]
    rest = ~exact
    if rest.any():
        w = d[rest] ** -power
        # row-wise reductions keep each target independent of how many are evaluated together
        out[rest] = (w * x_co).sum(axis=1) / w.sum(axis=1)
    return out


# ---------------------------------------------------------------- variograms

@dataclass(frozen=True)
class VariogramModel:
    nugget: float
    sill: float
    range_len: float
    kind: str = "exponential"

    def __call__(self, r):
        r = np.asarray(r, dtype=np.float64)
        return self.nugget + self.sill * (1.0 - np.exp(-r / self.range_len))


def empirical_variogram(m, x, n_bins: int, max_range: float):
    """Bin centres, mean semivariance and pair counts over ``(0, max_range]``."""
    m, x = _pts(m), np.asarray(x, dtype=np.float64).reshape(-1)
    i, j = np.triu_indices(len(m), k=1)
    r = np.sqrt(((m[i] - m[j]) ** 2).sum(axis=1))
    g = 0.5 * (x[i] - x[j]) ** 2
    edges = np.linspace(0.0, max_range, n_bins + 1)
    which = np.digitize(r, edges[1:-1])
    keep = r <= max_range
    counts = np.bincount(which[keep], minlength=n_bins)
    sums = np.bincount(which[keep], weights=g[keep], minlength=n_bins)
    centres = 0.5 * (edges[:-1] + edges[1:])
    ok = counts > 0
    return centres[ok], sums[ok] / counts[ok], counts[ok]


def fit_variogram(m, x, n_bins: int = 15, max_range: float | None = None,
                  max_pairs_points: int = 2000, seed: int = 0) -> VariogramModel:
    """Least-squares fit of an exponential model to binned semivariances.

    With more than ``max_pairs_points`` samples a fixed random subset is used
    for the pair statistics.
    """
    m, x = _pts(m), np.asarray(x, dtype=np.float64).reshape(-1)
    if len(m) < 10:
        raise ValueError("need at least 10 samples to fit a variogram")
    if np.ptp(m, axis=0).max() <= 0:
        raise ValueError("all sample locations coincide")
    if len(m) > max_pairs_points:
        sel = np.random.default_rng(seed).choice(len(m), max_pairs_points, replace=False)
        m, x = m[sel], x[sel]
    if max_range is None:
        max_range = 0.5 * float(np.hypot(*np.ptp(m, axis=0)))
    r, g, w = empirical_variogram(m, x, n_bins, max_range)
    var = float(np.var(x))
    if var == 0.0 or np.all(g == 0):
        return VariogramModel(0.0, 0.0, max_range / 3.0)
    scale = max(var, float(g.max()))

    def resid(p):
        nug, sill, rng_ = p
        return np.sqrt(w) * (nug + sill * (1.0 - np.exp(-r / rng_)) - g) / scale

    p0 = [0.1 * scale, 0.9 * scale, max_range / 3.0]
    fit = least_squares(resid, p0, bounds=([0.0, 0.0, 1e-6 * max_range], [np.inf, np.inf, 10.0 * max_range]))
    nug, sill, rng_ = fit.x
    return VariogramModel(float(nug), float(sill), float(rng_))


# ---------------------------------------------------------------- kriging

def _dedupe(m_co, x_co):
    key, inv = np.unique(np.round(m_co, 12), axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    if len(key) == len(m_co):
        return m_co, x_co
    vals = np.bincount(inv, weights=x_co) / np.bincount(inv)
    return key, vals


def kriging_weights(m_co, m_ta, vmodel: VariogramModel) -> tuple[np.ndarray, np.ndarray]:
    """``(weights, mu)`` from the bordered semivariance system.

    ``weights`` has shape (n_ta, n_co) with rows summing to 1; ``mu`` holds
    the Lagrange multiplier of each target.
    """
    m_co, m_ta = _pts(m_co), _pts(m_ta)
    n = len(m_co)
    A = np.ones((n + 1, n + 1))
    A[:n, :n] = vmodel(_dist(m_co, m_co))
    np.fill_diagonal(A[:n, :n], 0.0)
    A[n, n] = 0.0
    rhs = np.ones((n + 1, len(m_ta)))
    d = _dist(m_co, m_ta)
    rhs[:n] = vmodel(d)
    rhs[:n][d < 1e-12] = 0.0  # gamma(0) = 0 at coincident locations
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"ordinary kriging system with {n} conditions is singular "
                                  "(duplicate locations or degenerate variogram)") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("ordinary kriging system produced non-finite weights")
    return sol[:n].T, sol[n]


def ordinary_kriging(m_co, x_co, m_ta, vmodel: VariogramModel):
    """Predictions and kriging variances at ``m_ta``. Duplicate condition locations are averaged."""
    m_co, x_co = _check_conditions(m_co, x_co)
    m_co, x_co = _dedupe(m_co, x_co)
    m_ta = _pts(m_ta)
    if len(m_co) == 1:
        return np.full(len(m_ta), x_co[0]), vmodel(_dist(m_ta, m_co)[:, 0])
    if vmodel.sill <= 0 and vmodel.nugget <= 0:
        raise SingularSystemError("variogram is identically zero; kriging system is singular")
    w, mu = kriging_weights(m_co, m_ta, vmodel)
    pred = w @ x_co
    g0 = vmodel(_dist(m_ta, m_co))
    g0[_dist(m_ta, m_co) < 1e-12] = 0.0
    var = (w * g0).sum(axis=1) + mu
    return pred, np.maximum(var, 0.0)


# ---------------------------------------------------------------- RBF

def rbf(m_co, x_co, m_ta, kernel_width: float = 0.1, ridge: float = 1e-8) -> np.ndarray:
    """Gaussian-kernel RBF interpolation with a small ridge on the Gram diagonal."""
    m_co, x_co = _check_conditions(m_co, x_co)
    if kernel_width <= 0:
        raise ValueError("kernel_width must be positive")
    m_ta = _pts(m_ta)
    # centre values so the interpolant is exactly translation-equivariant away from conditions
    offset = float(np.mean(x_co))
    G = np.exp(-(_dist(m_co, m_co) / kernel_width) ** 2 / 2.0)
    G[np.diag_indices_from(G)] += ridge
    try:
        coef = np.linalg.solve(G, x_co - offset)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"RBF Gram system failed: {exc}") from exc
    K = np.exp(-(_dist(m_ta, m_co) / kernel_width) ** 2 / 2.0)
    return K @ coef + offset
