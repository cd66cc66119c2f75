"""Linear-beta DDPM noise schedule and the closed-form forward/reverse updates.

Steps are 1-based throughout: ``t`` ranges over ``1..T`` and ``beta[t - 1]``
is the noise level of step ``t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_start: float
    beta_end: float

    @property
    def T(self) -> int:
        return len(self.beta)

    def check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.T:
            raise ScheduleError(f"step {t} outside 1..{self.T}")
        return t

    def ab(self, t: int) -> float:
        return float(self.alpha_bar[self.check_t(t) - 1])

    def respaced(self, steps) -> "NoiseSchedule":
        """Schedule for a descending-chain subsequence of steps (given ascending).

        Step ``j`` of the result covers the jump from ``steps[j-1]`` to
        ``steps[j]`` so its cumulative products match the original at each kept step.
        """
        steps = [self.check_t(s) for s in steps]
        abar = self.alpha_bar[np.asarray(steps) - 1]
        prev = np.concatenate([[1.0], abar[:-1]])
        alpha = abar / prev
        beta = 1.0 - alpha
        return NoiseSchedule(_frozen(beta), _frozen(alpha), _frozen(abar), self.beta_start, self.beta_end)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ScheduleError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    beta = np.linspace(beta_start, beta_end, T) if T > 1 else np.array([beta_start])
    alpha = 1.0 - beta
    return NoiseSchedule(_frozen(beta), _frozen(alpha), _frozen(np.cumprod(alpha)), beta_start, beta_end)


def forward_noise(x0, t: int, eps, s: NoiseSchedule) -> np.ndarray:
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 {x0.shape} and eps {eps.shape} differ in shape")
    ab = s.ab(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def recover_x0(x_t, eps_hat, t: int, s: NoiseSchedule) -> np.ndarray:
    ab = s.ab(t)
    return (np.asarray(x_t, dtype=np.float64) - np.sqrt(1.0 - ab) * np.asarray(eps_hat)) / np.sqrt(ab)


def x0_coefficients(t: int, s: NoiseSchedule) -> tuple[float, float]:
    """``(a, b)`` such that ``x0_hat = a * x_t - b * eps_hat``."""
    ab = s.ab(t)
    return 1.0 / np.sqrt(ab), np.sqrt(1.0 - ab) / np.sqrt(ab)


def step_variance(t: int, s: NoiseSchedule, kind: str = "beta") -> float:
    """sigma_t^2 of the reverse step.

    ``"beta"`` is beta_t. ``"posterior"`` is the forward-posterior variance
    (1 - abar_{t-1}) / (1 - abar_t) * beta_t, which keeps the injected noise
    consistent with the next step's noise level when steps are respaced.
    """
    t = s.check_t(t)
    beta = float(s.beta[t - 1])
    if kind == "beta":
        return beta
    if kind == "posterior":
        prev = float(s.alpha_bar[t - 2]) if t > 1 else 1.0
        return (1.0 - prev) / (1.0 - float(s.alpha_bar[t - 1])) * beta
    raise ScheduleError(f"unknown variance kind {kind!r}; use 'beta' or 'posterior'")


def reverse_step(x_t, eps_hat, t: int, s: NoiseSchedule, z, variance: str = "beta") -> np.ndarray:
    """Ancestral DDPM step; sigma_t^2 = beta_t by default. No noise is added at ``t == 1``."""
    t = s.check_t(t)
    a = float(s.alpha[t - 1])
    ab = float(s.alpha_bar[t - 1])
    mean = np.asarray(x_t) / np.sqrt(a) - (1.0 - a) / (np.sqrt(1.0 - ab) * np.sqrt(a)) * np.asarray(eps_hat)
    if t == 1:
        return mean
    return mean + np.sqrt(step_variance(t, s, variance)) * np.asarray(z)


def strided_steps(T: int, S: int) -> list[int]:
    """``S`` evenly spaced steps in ``1..T`` (ascending), always containing 1 and ``T``."""
    if not 1 <= S <= T:
        raise ScheduleError(f"sampling steps must lie in 1..{T}, got {S}")
    if S == 1:
        return [T]
    raw = np.round(np.linspace(1, T, S)).astype(int)
    return sorted(set(int(v) for v in raw))
