"""Deterministic DDIM schedule and step equations.

Index convention: ``alphas_bar[0] == 1`` is the clean latent and
``alphas_bar[t]`` for ``t = 1..T`` is the cumulative signal level after ``t``
DDIM steps. The stochastic term of the reverse update is always zero.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, RangeError, ScheduleError, ShapeError


@dataclass(frozen=True)
class DiffusionSchedule:
    alphas_bar: np.ndarray
    train_timesteps: Optional[np.ndarray] = field(default=None, repr=False)
    sigma: float = 0.0

    def __post_init__(self):
        ab = np.asarray(self.alphas_bar, dtype=np.float64)
        ab.setflags(write=False)
        object.__setattr__(self, "alphas_bar", ab)
        if ab.ndim != 1 or ab.size < 2:
            raise ConfigError("schedule needs at least one step")
        if ab[0] != 1.0:
            raise ConfigError("alphas_bar[0] must be 1")
        if not np.all(np.diff(ab) < 0):
            raise ConfigError("alphas_bar must be strictly decreasing")
        if not 0.0 < ab[-1] < 1.0:
            raise ConfigError("alphas_bar[T] must lie in (0, 1)")

    @property
    def T(self) -> int:
        return self.alphas_bar.size - 1

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ScheduleError(f"step index {t} outside [0, {self.T}]")
        return float(self.alphas_bar[t])

    def _pair(self, t):
        if not 1 <= t <= self.T:
            raise ScheduleError(f"step index {t} outside [1, {self.T}]")
        return float(self.alphas_bar[t - 1]), float(self.alphas_bar[t])

    def forward_step(self, z_prev, t: int, eps):
        """One iterative noising step from level ``t-1`` to level ``t``."""
        a_prev, a_t = self._pair(t)
        _check_same_shape(z_prev, eps)
        return math.sqrt(a_t / a_prev) * z_prev + math.sqrt(1.0 - a_t) * eps

    def predicted_z0(self, z_t, eps_hat, t: int):
        _, a_t = self._pair(t)
        _check_same_shape(z_t, eps_hat)
        return (z_t - math.sqrt(1.0 - a_t) * eps_hat) / math.sqrt(a_t)

    def reverse_step(self, z_t, eps_hat, t: int):
        """Deterministic DDIM update from level ``t`` to ``t-1``."""
        a_prev, _ = self._pair(t)
        z0 = self.predicted_z0(z_t, eps_hat, t)
        return math.sqrt(a_prev) * z0 + math.sqrt(1.0 - a_prev) * eps_hat

    def direct_noise_to(self, z0, t: int, eps):
        """Marginal form: jump straight from the clean latent to level ``t``."""
        a_t = self.alpha_bar(t)
        _check_same_shape(z0, eps)
        return math.sqrt(a_t) * z0 + math.sqrt(1.0 - a_t) * eps


def _check_same_shape(a, b):
    sa, sb = getattr(a, "shape", ()), getattr(b, "shape", ())
    if tuple(sa) != tuple(sb):
        raise ShapeError(f"shape mismatch: {tuple(sa)} vs {tuple(sb)}")


def train_alphas_cumprod(beta_start, beta_end, train_steps, beta_schedule="scaled_linear"):
    if beta_schedule == "scaled_linear":
        betas = np.linspace(math.sqrt(beta_start), math.sqrt(beta_end), train_steps) ** 2
    elif beta_schedule == "linear":
        betas = np.linspace(beta_start, beta_end, train_steps)
    else:
        raise ConfigError(f"unknown beta_schedule {beta_schedule!r}")
    return np.cumprod(1.0 - betas)


def build_schedule(T: int = 50, beta_start: float = 0.00085, beta_end: float = 0.012,
                   train_steps: int = 1000, beta_schedule: str = "scaled_linear") -> DiffusionSchedule:
    """Subsample a training noise ladder to ``T`` DDIM steps (leading spacing).

    DDIM step ``k`` uses training index ``(k - 1) * (train_steps // T)``.
    """
    if not (isinstance(T, (int, np.integer)) and T > 0):
        raise ConfigError(f"T must be a positive integer, got {T!r}")
    if not (isinstance(train_steps, (int, np.integer)) and train_steps > 0):
        raise ConfigError(f"train_steps must be a positive integer, got {train_steps!r}")
    if T > train_steps:
        raise ConfigError(f"T={T} exceeds train_steps={train_steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")

    cumprod = train_alphas_cumprod(beta_start, beta_end, train_steps, beta_schedule)
    ratio = train_steps // T
    timesteps = np.arange(T) * ratio
    alphas_bar = np.concatenate([[1.0], cumprod[timesteps]])
    return DiffusionSchedule(alphas_bar, timesteps)


def strength_to_steps(S: float, T: int) -> int:
    """Number of noising/denoising steps for strength ``S``: round(S*T), halves away from zero."""
    if not 0.0 <= S <= 1.0:
        raise RangeError(f"strength S={S} outside [0, 1]")
    return int(math.floor(S * T + 0.5))
