"""Noise schedules, the forward/reverse Gaussian chains and guided sampling."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import denoiser

log = logging.getLogger(__name__)

TERMINAL_ALPHA_BAR = 1e-3
DEFAULT_BETA_START = 0.02
DEFAULT_BETA_END_GRID = tuple(round(0.3 + 0.05 * i, 2) for i in range(7))  # 0.30 .. 0.60
EXACT_DIAMETER_MAX_ROWS = 4096


class ScheduleError(ValueError):
    pass


class SamplingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        object.__setattr__(self, "beta", beta)
        if beta.ndim != 1 or beta.size < 1:
            raise ScheduleError("beta must be a non-empty vector")
        if not np.all((beta > 0) & (beta < 1)):
            raise ScheduleError("every beta_t must lie in (0, 1)")
        if np.any(np.diff(beta) < 0):
            raise ScheduleError("beta_t must be non-decreasing in t")
        alpha = 1.0 - beta
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", np.cumprod(alpha))

    @property
    def T_prime(self) -> int:
        return int(self.beta.size)

    @property
    def beta_bar(self) -> float:
        return float(self.beta[-1])

    # 1-based accessors; index 0 of alpha_bar_prev is the empty product.
    def alpha_bar_prev(self, t):
        t = np.asarray(t)
        return np.where(t > 1, self.alpha_bar[np.maximum(t - 2, 0)], 1.0)

    def check_step(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.int64)
        if np.any(t < 1) or np.any(t > self.T_prime):
            raise ValueError(f"step out of range [1, {self.T_prime}]")
        return t


def compute_T_prime(beta_bar: float, diameter: float) -> int:
    """ceil(2^6 * beta_bar * (1 + ln(1 + diameter)))."""
    if not (math.isfinite(beta_bar) and math.isfinite(diameter)):
        raise ValueError("beta_bar and diameter must be finite")
    if beta_bar <= 0 or diameter < 0:
        raise ValueError("need beta_bar > 0 and diameter >= 0")
    return int(math.ceil(64.0 * beta_bar * (1.0 + math.log1p(diameter))))


def dataset_diameter(features: np.ndarray) -> float:
    """Max pairwise distance; the bounding-box diagonal (an upper bound) above 4096 rows."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("need an (n, d) matrix with n >= 1")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain non-finite values")
    n = X.shape[0]
    if n > EXACT_DIAMETER_MAX_ROWS:
        return float(np.sqrt(np.sum(np.ptp(X, axis=0) ** 2)))
    best = 0.0
    for i in range(n - 1):
        d2 = np.sum((X[i + 1 :] - X[i]) ** 2, axis=1)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def linear_schedule(T_prime: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    if T_prime < 2:
        raise ScheduleError(f"T' must be >= 2, got {T_prime}")
    if not 0 < beta_start <= beta_end < 1:
        raise ScheduleError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    sched = NoiseSchedule(np.linspace(beta_start, beta_end, T_prime))
    if not sched.alpha_bar[-1] < TERMINAL_ALPHA_BAR:
        raise ScheduleError(
            f"terminal alpha_bar {sched.alpha_bar[-1]:.3g} >= {TERMINAL_ALPHA_BAR}; "
            "raise beta_end or T'"
        )
    return sched


def default_schedule(
    diameter: float,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float | None = None,
    T_prime: int | None = None,
    grid=DEFAULT_BETA_END_GRID,
) -> NoiseSchedule:
    """Linear schedule whose length follows the diameter bound.

    Without an explicit ``beta_end`` the smallest grid value is taken for which the
    resulting chain (T' recomputed from that beta_end unless fixed) ends below the
    terminal alpha_bar threshold.
    """
    candidates = [beta_end] if beta_end is not None else list(grid)
    last_err = None
    for b_end in candidates:
        T = T_prime if T_prime is not None else max(2, compute_T_prime(b_end, diameter))
        try:
            return linear_schedule(T, beta_start, b_end)
        except ScheduleError as err:
            last_err = err
    raise ScheduleError(f"no beta_end in {candidates} gives an adequate schedule: {last_err}")


def forward_sample(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps. ``t`` may be a scalar or per-row vector."""
    t = sched.check_step(t)
    ab = sched.alpha_bar[t - 1]
    x0 = np.asarray(x0, dtype=np.float64)
    if ab.ndim == 1 and x0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


def posterior_variance(sched: NoiseSchedule, t: int, paper_variance: bool = False) -> float:
    """Reverse-step variance sigma_t^2; zero at t = 1.

    Default is the DDPM posterior variance (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
    ``paper_variance`` uses the unbarred (1 - alpha_t) / (1 - alpha_{t-1}) * beta_t.
    """
    t = int(sched.check_step(t))
    if t == 1:
        return 0.0
    b = sched.beta[t - 1]
    if paper_variance:
        return float(b / sched.beta[t - 2] * b)
    ab, ab_prev = sched.alpha_bar[t - 1], sched.alpha_bar[t - 2]
    return float((1.0 - ab_prev) / (1.0 - ab) * b)


def reverse_mean(x_t, t: int, eps_hat, sched: NoiseSchedule) -> np.ndarray:
    t = int(sched.check_step(t))
    a, b, ab = sched.alpha[t - 1], sched.beta[t - 1], sched.alpha_bar[t - 1]
    return (np.asarray(x_t) - b / math.sqrt(1.0 - ab) * np.asarray(eps_hat)) / math.sqrt(a)


def reverse_step(x_t, t: int, eps_hat, sched: NoiseSchedule, z, paper_variance: bool = False) -> np.ndarray:
    mu = reverse_mean(x_t, t, eps_hat, sched)
    if int(t) == 1:
        return mu
    return mu + math.sqrt(posterior_variance(sched, t, paper_variance)) * np.asarray(z)


@dataclass(frozen=True)
class GuidanceConfig:
    """Classifier-free guidance: eps = (1 + w) eps(x, t, c) - w eps(x, t, uncond).

    ``unconditional_token`` defaults to the group count G of the model being sampled.
    """

    weight: float = 0.0
    unconditional_token: int | None = None

    def __post_init__(self):
        if not math.isfinite(self.weight) or self.weight < 0:
            raise ValueError("guidance weight must be finite and >= 0")


def guided_eps(params, x, t, class_id: int, guidance: GuidanceConfig) -> np.ndarray:
    n = x.shape[0]
    tt = np.full(n, t, dtype=np.int64)
    cond = denoiser.forward(params, x, tt, np.full(n, class_id, dtype=np.int64))
    if guidance.weight == 0.0:
        return cond
    token = params.G if guidance.unconditional_token is None else guidance.unconditional_token
    uncond = denoiser.forward(params, x, tt, np.full(n, token, dtype=np.int64))
    return (1.0 + guidance.weight) * cond - guidance.weight * uncond


def sample(
    params,
    sched: NoiseSchedule,
    class_id: int,
    count: int,
    guidance: GuidanceConfig = GuidanceConfig(),
    seed: int = 0,
    paper_variance: bool = False,
) -> np.ndarray:
    """Draw ``count`` rows of class ``class_id`` by ancestral sampling from x_{T'} ~ N(0, I)."""
    if not 0 <= class_id < params.G:
        raise ValueError(f"class id {class_id} out of range [0, {params.G})")
    if count < 0:
        raise ValueError("count must be >= 0")
    if sched.T_prime != params.T_prime:
        raise ValueError(f"schedule has T'={sched.T_prime} but the model was trained with {params.T_prime}")
    if guidance.weight > 0 and params.p_uncond <= 0:
        raise ValueError("guidance weight > 0 needs a model trained with p_uncond > 0")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((count, params.d))
    if count == 0:
        return x
    for t in range(sched.T_prime, 0, -1):
        eps_hat = guided_eps(params, x, t, class_id, guidance)
        z = rng.standard_normal(x.shape) if t > 1 else None
        x = reverse_step(x, t, eps_hat, sched, z, paper_variance)
        if not np.all(np.isfinite(x)):
            raise SamplingDivergedError(f"non-finite values at step t={t}")
    return x
