"""Noise schedules and the forward/reverse diffusion arithmetic.

Timesteps follow the 1-based convention ``t = 1..T``: ``alphas[t - 1]`` is
the per-step signal retention of step ``t`` and ``alpha_bar(0) == 1`` denotes
clean data. A sampling run walks a :class:`TimestepPlan` from ``t = T`` down
to ``t = 1``; the last scheduler step maps onto ``t_prev = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Literal

import numpy as np

ScheduleKind = Literal["linear_beta", "cosine"]
SamplerMode = Literal["ddpm", "ddim"]


class ScheduleError(ValueError):
    pass


def check_latent(x: np.ndarray, name: str = "latent") -> np.ndarray:
    """Validate a [C, H, W] latent of finite values."""
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"{name} must have shape [C, H, W], got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or Inf")
    return x


def _same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what}: shape mismatch {np.shape(a)} vs {np.shape(b)}")


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    total_timesteps: int
    params: dict[str, float]
    betas: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    alpha_bars: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return self.total_timesteps

    def alpha(self, t: int) -> float:
        self._check_t(t, lo=1)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product of alphas up to ``t``; ``alpha_bar(0) == 1``."""
        self._check_t(t, lo=0)
        return 1.0 if t == 0 else float(self.alpha_bars[t - 1])

    def beta(self, t: int) -> float:
        self._check_t(t, lo=1)
        return float(self.betas[t - 1])

    def _check_t(self, t: int, lo: int) -> None:
        if not lo <= int(t) <= self.total_timesteps:
            raise ScheduleError(f"timestep {t} outside [{lo}, {self.total_timesteps}]")

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "T": self.total_timesteps, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> "NoiseSchedule":
        return make_schedule(doc["kind"], int(doc["T"]), **doc.get("params", {}))


def make_schedule(kind: ScheduleKind = "linear_beta", T: int = 1000, **params: float) -> NoiseSchedule:
    """Build a schedule.

    ``linear_beta`` takes ``beta_start``/``beta_end`` (defaults 1e-4, 0.02) and
    interpolates linearly over ``T`` steps. ``cosine`` takes ``offset``
    (default 0.008) and ``max_beta`` (default 0.999).
    """
    if int(T) != T or T < 2:
        raise ScheduleError(f"T must be an integer >= 2, got {T}")
    T = int(T)
    defaults = {"linear_beta": {"beta_start": 1e-4, "beta_end": 0.02}, "cosine": {"offset": 0.008, "max_beta": 0.999}}
    if kind not in defaults:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    unknown = set(params) - set(defaults[kind])
    if unknown:
        raise ScheduleError(f"unknown {kind} parameters: {sorted(unknown)}")
    p = {**defaults[kind], **params}
    if kind == "linear_beta":
        betas = np.linspace(p["beta_start"], p["beta_end"], T, dtype=np.float64)
    else:
        s = p["offset"]
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1 + s) * math.pi / 2) ** 2
        f = f / f[0]
        betas = np.minimum(1.0 - f[1:] / f[:-1], p["max_beta"])
    if not np.all(np.isfinite(betas)) or np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ScheduleError("schedule parameters produce betas outside (0, 1)")
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for arr in (betas, alphas, alpha_bars):
        arr.setflags(write=False)
    return NoiseSchedule(kind, T, {k: float(v) for k, v in p.items()}, betas, alphas, alpha_bars)


@dataclass(frozen=True)
class TimestepPlan:
    """Denoising timesteps paired with scheduler-step indices ``tau = 0..N-1``."""

    timesteps: tuple[int, ...]

    def __post_init__(self):
        ts = self.timesteps
        if len(ts) < 1:
            raise ScheduleError("plan needs at least one step")
        if any(a <= b for a, b in zip(ts, ts[1:])):
            raise ScheduleError("plan timesteps must be strictly decreasing")
        if ts[-1] < 1:
            raise ScheduleError("plan timesteps must be >= 1")

    def __len__(self) -> int:
        return len(self.timesteps)

    def prev(self, tau: int) -> int:
        """Timestep the scheduler lands on after step ``tau`` (0 after the last)."""
        return self.timesteps[tau + 1] if tau + 1 < len(self.timesteps) else 0

    def steps(self):
        """Yield ``(tau, t, t_prev)`` triples."""
        for tau, t in enumerate(self.timesteps):
            yield tau, t, self.prev(tau)


def make_plan(schedule: NoiseSchedule, num_steps: int) -> TimestepPlan:
    """Evenly spaced plan from ``T`` down to ``1``."""
    T = schedule.total_timesteps
    if num_steps < 1 or num_steps > T:
        raise ScheduleError(f"num_steps must be in [1, {T}], got {num_steps}")
    if num_steps == 1:
        return TimestepPlan((T,))
    ts = np.rint(np.linspace(T, 1, num_steps)).astype(int)
    return TimestepPlan(tuple(int(t) for t in ts))


def forward_step(x_prev: np.ndarray, t: int, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """One forward noising step: ``sqrt(a_t) x_{t-1} + sqrt(1 - a_t) eps``."""
    _same_shape(x_prev, noise, "forward_step")
    a = schedule.alpha(t)
    return math.sqrt(a) * np.asarray(x_prev) + math.sqrt(1.0 - a) * np.asarray(noise)


def forward_marginal(x0: np.ndarray, t: int, noise: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form ``q(x_t | x_0)`` sample for a given noise draw."""
    _same_shape(x0, noise, "forward_marginal")
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * np.asarray(x0) + math.sqrt(1.0 - ab) * np.asarray(noise)


def predict_x0(eps_hat: np.ndarray, t: int, x_t: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    _same_shape(eps_hat, x_t, "predict_x0")
    ab = schedule.alpha_bar(t)
    if ab <= 0.0:
        raise ScheduleError(f"alpha_bar({t}) is zero; x0 is not recoverable")
    return (np.asarray(x_t) - math.sqrt(1.0 - ab) * np.asarray(eps_hat)) / math.sqrt(ab)


def scheduler_step(
    eps_hat: np.ndarray,
    t: int,
    t_prev: int,
    x_t: np.ndarray,
    schedule: NoiseSchedule,
    mode: SamplerMode = "ddim",
    eta: float = 0.0,
    rng: np.random.Generator | None = None,
    clip_denoised: bool = False,
) -> np.ndarray:
    """Compute ``x_{t_prev}`` from ``x_t`` and the predicted noise.

    ``ddpm`` draws from the ancestral posterior and requires ``t_prev == t - 1``;
    ``ddim`` with ``eta == 0`` is deterministic and never touches ``rng``.
    """
    if not t > t_prev >= 0:
        raise ScheduleError(f"invalid timestep ordering t={t}, t_prev={t_prev}")
    if eta < 0:
        raise ScheduleError(f"eta must be >= 0, got {eta}")
    _same_shape(eps_hat, x_t, "scheduler_step")
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t_prev)
    x0_hat = predict_x0(eps_hat, t, x_t, schedule)
    if clip_denoised:
        x0_hat = np.clip(x0_hat, -1.0, 1.0)

    if mode == "ddpm":
        if t_prev != t - 1:
            raise ScheduleError("ddpm steps must satisfy t_prev == t - 1")
        beta_t = schedule.beta(t)
        # Posterior mean written in x0_hat form so clipping applies consistently.
        c0 = math.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
        ct = math.sqrt(schedule.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab_t)
        mean = c0 * x0_hat + ct * np.asarray(x_t)
        if t_prev == 0:
            return mean
        if rng is None:
            raise ScheduleError("ddpm step needs an rng stream")
        var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
        return mean + math.sqrt(var) * rng.standard_normal(np.shape(x_t)).astype(mean.dtype, copy=False)

    if mode != "ddim":
        raise ScheduleError(f"unknown sampler mode {mode!r}")
    # eps consistent with the (possibly clipped) x0 estimate
    eps = (np.asarray(x_t) - math.sqrt(ab_t) * x0_hat) / math.sqrt(1.0 - ab_t) if clip_denoised else np.asarray(eps_hat)
    sigma = 0.0
    if eta > 0 and t_prev > 0:
        sigma = eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * math.sqrt(1.0 - ab_t / ab_prev)
    out = math.sqrt(ab_prev) * x0_hat + math.sqrt(max(1.0 - ab_prev - sigma**2, 0.0)) * eps
    if sigma > 0:
        if rng is None:
            raise ScheduleError("ddim with eta > 0 needs an rng stream")
        out = out + sigma * rng.standard_normal(np.shape(x_t)).astype(out.dtype, copy=False)
    return out
