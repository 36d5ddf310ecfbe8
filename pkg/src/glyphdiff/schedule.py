"""Noise schedule and the closed-form forward diffusion process.

The schedule holds the per-step variances beta_t (linearly spaced), their
products alpha_bar_t, and the fixed posterior constants used by the reverse
chain. Public step indices are 1-based, t in {1..T}; internal arrays are
0-based (index t-1).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSchedule",
    "PosteriorConstants",
    "build_linear_schedule",
    "q_sample",
    "forward_chain_step",
    "posterior_constants",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable variance schedule with derived quantities."""

    T: int
    beta_start: float
    beta_end: float
    beta: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    posterior_var: np.ndarray = field(repr=False)

    def to_header(self) -> dict:
        """JSON-safe parameters sufficient to rebuild the schedule bit-exactly."""
        return {
            "schedule_type": "linear",
            "T": self.T,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }

    @staticmethod
    def from_header(header: dict) -> "NoiseSchedule":
        if header.get("schedule_type") != "linear":
            raise ValueError(f"unsupported schedule_type: {header.get('schedule_type')!r}")
        return build_linear_schedule(header["T"], header["beta_start"], header["beta_end"])

    def to_json(self) -> str:
        return json.dumps(self.to_header(), sort_keys=True)

    @staticmethod
    def from_json(s: str) -> "NoiseSchedule":
        return NoiseSchedule.from_header(json.loads(s))


@dataclass(frozen=True)
class PosteriorConstants:
    """Per-step q-posterior mean coefficients and noise scale.

    Indexing matches the schedule: entry t-1 is for step t. The posterior
    mean of x_{t-1} given (x_t, x_0) is coef_x0[t-1]*x0 + coef_xt[t-1]*xt,
    and sigma[t-1] is the standard deviation of the reverse transition,
    with sigma[0] == 0 (the final step is noiseless).
    """

    coef_x0: np.ndarray
    coef_xt: np.ndarray
    sigma: np.ndarray


def build_linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced beta_t from beta_start to beta_end inclusive."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start < beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    # q-posterior variance beta_tilde_t, with alpha_bar_0 defined as 1
    alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    posterior_var = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    return NoiseSchedule(
        T=T,
        beta_start=float(beta_start),
        beta_end=float(beta_end),
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        posterior_var=posterior_var,
    )


def _check_t(t: int, T: int) -> None:
    if not 1 <= t <= T:
        raise ValueError(f"step index t={t} out of range [1, {T}]")


def q_sample(x0, t: int, eps, schedule: NoiseSchedule):
    """Closed-form jump to step t: sqrt(abar_t)*x0 + sqrt(1-abar_t)*eps.

    Works elementwise on numpy arrays and torch tensors alike; the
    coefficients are plain floats.
    """
    _check_t(t, schedule.T)
    abar = float(schedule.alpha_bar[t - 1])
    return (abar ** 0.5) * x0 + ((1.0 - abar) ** 0.5) * eps


def forward_chain_step(x_prev, t: int, z, schedule: NoiseSchedule):
    """One Markov step of the forward chain: sqrt(1-beta_t)*x_{t-1} + sqrt(beta_t)*z."""
    _check_t(t, schedule.T)
    beta = float(schedule.beta[t - 1])
    return ((1.0 - beta) ** 0.5) * x_prev + (beta ** 0.5) * z


def posterior_constants(schedule: NoiseSchedule) -> PosteriorConstants:
    """q-posterior mean coefficients and sigma_t = sqrt(beta_tilde_t)."""
    alpha_bar = schedule.alpha_bar
    alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    coef_x0 = np.sqrt(alpha_bar_prev) * schedule.beta / (1.0 - alpha_bar)
    coef_xt = np.sqrt(schedule.alpha) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
    sigma = np.sqrt(schedule.posterior_var)
    return PosteriorConstants(coef_x0=coef_x0, coef_xt=coef_xt, sigma=sigma)
