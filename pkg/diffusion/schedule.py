"""
Linear beta noise schedule and the forward noising step.
"""
from dataclasses import dataclass

import numpy as np

from config.errors import RangeError, ShapeError
from config.neti_config import BETA_END, BETA_START, NUM_TIMESTEPS


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def num_timesteps(self) -> int:
        return len(self.betas)

    def check_timestep(self, t: int) -> None:
        if not 0 <= t < self.num_timesteps:
            raise RangeError(f"timestep {t} outside [0, {self.num_timesteps})")


def linear_schedule(num_timesteps: int = NUM_TIMESTEPS, beta_start: float = BETA_START,
                    beta_end: float = BETA_END) -> NoiseSchedule:
    betas = np.linspace(beta_start, beta_end, num_timesteps, dtype=np.float64)
    return NoiseSchedule(betas, np.cumprod(1.0 - betas))


def add_noise(z0: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule) -> np.ndarray:
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, in the dtype of z0."""
    z0, eps = np.asarray(z0), np.asarray(eps)
    if z0.shape != eps.shape:
        raise ShapeError(f"latent {z0.shape} and noise {eps.shape} differ in shape")
    schedule.check_timestep(t)
    abar = schedule.alpha_bars[t]
    return (np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps).astype(z0.dtype)
