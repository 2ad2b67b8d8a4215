"""
Deterministic DDIM sampling with classifier-free guidance.

The conditional pathway is rebuilt by ``cond_builder(t)`` at every step, which
is what makes a time-dependent concept time-dependent at inference.
"""
import logging
from typing import Callable, List, Optional

import numpy as np

from config.errors import GuidanceUnavailableError, RangeError
from config.neti_config import GUIDANCE_SCALE, IMAGE_CHANNELS, LATENT_SIZE, SAMPLING_STEPS, TIMESTEP_OFFSET
from diffusion.conditioning import LayerConditioning
from diffusion.denoiser import predict_noise
from diffusion.latent_codec import decode_latent
from diffusion.schedule import NoiseSchedule

logger = logging.getLogger(__name__)

CondBuilder = Callable[[int], LayerConditioning]


def sampling_timesteps(steps: int, num_timesteps: int) -> List[int]:
    """Leading spacing with offset 1 (981, 961, ..., 1 for 50 of 1000); strictly decreasing."""
    if not 1 <= steps <= num_timesteps:
        raise RangeError(f"steps {steps} outside [1, {num_timesteps}]")
    ratio = num_timesteps // steps
    offset = TIMESTEP_OFFSET if (steps - 1) * ratio + TIMESTEP_OFFSET < num_timesteps else 0
    return [i * ratio + offset for i in reversed(range(steps))]


def guide(eps_uncond: Optional[np.ndarray], eps_cond: Optional[np.ndarray], guidance: float) -> np.ndarray:
    """eps_u + g (eps_c - eps_u), returning one input exactly at g = 0 or g = 1."""
    if guidance == 1:
        return eps_cond
    if guidance == 0:
        return eps_uncond
    return eps_uncond + guidance * (eps_cond - eps_uncond)


def ddim_step(z: np.ndarray, eps: np.ndarray, t: int, t_prev: Optional[int], schedule: NoiseSchedule) -> np.ndarray:
    abar = schedule.alpha_bars[t]
    abar_prev = schedule.alpha_bars[t_prev] if t_prev is not None else schedule.alpha_bars[0]
    x0 = (z - np.sqrt(1.0 - abar) * eps) / np.sqrt(abar)
    x0 = np.clip(x0, -1.0, 1.0)
    return (np.sqrt(abar_prev) * x0 + np.sqrt(1.0 - abar_prev) * eps).astype(z.dtype)


def initial_latent(seed: int, dtype=np.float32) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((LATENT_SIZE * LATENT_SIZE, IMAGE_CHANNELS)).astype(dtype)


def sample_latent(bundle, cond_builder: CondBuilder, steps: int = SAMPLING_STEPS,
                  guidance: float = GUIDANCE_SCALE, seed: int = 0) -> np.ndarray:
    """Run the reverse process from seeded noise; calls cond_builder exactly ``steps`` times."""
    if guidance != 1 and not bundle.unconditional_trained:
        raise GuidanceUnavailableError(
            f"guidance {guidance} needs an unconditional pathway; the generator was trained without caption dropout"
        )
    schedule = bundle.schedule
    timesteps = sampling_timesteps(steps, schedule.num_timesteps)
    uncond = bundle.unconditional_conditioning() if guidance != 1 else None
    z = initial_latent(seed, bundle.dtype)
    for i, t in enumerate(timesteps):
        cond = cond_builder(t)
        eps_c = predict_noise(z, t, cond, bundle.denoiser).data if guidance != 0 else None
        eps_u = predict_noise(z, t, uncond, bundle.denoiser).data if uncond is not None else None
        eps = guide(eps_u, eps_c, guidance)
        t_prev = timesteps[i + 1] if i + 1 < len(timesteps) else None
        z = ddim_step(z, eps, t, t_prev, schedule)
    return z


def sample_image(bundle, cond_builder: CondBuilder, steps: int = SAMPLING_STEPS,
                 guidance: float = GUIDANCE_SCALE, seed: int = 0) -> np.ndarray:
    """Sample and decode to a uint8 (32, 32, 3) image."""
    return decode_latent(sample_latent(bundle, cond_builder, steps, guidance, seed))
