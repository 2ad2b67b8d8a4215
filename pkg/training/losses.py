"""
The denoising objective ||eps - eps_theta(z_t, t, c)||^2.
"""
import numpy as np

from autodiff.tensor import Tensor, mse
from diffusion.conditioning import LayerConditioning
from diffusion.denoiser import predict_noise
from diffusion.schedule import add_noise


def denoising_loss(bundle, cond: LayerConditioning, z0: np.ndarray, eps: np.ndarray, t: int) -> Tensor:
    """Mean squared error between the true and predicted noise at timestep t."""
    z_t = add_noise(z0, eps, t, bundle.schedule)
    eps_hat = predict_noise(z_t, t, cond, bundle.denoiser)
    return mse(eps_hat, np.asarray(eps, dtype=eps_hat.dtype))
