"""
Toy latent diffusion package: schedule, latent codec, denoiser, conditioning and sampler.
"""
