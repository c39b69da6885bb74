"""Attacks on diffusion-based adversarial purification, on a small numpy autodiff stack."""

__version__ = "0.1.0"
