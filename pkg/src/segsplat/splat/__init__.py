from .gaussians import GaussianSet, init_from_points, init_gaussians
from .metrics import psnr, ssim
from .optim import NumericalError, OptimRates, OptimState, optimize, photometric_loss
from .raster import RenderedImage, render

__all__ = [
    "GaussianSet",
    "init_gaussians",
    "init_from_points",
    "render",
    "RenderedImage",
    "photometric_loss",
    "optimize",
    "OptimRates",
    "OptimState",
    "NumericalError",
    "psnr",
    "ssim",
]
