"""Image-space PET attenuation and scatter correction.

Thin bindings over the C++ core: phantoms, projector, OSEM, the U-Net and
the evaluation metrics. Arrays are float32 numpy arrays in (slices, H, W)
or (H, W) layout.
"""

from ._core import (
    ConfigError,
    DomainError,
    Error,
    Phantom,
    ShapeError,
    UNet,
    attenuation_factors,
    back_project,
    body_mask,
    expected_parameter_count,
    forward_project,
    gradcheck,
    joint_histogram,
    make_phantom,
    nrmse,
    osem,
    psnr,
    rasterize,
    run_cli,
    simulate_subject,
    ssim,
    stratify_by_psnr,
    suv,
)

__all__ = [
    "ConfigError",
    "DomainError",
    "Error",
    "Phantom",
    "ShapeError",
    "UNet",
    "attenuation_factors",
    "back_project",
    "body_mask",
    "expected_parameter_count",
    "forward_project",
    "gradcheck",
    "joint_histogram",
    "make_phantom",
    "nrmse",
    "osem",
    "psnr",
    "rasterize",
    "run_cli",
    "simulate_subject",
    "ssim",
    "stratify_by_psnr",
    "suv",
]
