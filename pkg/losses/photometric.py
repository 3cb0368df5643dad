import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import uniform_filter

from sclocalize.exceptions import DimensionMismatchError, NoOverlapError
from simulator.models import Pose, SyntheticImagePair
from simulator.services import sample_bilinear, warp_to_target

logger = logging.getLogger(__name__)

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
SSIM_WINDOW = 3
MIN_VALID_FRACTION = 0.01


@dataclass(frozen=True)
class PhotometricLoss:
    value: float
    l1: float
    ssim: float
    valid_pixel_count: int


def _box(image: NDArray) -> NDArray:
    return uniform_filter(image, size=SSIM_WINDOW, mode='constant')


def ssim(a: NDArray, b: NDArray, mask: Optional[NDArray] = None) -> float:
    """
    Mean SSIM over pixels whose whole 3x3 window lies in `mask`.

    Returns 1.0 when no such pixel exists (nothing to compare).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"SSIM inputs differ in shape: {a.shape} vs {b.shape}")
    mask = np.ones(a.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)

    a, b = np.where(mask, a, 0.0), np.where(mask, b, 0.0)
    full_window = _box(mask.astype(np.float64)) > 1.0 - 1e-9
    if not full_window.any():
        logger.debug("No complete SSIM window inside the valid region")
        return 1.0

    mu_a, mu_b = _box(a), _box(b)
    var_a = _box(a * a) - mu_a**2
    var_b = _box(b * b) - mu_b**2
    cov = _box(a * b) - mu_a * mu_b
    ssim_map = ((2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)) / (
        (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    )
    return float(ssim_map[full_window].mean())


def photometric_loss(
    pair: SyntheticImagePair, pose_t: Pose, weights_mask: Optional[NDArray] = None
) -> PhotometricLoss:
    """
    Warp the source view into the target with `pose_t` and compare.

    Source pixels are projected through their world coordinates; pixels
    landing outside [0, W-1] x [0, H-1] or behind the target camera are
    excluded. L_ph = mean L1 over valid pixels + (1 - SSIM) / 2.
    """
    intr = pair.intrinsics
    shape = (intr.height, intr.width)
    pixels, valid = warp_to_target(pair.source_coords, pose_t, intr)
    valid_count = int(valid.sum())
    if valid_count < MIN_VALID_FRACTION * valid.size:
        raise NoOverlapError(f"Only {valid_count} of {valid.size} source pixels land inside the target image")

    warped = np.zeros(valid.size)
    warped[valid] = sample_bilinear(pair.target_image, pixels[valid])
    warped = warped.reshape(shape)
    valid = valid.reshape(shape)

    difference = np.abs(pair.source_image - warped)[valid]
    if weights_mask is None:
        l1 = float(difference.mean())
    else:
        weights = np.asarray(weights_mask, dtype=np.float64).reshape(shape)[valid]
        l1 = float((weights * difference).sum() / max(weights.sum(), 1e-12))

    ssim_loss = 0.5 * (1.0 - ssim(pair.source_image, warped, valid))
    return PhotometricLoss(value=l1 + ssim_loss, l1=l1, ssim=ssim_loss, valid_pixel_count=valid_count)
