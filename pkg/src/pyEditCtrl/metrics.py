""" Pixel quality metrics of an edit, reported separately inside and outside the mask. """
# BSD 3-Clause License
#
# Copyright (c) 2025 - 2026, NewTec GmbH
#
# Redistribution and use in source and binary forms, with or without
# modification, are permitted provided that the following conditions are met:
#
# 1. Redistributions of source code must retain the above copyright notice, this
#    list of conditions and the following disclaimer.
#
# 2. Redistributions in binary form must reproduce the above copyright notice,
#    this list of conditions and the following disclaimer in the documentation
#    and/or other materials provided with the distribution.
#
# 3. Neither the name of the copyright holder nor the names of its
#    contributors may be used to endorse or promote products derived from
#    this software without specific prior written permission.
#
# THIS SOFTWARE IS PROVIDED BY THE COPYRIGHT HOLDERS AND CONTRIBUTORS "AS IS"
# AND ANY EXPRESS OR IMPLIED WARRANTIES, INCLUDING, BUT NOT LIMITED TO, THE
# IMPLIED WARRANTIES OF MERCHANTABILITY AND FITNESS FOR A PARTICULAR PURPOSE ARE
# DISCLAIMED. IN NO EVENT SHALL THE COPYRIGHT HOLDER OR CONTRIBUTORS BE LIABLE
# FOR ANY DIRECT, INDIRECT, INCIDENTAL, SPECIAL, EXEMPLARY, OR CONSEQUENTIAL
# DAMAGES (INCLUDING, BUT NOT LIMITED TO, PROCUREMENT OF SUBSTITUTE GOODS OR
# SERVICES; LOSS OF USE, DATA, OR PROFITS; OR BUSINESS INTERRUPTION) HOWEVER
# CAUSED AND ON ANY THEORY OF LIABILITY, WHETHER IN CONTRACT, STRICT LIABILITY,
# OR TORT (INCLUDING NEGLIGENCE OR OTHERWISE) ARISING IN ANY WAY OUT OF THE USE
# OF THIS SOFTWARE, EVEN IF ADVISED OF THE POSSIBILITY OF SUCH DAMAGE.

################################################################################
# Imports
################################################################################

import logging
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from pyEditCtrl.mask_pipeline import dilate_mask, downsample_mask, upsample_mask
from pyEditCtrl.ret import EmptyMaskError, ShapeError

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

SSIM_WINDOW = 8
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

GROUP_UNMASKED = "unmasked"
GROUP_MASKED = "masked"

################################################################################
# Classes
################################################################################


################################################################################
# Functions
################################################################################

def _check_pair(out: np.ndarray, ref: np.ndarray, mask: np.ndarray) -> tuple:
    out = np.asarray(out, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if out.shape != ref.shape or out.ndim != 4:
        raise ShapeError(f"Videos must both be F x H x W x C, got {out.shape} and {ref.shape}.")
    if mask.shape != out.shape[:3]:
        raise ShapeError(f"Mask {mask.shape} does not fit videos {out.shape}.")
    return out, ref, mask


def psnr_from_mse(mse: float) -> float:
    """ 10 * log10(1 / mse) for signals in [0, 1]; +inf for identical signals. """
    if mse <= 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim_maps(frame_a: np.ndarray, frame_b: np.ndarray) -> np.ndarray:
    """ SSIM of every uniform window position, per channel.

        The window is 8 x 8 (smaller frames use their full extent).

    Returns:
        np.ndarray: (H - w + 1) x (W - w + 1) x C.
    """
    window = (min(SSIM_WINDOW, frame_a.shape[0]), min(SSIM_WINDOW, frame_a.shape[1]))
    view_a = sliding_window_view(frame_a, window, axis=(0, 1))
    view_b = sliding_window_view(frame_b, window, axis=(0, 1))
    mu_a = view_a.mean(axis=(-2, -1))
    mu_b = view_b.mean(axis=(-2, -1))
    var_a = view_a.var(axis=(-2, -1))
    var_b = view_b.var(axis=(-2, -1))
    cov = ((view_a - mu_a[..., None, None]) * (view_b - mu_b[..., None, None])).mean(axis=(-2, -1))
    return ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)) / \
        ((mu_a ** 2 + mu_b ** 2 + SSIM_C1) * (var_a + var_b + SSIM_C2))


def region_ssim(out: np.ndarray, ref: np.ndarray, region: np.ndarray) -> float:
    """ Mean SSIM over all windows touching the region, all channels and frames. """
    total = 0.0
    count = 0
    for index in range(out.shape[0]):
        frame_region = region[index]
        if not frame_region.any():
            continue
        window = (min(SSIM_WINDOW, frame_region.shape[0]), min(SSIM_WINDOW, frame_region.shape[1]))
        valid = sliding_window_view(frame_region, window).any(axis=(-2, -1))
        values = ssim_maps(out[index], ref[index])[valid]
        total += float(values.sum())
        count += values.size
    return total / count


def region_metrics(out: np.ndarray, ref: np.ndarray, region: np.ndarray) -> dict:
    """ PSNR, SSIM, MSE and MAE restricted to a pixel region.

    Raises:
        EmptyMaskError: If the region contains no pixel.
    """
    out, ref, region = _check_pair(out, ref, region)
    if not region.any():
        raise EmptyMaskError("Cannot compute metrics over an empty region.")
    diff = (out - ref)[region]
    mse = float(np.mean(diff * diff))
    return {
        "psnr": psnr_from_mse(mse),
        "ssim": region_ssim(out, ref, region),
        "mse": mse,
        "mae": float(np.mean(np.abs(diff))),
    }


def metrics(out: np.ndarray, ref: np.ndarray, mask: np.ndarray) -> dict:
    """ Computes the metric groups "unmasked" and "masked".

    Args:
        out: Edited video F x H x W x C.
        ref: Reference video of the same shape.
        mask: Pixel mask F x H x W; the masked group is where it is set.

    Returns:
        dict: {"unmasked": {...}, "masked": {...}} with psnr, ssim, mse and mae each.

    Raises:
        EmptyMaskError: If either group is empty.
        ShapeError: On a shape mismatch.
    """
    out, ref, mask = _check_pair(out, ref, mask)
    report = {
        GROUP_UNMASKED: region_metrics(out, ref, ~mask),
        GROUP_MASKED: region_metrics(out, ref, mask),
    }
    LOG.debug("metrics: unmasked mse %.3e, masked mse %.3e", report[GROUP_UNMASKED]["mse"],
              report[GROUP_MASKED]["mse"])
    return report


def token_footprint(mask: np.ndarray, patch: int, dilation_radius: int) -> np.ndarray:
    """ Pixels of every token a sparse edit may regenerate (dilated latent mask, upsampled). """
    return upsample_mask(dilate_mask(downsample_mask(mask, patch), dilation_radius), patch)


def json_ready(report: dict) -> dict:
    """ Replaces infinite PSNR values by the string "inf" so the report is strict JSON. """
    return {group: {key: ("inf" if isinstance(value, float) and math.isinf(value) else value)
                    for key, value in values.items()}
            for group, values in report.items()}
