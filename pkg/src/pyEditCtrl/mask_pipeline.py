""" Edit masks: background construction, latent downsampling, dilation,
    token selection, gather / scatter, control context assembly, training-time
    mask augmentation and multi-region sets.

    Pixel masks are boolean F x H x W arrays, latent masks boolean f x h x w
    arrays; True marks the edit region.
"""
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

import json
import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from pyEditCtrl.latent_codec import LatentCodec, flatten_tokens, token_coords
from pyEditCtrl.ret import EmptyMaskError, FormatError, OverlappingRegionsError, ShapeError
from pyEditCtrl.tensor import RngState
from pyEditCtrl.tensor_io import load_etf

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

BACKGROUND_FILL = 0.5
DEFAULT_DILATION_RADIUS = 1

AREA_RATIO_RANGE = (0.05, 0.6)
MAX_LAYOUT_DRAWS = 64
FALLBACK_BAND_RATIO = 0.25
MAX_DRIFT = 1.5

################################################################################
# Classes
################################################################################


@dataclass(eq=False)
class TokenIndexSet:
    """ Sorted flat indices of the selected tokens of a token grid. """
    indices: np.ndarray
    grid_shape: tuple

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        total = int(np.prod(self.grid_shape))
        if self.indices.ndim != 1:
            raise ShapeError("Token indices must be one-dimensional.")
        if self.indices.size and (self.indices[0] < 0 or self.indices[-1] >= total):
            raise ShapeError(f"Token index out of range for {total} tokens.")
        if np.any(np.diff(self.indices) <= 0):
            raise ShapeError("Token indices must be strictly increasing.")

    @property
    def count(self) -> int:
        """ Number of selected tokens (N_sel). """
        return int(self.indices.size)

    @property
    def total(self) -> int:
        """ Number of tokens of the full grid (N_total). """
        return int(np.prod(self.grid_shape))

    @property
    def ratio(self) -> float:
        """ Mask ratio N_sel / N_total. """
        return self.count / self.total

    def coords(self) -> np.ndarray:
        """ Original (t, h, w) coordinates of the selected tokens. """
        return token_coords(self.grid_shape)[self.indices]

    def inverse(self) -> np.ndarray:
        """ Maps every flat token to its row in the gathered sequence, -1 if not selected. """
        inverse = np.full(self.total, -1, dtype=np.int64)
        inverse[self.indices] = np.arange(self.count)
        return inverse

    def mask(self) -> np.ndarray:
        """ The selection as a latent mask. """
        mask = np.zeros(self.total, dtype=bool)
        mask[self.indices] = True
        return mask.reshape(self.grid_shape)

    @classmethod
    def full(cls, grid_shape: tuple) -> "TokenIndexSet":
        """ Selects every token of a grid. """
        return cls(np.arange(int(np.prod(grid_shape))), tuple(grid_shape))


@dataclass(eq=False)
class ControlContext:
    """ Background latent plus mask channel for every token, and the rows of the selection. """
    full: np.ndarray
    local: np.ndarray


@dataclass(eq=False)
class MaskLayout:
    """ A first-frame mask and the velocity (pixels per frame) it drifts with. """
    first_frame: np.ndarray
    velocity: tuple

    def frame(self, index: int) -> np.ndarray:
        """ Renders one frame: the first frame shifted by round(index * velocity), clipped at the border. """
        shift_y = int(round(index * self.velocity[0]))
        shift_x = int(round(index * self.velocity[1]))
        return shift_frame(self.first_frame, shift_y, shift_x)

    def render(self, frames: int) -> np.ndarray:
        """ Renders all frames of the layout. """
        return np.stack([self.frame(index) for index in range(frames)])


@dataclass(eq=False)
class EditRegion:
    """ One region of a multi-region edit. """
    mask: np.ndarray
    prompt: str
    seed: int


class RegionSet:
    """ Regions whose dilated latent masks are pairwise disjoint. """

    def __init__(self, regions: list[EditRegion], patch: int, dilation_radius: int = DEFAULT_DILATION_RADIUS):
        self.regions = list(regions)
        self.patch = patch
        self.dilation_radius = dilation_radius

        occupied: Optional[np.ndarray] = None
        for index, region in enumerate(self.regions):
            dilated = dilate_mask(downsample_mask(region.mask, patch), dilation_radius)
            if occupied is None:
                occupied = np.zeros_like(dilated)
            elif occupied.shape != dilated.shape:
                raise ShapeError(f"Region {index} mask shape differs from region 0.")
            if np.any(occupied & dilated):
                raise OverlappingRegionsError(f"Region {index} ('{region.prompt}') overlaps an earlier region.")
            occupied |= dilated

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    @classmethod
    def from_json(cls, path: str, patch: int, dilation_radius: int = DEFAULT_DILATION_RADIUS) -> "RegionSet":
        """ Reads a region list [{"mask_path", "prompt", "seed"}, ...]; mask paths are relative to the file.

        Raises:
            FormatError: If the document does not have the expected layout.
        """
        try:
            with open(path, "r", encoding="UTF-8") as region_file:
                document = json.load(region_file)
        except (OSError, ValueError) as exc:
            raise FormatError(f"Cannot read region list '{path}': {exc}") from exc

        if not isinstance(document, list):
            raise FormatError("A region list must be a JSON array.")

        base_dir = os.path.dirname(os.path.abspath(path))
        regions = []
        for entry in document:
            if not isinstance(entry, dict) or set(entry) != {"mask_path", "prompt", "seed"}:
                raise FormatError("Every region needs exactly the keys mask_path, prompt and seed.")
            if not isinstance(entry["seed"], int) or isinstance(entry["seed"], bool) or entry["seed"] < 0:
                raise FormatError(f"Region seed {entry['seed']!r} is not a non-negative integer.")
            mask = load_mask(os.path.join(base_dir, entry["mask_path"]))
            regions.append(EditRegion(mask, str(entry["prompt"]), entry["seed"]))

        return cls(regions, patch, dilation_radius)


################################################################################
# Functions
################################################################################

def _as_binary(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.dtype == bool:
        return mask
    if not np.all((mask == 0) | (mask == 1)):
        raise ShapeError("Mask values must be 0 or 1.")
    return mask.astype(bool)


def load_mask(path: str) -> np.ndarray:
    """ Reads a pixel mask ETF file (F x H x W, values in {0, 1}).

    Raises:
        FormatError: If the file is not a binary 3-D mask.
    """
    data = load_etf(path)
    if data.ndim != 3 or not np.all((data == 0) | (data == 1)):
        raise FormatError(f"'{path}' is not a binary F x H x W mask.")
    return data.astype(bool)


def make_background(video: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """ Replaces the masked pixels by the fill value 0.5.

    Raises:
        ShapeError: If the mask does not cover the video frames.
    """
    mask = _as_binary(mask)
    if mask.shape != video.shape[:3]:
        raise ShapeError(f"Mask {mask.shape} does not match video {video.shape}.")
    background = video.copy()
    background[mask] = BACKGROUND_FILL
    return background


def downsample_mask(mask: np.ndarray, patch: int) -> np.ndarray:
    """ Any-coverage downsampling: a latent cell is set if any pixel it covers is set.

    Raises:
        ShapeError: If the frame extents are not divisible by the patch factor.
    """
    mask = _as_binary(mask)
    if mask.ndim != 3:
        raise ShapeError(f"Expected an F x H x W mask, got {mask.shape}.")
    frames, height, width = mask.shape
    if height % patch or width % patch:
        raise ShapeError(f"Mask extents {height} x {width} are not divisible by patch {patch}.")
    return mask.reshape(frames, height // patch, patch, width // patch, patch).any(axis=(2, 4))


def upsample_mask(latent_mask: np.ndarray, patch: int) -> np.ndarray:
    """ Gets the pixel footprint of a latent mask. """
    return np.repeat(np.repeat(latent_mask, patch, axis=1), patch, axis=2)


def dilate_mask(mask: np.ndarray, radius: int = DEFAULT_DILATION_RADIUS) -> np.ndarray:
    """ Dilates every frame with a (2r+1) x (2r+1) square; frames do not bleed into each other.

    Raises:
        ShapeError: If the radius is negative.
    """
    if radius < 0:
        raise ShapeError(f"Dilation radius {radius} is negative.")
    mask = _as_binary(mask)
    if radius == 0 or not mask.any():
        return mask.copy()
    structure = np.ones((1, 2 * radius + 1, 2 * radius + 1), dtype=bool)
    return ndimage.binary_dilation(mask, structure=structure)


def select_tokens(latent_mask: np.ndarray) -> TokenIndexSet:
    """ Gets the sorted flat indices of the set cells.

    Raises:
        EmptyMaskError: If no cell is set.
    """
    latent_mask = _as_binary(latent_mask)
    indices = np.flatnonzero(latent_mask)
    if indices.size == 0:
        raise EmptyMaskError("The latent mask is empty, nothing to edit.")
    return TokenIndexSet(indices, tuple(latent_mask.shape))


def gather(tokens: np.ndarray, selection: TokenIndexSet) -> np.ndarray:
    """ Extracts the selected token rows (in index order) from a latent grid or N x c rows.

    Raises:
        ShapeError: If the grid does not have the selection's token count.
    """
    rows = flatten_tokens(np.asarray(tokens))
    if rows.shape[0] != selection.total:
        raise ShapeError(f"Grid has {rows.shape[0]} tokens, the selection expects {selection.total}.")
    return rows[selection.indices]


def scatter(rows: np.ndarray, selection: TokenIndexSet, dest: np.ndarray) -> np.ndarray:
    """ Overwrites the selected rows of a copy of dest; every other row stays bit-identical.

    Raises:
        ShapeError: If the row count or the grid size does not fit the selection.
    """
    rows = np.asarray(rows)
    if rows.shape[0] != selection.count:
        raise ShapeError(f"Got {rows.shape[0]} rows for {selection.count} selected tokens.")
    out = np.array(dest, copy=True)
    flat = flatten_tokens(out)
    if flat.shape[0] != selection.total or rows.shape[1:] != flat.shape[1:]:
        raise ShapeError(f"Destination {out.shape} does not fit the selection.")
    flat[selection.indices] = rows
    return out


def build_control_context(codec: LatentCodec,
                          video: np.ndarray,
                          mask: np.ndarray,
                          dilation_radius: int = DEFAULT_DILATION_RADIUS) -> tuple:
    """ Assembles the control context of an edit.

    Args:
        codec: The latent codec.
        video: Source video F x H x W x C.
        mask: Pixel mask F x H x W.
        dilation_radius: Latent dilation radius of the token selection.

    Returns:
        tuple: (ControlContext, latent mask, dilated TokenIndexSet). The context rows
        are concat(encode(background), latent mask) with c + 1 channels.

    Raises:
        EmptyMaskError: If the mask is empty.
    """
    background = make_background(video, mask)
    latent_mask = downsample_mask(mask, codec.patch)
    selection = select_tokens(dilate_mask(latent_mask, dilation_radius))
    background_rows = flatten_tokens(codec.encode(background))
    full = np.concatenate([background_rows, latent_mask.reshape(-1, 1).astype(background_rows.dtype)], axis=1)
    return ControlContext(full, gather(full, selection)), latent_mask, selection


def shift_frame(frame: np.ndarray, shift_y: int, shift_x: int) -> np.ndarray:
    """ Translates a 2-D mask by whole pixels; pixels leaving the frame are dropped. """
    out = np.zeros_like(frame)
    height, width = frame.shape
    if abs(shift_y) >= height or abs(shift_x) >= width:
        return out
    src_y = slice(max(0, -shift_y), height - max(0, shift_y))
    src_x = slice(max(0, -shift_x), width - max(0, shift_x))
    dst_y = slice(max(0, shift_y), height - max(0, -shift_y))
    dst_x = slice(max(0, shift_x), width - max(0, -shift_x))
    out[dst_y, dst_x] = frame[src_y, src_x]
    return out


def _draw_rectangle(rng: RngState, canvas: np.ndarray) -> None:
    height, width = canvas.shape
    rect_h = int(rng.integers(max(1, height // 8), max(2, height // 2) + 1))
    rect_w = int(rng.integers(max(1, width // 8), max(2, width // 2) + 1))
    top = int(rng.integers(0, max(1, height - rect_h + 1)))
    left = int(rng.integers(0, max(1, width - rect_w + 1)))
    canvas[top:top + rect_h, left:left + rect_w] = True


def _draw_stroke(rng: RngState, canvas: np.ndarray) -> None:
    height, width = canvas.shape
    points = int(rng.integers(2, 5))
    ys = rng.integers(0, height, size=points)
    xs = rng.integers(0, width, size=points)
    line = np.zeros_like(canvas)
    for index in range(points - 1):
        steps = int(max(abs(ys[index + 1] - ys[index]), abs(xs[index + 1] - xs[index]))) + 1
        line_y = np.round(np.linspace(ys[index], ys[index + 1], steps)).astype(np.int64)
        line_x = np.round(np.linspace(xs[index], xs[index + 1], steps)).astype(np.int64)
        line[line_y, line_x] = True
    thickness = int(rng.integers(1, max(2, min(height, width) // 10) + 1))
    canvas |= ndimage.binary_dilation(line, structure=np.ones((3, 3), dtype=bool), iterations=thickness)


def _draw_layout(rng: RngState, height: int, width: int) -> MaskLayout:
    canvas = np.zeros((height, width), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        if rng.random() < 0.5:
            _draw_rectangle(rng, canvas)
        else:
            _draw_stroke(rng, canvas)
    velocity = (0.0, 0.0)
    if rng.random() < 0.5:
        velocity = (float(rng.uniform(-MAX_DRIFT, MAX_DRIFT)), float(rng.uniform(-MAX_DRIFT, MAX_DRIFT)))
    return MaskLayout(canvas, velocity)


def sample_mask_layout(rng: RngState, shape: tuple, ratio_range: tuple = AREA_RATIO_RANGE) -> MaskLayout:
    """ Draws random layouts until the rendered area ratio lies in ratio_range.

        After MAX_LAYOUT_DRAWS rejected draws a static band of rows covering about
        a quarter of the frame is used instead.
    """
    frames, height, width = shape
    for _ in range(MAX_LAYOUT_DRAWS):
        layout = _draw_layout(rng, height, width)
        ratio = float(layout.render(frames).mean())
        if ratio_range[0] <= ratio <= ratio_range[1]:
            return layout

    LOG.debug("mask augmentation fell back to a row band for shape %s", shape)
    band = np.zeros((height, width), dtype=bool)
    rows = max(1, int(round(FALLBACK_BAND_RATIO * height)))
    top = (height - rows) // 2
    band[top:top + rows, :] = True
    return MaskLayout(band, (0.0, 0.0))


def augment_mask(rng: RngState, shape: tuple) -> np.ndarray:
    """ Random union of rectangles and thick polyline strokes, static or drifting across frames.

        The mask is never empty and its area ratio lies in [0.05, 0.6].
    """
    return sample_mask_layout(rng, shape).render(shape[0])
