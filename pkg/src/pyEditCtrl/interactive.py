""" Multi-region editing and causal content propagation over a frame stream.

    Region lanes are independent sparse sampling runs (own background, prompt
    and seed) merged into one latent before a single decode. Propagation pulls
    frames one index at a time: every chunk is generated from frames that have
    already arrived, and each generated frame is pasted into its acquired frame
    with a linear feather once that frame arrives.
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

import csv
import logging
import os
import re
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, Optional, Protocol, Sequence

import numpy as np
from scipy import ndimage

from pyEditCtrl.control_adapters import causal_pad_global
from pyEditCtrl.diffusion_engine import (ModelBundle, Prompt, decode_video, denoise_edit, finish_edit,
                                         global_input, prepare_edit)
from pyEditCtrl.dit_backbone import as_prompt_ids
from pyEditCtrl.latent_codec import flatten_tokens
from pyEditCtrl.mask_pipeline import RegionSet, dilate_mask, downsample_mask, make_background, select_tokens
from pyEditCtrl.ret import EditLeftFrameError, EmptyMaskError, ShapeError, StreamGapError
from pyEditCtrl.run_config import PropagationConfig, SampleConfig
from pyEditCtrl.tensor import RngState
from pyEditCtrl.tensor_io import load_etf

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

THREADS_ENV = "EDITCTRL_THREADS"
FRAME_FILE_PATTERN = re.compile(r"^frame_(\d{5})\.etf$")
MAX_FLOW = 8.0
_PROPAGATION_STREAM = 0x960

FlowProvider = Callable[[int], np.ndarray]

################################################################################
# Classes
################################################################################


class FrameStream(Protocol):
    """ Pull interface of incoming frames. """

    def frame(self, index: int) -> Optional[np.ndarray]:
        """ Gets frame index (H x W x C), or None once the stream has ended.

        Raises:
            StreamGapError: If the index is missing although later frames exist.
        """


class ListFrameStream:
    """ Frames of an in-memory video (or a single ETF video file). """

    def __init__(self, frames: np.ndarray):
        self.frames = np.asarray(frames)

    @classmethod
    def from_file(cls, path: str) -> "ListFrameStream":
        """ Streams the frames of one ETF video. """
        return cls(load_etf(path))

    def frame(self, index: int) -> Optional[np.ndarray]:
        if index < 0:
            raise StreamGapError(f"Frame index {index} is negative.")
        if index >= self.frames.shape[0]:
            return None
        return self.frames[index]


class DirectoryFrameStream:
    """ Frames stored as frame_NNNNN.etf files in one directory. """

    def __init__(self, directory: str):
        self.directory = directory

    def _indices(self) -> list[int]:
        return sorted(int(match.group(1)) for match in map(FRAME_FILE_PATTERN.match, os.listdir(self.directory))
                      if match)

    def frame(self, index: int) -> Optional[np.ndarray]:
        path = os.path.join(self.directory, f"frame_{index:05d}.etf")
        if os.path.isfile(path):
            return load_etf(path)
        if any(later > index for later in self._indices()):
            raise StreamGapError(f"Frame {index} is missing in '{self.directory}' but later frames exist.")
        return None


class RecordingFrameStream:
    """ Wraps a stream and records every accessed index in order. """

    def __init__(self, inner: FrameStream):
        self.inner = inner
        self.accessed: list[int] = []

    @property
    def max_accessed(self) -> int:
        """ Highest index read so far, -1 before the first read. """
        return max(self.accessed, default=-1)

    def frame(self, index: int) -> Optional[np.ndarray]:
        self.accessed.append(index)
        return self.inner.frame(index)


################################################################################
# Functions
################################################################################

def lane_threads(lanes: int) -> int:
    """ Number of region-lane worker threads; EDITCTRL_THREADS caps it. """
    limit = min(lanes, os.cpu_count() or 1)
    configured = os.environ.get(THREADS_ENV)
    if configured:
        try:
            limit = min(limit, max(1, int(configured)))
        except ValueError:
            LOG.warning("ignoring invalid %s value '%s'", THREADS_ENV, configured)
    return max(1, limit)


def edit_multi_region(models: ModelBundle,
                      video: np.ndarray,
                      regions: RegionSet,
                      config: Optional[SampleConfig] = None) -> np.ndarray:
    """ Edits several disjoint regions, each with its own prompt and seed, and decodes once.

        Every lane builds its own background (only its region removed), so a
        lane's rows equal those of a single-region sample_edit with the same seed.

    Raises:
        EmptyMaskError: If the region list is empty or a region mask is empty.
        OverlappingRegionsError: Raised by RegionSet for overlapping regions.
    """
    config = config or SampleConfig()
    config.validate()
    if len(regions) == 0:
        raise EmptyMaskError("The region list is empty.")

    plans = [prepare_edit(models, video, region.mask, region.prompt, regions.dilation_radius) for region in regions]

    def _lane(index: int) -> np.ndarray:
        return denoise_edit(models, plans[index], regions.regions[index].seed, config.steps)

    with ThreadPoolExecutor(max_workers=lane_threads(len(plans))) as pool:
        lane_rows = list(pool.map(_lane, range(len(plans))))

    latent = plans[0].source_latent
    flat = flatten_tokens(latent.copy())
    for plan, rows in zip(plans, lane_rows):
        flat[plan.selection.indices] = rows
    LOG.debug("merged %d region lanes", len(plans))
    return decode_video(models, flat.reshape(latent.shape))


def warp_mask(mask: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """ Moves a frame mask one frame forward along a flow field.

        Set pixels are splatted to their nearest displaced position; a 3 x 3
        closing then fills splat holes whose backward-warped source pixel is set.

    Args:
        mask: H x W mask of frame k.
        flow: H x W x 2 displacement (dy, dx) from frame k to k + 1.

    Raises:
        ShapeError: If the flow does not fit the mask or is not finite.
    """
    mask = np.asarray(mask, dtype=bool)
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != mask.shape + (2,) or not np.all(np.isfinite(flow)):
        raise ShapeError(f"Flow {flow.shape} does not fit mask {mask.shape} or is not finite.")
    height, width = mask.shape

    ys, xs = np.nonzero(mask)
    target_y = np.rint(ys + flow[ys, xs, 0]).astype(np.int64)
    target_x = np.rint(xs + flow[ys, xs, 1]).astype(np.int64)
    inside = (target_y >= 0) & (target_y < height) & (target_x >= 0) & (target_x < width)
    splat = np.zeros_like(mask)
    splat[target_y[inside], target_x[inside]] = True

    padded = np.pad(splat, 2)
    closed = ndimage.binary_closing(padded, structure=np.ones((3, 3), dtype=bool))[2:-2, 2:-2]
    grid_y, grid_x = np.mgrid[0:height, 0:width]
    source_y = np.clip(np.rint(grid_y - flow[..., 0]).astype(np.int64), 0, height - 1)
    source_x = np.clip(np.rint(grid_x - flow[..., 1]).astype(np.int64), 0, width - 1)
    return splat | (closed & mask[source_y, source_x])


def _gray(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame, dtype=np.float64)
    return frame.mean(axis=-1) if frame.ndim == 3 else frame


def _candidates(radius: int) -> list:
    offsets = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    return sorted(offsets, key=lambda offset: (abs(offset[0]) + abs(offset[1]), offset))


def estimate_flow(frame_a: np.ndarray, frame_b: np.ndarray, block_size: int = 8, search_radius: int = 8) -> np.ndarray:
    """ Block-matching flow from frame_a to frame_b.

        Each block of frame_a is compared by the sum of absolute grey-level
        differences with every displaced block of frame_b that lies inside the
        frame; ties go to the smaller displacement |dy| + |dx|. Pixels of
        partial border blocks take the flow of the nearest full block.

    Returns:
        np.ndarray: H x W x 2 displacement (dy, dx).

    Raises:
        ShapeError: If the frames differ in shape or are smaller than one block.
    """
    gray_a = _gray(frame_a)
    gray_b = _gray(frame_b)
    if gray_a.shape != gray_b.shape:
        raise ShapeError(f"Frames {gray_a.shape} and {gray_b.shape} differ.")
    height, width = gray_a.shape
    rows, cols = height // block_size, width // block_size
    if rows == 0 or cols == 0:
        raise ShapeError(f"Frames {height} x {width} are smaller than one {block_size} x {block_size} block.")

    core_a = gray_a[:rows * block_size, :cols * block_size]
    padded_b = np.pad(gray_b, search_radius, constant_values=np.nan)
    best_cost = np.full((rows, cols), np.inf)
    best = np.zeros((rows, cols, 2))
    for dy, dx in _candidates(search_radius):
        shifted = padded_b[search_radius + dy:search_radius + dy + rows * block_size,
                           search_radius + dx:search_radius + dx + cols * block_size]
        cost = np.abs(core_a - shifted).reshape(rows, block_size, cols, block_size).sum(axis=(1, 3))
        cost = np.where(np.isnan(cost), np.inf, cost)
        better = cost < best_cost
        best_cost[better] = cost[better]
        best[better] = (dy, dx)

    block_y = np.minimum(np.arange(height) // block_size, rows - 1)
    block_x = np.minimum(np.arange(width) // block_size, cols - 1)
    return best[block_y[:, None], block_x[None, :]]


def feather_weights(mask: np.ndarray, width: int) -> np.ndarray:
    """ Paste weights: 1 inside the mask, clip(1 - d / (width + 1), 0, 1) at distance d outside. """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros(mask.shape)
    distance = ndimage.distance_transform_edt(~mask)
    return np.clip(1.0 - distance / (width + 1), 0.0, 1.0)


def paste(acquired: np.ndarray, content: np.ndarray, mask: np.ndarray, width: int) -> np.ndarray:
    """ Blends content into an acquired frame; pixels of weight 0 stay bit-identical. """
    weights = feather_weights(mask, width)
    out = np.array(acquired, copy=True)
    ring = weights > 0.0
    blend = weights[ring][:, None]
    out[ring] = (blend * content[ring] + (1.0 - blend) * acquired[ring]).astype(out.dtype)
    return out


def warp_frame(frame: np.ndarray, flow: np.ndarray, steps: int = 1) -> np.ndarray:
    """ Predicts a frame steps ahead by nearest backward sampling along the flow (clamped at the border). """
    height, width = frame.shape[:2]
    grid_y, grid_x = np.mgrid[0:height, 0:width]
    source_y = np.clip(np.rint(grid_y - steps * flow[..., 0]).astype(np.int64), 0, height - 1)
    source_x = np.clip(np.rint(grid_x - steps * flow[..., 1]).astype(np.int64), 0, width - 1)
    return frame[source_y, source_x]


def causal_global_input(backgrounds: Sequence[np.ndarray], frames: int, pending: int) -> np.ndarray:
    """ Global input of a window of frames whose last pending frames are not acquired yet.

        The last acquired backgrounds are padded with the newest one. With
        pending = 0 and enough backgrounds this is the window itself.
    """
    available = list(backgrounds)[-max(1, frames - pending):]
    return causal_pad_global(np.stack(available), frames)


def _context_tokens(models: ModelBundle, frames: np.ndarray, masks: np.ndarray, radius: int) -> tuple:
    latent = models.codec.encode(frames)
    selection = select_tokens(dilate_mask(downsample_mask(masks, models.codec.patch), radius))
    return flatten_tokens(latent)[selection.indices], selection.coords()


def _chunk_flow(frames: list, flow_provider: Optional[FlowProvider], index: int,
                config: PropagationConfig) -> np.ndarray:
    if flow_provider is not None and index >= 1:
        flow = np.asarray(flow_provider(index - 1), dtype=np.float64)
    elif index >= 1:
        flow = estimate_flow(frames[-2], frames[-1], config.block_size, config.search_radius)
    else:
        flow = np.zeros(frames[-1].shape[:2] + (2,))
    return np.clip(flow, -MAX_FLOW, MAX_FLOW)


def propagate(models: ModelBundle,
              initial_frames: np.ndarray,
              edited_frames: np.ndarray,
              initial_masks: np.ndarray,
              prompt: Prompt,
              stream: FrameStream,
              config: Optional[PropagationConfig] = None,
              flow_provider: Optional[FlowProvider] = None,
              latency_log: Optional[list] = None) -> Iterator[tuple]:
    """ Propagates an edit of frames 0..k to the frames arriving on a stream.

        Per chunk of future frames: the flow of the last two acquired frames
        drives the mask warp and the predicted local background, the global
        context is the causally padded window of acquired backgrounds, and the
        chunk tokens attend read-only to the clean tokens of the previously
        emitted frames. The generated pixels of a frame are pasted into it as
        soon as it is acquired.

    Args:
        models: Inference bundle.
        initial_frames: Acquired frames 0..k (F0 x H x W x C).
        edited_frames: The edit of those frames.
        initial_masks: Their masks (F0 x H x W).
        prompt: Edit prompt.
        stream: Source of frames k+1, k+2, ...; frames are pulled one index at a time.
        config: Propagation settings.
        flow_provider: Optional ground-truth flow, flow_provider(i) = flow from frame i to i + 1.
        latency_log: If given, (frame index, frames generated ahead) is appended per emitted frame.

    Yields:
        tuple: (frame index, edited frame) for every acquired frame after k.

    Raises:
        StreamGapError: If the stream skips an index.
        EditLeftFrameError: If the warped mask becomes empty.
    """
    config = config or PropagationConfig()
    config.validate()
    initial_frames = np.asarray(initial_frames)
    edited_frames = np.asarray(edited_frames)
    initial_masks = np.asarray(initial_masks, dtype=bool)
    if initial_frames.shape != edited_frames.shape or initial_masks.shape != initial_frames.shape[:3]:
        raise ShapeError("Initial frames, edited frames and masks do not match.")
    if not initial_masks[-1].any():
        raise EmptyMaskError("The mask of the last edited frame is empty.")

    prompt_ids = as_prompt_ids(prompt, models.config.max_prompt_len)
    chunk = config.chunk_frames
    acquired = list(initial_frames)
    last_index = len(acquired) - 1
    last_mask = initial_masks[-1]
    backgrounds = deque((global_input(models.config, make_background(frame[None], mask[None]))[0]
                         for frame, mask in zip(initial_frames, initial_masks)), maxlen=config.global_window)
    context_frames = edited_frames[-chunk:]
    context_masks = initial_masks[-chunk:]
    chunk_index = 0

    while True:
        flow = _chunk_flow(acquired, flow_provider, last_index, config)

        masks, predicted = [], []
        mask = last_mask
        for step in range(1, chunk + 1):
            mask = warp_mask(mask, flow)
            if not mask.any():
                raise EditLeftFrameError(f"The edit mask left the frame at index {last_index + step}.")
            masks.append(mask)
            predicted.append(warp_frame(acquired[-1], flow, step))

        chunk_video = np.stack(predicted).astype(np.float32)
        chunk_masks = np.stack(masks)
        plan = prepare_edit(models, chunk_video, chunk_masks, prompt_ids, config.dilation_radius)
        window_end = last_index + chunk
        window = min(config.global_window, window_end + 1)
        plan.global_input = causal_global_input(backgrounds, window, chunk)

        context_rows, context_coords = _context_tokens(models, context_frames, context_masks, config.dilation_radius)
        context = models.backbone.encode_context(context_rows, context_coords, prompt_ids)
        coords = plan.selection.coords() + np.array([chunk, 0, 0])
        rows = denoise_edit(models, plan, RngState(config.seed, _PROPAGATION_STREAM, chunk_index), config.steps,
                            context=context, coords=coords)
        generated = finish_edit(models, plan, rows)
        LOG.debug("propagation chunk %d: %d tokens, %d context tokens", chunk_index, plan.selection.count,
                  context.count)

        emitted = []
        for step in range(chunk):
            index = last_index + 1 + step
            frame = stream.frame(index)
            if frame is None:
                return
            out = paste(frame, generated[step], masks[step], config.feather_width)
            acquired.append(frame)
            acquired = acquired[-2:]
            backgrounds.append(global_input(models.config, make_background(frame[None], masks[step][None]))[0])
            emitted.append(out)
            if latency_log is not None:
                latency_log.append((index, chunk - 1 - step))
            yield index, out
            last_mask = masks[step]

        last_index += chunk
        context_frames = np.stack(emitted)
        context_masks = chunk_masks
        chunk_index += 1


def write_latency_csv(path: str, latency_log: list) -> None:
    """ Writes the latency log with the columns frame_index, ahead_margin. """
    with open(path, "w", encoding="UTF-8", newline="") as csv_file:
        writer = csv.writer(csv_file)
        writer.writerow(["frame_index", "ahead_margin"])
        writer.writerows(latency_log)
