""" Procedural training clips whose fill colour sometimes depends on the whole scene.

    Every clip shows a drifting two-colour gradient canvas with a smooth texture
    and a moving textured disk, so the true per-pixel flow is known. The
    ground truth replaces the masked pixels by one palette colour: either the
    colour named in a "fill:<colour>" prompt (local information) or, for the
    "match-scene" prompt, the palette colour closest to the mean of the
    unmasked pixels (global information).
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

import logging
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy import ndimage

from pyEditCtrl.mask_pipeline import augment_mask
from pyEditCtrl.ret import PromptError, ShapeError
from pyEditCtrl.tensor import RngState

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

PALETTE = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "white": (1.0, 1.0, 1.0),
    "black": (0.0, 0.0, 0.0),
}
COLOR_NAMES = tuple(PALETTE)

PROMPT_MATCH_SCENE = "match-scene"
FILL_PREFIX = "fill:"

MAX_GRADIENT_WEIGHT = 0.35
MIN_GRADIENT_WEIGHT = 0.1
TEXTURE_AMPLITUDE = 0.04
TEXTURE_SIGMA = 2.0
MAX_BACKGROUND_SPEED = 2
MAX_BLOB_SPEED = 3

_SCENE_STREAM = 1
_MASK_STREAM = 2
_PROMPT_STREAM = 3
EVAL_STREAM = 0xE7A1

################################################################################
# Classes
################################################################################


@dataclass(eq=False)
class SyntheticSample:
    """ One procedural clip with its edit and ground truth.

    Attributes:
        video: F x H x W x 3 input video in [0, 1].
        mask: F x H x W edit mask.
        prompt: "match-scene" or "fill:<colour>".
        target: Ground truth, equal to video outside the mask.
        flow: (F - 1) x H x W x 2 forward displacement (dy, dx) of every pixel.
        blob_mask: F x H x W pixels covered by the moving disk.
    """
    video: np.ndarray
    mask: np.ndarray
    prompt: str
    target: np.ndarray
    flow: np.ndarray
    blob_mask: np.ndarray

    @property
    def fill_color(self) -> str:
        """ The palette colour of the masked ground truth. """
        return fill_color_name(self.prompt, self.video, self.mask)


class SyntheticDataset:
    """ Indexable, endless stream of synthetic samples; sample i depends only on (seed, i). """

    def __init__(self,
                 seed: int = 0,
                 frames: int = 8,
                 height: int = 32,
                 width: int = 32,
                 force_prompt: Optional[str] = None,
                 static: bool = False):
        self.rng = RngState(seed)
        self.frames = frames
        self.height = height
        self.width = width
        self.force_prompt = force_prompt
        self.static = static

    @classmethod
    def eval_split(cls, seed: int = 0, frames: int = 8, height: int = 32, width: int = 32) -> "SyntheticDataset":
        """ Held-out "match-scene" samples drawn from a stream disjoint from training. """
        dataset = cls(seed, frames, height, width, force_prompt=PROMPT_MATCH_SCENE)
        dataset.rng = RngState(seed, EVAL_STREAM)
        return dataset

    def sample(self, index: int) -> SyntheticSample:
        """ Generates sample number index. """
        return generate_sample(self.rng.derive(index), self.frames, self.height, self.width,
                               self.force_prompt, self.static)

    def batch(self, start: int, size: int) -> list[SyntheticSample]:
        """ Generates the samples start .. start + size - 1. """
        return [self.sample(index) for index in range(start, start + size)]

    def __iter__(self) -> Iterator[SyntheticSample]:
        index = 0
        while True:
            yield self.sample(index)
            index += 1


################################################################################
# Functions
################################################################################

def palette_rgb(name: str) -> np.ndarray:
    """ Gets the RGB value of a palette colour. """
    if name not in PALETTE:
        raise PromptError(f"Unknown palette colour '{name}'.")
    return np.asarray(PALETTE[name], dtype=np.float32)


def nearest_palette_color(rgb: np.ndarray) -> str:
    """ Gets the palette colour with the smallest Euclidean distance (first one on ties). """
    colors = np.asarray([PALETTE[name] for name in COLOR_NAMES], dtype=np.float64)
    distances = np.sum((colors - np.asarray(rgb, dtype=np.float64)) ** 2, axis=1)
    return COLOR_NAMES[int(np.argmin(distances))]


def dominant_fill_color(video: np.ndarray, mask: np.ndarray) -> str:
    """ Palette colour closest to the mean colour of all unmasked pixels.

    Raises:
        ShapeError: If no pixel is unmasked.
    """
    keep = ~np.asarray(mask, dtype=bool)
    if not keep.any():
        raise ShapeError("The mask covers the whole video, no scene colour to match.")
    return nearest_palette_color(np.asarray(video, dtype=np.float64)[keep].mean(axis=0))


def fill_color_name(prompt: str, video: np.ndarray, mask: np.ndarray) -> str:
    """ Resolves the fill colour of a prompt.

    Raises:
        PromptError: If the prompt is neither "match-scene" nor "fill:<colour>".
    """
    if prompt == PROMPT_MATCH_SCENE:
        return dominant_fill_color(video, mask)
    if prompt.startswith(FILL_PREFIX) and prompt[len(FILL_PREFIX):] in PALETTE:
        return prompt[len(FILL_PREFIX):]
    raise PromptError(f"Prompt '{prompt}' is not a synthetic fill prompt.")


def apply_fill(video: np.ndarray, mask: np.ndarray, color: str) -> np.ndarray:
    """ Copy of the video with every masked pixel set to a palette colour. """
    target = np.array(video, dtype=np.float32, copy=True)
    target[np.asarray(mask, dtype=bool)] = palette_rgb(color)
    return target


def _smooth_texture(rng: RngState, shape: tuple) -> np.ndarray:
    noise = ndimage.gaussian_filter(rng.normal(shape, dtype=np.float64), sigma=TEXTURE_SIGMA, mode="wrap")
    peak = np.abs(noise).max()
    return TEXTURE_AMPLITUDE * noise / peak if peak > 0 else noise


def _canvas(rng: RngState, height: int, width: int) -> np.ndarray:
    dominant, secondary = rng.integers(0, len(COLOR_NAMES), size=2)
    if secondary == dominant:
        secondary = (secondary + 1) % len(COLOR_NAMES)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    ramp = np.cos(angle) * yy + np.sin(angle) * xx
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    weight = rng.uniform(MIN_GRADIENT_WEIGHT, MAX_GRADIENT_WEIGHT) * ramp
    base = np.asarray(PALETTE[COLOR_NAMES[dominant]])
    other = np.asarray(PALETTE[COLOR_NAMES[secondary]])
    canvas = (1.0 - weight)[..., None] * base + weight[..., None] * other
    return canvas + _smooth_texture(rng, (height, width))[..., None]


def generate_sample(rng: RngState,
                    frames: int = 8,
                    height: int = 32,
                    width: int = 32,
                    force_prompt: Optional[str] = None,
                    static: bool = False) -> SyntheticSample:
    """ Builds one synthetic clip from an independent random stream.

    Args:
        rng: Stream of this sample.
        frames: Number of frames F.
        height: Frame height H.
        width: Frame width W.
        force_prompt: Use this prompt instead of the 50/50 draw.
        static: Zero background and disk motion.

    Returns:
        SyntheticSample: The clip, its mask, prompt and ground truth.
    """
    scene_rng = rng.derive(_SCENE_STREAM)
    bg_velocity = np.zeros(2, dtype=np.int64)
    blob_velocity = np.zeros(2, dtype=np.int64)
    if not static:
        bg_velocity = scene_rng.integers(-MAX_BACKGROUND_SPEED, MAX_BACKGROUND_SPEED + 1, size=2)
        blob_velocity = scene_rng.integers(-MAX_BLOB_SPEED, MAX_BLOB_SPEED + 1, size=2)

    margin = MAX_BACKGROUND_SPEED * max(frames - 1, 0)
    canvas = _canvas(scene_rng, height + 2 * margin, width + 2 * margin)

    radius = int(scene_rng.integers(max(2, min(height, width) // 8), max(3, min(height, width) // 4) + 1))
    center = np.array([scene_rng.integers(radius, max(radius + 1, height - radius)),
                       scene_rng.integers(radius, max(radius + 1, width - radius))])
    blob_rgb = np.asarray(PALETTE[COLOR_NAMES[int(scene_rng.integers(0, len(COLOR_NAMES)))]])
    blob_texture = _smooth_texture(scene_rng, (2 * radius + 1, 2 * radius + 1))

    yy, xx = np.mgrid[0:height, 0:width]
    video = np.empty((frames, height, width, 3), dtype=np.float64)
    blob_mask = np.zeros((frames, height, width), dtype=bool)
    flow = np.zeros((max(frames - 1, 0), height, width, 2), dtype=np.float32)
    for index in range(frames):
        top = margin - index * int(bg_velocity[0])
        left = margin - index * int(bg_velocity[1])
        video[index] = canvas[top:top + height, left:left + width]

        cy, cx = center + index * blob_velocity
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
        blob_mask[index] = inside
        texture = blob_texture[np.clip(yy - cy + radius, 0, 2 * radius), np.clip(xx - cx + radius, 0, 2 * radius)]
        video[index][inside] = blob_rgb + texture[inside][:, None]

        if index < frames - 1:
            flow[index, ...] = bg_velocity.astype(np.float32)
            flow[index][inside] = blob_velocity.astype(np.float32)

    video = np.clip(video, 0.0, 1.0).astype(np.float32)
    mask = augment_mask(rng.derive(_MASK_STREAM), (frames, height, width))

    if force_prompt is not None:
        prompt = force_prompt
    else:
        prompt_rng = rng.derive(_PROMPT_STREAM)
        if prompt_rng.random() < 0.5:
            prompt = PROMPT_MATCH_SCENE
        else:
            prompt = FILL_PREFIX + COLOR_NAMES[int(prompt_rng.integers(0, len(COLOR_NAMES)))]

    target = apply_fill(video, mask, fill_color_name(prompt, video, mask))
    return SyntheticSample(video, mask, prompt, target, flow, blob_mask)


def make_synthetic_dataset(rng: RngState,
                           count: int,
                           frames: int = 8,
                           height: int = 32,
                           width: int = 32,
                           force_prompt: Optional[str] = None) -> Iterator[SyntheticSample]:
    """ Yields count samples; sample i uses the stream rng.derive(i). """
    for index in range(count):
        yield generate_sample(rng.derive(index), frames, height, width, force_prompt)
