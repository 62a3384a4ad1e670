""" Invertible patch codec between pixel videos and latent token grids.

    A video of F x H x W x C pixels is cut into p x p patches; every patch is
    flattened and rotated by a fixed orthonormal matrix of size c = p*p*C. The
    latent grid has the extents F x H/p x W/p x c and flattens frame-major,
    then row-major over space.
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

import numpy as np

from pyEditCtrl.ret import FormatError, ShapeError
from pyEditCtrl.tensor import RngState
from pyEditCtrl.tensor_io import load_etf

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

DEFAULT_PATCH = 4
VIDEO_CHANNELS = 3
CODEC_SEED = 0x0E71C0DEC

LATENT_DTYPE = np.float64
VIDEO_DTYPE = np.float32

################################################################################
# Classes
################################################################################


class LatentCodec:
    """ Encoder / decoder pair of the latent space. """

    def __init__(self, patch: int = DEFAULT_PATCH, channels: int = VIDEO_CHANNELS, seed: int = CODEC_SEED):
        if patch <= 0 or channels <= 0:
            raise ShapeError("Patch factor and channel count must be positive.")
        self.patch = patch
        self.channels = channels
        self.rotation = orthonormal_matrix(patch * patch * channels, seed)

    @property
    def latent_channels(self) -> int:
        """ Channels of one latent token. """
        return self.patch * self.patch * self.channels

    def grid_shape(self, video_shape: tuple) -> tuple:
        """ Gets the (f, h, w) token grid of a video shape.

        Raises:
            ShapeError: If the video extents are not divisible by the patch factor.
        """
        if len(video_shape) != 4 or video_shape[3] != self.channels:
            raise ShapeError(f"Expected a F x H x W x {self.channels} video, got {tuple(video_shape)}.")
        frames, height, width, _ = video_shape
        if frames < 1 or height % self.patch or width % self.patch or height == 0 or width == 0:
            raise ShapeError(f"Video extents {height} x {width} are not divisible by patch {self.patch}.")
        return frames, height // self.patch, width // self.patch

    def encode(self, video: np.ndarray) -> np.ndarray:
        """ Encodes a video into a 64-bit latent grid of shape f x h x w x c. """
        frames, rows, cols = self.grid_shape(np.shape(video))
        patch = self.patch
        blocks = np.asarray(video, dtype=LATENT_DTYPE) \
            .reshape(frames, rows, patch, cols, patch, self.channels) \
            .transpose(0, 1, 3, 2, 4, 5) \
            .reshape(frames, rows, cols, self.latent_channels)
        return blocks @ self.rotation

    def decode(self, latent: np.ndarray) -> np.ndarray:
        """ Decodes a latent grid back into a 32-bit video.

        Raises:
            ShapeError: If the latent grid does not have c channels.
        """
        latent = np.asarray(latent, dtype=LATENT_DTYPE)
        if latent.ndim != 4 or latent.shape[-1] != self.latent_channels:
            raise ShapeError(f"Expected an f x h x w x {self.latent_channels} latent, got {latent.shape}.")
        frames, rows, cols, _ = latent.shape
        patch = self.patch
        pixels = (latent @ self.rotation.T) \
            .reshape(frames, rows, cols, patch, patch, self.channels) \
            .transpose(0, 1, 3, 2, 4, 5) \
            .reshape(frames, rows * patch, cols * patch, self.channels)
        return pixels.astype(VIDEO_DTYPE)


################################################################################
# Functions
################################################################################

def orthonormal_matrix(size: int, seed: int = CODEC_SEED) -> np.ndarray:
    """ Gets the fixed orthonormal rotation for a seed (QR of a seeded normal matrix, sign fixed). """
    raw = RngState(seed, size).normal((size, size), dtype=np.float64)
    q_mat, r_mat = np.linalg.qr(raw)
    signs = np.sign(np.diag(r_mat))
    signs[signs == 0] = 1.0
    return q_mat * signs


def token_coords(grid_shape: tuple) -> np.ndarray:
    """ Gets the (t, h, w) coordinate of every flat token, shape N x 3. """
    return np.indices(grid_shape, dtype=np.int64).reshape(3, -1).T


def flatten_tokens(latent: np.ndarray) -> np.ndarray:
    """ Views a latent grid as N x c token rows. """
    return latent.reshape(-1, latent.shape[-1])


def _cell_edges(extent: int, cells: int) -> np.ndarray:
    return np.round(np.linspace(0, extent, cells + 1)).astype(np.int64)


def area_downsample(video: np.ndarray, extent: int) -> np.ndarray:
    """ Box-averages every frame onto an extent x extent grid.

        Cells partition the frame; their borders are the rounded positions
        k * H / extent (and k * W / extent), so no pixel is dropped.

    Raises:
        ShapeError: If extent is 0 or larger than the frame.
    """
    video = np.asarray(video)
    if video.ndim != 4:
        raise ShapeError(f"Expected a F x H x W x C video, got {video.shape}.")
    height, width = video.shape[1:3]
    if extent <= 0 or extent > min(height, width):
        raise ShapeError(f"Cannot downsample {height} x {width} to {extent} x {extent}.")

    row_edges = _cell_edges(height, extent)
    col_edges = _cell_edges(width, extent)
    sums = np.add.reduceat(video.astype(np.float64), row_edges[:-1], axis=1)
    sums = np.add.reduceat(sums, col_edges[:-1], axis=2)
    counts = np.outer(np.diff(row_edges), np.diff(col_edges))[None, :, :, None]
    return (sums / counts).astype(video.dtype if np.issubdtype(video.dtype, np.floating) else VIDEO_DTYPE)


def check_video(video: np.ndarray, channels: int = VIDEO_CHANNELS) -> np.ndarray:
    """ Validates a pixel video (4-D, finite, values in [0, 1]) and returns it as float32.

    Raises:
        FormatError: If the array is not a valid video.
    """
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[-1] != channels:
        raise FormatError(f"Expected a F x H x W x {channels} video, got shape {video.shape}.")
    if not np.all(np.isfinite(video)) or video.min(initial=0.0) < 0.0 or video.max(initial=0.0) > 1.0:
        raise FormatError("Video values must be finite and lie in [0, 1].")
    return video.astype(VIDEO_DTYPE)


def load_video(path: str, channels: int = VIDEO_CHANNELS) -> np.ndarray:
    """ Reads and validates a video ETF file. """
    video = check_video(load_etf(path), channels)
    LOG.debug("loaded video %s with shape %s", path, video.shape)
    return video
