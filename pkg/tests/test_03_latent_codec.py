""" Tests for the orthonormal latent codec and the video helpers. """
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

import numpy as np
import pytest

from pyEditCtrl.latent_codec import (LatentCodec, area_downsample, check_video, flatten_tokens, orthonormal_matrix,
                                     token_coords)
from pyEditCtrl.ret import FormatError, ShapeError
from pyEditCtrl.tensor import RngState

################################################################################
# Variables
################################################################################

################################################################################
# Classes
################################################################################

################################################################################
# Functions
################################################################################


def test_round_trip_and_linearity():
    """ decode(encode(v)) reproduces v; the map is linear. """
    codec = LatentCodec(4, 3)

    # TC: 100 random videos round trip within 1e-5.
    for seed in range(100):
        video = RngState(seed).uniform(0.0, 1.0, (2, 8, 12, 3)).astype(np.float32)
        assert np.max(np.abs(codec.decode(codec.encode(video)) - video)) <= 1e-5

    # TC: Grid shape is f x h/p x w/p with p*p*C channels.
    latent = codec.encode(video)
    assert latent.shape == (2, 2, 3, 48)
    assert latent.dtype == np.float64

    # TC: encode(a * v) = a * encode(v).
    assert np.allclose(codec.encode(0.5 * video), 0.5 * latent, atol=1e-6)

    # TC: The rotation is orthonormal and fixed by its seed.
    rotation = orthonormal_matrix(48)
    assert np.allclose(rotation @ rotation.T, np.eye(48), atol=1e-10)
    assert np.array_equal(rotation, LatentCodec(4, 3).rotation)


def test_token_locality():
    """ Every latent token depends only on its own patch. """
    codec = LatentCodec(4, 3)
    video = RngState(1).uniform(0.0, 1.0, (1, 8, 8, 3))
    changed = video.copy()
    changed[0, 0:4, 4:8] = 0.0

    # TC: Only token (0, 0, 1) changes.
    diff = np.abs(codec.encode(changed) - codec.encode(video)).max(axis=-1)
    assert diff[0, 0, 1] > 0.0
    diff[0, 0, 1] = 0.0
    assert np.all(diff == 0.0)


def test_shape_errors():
    """ Extents must be divisible by the patch factor. """
    codec = LatentCodec(4, 3)

    # TC: Indivisible height.
    with pytest.raises(ShapeError):
        codec.encode(np.zeros((1, 6, 8, 3)))

    # TC: Wrong channel count.
    with pytest.raises(ShapeError):
        codec.encode(np.zeros((1, 8, 8, 1)))

    # TC: Wrong latent channel count.
    with pytest.raises(ShapeError):
        codec.decode(np.zeros((1, 2, 2, 5)))


def test_token_helpers():
    """ Coordinates and flattening follow row-major (t, h, w) order. """
    # TC: Flat index i has coordinate unravel(i).
    coords = token_coords((2, 3, 4))
    assert coords.shape == (24, 3)
    assert np.array_equal(coords[17], np.unravel_index(17, (2, 3, 4)))

    # TC: Flattening is a view of N x c rows.
    latent = np.arange(2 * 3 * 4 * 5, dtype=np.float64).reshape(2, 3, 4, 5)
    assert np.array_equal(flatten_tokens(latent)[17], latent[1, 1, 1])


def test_area_downsample():
    """ Box averages over a partition of the frame. """
    video = RngState(2).uniform(0.0, 1.0, (2, 32, 32, 3)).astype(np.float32)

    # TC: 32 -> 16 equals the mean of every 2 x 2 cell.
    expected = video.astype(np.float64).reshape(2, 16, 2, 16, 2, 3).mean(axis=(2, 4))
    assert np.allclose(area_downsample(video, 16), expected, atol=1e-6)

    # TC: Non-integer factors still cover every pixel (constant video stays constant).
    constant = np.full((1, 10, 10, 3), 0.25, dtype=np.float32)
    assert np.allclose(area_downsample(constant, 4), 0.25)

    # TC: Upsampling is rejected.
    with pytest.raises(ShapeError):
        area_downsample(video, 64)


def test_check_video():
    """ Videos must be 4-D with values in [0, 1]. """
    # TC: Values above 1 are rejected.
    with pytest.raises(FormatError):
        check_video(np.full((1, 4, 4, 3), 1.5))

    # TC: Missing channel axis is rejected.
    with pytest.raises(FormatError):
        check_video(np.zeros((1, 4, 4)))

    # TC: Valid input comes back as float32.
    assert check_video(np.zeros((1, 4, 4, 3))).dtype == np.float32
