""" Tests for mask downsampling, dilation, token selection and region sets. """
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

import numpy as np
import pytest

from pyEditCtrl.latent_codec import LatentCodec, flatten_tokens
from pyEditCtrl.mask_pipeline import (BACKGROUND_FILL, EditRegion, MaskLayout, RegionSet, TokenIndexSet, augment_mask,
                                      build_control_context, dilate_mask, downsample_mask, gather, load_mask,
                                      make_background, scatter, select_tokens, shift_frame)
from pyEditCtrl.ret import EmptyMaskError, FormatError, OverlappingRegionsError, ShapeError
from pyEditCtrl.tensor import RngState
from pyEditCtrl.tensor_io import save_etf

################################################################################
# Variables
################################################################################

################################################################################
# Classes
################################################################################

################################################################################
# Functions
################################################################################


def _random_mask(seed: int, shape: tuple, density: float = 0.1) -> np.ndarray:
    return RngState(seed).uniform(0.0, 1.0, shape) < density


def test_background_and_downsample():
    """ Background fill and any-coverage downsampling against direct oracles. """
    video = RngState(1).uniform(0.0, 1.0, (2, 8, 8, 3)).astype(np.float32)
    mask = _random_mask(2, (2, 8, 8))

    # TC: Masked pixels become 0.5, all others stay identical.
    background = make_background(video, mask)
    expected = np.where(mask[..., None], np.float32(BACKGROUND_FILL), video)
    assert np.array_equal(background, expected)

    # TC: A latent cell is set iff any of its pixels is set.
    latent = downsample_mask(mask, 4)
    for frame in range(2):
        for row in range(2):
            for col in range(2):
                assert latent[frame, row, col] == mask[frame, 4 * row:4 * row + 4, 4 * col:4 * col + 4].any()

    # TC: Extents must be divisible by the patch.
    with pytest.raises(ShapeError):
        downsample_mask(np.zeros((1, 6, 8), dtype=bool), 4)


def test_dilation_matches_neighbourhood_scan():
    """ Square dilation per frame, no bleeding across frames. """
    mask = _random_mask(3, (3, 9, 7), density=0.05)
    radius = 2
    dilated = dilate_mask(mask, radius)

    # TC: Brute-force neighbourhood scan.
    frames, height, width = mask.shape
    for frame in range(frames):
        for row in range(height):
            for col in range(width):
                window = mask[frame, max(0, row - radius):row + radius + 1, max(0, col - radius):col + radius + 1]
                assert dilated[frame, row, col] == window.any()

    # TC: Radius 0 is the identity.
    assert np.array_equal(dilate_mask(mask, 0), mask)

    # TC: Negative radii are rejected.
    with pytest.raises(ShapeError):
        dilate_mask(mask, -1)


def test_select_gather_scatter():
    """ Sorted selection, gather in index order, exact scatter. """
    latent_mask = _random_mask(4, (2, 3, 3), density=0.4)
    latent_mask[0, 0, 0] = True
    selection = select_tokens(latent_mask)
    grid = RngState(5).normal((2, 3, 3, 6), dtype=np.float64)

    # TC: Indices are the sorted flat positions of set cells.
    assert np.array_equal(selection.indices, np.flatnonzero(latent_mask))
    assert selection.total == 18
    assert np.array_equal(selection.mask(), latent_mask)

    # TC: Gather takes rows in index order.
    rows = gather(grid, selection)
    assert np.array_equal(rows, np.stack([flatten_tokens(grid)[i] for i in selection.indices]))

    # TC: Scatter of the gathered rows is the identity, untouched rows stay bit-identical.
    replaced = scatter(np.zeros_like(rows), selection, grid)
    assert np.array_equal(scatter(rows, selection, grid), grid)
    keep = ~latent_mask
    assert np.array_equal(replaced[keep], grid[keep])
    assert np.all(replaced[latent_mask] == 0.0)

    # TC: Coordinates follow the original grid positions.
    assert np.array_equal(selection.coords()[0], [0, 0, 0])

    # TC: The inverse map points back into the gathered rows.
    inverse = selection.inverse()
    assert np.all(inverse[selection.indices] == np.arange(selection.count))

    # TC: An empty mask has nothing to edit.
    with pytest.raises(EmptyMaskError):
        select_tokens(np.zeros((1, 2, 2), dtype=bool))

    # TC: Unsorted indices are rejected.
    with pytest.raises(ShapeError):
        TokenIndexSet(np.array([3, 1]), (1, 2, 2))


def test_control_context_rows():
    """ Context row i is the background latent row plus the undilated mask bit. """
    codec = LatentCodec(4, 3)
    video = RngState(6).uniform(0.0, 1.0, (2, 16, 16, 3)).astype(np.float32)
    mask = np.zeros((2, 16, 16), dtype=bool)
    mask[:, 5:7, 5:7] = True

    context, latent_mask, selection = build_control_context(codec, video, mask, 1)
    background_rows = flatten_tokens(codec.encode(make_background(video, mask)))

    # TC: Full context has c + 1 channels for every token.
    assert context.full.shape == (2 * 4 * 4, 49)
    assert np.array_equal(context.full[:, :48], background_rows)
    assert np.array_equal(context.full[:, 48], latent_mask.reshape(-1).astype(np.float64))

    # TC: The local rows are the dilated selection of the full rows.
    assert selection.count == 2 * 9
    assert np.array_equal(context.local, context.full[selection.indices])

    # TC: The mask channel is the undilated latent mask.
    assert context.local[:, 48].sum() == 2.0


def test_augmentation():
    """ Random training masks. """
    # TC: Never empty, area ratio in [0.05, 0.6], reproducible.
    for seed in range(20):
        mask = augment_mask(RngState(seed), (4, 32, 32))
        assert 0.05 <= mask.mean() <= 0.6
        assert np.array_equal(mask, augment_mask(RngState(seed), (4, 32, 32)))

    # TC: Frame t of a drifting layout is frame 0 translated by t * velocity.
    first = np.zeros((12, 12), dtype=bool)
    first[2:5, 3:6] = True
    layout = MaskLayout(first, (1.0, -0.5))
    frames = layout.render(4)
    for index in range(4):
        assert np.array_equal(frames[index], shift_frame(first, index, int(round(-0.5 * index))))

    # TC: Shifted pixels that leave the frame are dropped.
    assert not shift_frame(first, 20, 0).any()


def test_region_set(tmp_path):
    """ Regions must stay disjoint after dilation. """
    left = np.zeros((1, 32, 32), dtype=bool)
    left[:, 0:4, 0:4] = True
    right = np.zeros((1, 32, 32), dtype=bool)
    right[:, 24:28, 24:28] = True
    near = np.zeros((1, 32, 32), dtype=bool)
    near[:, 8:12, 8:12] = True

    # TC: Far apart regions are accepted.
    assert len(RegionSet([EditRegion(left, "fill red", 0), EditRegion(right, "fill blue", 1)], 4, 1)) == 2

    # TC: Regions one latent cell apart overlap after dilation by 1.
    with pytest.raises(OverlappingRegionsError):
        RegionSet([EditRegion(left, "fill red", 0), EditRegion(near, "fill blue", 1)], 4, 1)

    # TC: Without dilation they are disjoint.
    assert len(RegionSet([EditRegion(left, "fill red", 0), EditRegion(near, "fill blue", 1)], 4, 0)) == 2

    # TC: JSON region lists resolve mask paths relative to the file.
    save_etf(str(tmp_path / "left.etf"), left)
    save_etf(str(tmp_path / "right.etf"), right)
    regions_path = tmp_path / "regions.json"
    regions_path.write_text(json.dumps([{"mask_path": "left.etf", "prompt": "fill red", "seed": 3},
                                        {"mask_path": "right.etf", "prompt": "fill blue", "seed": 4}]))
    regions = RegionSet.from_json(str(regions_path), 4, 1)
    assert [region.seed for region in regions] == [3, 4]
    assert np.array_equal(regions.regions[0].mask, left)

    # TC: Unknown keys are a format error.
    regions_path.write_text(json.dumps([{"mask_path": "left.etf", "prompt": "fill red", "seed": 3, "x": 1}]))
    with pytest.raises(FormatError):
        RegionSet.from_json(str(regions_path), 4, 1)

    # TC: Masks must be binary.
    save_etf(str(tmp_path / "bad.etf"), np.full((1, 4, 4), 0.5))
    with pytest.raises(FormatError):
        load_mask(str(tmp_path / "bad.etf"))
