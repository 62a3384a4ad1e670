""" Shared fixtures: a tiny model geometry, small clips and a trained checkpoint directory. """
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

import os

import numpy as np
import pytest

from pyEditCtrl.diffusion_engine import ModelBundle
from pyEditCtrl.dit_backbone import PROMPT_VOCABULARY
from pyEditCtrl.latent_codec import flatten_tokens
from pyEditCtrl.run_config import ModelConfig, TrainConfig
from pyEditCtrl.synthetic_data import PALETTE
from pyEditCtrl.tensor import RngState, Tensor
from pyEditCtrl.training import pretrain, train_adapters

################################################################################
# Variables
################################################################################

SLOW_ENV = "EDITCTRL_RUN_SLOW"

TINY_FRAMES = 2
TINY_EXTENT = 16

################################################################################
# Classes
################################################################################

################################################################################
# Functions
################################################################################


def pytest_collection_modifyitems(config, items):
    """ Skips tests marked slow unless EDITCTRL_RUN_SLOW=1. """
    del config
    if os.environ.get(SLOW_ENV) == "1":
        return
    skip_slow = pytest.mark.skip(reason=f"set {SLOW_ENV}=1 to run desk-scale training tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_tiny_config(**overrides) -> ModelConfig:
    """ Model geometry small enough for gradient checks and CLI round trips. """
    values = {
        "patch": 4,
        "channels": 3,
        "d_model": 16,
        "n_heads": 2,
        "n_blocks": 2,
        "max_prompt_len": 8,
        "max_frames": 8,
        "max_extent": 8,
        "injection_blocks": [0, 1],
        "global_extent": 8,
    }
    values.update(overrides)
    return ModelConfig(**values)


def make_tiny_train_config(**overrides) -> TrainConfig:
    """ Training settings of a few iterations on 2 x 16 x 16 clips. """
    values = {
        "iterations": 2,
        "batch_size": 1,
        "warmup_steps": 0,
        "lora_rank": 2,
        "frames": TINY_FRAMES,
        "height": TINY_EXTENT,
        "width": TINY_EXTENT,
        "log_every": 1,
    }
    values.update(overrides)
    return TrainConfig(**values)


def random_video(seed: int, frames: int = TINY_FRAMES, extent: int = TINY_EXTENT) -> np.ndarray:
    """ Uniform random video in [0, 1]. """
    return RngState(seed).uniform(0.0, 1.0, (frames, extent, extent, 3)).astype(np.float32)


def box_mask(frames: int = TINY_FRAMES, extent: int = TINY_EXTENT, top: int = 4, left: int = 4,
             size: int = 4) -> np.ndarray:
    """ A square mask at the same place in every frame. """
    mask = np.zeros((frames, extent, extent), dtype=bool)
    mask[:, top:top + size, left:left + size] = True
    return mask


def install_fill_denoiser(models: ModelBundle, monkeypatch) -> None:
    """ Replaces the noise prediction by the exact noise of a flat fill in the colour named by the prompt.

        The sampler then ends on that fill whatever its noise, so the decoded
        tokens show which prompt a lane was given.
    """
    condition = models.backbone.condition
    patch = models.config.patch
    fills = {PROMPT_VOCABULARY.index(name): flatten_tokens(models.codec.encode(np.full((1, patch, patch, 3), rgb)))[0]
             for name, rgb in PALETTE.items()}
    prompts = {}

    def _condition(timestep: int, prompt_ids: np.ndarray):
        cond = condition(timestep, prompt_ids)
        prompts[id(cond)] = next(fills[token] for token in np.asarray(prompt_ids).tolist() if token in fills)
        return cond

    def _predict_noise(rows, coords, timestep, prompt_ids=None, cond=None, **_kwargs) -> Tensor:
        del coords, prompt_ids
        alpha_bar = models.schedule.alpha_bar(timestep)
        rows = np.asarray(rows, dtype=np.float64)
        return Tensor((rows - np.sqrt(alpha_bar) * prompts[id(cond)]) / np.sqrt(1.0 - alpha_bar))

    monkeypatch.setattr(models.backbone, "condition", _condition)
    monkeypatch.setattr(models.backbone, "predict_noise", _predict_noise)


# pylint: disable=W0621
@pytest.fixture
def tiny_config() -> ModelConfig:
    """ Tiny model geometry. """
    return make_tiny_config()


@pytest.fixture
def tiny_models(tiny_config) -> ModelBundle:
    """ Freshly initialised backbone with zero-initialised adapters. """
    return ModelBundle.create(tiny_config, with_adapters=True)


@pytest.fixture
def tiny_video() -> np.ndarray:
    """ Random 2 x 16 x 16 clip. """
    return random_video(7)


@pytest.fixture
def tiny_mask() -> np.ndarray:
    """ 4 x 4 pixel square in both frames. """
    return box_mask()


@pytest.fixture(scope="session")
def checkpoint_dir(tmp_path_factory) -> str:
    """ Checkpoint directory after two iterations of every training stage. """
    directory = str(tmp_path_factory.mktemp("checkpoints"))
    pretrain(make_tiny_config(), make_tiny_train_config(), directory)
    train_adapters(make_tiny_train_config(), directory)
    return directory
