""" Tests for the strict configuration loaders. """
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

import pytest

from pyEditCtrl.ret import ConfigError
from pyEditCtrl.run_config import (BenchConfig, ModelConfig, PropagationConfig, SampleConfig, TrainConfig,
                                   config_from_dict, config_to_dict, resolve_config, save_config_json)

################################################################################
# Variables
################################################################################

################################################################################
# Classes
################################################################################

################################################################################
# Functions
################################################################################


def test_defaults():
    """ Default records are valid. """
    # TC: Every default validates.
    for config_cls in (ModelConfig, SampleConfig, TrainConfig, PropagationConfig, BenchConfig):
        config_cls().validate()

    # TC: p*p*C latent channels, one control block per injection site.
    config = ModelConfig()
    assert config.latent_channels == 48
    assert config.control_blocks == 2

    # TC: The piecewise switch defaults to 40 % of the iterations.
    assert TrainConfig(stage="adapters_sparse", iterations=10).resolved_switch == 4
    assert TrainConfig(stage="adapters_sparse").resolved_iterations == 2000


def test_strict_mapping():
    """ Unknown keys and wrong types are rejected. """
    # TC: Unknown key.
    with pytest.raises(ConfigError):
        config_from_dict(ModelConfig, {"d_modle": 32})

    # TC: Wrong scalar type; booleans are not integers.
    with pytest.raises(ConfigError):
        config_from_dict(ModelConfig, {"d_model": "32"})
    with pytest.raises(ConfigError):
        config_from_dict(ModelConfig, {"d_model": True})

    # TC: Integers are accepted where numbers are expected.
    assert config_from_dict(TrainConfig, {"learning_rate": 1}).learning_rate == 1.0

    # TC: Cross-field constraints.
    with pytest.raises(ConfigError):
        config_from_dict(ModelConfig, {"injection_blocks": [3, 1]})
    with pytest.raises(ConfigError):
        config_from_dict(ModelConfig, {"n_blocks": 2, "injection_blocks": [1, 3]})
    with pytest.raises(ConfigError):
        config_from_dict(SampleConfig, {"guidance": "cfg"})
    with pytest.raises(ConfigError):
        config_from_dict(BenchConfig, {"ratios": [0.0]})

    # TC: A record survives the mapping round trip.
    config = ModelConfig(d_model=32, injection_blocks=[0, 2])
    assert config_from_dict(ModelConfig, config_to_dict(config)) == config


def test_resolve_config(tmp_path):
    """ Defaults, then file, then flags. """
    json_path = tmp_path / "train.json"
    json_path.write_text(json.dumps({"batch_size": 2, "seed": 5}))
    toml_path = tmp_path / "train.toml"
    toml_path.write_text("batch_size = 3\nlearning_rate = 0.01\n")

    # TC: File values override defaults, flags override the file, None flags are ignored.
    config = resolve_config(TrainConfig, str(json_path), {"seed": 9, "iterations": None})
    assert (config.batch_size, config.seed, config.iterations) == (2, 9, None)

    # TC: TOML is selected by suffix.
    config = resolve_config(TrainConfig, str(toml_path), {})
    assert (config.batch_size, config.learning_rate) == (3, 0.01)

    # TC: Unreadable or unparsable files are configuration errors.
    with pytest.raises(ConfigError):
        resolve_config(TrainConfig, str(tmp_path / "missing.json"), {})
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError):
        resolve_config(TrainConfig, str(broken), {})

    # TC: Saved JSON reloads to the same record.
    saved = tmp_path / "model.json"
    save_config_json(str(saved), ModelConfig(n_blocks=6))
    assert resolve_config(ModelConfig, str(saved), {}).n_blocks == 6
