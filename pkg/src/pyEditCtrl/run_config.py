""" Configuration records and their strict loaders.

    Configuration files are JSON or TOML (selected by suffix). Unknown keys and
    values of the wrong type are rejected before any compute starts.
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

import dataclasses
import json
import logging
import os
import typing
from dataclasses import dataclass, field
from typing import Any, Optional, Type, TypeVar

import toml

from pyEditCtrl.ret import ConfigError

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

STAGE_BASE = "base"
STAGE_CONTROL_FULL = "control_full"
STAGE_ADAPTERS_SPARSE = "adapters_sparse"
STAGES = (STAGE_BASE, STAGE_CONTROL_FULL, STAGE_ADAPTERS_SPARSE)

DEFAULT_ITERATIONS = {
    STAGE_BASE: 3000,
    STAGE_CONTROL_FULL: 2000,
    STAGE_ADAPTERS_SPARSE: 2000,
}
DEFAULT_SWITCH_FRACTION = 0.4

ConfigT = TypeVar("ConfigT")

################################################################################
# Classes
################################################################################


@dataclass
class ModelConfig:
    """ Geometry of the latent space, the backbone and its adapters. """
    patch: int = 4
    channels: int = 3
    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 4
    vocab_size: int = 32
    max_prompt_len: int = 8
    max_frames: int = 32
    max_extent: int = 32
    injection_blocks: list[int] = field(default_factory=lambda: [1, 3])
    global_extent: int = 16
    lora_alpha: float = 16.0
    train_timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    init_seed: int = 0

    @property
    def latent_channels(self) -> int:
        """ Channels of one latent token (p*p*C). """
        return self.patch * self.patch * self.channels

    @property
    def control_blocks(self) -> int:
        """ Number of backbone blocks copied into the control module, one per injection site. """
        return len(self.injection_blocks)

    def validate(self) -> None:
        """ Checks cross-field constraints.

        Raises:
            ConfigError: On any inconsistent value.
        """
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"n_heads {self.n_heads} does not divide d_model {self.d_model}.")
        if not self.injection_blocks or sorted(set(self.injection_blocks)) != list(self.injection_blocks):
            raise ConfigError("injection_blocks must be a non-empty strictly increasing list.")
        if self.injection_blocks[-1] >= self.n_blocks or self.injection_blocks[0] < 0:
            raise ConfigError(f"injection_blocks {self.injection_blocks} exceed {self.n_blocks} blocks.")
        if self.control_blocks > self.n_blocks:
            raise ConfigError("The control module cannot copy more blocks than the backbone has.")
        if self.global_extent % self.patch != 0:
            raise ConfigError(f"global_extent {self.global_extent} is not divisible by patch {self.patch}.")
        if min(self.patch, self.channels, self.d_model, self.vocab_size, self.max_prompt_len,
               self.max_frames, self.max_extent, self.train_timesteps) <= 0:
            raise ConfigError("Model extents must be positive.")
        if not 0.0 < self.beta_start < self.beta_end < 1.0:
            raise ConfigError("Betas must satisfy 0 < beta_start < beta_end < 1.")


@dataclass
class SampleConfig:
    """ Inference settings of one edit. Classifier-free guidance is not supported. """
    steps: int = 25
    seed: int = 0
    dilation_radius: int = 1
    guidance: Optional[str] = None

    def validate(self) -> None:
        """ Checks value ranges. """
        if self.steps <= 0:
            raise ConfigError("steps must be positive.")
        if self.dilation_radius < 0:
            raise ConfigError("dilation_radius must not be negative.")
        if self.guidance not in (None, "none"):
            raise ConfigError(f"guidance '{self.guidance}' is not supported, only 'none'.")


@dataclass
class TrainConfig:
    """ Settings of one training stage. """
    stage: str = STAGE_BASE
    iterations: Optional[int] = None
    batch_size: int = 4
    learning_rate: float = 1e-3
    warmup_steps: int = 100
    switch_iteration: Optional[int] = None
    lora_rank: int = 8
    seed: int = 0
    weight_decay: float = 0.01
    grad_accum: int = 1
    dilation_radius: int = 1
    frames: int = 8
    height: int = 32
    width: int = 32
    log_every: int = 50

    @property
    def resolved_iterations(self) -> int:
        """ Gets the configured iteration count or the stage default. """
        return DEFAULT_ITERATIONS[self.stage] if self.iterations is None else self.iterations

    @property
    def resolved_switch(self) -> int:
        """ Gets the piecewise loss switch n (default 40 % of the iterations). """
        if self.switch_iteration is not None:
            return self.switch_iteration
        return int(round(DEFAULT_SWITCH_FRACTION * self.resolved_iterations))

    def validate(self) -> None:
        """ Checks value ranges. """
        if self.stage not in STAGES:
            raise ConfigError(f"Unknown stage '{self.stage}', expected one of {STAGES}.")
        if self.resolved_iterations < 0 or self.batch_size <= 0 or self.grad_accum <= 0:
            raise ConfigError("iterations must be >= 0, batch_size and grad_accum > 0.")
        if self.learning_rate <= 0.0:
            raise ConfigError("learning_rate must be positive.")
        if self.warmup_steps < 0 or self.resolved_switch < 0 or self.lora_rank <= 0:
            raise ConfigError("warmup_steps and switch_iteration must be >= 0, lora_rank > 0.")
        if self.log_every <= 0:
            raise ConfigError("log_every must be positive.")


@dataclass
class PropagationConfig:
    """ Settings of causal content propagation. """
    chunk_frames: int = 2
    feather_width: int = 2
    global_window: int = 8
    steps: int = 25
    seed: int = 0
    dilation_radius: int = 1
    block_size: int = 8
    search_radius: int = 8

    def validate(self) -> None:
        """ Checks value ranges. """
        if self.chunk_frames <= 0 or self.global_window <= 0 or self.steps <= 0:
            raise ConfigError("chunk_frames, global_window and steps must be positive.")
        if self.feather_width < 0 or self.dilation_radius < 0:
            raise ConfigError("feather_width and dilation_radius must not be negative.")
        if self.block_size <= 0 or self.search_radius < 0:
            raise ConfigError("block_size must be positive and search_radius >= 0.")


@dataclass
class BenchConfig:
    """ Settings of the FLOP / throughput sweep. """
    ratios: list[float] = field(default_factory=lambda: [0.125, 0.25, 0.5, 1.0])
    resolutions: list[int] = field(default_factory=lambda: [32, 64, 128])
    frames: int = 8
    steps: int = 25
    trials: int = 5
    seeds: list[int] = field(default_factory=lambda: [0])
    flops_only: bool = False
    parallel: bool = False
    measure_dense_max_tokens: int = 2048

    def validate(self) -> None:
        """ Checks value ranges. """
        if not self.ratios or any(not 0.0 < ratio <= 1.0 for ratio in self.ratios):
            raise ConfigError("ratios must lie in (0, 1].")
        if not self.resolutions or self.frames <= 0 or self.steps <= 0 or self.trials <= 0 or not self.seeds:
            raise ConfigError("resolutions, seeds, frames, steps and trials must be non-empty / positive.")


################################################################################
# Functions
################################################################################

def _coerce(key: str, value: Any, hint: Any) -> Any:
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)

    if origin is typing.Union and type(None) in args:
        if value is None:
            return None
        inner = [arg for arg in args if arg is not type(None)][0]
        return _coerce(key, value, inner)

    if origin is list:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"Config key '{key}' expects a list, got {value!r}.")
        return [_coerce(key, item, args[0]) for item in value]

    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"Config key '{key}' expects true/false, got {value!r}.")
        return value

    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"Config key '{key}' expects an integer, got {value!r}.")
        return value

    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"Config key '{key}' expects a number, got {value!r}.")
        return float(value)

    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"Config key '{key}' expects a string, got {value!r}.")
        return value

    raise ConfigError(f"Config key '{key}' has an unsupported type.")


def config_from_dict(config_cls: Type[ConfigT], data: dict) -> ConfigT:
    """ Builds a config record from a mapping, rejecting unknown keys.

    Args:
        config_cls: One of the config dataclasses of this module.
        data: Key -> value mapping (already parsed).

    Returns:
        The validated config record.

    Raises:
        ConfigError: On unknown keys, wrong types or invalid values.
    """
    if not isinstance(data, dict):
        raise ConfigError(f"{config_cls.__name__} must be a mapping.")
    hints = typing.get_type_hints(config_cls)
    known = {fld.name for fld in dataclasses.fields(config_cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Unknown {config_cls.__name__} keys: {', '.join(unknown)}.")

    values = {key: _coerce(key, value, hints[key]) for key, value in data.items()}
    config = config_cls(**values)
    config.validate()
    return config


def config_to_dict(config) -> dict:
    """ Converts a config record into a plain mapping. """
    return dataclasses.asdict(config)


def load_config_file(path: str) -> dict:
    """ Parses a JSON or TOML config file into a mapping.

    Raises:
        ConfigError: If the file cannot be read or parsed.
    """
    try:
        with open(path, "r", encoding="UTF-8") as config_file:
            if os.path.splitext(path)[1].lower() == ".toml":
                return toml.load(config_file)
            return json.load(config_file)
    except (OSError, ValueError, toml.TomlDecodeError) as exc:
        raise ConfigError(f"Cannot read config file '{path}': {exc}") from exc


def resolve_config(config_cls: Type[ConfigT], path: Optional[str], overrides: dict) -> ConfigT:
    """ Merges defaults, an optional config file and flag overrides (flags win).

    Args:
        config_cls: Config dataclass to build.
        path: Optional JSON/TOML file.
        overrides: Values given on the command line; None values are ignored.

    Returns:
        The validated config record.
    """
    data = load_config_file(path) if path else {}
    data.update({key: value for key, value in overrides.items() if value is not None})
    LOG.info("resolved %s from %s with %d overrides", config_cls.__name__, path or "defaults",
             sum(value is not None for value in overrides.values()))
    return config_from_dict(config_cls, data)


def save_config_json(path: str, config) -> None:
    """ Writes a config record as pretty JSON. """
    with open(path, "w", encoding="UTF-8") as config_file:
        config_file.write(json.dumps(config_to_dict(config), indent=4, sort_keys=True))
