""" The trainable adapters around the frozen backbone.

    ControlModule is the local context encoder: a patch layer for the c + 1
    context channels, copies of the first backbone blocks and one zero
    initialised projection per injection site. GlobalEmbedder turns a fixed
    resolution background video into keys / values that modulate the prompt
    cross-attention output of every backbone block through a zero
    initialised projection W0.

    Weight names: "control.patch.*", "control.blocks.<j>.<role>",
    "control.blocks.<j>.lora.<role>.{a,b}", "control.proj.<j>.*",
    "global.patch.*", "global.k.weight", "global.v.weight", "global.w0.<i>.weight".
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

import copy
import logging
from typing import Optional

import numpy as np

from pyEditCtrl.dit_backbone import (Backbone, Conditioning, ParamInit, ParamModule, TransformerBlock,
                                     attention)
from pyEditCtrl.latent_codec import LatentCodec, flatten_tokens, token_coords
from pyEditCtrl.ret import ShapeError
from pyEditCtrl.run_config import ModelConfig
from pyEditCtrl.tensor import RngState, Tensor, add, flop_component, linear

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

CONTROL_INIT_SEED = 0xC0
LORA_INIT_SEED = 0x10A
GLOBAL_INIT_SEED = 0x61

################################################################################
# Classes
################################################################################


class ControlModule(ParamModule):
    """ Local context encoder c_phi producing the backbone injections. """

    def __init__(self, config: ModelConfig, backbone: Backbone, rng: Optional[RngState] = None):
        super().__init__("control")
        self.config = config
        init = ParamInit(rng if rng is not None else RngState(config.init_seed, CONTROL_INIT_SEED))
        d = config.d_model
        c = config.latent_channels

        self._new_param("patch.weight", init.weight("control.patch.weight", d, c + 1))
        self._new_param("patch.bias", np.zeros(d))
        self.blocks: list[TransformerBlock] = [backbone.blocks[index].copy(f"control.blocks.{index}")
                                               for index in range(config.control_blocks)]
        for slot in range(config.control_blocks):
            self._new_param(f"proj.{slot}.weight", np.zeros((d, d)))
            self._new_param(f"proj.{slot}.bias", np.zeros(d))
        self.cast(backbone.dtype)

    def children(self) -> list[ParamModule]:
        return list(self.blocks)

    @property
    def lora_attached(self) -> bool:
        """ True if the block copies carry LoRA deltas. """
        return any(block.lora for block in self.blocks)

    @property
    def lora_rank(self) -> int:
        """ Rank of the attached LoRA deltas, 0 without LoRA. """
        for block in self.blocks:
            for delta in block.lora.values():
                return delta.rank
        return 0

    def attach_lora(self, rank: int, alpha: float, rng: Optional[RngState] = None) -> None:
        """ Adds LoRA deltas to the attention and feed-forward matrices of every block copy. """
        init = ParamInit(rng if rng is not None else RngState(self.config.init_seed, LORA_INIT_SEED))
        for block in self.blocks:
            block.attach_lora(rank, alpha, init)
        LOG.info("attached rank %d LoRA (alpha %.1f) to %d control blocks", rank, alpha, len(self.blocks))

    def detach_lora(self) -> None:
        """ Removes all LoRA deltas; the base weights are untouched. """
        for block in self.blocks:
            block.lora = {}

    def lora_parameters(self) -> dict:
        """ Gets the A / B matrices by name. """
        params = {}
        for block in self.blocks:
            for delta in block.lora.values():
                params[delta.a.name] = delta.a
                params[delta.b.name] = delta.b
        return params

    def base_parameters(self) -> dict:
        """ Gets every parameter except the LoRA matrices. """
        lora = self.lora_parameters()
        return {name: tensor for name, tensor in self.named_parameters().items() if name not in lora}

    def projection_parameters(self) -> dict:
        """ Gets the injection projections by name. """
        return {tensor.name: tensor for role, tensor in self._params.items() if role.startswith("proj.")}

    def merged_copy(self) -> "ControlModule":
        """ Gets an inference copy whose LoRA deltas are folded into the block weights. """
        merged = copy.copy(self)
        merged._params = {role: Tensor(tensor.data.copy(), True, True, tensor.name)
                          for role, tensor in self._params.items()}
        merged.blocks = []
        for block in self.blocks:
            clone = block.copy(block.prefix)
            clone.lora = {role: copy.copy(delta) for role, delta in block.lora.items()}
            clone.merge_lora()
            merged.blocks.append(clone)
        merged.set_frozen(True)
        return merged

    def forward(self,
                context_rows: np.ndarray,
                coords: np.ndarray,
                cond: Conditioning,
                backbone: Backbone,
                attn_bias: Optional[np.ndarray] = None) -> dict:
        """ Computes one injection tensor per configured injection block.

        Args:
            context_rows: Control context rows N x (c + 1).
            coords: Original (t, h, w) coordinates N x 3.
            cond: Conditioning of the current forward pass.
            backbone: The backbone whose positional tables are shared.
            attn_bias: Optional additive N x N self-attention bias.

        Returns:
            dict: Backbone block index -> N x d tensor.

        Raises:
            ShapeError: If rows and coordinates do not match.
        """
        context_rows = np.asarray(context_rows)
        if context_rows.ndim != 2 or context_rows.shape[1] != self.config.latent_channels + 1:
            raise ShapeError(f"Expected N x {self.config.latent_channels + 1} context rows, got {context_rows.shape}.")
        if context_rows.shape[0] != np.shape(coords)[0]:
            raise ShapeError("Context rows and coordinates differ in count.")

        injections = {}
        with flop_component("control"):
            x = add(linear(Tensor(context_rows, dtype=self.dtype), self.param("patch.weight"),
                           self.param("patch.bias")),
                    backbone.positions(coords))
            for slot, block in enumerate(self.blocks):
                x = block.forward(x, cond, attn_bias)
                injections[self.config.injection_blocks[slot]] = linear(
                    x, self.param(f"proj.{slot}.weight"), self.param(f"proj.{slot}.bias"))
        return injections


class GlobalHook:
    """ Global modulation of one forward pass; keys / values are projected on first use. """

    def __init__(self, embedder: "GlobalEmbedder", tokens: Tensor):
        self.embedder = embedder
        self.tokens = tokens
        self._keys: Optional[Tensor] = None
        self._values: Optional[Tensor] = None

    def keys_values(self) -> tuple:
        """ Gets (K_g tokens, V_g tokens). """
        if self._keys is None:
            with flop_component("global"):
                self._keys = linear(self.tokens, self.embedder.param("k.weight"))
                self._values = linear(self.tokens, self.embedder.param("v.weight"))
        return self._keys, self._values

    def __call__(self, block_index: int, features: Tensor, queries: Tensor) -> Tensor:
        keys, values = self.keys_values()
        return self.embedder.modulate(block_index, features, queries, keys, values)


class GlobalEmbedder(ParamModule):
    """ Global context embedder G_psi. """

    def __init__(self, config: ModelConfig, backbone: Backbone, rng: Optional[RngState] = None):
        super().__init__("global")
        self.config = config
        init = ParamInit(rng if rng is not None else RngState(config.init_seed, GLOBAL_INIT_SEED))
        d = config.d_model

        self._new_param("patch.weight", backbone.param("patch.weight").data.copy())
        self._new_param("patch.bias", backbone.param("patch.bias").data.copy())
        self._new_param("k.weight", init.weight("global.k.weight", d, d))
        self._new_param("v.weight", init.weight("global.v.weight", d, d))
        for index in range(config.n_blocks):
            self._new_param(f"w0.{index}.weight", np.zeros((d, d)))
        self.cast(backbone.dtype)

    def patch_matches(self, backbone: Backbone) -> bool:
        """ True while the patch layer equals the backbone's token patch layer. """
        return bool(np.array_equal(self.param("patch.weight").data, backbone.param("patch.weight").data)
                    and np.array_equal(self.param("patch.bias").data, backbone.param("patch.bias").data))

    def token_count(self, frames: int) -> int:
        """ Number of global tokens for a clip length, F * (g/p)^2. """
        return frames * (self.config.global_extent // self.config.patch) ** 2

    def embed(self, background_down: np.ndarray, codec: LatentCodec, backbone: Backbone) -> Tensor:
        """ Encodes the downsampled background and applies the patch layer plus positions.

        Raises:
            ShapeError: If the frames are not g x g.
        """
        extent = self.config.global_extent
        if np.ndim(background_down) != 4 or np.shape(background_down)[1:3] != (extent, extent):
            raise ShapeError(f"Global input must be F x {extent} x {extent} x C, got {np.shape(background_down)}.")
        latent = codec.encode(background_down)
        rows = flatten_tokens(latent)
        coords = token_coords(latent.shape[:3])
        with flop_component("global"):
            return add(linear(Tensor(rows, dtype=self.dtype), self.param("patch.weight"), self.param("patch.bias")),
                       backbone.positions(coords))

    def make_hook(self, tokens: Tensor) -> GlobalHook:
        """ Gets the modulation hook of one forward pass. """
        if tokens.shape[0] == 0:
            raise ShapeError("The global token set is empty.")
        return GlobalHook(self, tokens)

    def modulate(self, block_index: int, features: Tensor, queries: Tensor, keys: Tensor, values: Tensor) -> Tensor:
        """ features + W0_i * Attention(queries, keys, values).

        Raises:
            ShapeError: If the global token set is empty or shapes differ.
        """
        if keys.shape[0] == 0:
            raise ShapeError("The global token set is empty.")
        if features.shape != queries.shape:
            raise ShapeError(f"Features {features.shape} and queries {queries.shape} differ.")
        with flop_component("global"):
            mixed = attention(queries, keys, values, self.config.n_heads)
            return add(features, linear(mixed, self.param(f"w0.{block_index}.weight")))


################################################################################
# Functions
################################################################################

def causal_pad_global(available: np.ndarray, total_frames: int) -> np.ndarray:
    """ Extends the frames 0..k that are available to total_frames by repeating frame k.

    Raises:
        ShapeError: If no frame is available or more frames than total_frames are given.
    """
    available = np.asarray(available)
    if available.ndim < 1 or available.shape[0] == 0:
        raise ShapeError("Causal padding needs at least one available frame.")
    if available.shape[0] > total_frames:
        raise ShapeError(f"{available.shape[0]} frames exceed the padded length {total_frames}.")
    last = available.shape[0] - 1
    return available[np.minimum(np.arange(total_frames), last)]
