""" The frozen diffusion transformer that predicts the noise of latent tokens.

    The backbone works on any subset of the token grid: every token keeps its
    original (t, h, w) coordinate, so a sparse subset sees the same positional
    geometry as the full grid. Blocks accept additive injections after the
    feed-forward sublayer, a global modulation hook after the prompt
    cross-attention, and read-only context keys / values.

    Weight names: "backbone.patch.*", "backbone.pos.{t,h,w}",
    "backbone.time.{w1,b1,w2,b2}", "backbone.prompt.table",
    "backbone.blocks.<i>.<role>" with the roles listed in BLOCK_ROLES and
    "backbone.head.*".
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
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from pyEditCtrl.ret import ConfigError, PromptError, ShapeError
from pyEditCtrl.run_config import ModelConfig
from pyEditCtrl.tensor import (RngState, Tensor, add, concat, flop_component, gelu, layer_norm, linear, matmul,
                               mul, parameter, reshape, scale, silu, softmax_rows, swapaxes, take_rows)

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

PROMPT_VOCABULARY = (
    "<pad>", "<bos>", "match-scene", "fill",
    "red", "green", "blue", "yellow", "cyan", "magenta", "white", "black",
    "striped", "dotted", "smooth", "noisy", "bright", "dark", "warm", "cool",
    "keep", "remove", "replace", "object", "background", "sky", "water", "grass",
    "wall", "texture", "color", "scene",
)
BOS_TOKEN = 1

LINEAR_ROLES = ("attn.q", "attn.k", "attn.v", "attn.o", "cross.q", "cross.k", "cross.v", "cross.o",
                "ffn.in", "ffn.out")
LORA_ROLES = ("attn.q", "attn.k", "attn.v", "attn.o", "ffn.in", "ffn.out")
BLOCK_ROLES = ("ada", "ln1", "ln2", "ln3") + LINEAR_ROLES

POSITION_SCALE = 0.02
PROMPT_SCALE = 0.1
TIME_PERIOD = 10000.0
CONTEXT_TIMESTEP = 0

GlobalHook = Callable[[int, Tensor, Tensor], Tensor]

################################################################################
# Classes
################################################################################


class ParamModule:
    """ Owner of named parameter tensors; child modules contribute theirs with their own prefix. """

    def __init__(self, prefix: str):
        self.prefix = prefix
        self._params: dict[str, Tensor] = {}

    def _new_param(self, role: str, data: np.ndarray, frozen: bool = False) -> Tensor:
        tensor = parameter(np.asarray(data, dtype=np.float32), f"{self.prefix}.{role}", frozen)
        self._params[role] = tensor
        return tensor

    def param(self, role: str) -> Tensor:
        """ Gets an own parameter by role. """
        return self._params[role]

    def children(self) -> list["ParamModule"]:
        """ Gets the sub-modules. """
        return []

    def named_parameters(self) -> dict[str, Tensor]:
        """ Gets every parameter of the module tree by full name. """
        params = {tensor.name: tensor for tensor in self._params.values()}
        for child in self.children():
            params.update(child.named_parameters())
        return params

    def set_frozen(self, frozen: bool) -> None:
        """ Flags every parameter of the module tree as frozen or trainable. """
        for tensor in self.named_parameters().values():
            tensor.frozen = frozen

    def cast(self, dtype) -> "ParamModule":
        """ Converts every parameter, e.g. to 64-bit for gradient checks. """
        for tensor in self.named_parameters().values():
            tensor.cast_(dtype)
        return self

    @property
    def dtype(self) -> np.dtype:
        """ The element type of the parameters. """
        return next(iter(self._params.values())).dtype


class ParamInit:
    """ Derives one independent random stream per parameter name. """

    def __init__(self, rng: RngState):
        self.rng = rng

    def normal(self, name: str, shape: tuple, std: float) -> np.ndarray:
        """ Draws N(0, std^2) values for a parameter. """
        return self.rng.derive(zlib.crc32(name.encode("utf-8"))).normal(shape) * np.float32(std)

    def weight(self, name: str, d_out: int, d_in: int) -> np.ndarray:
        """ Draws a d_out x d_in weight scaled by 1/sqrt(d_in). """
        return self.normal(name, (d_out, d_in), 1.0 / np.sqrt(d_in))


@dataclass(eq=False)
class LoraDelta:
    """ Low-rank delta scale * A @ B of a d_out x d_in weight; B starts at zero. """
    a: Tensor
    b: Tensor
    scale: float

    @property
    def rank(self) -> int:
        """ The rank of the delta. """
        return self.a.shape[1]

    def dense(self) -> np.ndarray:
        """ Materialises the delta as a d_out x d_in array. """
        return self.scale * (self.a.data @ self.b.data)


@dataclass(eq=False)
class Conditioning:
    """ Timestep embedding (1 x d) and prompt embedding (P x d) shared by all blocks of one forward. """
    timestep: int
    temb: Tensor
    prompt: Tensor


@dataclass(eq=False)
class ContextCache:
    """ Per-block self-attention keys / values of clean context tokens. """
    keys: list = field(default_factory=list)
    values: list = field(default_factory=list)

    @property
    def count(self) -> int:
        """ Number of context tokens. """
        return self.keys[0].shape[0] if self.keys else 0


class TransformerBlock(ParamModule):
    """ Self-attention, prompt cross-attention and GELU feed-forward with timestep scale / shift. """

    def __init__(self, prefix: str, index: int, d_model: int, n_heads: int, init: Optional[ParamInit] = None):
        super().__init__(prefix)
        if d_model % n_heads:
            raise ConfigError(f"n_heads {n_heads} does not divide d_model {d_model}.")
        self.index = index
        self.d_model = d_model
        self.n_heads = n_heads
        self.lora: dict[str, LoraDelta] = {}
        if init is None:
            return

        d = d_model
        self._new_param("ada.weight", np.zeros((4 * d, d)))
        self._new_param("ada.bias", np.zeros(4 * d))
        for norm in ("ln1", "ln2", "ln3"):
            self._new_param(f"{norm}.gain", np.ones(d))
            self._new_param(f"{norm}.bias", np.zeros(d))
        for role in LINEAR_ROLES:
            d_out, d_in = self.linear_shape(role)
            self._new_param(f"{role}.weight", init.weight(f"{prefix}.{role}.weight", d_out, d_in))
            self._new_param(f"{role}.bias", np.zeros(d_out))

    def linear_shape(self, role: str) -> tuple:
        """ Gets the (d_out, d_in) of a linear role. """
        d = self.d_model
        if role == "ffn.in":
            return 4 * d, d
        if role == "ffn.out":
            return d, 4 * d
        return d, d

    def named_parameters(self) -> dict[str, Tensor]:
        params = super().named_parameters()
        for delta in self.lora.values():
            params[delta.a.name] = delta.a
            params[delta.b.name] = delta.b
        return params

    def copy(self, prefix: str) -> "TransformerBlock":
        """ Gets a block with copied base weights (no LoRA) under a new prefix. """
        clone = TransformerBlock(prefix, self.index, self.d_model, self.n_heads)
        for role, tensor in self._params.items():
            clone._new_param(role, tensor.data.copy(), tensor.frozen)
            clone._params[role].cast_(tensor.dtype)
        return clone

    def attach_lora(self, rank: int, alpha: float, init: ParamInit) -> None:
        """ Adds a LoRA delta (A random, B zero) to every attention and feed-forward matrix. """
        for role in LORA_ROLES:
            d_out, d_in = self.linear_shape(role)
            name = f"{self.prefix}.lora.{role}"
            a_mat = parameter(init.normal(f"{name}.a", (d_out, rank), 1.0 / np.sqrt(rank)), f"{name}.a")
            b_mat = parameter(np.zeros((rank, d_in), dtype=np.float32), f"{name}.b")
            a_mat.cast_(self.dtype)
            b_mat.cast_(self.dtype)
            self.lora[role] = LoraDelta(a_mat, b_mat, alpha / rank)

    def merge_lora(self) -> None:
        """ Folds every LoRA delta into its base weight and removes the deltas. """
        for role, delta in self.lora.items():
            weight = self.param(f"{role}.weight")
            weight.data = (weight.data + delta.dense()).astype(weight.dtype)
        self.lora = {}

    def project(self, role: str, x: Tensor) -> Tensor:
        """ Applies a linear role, including its LoRA delta when attached. """
        out = linear(x, self.param(f"{role}.weight"), self.param(f"{role}.bias"))
        delta = self.lora.get(role)
        if delta is not None:
            out = add(out, scale(linear(linear(x, delta.b), delta.a), delta.scale))
        return out

    def modulation(self, temb: Tensor) -> list[Tensor]:
        """ Gets (scale1, shift1, scale3, shift3), each 1 x d. """
        parts = reshape(linear(temb, self.param("ada.weight"), self.param("ada.bias")), (4, self.d_model))
        return [take_rows(parts, np.array([index])) for index in range(4)]

    def self_attention(self,
                       x: Tensor,
                       attn_bias: Optional[np.ndarray] = None,
                       context_kv: Optional[tuple] = None,
                       capture: Optional[ContextCache] = None) -> Tensor:
        """ Multi-head self-attention over the given tokens, optionally also reading context keys / values.

        Args:
            x: Normalised token features N x d.
            attn_bias: Optional additive N x N bias (-inf masks a key).
            context_kv: Optional (keys, values) arrays of context tokens, read-only.
            capture: If given, the keys / values of x are appended to it.
        """
        queries = self.project("attn.q", x)
        keys = self.project("attn.k", x)
        values = self.project("attn.v", x)
        if capture is not None:
            capture.keys.append(keys.data.copy())
            capture.values.append(values.data.copy())
        if context_kv is not None:
            keys = concat([Tensor(context_kv[0], dtype=x.dtype), keys], axis=0)
            values = concat([Tensor(context_kv[1], dtype=x.dtype), values], axis=0)
            if attn_bias is not None:
                attn_bias = np.concatenate([np.zeros((x.shape[0], context_kv[0].shape[0])), attn_bias], axis=1)
        return self.project("attn.o", attention(queries, keys, values, self.n_heads, attn_bias))

    def forward(self,
                x: Tensor,
                cond: Conditioning,
                attn_bias: Optional[np.ndarray] = None,
                context_kv: Optional[tuple] = None,
                global_hook: Optional[GlobalHook] = None,
                injection: Optional[Tensor] = None,
                capture: Optional[ContextCache] = None) -> Tensor:
        """ Runs the block on N x d token features. """
        scale1, shift1, scale3, shift3 = self.modulation(cond.temb)

        normed = _modulate(layer_norm(x, self.param("ln1.gain"), self.param("ln1.bias")), scale1, shift1)
        x = add(x, self.self_attention(normed, attn_bias, context_kv, capture))

        normed = layer_norm(x, self.param("ln2.gain"), self.param("ln2.bias"))
        queries = self.project("cross.q", normed)
        keys = self.project("cross.k", cond.prompt)
        values = self.project("cross.v", cond.prompt)
        cross = self.project("cross.o", attention(queries, keys, values, self.n_heads))
        if global_hook is not None:
            cross = global_hook(self.index, cross, queries)
        x = add(x, cross)

        normed = _modulate(layer_norm(x, self.param("ln3.gain"), self.param("ln3.bias")), scale3, shift3)
        ffn = self.project("ffn.out", gelu(self.project("ffn.in", normed)))
        if injection is not None:
            ffn = add(ffn, injection)
        return add(x, ffn)


class Backbone(ParamModule):
    """ The text-to-video diffusion transformer eps_theta. """

    def __init__(self, config: ModelConfig, rng: Optional[RngState] = None):
        super().__init__("backbone")
        config.validate()
        if config.vocab_size < len(PROMPT_VOCABULARY):
            raise ConfigError(f"vocab_size {config.vocab_size} is below the {len(PROMPT_VOCABULARY)} prompt words.")
        self.config = config
        init = ParamInit(rng if rng is not None else RngState(config.init_seed))
        d = config.d_model
        c = config.latent_channels

        self._new_param("patch.weight", init.weight("backbone.patch.weight", d, c))
        self._new_param("patch.bias", np.zeros(d))
        self._new_param("pos.t", init.normal("backbone.pos.t", (config.max_frames, d), POSITION_SCALE))
        self._new_param("pos.h", init.normal("backbone.pos.h", (config.max_extent, d), POSITION_SCALE))
        self._new_param("pos.w", init.normal("backbone.pos.w", (config.max_extent, d), POSITION_SCALE))
        self._new_param("time.w1", init.weight("backbone.time.w1", d, d))
        self._new_param("time.b1", np.zeros(d))
        self._new_param("time.w2", init.weight("backbone.time.w2", d, d))
        self._new_param("time.b2", np.zeros(d))
        self._new_param("prompt.table", init.normal("backbone.prompt.table", (config.vocab_size, d), PROMPT_SCALE))
        self.blocks = [TransformerBlock(f"backbone.blocks.{index}", index, d, config.n_heads, init)
                       for index in range(config.n_blocks)]
        self._new_param("head.ln.gain", np.ones(d))
        self._new_param("head.ln.bias", np.zeros(d))
        self._new_param("head.weight", init.weight("backbone.head.weight", c, d))
        self._new_param("head.bias", np.zeros(c))

    def children(self) -> list[ParamModule]:
        return list(self.blocks)

    def as_input(self, rows: Union[np.ndarray, Tensor]) -> Tensor:
        """ Wraps token rows as an untracked tensor of the model dtype. """
        if isinstance(rows, Tensor):
            return rows
        return Tensor(np.asarray(rows, dtype=self.dtype))

    def positions(self, coords: np.ndarray) -> Tensor:
        """ Sum of the three positional table rows at the original (t, h, w) coordinates.

        Raises:
            ShapeError: If a coordinate lies outside the tables.
        """
        coords = np.asarray(coords, dtype=np.int64)
        if coords.ndim != 2 or coords.shape[1] != 3:
            raise ShapeError(f"Coordinates must be N x 3, got {coords.shape}.")
        limits = (self.config.max_frames, self.config.max_extent, self.config.max_extent)
        if coords.size and (coords.min() < 0 or np.any(coords.max(axis=0) >= limits)):
            raise ShapeError(f"Token coordinate out of range {limits}.")
        return add(add(take_rows(self.param("pos.t"), coords[:, 0]),
                       take_rows(self.param("pos.h"), coords[:, 1])),
                   take_rows(self.param("pos.w"), coords[:, 2]))

    def embed_tokens(self, rows: Union[np.ndarray, Tensor], coords: np.ndarray) -> Tensor:
        """ Patch projection of latent rows plus positional terms at their original coordinates.

        Raises:
            ShapeError: If rows and coordinates do not match.
        """
        rows = self.as_input(rows)
        if rows.data.ndim != 2 or rows.shape[1] != self.config.latent_channels:
            raise ShapeError(f"Expected N x {self.config.latent_channels} rows, got {rows.shape}.")
        if rows.shape[0] != np.shape(coords)[0]:
            raise ShapeError(f"{rows.shape[0]} rows do not match {np.shape(coords)[0]} coordinates.")
        return add(linear(rows, self.param("patch.weight"), self.param("patch.bias")), self.positions(coords))

    def timestep_embedding(self, timestep: int) -> Tensor:
        """ Sinusoidal embedding passed through the time MLP, 1 x d. """
        d = self.config.d_model
        half = d // 2
        freqs = np.exp(-np.log(TIME_PERIOD) * np.arange(half) / half)
        angles = float(timestep) * freqs
        sinusoid = np.concatenate([np.sin(angles), np.cos(angles), np.zeros(d - 2 * half)])[None, :]
        hidden = silu(linear(Tensor(sinusoid, dtype=self.dtype), self.param("time.w1"), self.param("time.b1")))
        return linear(hidden, self.param("time.w2"), self.param("time.b2"))

    def condition(self, timestep: int, prompt_ids: np.ndarray) -> Conditioning:
        """ Builds the conditioning of one forward pass.

        Raises:
            ShapeError: If the timestep is outside [0, T] or a prompt id is invalid.
        """
        if timestep < 0 or timestep > self.config.train_timesteps:
            raise ShapeError(f"Timestep {timestep} is outside [0, {self.config.train_timesteps}].")
        prompt_ids = np.asarray(prompt_ids, dtype=np.int64)
        if prompt_ids.ndim != 1 or not 1 <= prompt_ids.size <= self.config.max_prompt_len:
            raise ShapeError(f"A prompt needs 1 to {self.config.max_prompt_len} tokens.")
        if prompt_ids.min() < 0 or prompt_ids.max() >= self.config.vocab_size:
            raise ShapeError("Prompt token id out of vocabulary range.")
        with flop_component("backbone"):
            temb = self.timestep_embedding(timestep)
        return Conditioning(int(timestep), temb, take_rows(self.param("prompt.table"), prompt_ids))

    def _check_injections(self, injections: dict, count: int) -> None:
        for index, tensor in injections.items():
            if index not in self.config.injection_blocks:
                raise ShapeError(f"Block {index} is not an injection site {self.config.injection_blocks}.")
            if tensor.shape != (count, self.config.d_model):
                raise ShapeError(f"Injection for block {index} has shape {tensor.shape}, expected "
                                 f"{(count, self.config.d_model)}.")

    def predict_noise(self,
                      rows: Union[np.ndarray, Tensor],
                      coords: np.ndarray,
                      timestep: int,
                      prompt_ids: Optional[np.ndarray] = None,
                      cond: Optional[Conditioning] = None,
                      injections: Optional[dict] = None,
                      global_hook: Optional[GlobalHook] = None,
                      context: Optional[ContextCache] = None,
                      attn_bias: Optional[np.ndarray] = None) -> Tensor:
        """ Predicts the noise of noisy latent rows.

        Args:
            rows: Noisy latent rows N x c.
            coords: Original (t, h, w) coordinates N x 3.
            timestep: Diffusion timestep in [1, T].
            prompt_ids: Prompt token ids (ignored if cond is given).
            cond: Precomputed conditioning, shared with the control module.
            injections: Block index -> N x d tensor added to that block's feed-forward output.
            global_hook: Called as hook(block, cross_features, cross_queries) after each prompt cross-attention.
            context: Read-only keys / values of clean context tokens.
            attn_bias: Additive N x N self-attention bias.

        Returns:
            Tensor: Predicted noise N x c.

        Raises:
            ShapeError: On any shape mismatch or a timestep outside [1, T].
        """
        if timestep < 1 or timestep > self.config.train_timesteps:
            raise ShapeError(f"Timestep {timestep} is outside [1, {self.config.train_timesteps}].")
        if cond is None:
            if prompt_ids is None:
                raise ShapeError("predict_noise needs prompt ids or a conditioning.")
            cond = self.condition(timestep, prompt_ids)
        elif cond.timestep != timestep:
            raise ShapeError(f"Conditioning is for timestep {cond.timestep}, not {timestep}.")
        injections = injections or {}
        count = np.shape(coords)[0]
        self._check_injections(injections, count)
        if attn_bias is not None and np.shape(attn_bias) != (count, count):
            raise ShapeError(f"Attention bias must be {count} x {count}.")
        if context is not None and len(context.keys) != len(self.blocks):
            raise ShapeError("The context cache does not match the block count.")

        with flop_component("backbone"):
            x = self.embed_tokens(rows, coords)
            for block in self.blocks:
                context_kv = (context.keys[block.index], context.values[block.index]) if context else None
                x = block.forward(x, cond, attn_bias, context_kv, global_hook, injections.get(block.index))
            x = layer_norm(x, self.param("head.ln.gain"), self.param("head.ln.bias"))
            return linear(x, self.param("head.weight"), self.param("head.bias"))

    def encode_context(self, rows: np.ndarray, coords: np.ndarray, prompt_ids: np.ndarray) -> ContextCache:
        """ Runs clean context tokens through all blocks at timestep 0 and keeps their keys / values. """
        cond = self.condition(CONTEXT_TIMESTEP, prompt_ids)
        cache = ContextCache()
        with flop_component("backbone"):
            x = self.embed_tokens(rows, coords)
            for block in self.blocks:
                x = block.forward(x, cond, capture=cache)
        LOG.debug("encoded %d context tokens", cache.count)
        return cache


################################################################################
# Functions
################################################################################

def _modulate(x: Tensor, scale_row: Tensor, shift_row: Tensor) -> Tensor:
    return add(mul(x, add(scale_row, 1.0)), shift_row)


def attention(queries: Tensor, keys: Tensor, values: Tensor, n_heads: int,
              attn_bias: Optional[np.ndarray] = None) -> Tensor:
    """ Scaled dot-product multi-head attention.

    Args:
        queries: N x d.
        keys: M x d.
        values: M x d.
        n_heads: Number of heads, must divide d.
        attn_bias: Optional additive N x M bias.

    Returns:
        Tensor: N x d.

    Raises:
        ShapeError: If the head count does not divide d, or a query row is fully masked.
    """
    count, width = queries.shape
    key_count = keys.shape[0]
    if width % n_heads or keys.shape[1] != width or values.shape != keys.shape:
        raise ShapeError(f"attention shapes {queries.shape}, {keys.shape}, {values.shape} with {n_heads} heads.")
    if key_count == 0:
        raise ShapeError("attention needs at least one key.")
    head_width = width // n_heads

    q_heads = swapaxes(reshape(queries, (count, n_heads, head_width)), 0, 1)
    k_heads = swapaxes(reshape(keys, (key_count, n_heads, head_width)), 0, 1)
    v_heads = swapaxes(reshape(values, (key_count, n_heads, head_width)), 0, 1)

    scores = scale(matmul(q_heads, swapaxes(k_heads, 1, 2)), 1.0 / np.sqrt(head_width))
    if attn_bias is not None:
        scores = add(scores, Tensor(np.asarray(attn_bias)[None, :, :], dtype=scores.dtype))
    mixed = matmul(softmax_rows(scores), v_heads)
    return reshape(swapaxes(mixed, 0, 1), (count, width))


def tokenize_prompt(text: str, max_len: int) -> np.ndarray:
    """ Maps a symbolic prompt ("fill:red", "match-scene", "keep smooth wall") to token ids.

        Words are separated by white space or ':'; a <bos> token is always prepended.

    Raises:
        PromptError: On an unknown word or a prompt longer than max_len tokens.
    """
    words = text.lower().replace(":", " ").split()
    ids = [BOS_TOKEN]
    for word in words:
        if word not in PROMPT_VOCABULARY:
            raise PromptError(f"Unknown prompt word '{word}'.")
        ids.append(PROMPT_VOCABULARY.index(word))
    if len(ids) > max_len:
        raise PromptError(f"Prompt '{text}' has {len(ids)} tokens, at most {max_len} are allowed.")
    return np.asarray(ids, dtype=np.int64)


def as_prompt_ids(prompt: Union[str, Sequence[int], np.ndarray], max_len: int) -> np.ndarray:
    """ Accepts prompt text or token ids. """
    if isinstance(prompt, str):
        return tokenize_prompt(prompt, max_len)
    return np.asarray(prompt, dtype=np.int64)
