""" Forward noising, training losses and the masked-token DDPM sampler.

    An edit is split into three phases so that benchmarks can time the
    transformer work alone: prepare_edit (encoding, context assembly),
    denoise_edit (the sampling loop) and finish_edit (scatter and decode).
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
from typing import Optional, Sequence, Union

import numpy as np

from pyEditCtrl.control_adapters import ControlModule, GlobalEmbedder
from pyEditCtrl.dit_backbone import Backbone, ContextCache, as_prompt_ids
from pyEditCtrl.latent_codec import LatentCodec, area_downsample, flatten_tokens
from pyEditCtrl.mask_pipeline import (ControlContext, TokenIndexSet, build_control_context, gather,
                                      make_background, scatter)
from pyEditCtrl.ret import ConfigError, EmptyMaskError, ShapeError
from pyEditCtrl.run_config import ModelConfig, SampleConfig
from pyEditCtrl.tensor import RngState, Tensor, add, mean, mul, scale, sub, tensor_sum

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

STAGE_TAG_DM = "dm"
STAGE_TAG_CDM = "cdm"
STAGE_TAG_PHI = "phi"
STAGE_TAG_PSI = "psi"

VARIANT_NAIVE = "naive"
VARIANT_NO_GPSI = "no_gpsi"
VARIANT_FULL = "full"
VARIANTS = (VARIANT_NAIVE, VARIANT_NO_GPSI, VARIANT_FULL)

Prompt = Union[str, Sequence[int], np.ndarray]

################################################################################
# Classes
################################################################################


class NoiseSchedule:
    """ Linear beta schedule of the forward process with the alpha-bar_0 = 1 convention. """

    def __init__(self, train_steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2):
        if train_steps <= 0 or not 0.0 < beta_start < beta_end < 1.0:
            raise ConfigError("Invalid noise schedule parameters.")
        self.train_steps = train_steps
        self.betas = np.linspace(beta_start, beta_end, train_steps, dtype=np.float64)
        self.alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - self.betas)])

    @classmethod
    def from_config(cls, config: ModelConfig) -> "NoiseSchedule":
        """ Builds the schedule of a model configuration. """
        return cls(config.train_timesteps, config.beta_start, config.beta_end)

    def alpha_bar(self, timestep: int) -> float:
        """ Gets alpha-bar_t for t in [0, T].

        Raises:
            ShapeError: If t is outside [0, T].
        """
        if timestep < 0 or timestep > self.train_steps:
            raise ShapeError(f"Timestep {timestep} is outside [0, {self.train_steps}].")
        return float(self.alpha_bars[timestep])

    def inference_timesteps(self, steps: int) -> list[int]:
        """ Gets the increasing inference subsequence round((i + 1) * T / steps), i < steps.

        Raises:
            ConfigError: If steps is not in [1, T].
        """
        if steps < 1 or steps > self.train_steps:
            raise ConfigError(f"Inference steps {steps} must lie in [1, {self.train_steps}].")
        return [int(round((index + 1) * self.train_steps / steps)) for index in range(steps)]

    def noisy(self, rows: np.ndarray, timestep: int, noise: np.ndarray) -> np.ndarray:
        """ sqrt(ab_t) * z + sqrt(1 - ab_t) * eps for a given eps. """
        alpha_bar = self.alpha_bar(timestep)
        return np.sqrt(alpha_bar) * rows + np.sqrt(1.0 - alpha_bar) * noise

    def add_noise(self, rows: np.ndarray, timestep: int, rng: RngState) -> tuple:
        """ Draws eps ~ N(0, 1) and noises the rows.

        Returns:
            tuple: (noisy rows, eps), both 64-bit.
        """
        self.alpha_bar(timestep)
        noise = rng.normal(np.shape(rows), dtype=np.float64)
        return self.noisy(np.asarray(rows, dtype=np.float64), timestep, noise), noise

    def posterior_step(self,
                       rows: np.ndarray,
                       noise_pred: np.ndarray,
                       timestep: int,
                       prev_timestep: int,
                       noise: Optional[np.ndarray] = None) -> np.ndarray:
        """ One DDPM ancestral step from t to t_prev with the posterior variance.

            With t_prev = 0 the step returns the predicted clean rows.
        """
        alpha_bar = self.alpha_bar(timestep)
        alpha_bar_prev = self.alpha_bar(prev_timestep)
        beta = 1.0 - alpha_bar / alpha_bar_prev
        clean = (rows - np.sqrt(1.0 - alpha_bar) * noise_pred) / np.sqrt(alpha_bar)
        mean_rows = (np.sqrt(alpha_bar_prev) * beta / (1.0 - alpha_bar)) * clean \
            + (np.sqrt(1.0 - beta) * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)) * rows
        variance = beta * (1.0 - alpha_bar_prev) / (1.0 - alpha_bar)
        if prev_timestep == 0 or noise is None:
            return mean_rows
        return mean_rows + np.sqrt(variance) * noise


@dataclass(eq=False)
class ModelBundle:
    """ Everything needed to train or run one model variant. """
    config: ModelConfig
    codec: LatentCodec
    schedule: NoiseSchedule
    backbone: Backbone
    control: Optional[ControlModule] = None
    global_embedder: Optional[GlobalEmbedder] = None
    control_full: Optional[ControlModule] = None
    variant: str = VARIANT_FULL

    @classmethod
    def create(cls, config: ModelConfig, with_adapters: bool = False) -> "ModelBundle":
        """ Builds freshly initialised models; with_adapters also creates the control module and G_psi. """
        backbone = Backbone(config)
        bundle = cls(config, LatentCodec(config.patch, config.channels), NoiseSchedule.from_config(config), backbone)
        if with_adapters:
            bundle.control = ControlModule(config, backbone)
            bundle.global_embedder = GlobalEmbedder(config, backbone)
        return bundle

    @property
    def dense_control(self) -> Optional[ControlModule]:
        """ The full-attention control module used by the dense sampler. """
        return self.control_full if self.control_full is not None else self.control


@dataclass(eq=False)
class LossBreakdown:
    """ A loss value with its per-token squared residual norms. """
    loss: Tensor
    residuals: np.ndarray
    stage: str

    @property
    def value(self) -> float:
        """ The loss as a Python float. """
        return float(self.loss.data)


@dataclass(eq=False)
class EditExample:
    """ One training clip prepared for the losses. """
    latent: np.ndarray
    context: ControlContext
    latent_mask: np.ndarray
    selection: TokenIndexSet
    prompt_ids: np.ndarray
    global_input: np.ndarray

    @property
    def weights(self) -> np.ndarray:
        """ Undilated latent mask restricted to the selected tokens. """
        return self.latent_mask.reshape(-1)[self.selection.indices].astype(np.float64)


@dataclass(eq=False)
class EditPlan:
    """ Everything an edit needs before the sampling loop. """
    source_latent: np.ndarray
    context: ControlContext
    latent_mask: np.ndarray
    selection: TokenIndexSet
    prompt_ids: np.ndarray
    global_input: np.ndarray


################################################################################
# Functions
################################################################################

def global_input(config: ModelConfig, background: np.ndarray) -> np.ndarray:
    """ Downsamples a background video to the fixed g x g global resolution. """
    return area_downsample(background, config.global_extent)


def prepare_example(models: ModelBundle,
                    video: np.ndarray,
                    mask: np.ndarray,
                    target: np.ndarray,
                    prompt: Prompt,
                    dilation_radius: int) -> EditExample:
    """ Encodes a training clip: target latent, control context, selection and global input. """
    context, latent_mask, selection = build_control_context(models.codec, video, mask, dilation_radius)
    return EditExample(latent=models.codec.encode(target),
                       context=context,
                       latent_mask=latent_mask,
                       selection=selection,
                       prompt_ids=as_prompt_ids(prompt, models.config.max_prompt_len),
                       global_input=global_input(models.config, make_background(video, mask)))


def token_residuals(prediction: Tensor, target: np.ndarray) -> np.ndarray:
    """ Per-token squared norm of prediction - target. """
    diff = prediction.data.astype(np.float64) - np.asarray(target, dtype=np.float64)
    return (diff * diff).sum(axis=1)


def mse_loss(prediction: Tensor, target: np.ndarray) -> Tensor:
    """ Mean squared residual over all tokens and channels. """
    residual = sub(prediction, Tensor(np.asarray(target), dtype=prediction.dtype))
    return mean(mul(residual, residual))


def masked_mse_loss(prediction: Tensor, target: np.ndarray, weights: np.ndarray) -> Tensor:
    """ Weighted mean over tokens of the per-token mean squared residual.

        Tokens of weight 0 contribute exactly nothing.

    Raises:
        EmptyMaskError: If all weights are zero.
    """
    weights = np.asarray(weights, dtype=np.float64)
    total = float(weights.sum())
    if total <= 0.0:
        raise EmptyMaskError("The loss weights are all zero.")
    residual = sub(prediction, Tensor(np.asarray(target), dtype=prediction.dtype))
    per_token = mean(mul(residual, residual), axis=1)
    weighted = mul(per_token, Tensor(weights, dtype=prediction.dtype))
    return scale(tensor_sum(weighted), 1.0 / total)


def _batch_mean(losses: list) -> Tensor:
    total = losses[0]
    for loss in losses[1:]:
        total = add(total, loss)
    return scale(total, 1.0 / len(losses))


def _sample_timestep(models: ModelBundle, rng: RngState) -> int:
    return int(rng.integers(1, models.schedule.train_steps + 1))


def loss_dm(models: ModelBundle, examples: list, rng: RngState) -> LossBreakdown:
    """ Plain diffusion loss of the backbone over all tokens of the target clips. """
    losses, residuals = [], []
    for index, example in enumerate(examples):
        sample_rng = rng.derive(index)
        timestep = _sample_timestep(models, sample_rng)
        rows = flatten_tokens(example.latent)
        noisy, noise = models.schedule.add_noise(rows, timestep, sample_rng)
        coords = TokenIndexSet.full(example.selection.grid_shape).coords()
        prediction = models.backbone.predict_noise(noisy, coords, timestep, example.prompt_ids)
        losses.append(mse_loss(prediction, noise))
        residuals.append(token_residuals(prediction, noise))
    return LossBreakdown(_batch_mean(losses), np.concatenate(residuals), STAGE_TAG_DM)


def loss_cdm(models: ModelBundle, examples: list, rng: RngState) -> LossBreakdown:
    """ Conditional diffusion loss with the control module on the full context and full attention.

    Raises:
        ConfigError: If the bundle has no control module.
    """
    if models.control is None:
        raise ConfigError("loss_cdm needs a control module.")
    losses, residuals = [], []
    for index, example in enumerate(examples):
        sample_rng = rng.derive(index)
        timestep = _sample_timestep(models, sample_rng)
        rows = flatten_tokens(example.latent)
        noisy, noise = models.schedule.add_noise(rows, timestep, sample_rng)
        coords = TokenIndexSet.full(example.selection.grid_shape).coords()
        cond = models.backbone.condition(timestep, example.prompt_ids)
        injections = models.control.forward(example.context.full, coords, cond, models.backbone)
        prediction = models.backbone.predict_noise(noisy, coords, timestep, cond=cond, injections=injections)
        losses.append(mse_loss(prediction, noise))
        residuals.append(token_residuals(prediction, noise))
    return LossBreakdown(_batch_mean(losses), np.concatenate(residuals), STAGE_TAG_CDM)


def _masked_loss(models: ModelBundle, examples: list, rng: RngState, use_global: bool) -> LossBreakdown:
    if models.control is None:
        raise ConfigError("The masked losses need a control module.")
    if use_global and models.global_embedder is None:
        raise ConfigError("loss_psi needs a global context embedder.")
    losses, residuals = [], []
    for index, example in enumerate(examples):
        sample_rng = rng.derive(index)
        timestep = _sample_timestep(models, sample_rng)
        rows = gather(example.latent, example.selection)
        noisy, noise = models.schedule.add_noise(rows, timestep, sample_rng)
        coords = example.selection.coords()
        cond = models.backbone.condition(timestep, example.prompt_ids)
        injections = models.control.forward(example.context.local, coords, cond, models.backbone)
        hook = None
        if use_global:
            tokens = models.global_embedder.embed(example.global_input, models.codec, models.backbone)
            hook = models.global_embedder.make_hook(tokens)
        prediction = models.backbone.predict_noise(noisy, coords, timestep, cond=cond, injections=injections,
                                                   global_hook=hook)
        losses.append(masked_mse_loss(prediction, noise, example.weights))
        residuals.append(token_residuals(prediction, noise) * example.weights)
    return LossBreakdown(_batch_mean(losses), np.concatenate(residuals),
                         STAGE_TAG_PSI if use_global else STAGE_TAG_PHI)


def loss_phi(models: ModelBundle, examples: list, rng: RngState) -> LossBreakdown:
    """ Mask-aware loss of the sparse local encoder (dilated selection, undilated weights). """
    return _masked_loss(models, examples, rng, use_global=False)


def loss_psi(models: ModelBundle, examples: list, rng: RngState) -> LossBreakdown:
    """ As loss_phi, with the global context modulation in every block. """
    return _masked_loss(models, examples, rng, use_global=True)


def piecewise_loss(iteration: int, switch: int, models: ModelBundle, examples: list, rng: RngState) -> LossBreakdown:
    """ loss_phi while iteration < switch, loss_psi from iteration == switch on.

    Raises:
        ConfigError: If the switch iteration is negative.
    """
    if switch < 0:
        raise ConfigError(f"Switch iteration {switch} is negative.")
    if iteration < switch:
        return loss_phi(models, examples, rng)
    return loss_psi(models, examples, rng)


def prepare_edit(models: ModelBundle,
                 video: np.ndarray,
                 mask: np.ndarray,
                 prompt: Prompt,
                 dilation_radius: int) -> EditPlan:
    """ Encodes the source, assembles the control context and the global input of an edit.

    Raises:
        EmptyMaskError: If the mask is empty.
    """
    context, latent_mask, selection = build_control_context(models.codec, video, mask, dilation_radius)
    return EditPlan(source_latent=models.codec.encode(video),
                    context=context,
                    latent_mask=latent_mask,
                    selection=selection,
                    prompt_ids=as_prompt_ids(prompt, models.config.max_prompt_len),
                    global_input=global_input(models.config, make_background(video, mask)))


def _run_sampler(models: ModelBundle,
                 prompt_ids: np.ndarray,
                 coords: np.ndarray,
                 rng: RngState,
                 steps: int,
                 control: Optional[ControlModule] = None,
                 control_rows: Optional[np.ndarray] = None,
                 global_tokens: Optional[Tensor] = None,
                 context: Optional[ContextCache] = None) -> np.ndarray:
    timesteps = models.schedule.inference_timesteps(steps)
    rows = rng.normal((np.shape(coords)[0], models.config.latent_channels), dtype=np.float64)

    for position in reversed(range(len(timesteps))):
        timestep = timesteps[position]
        prev_timestep = timesteps[position - 1] if position > 0 else 0
        cond = models.backbone.condition(timestep, prompt_ids)
        injections = None
        if control is not None:
            injections = control.forward(control_rows, coords, cond, models.backbone)
        hook = models.global_embedder.make_hook(global_tokens) if global_tokens is not None else None
        noise_pred = models.backbone.predict_noise(rows, coords, timestep, cond=cond, injections=injections,
                                                   global_hook=hook, context=context)
        noise = rng.normal(rows.shape, dtype=np.float64) if prev_timestep > 0 else None
        rows = models.schedule.posterior_step(rows, noise_pred.data.astype(np.float64), timestep, prev_timestep,
                                              noise)
    return rows


def denoise_edit(models: ModelBundle,
                 plan: EditPlan,
                 seed: Union[int, RngState],
                 steps: int,
                 use_control: bool = True,
                 use_global: bool = True,
                 context: Optional[ContextCache] = None,
                 coords: Optional[np.ndarray] = None) -> np.ndarray:
    """ Runs the sparse DDPM loop over the selected tokens.

    Args:
        models: The model bundle; G_psi is used only if present and use_global is set.
        plan: The prepared edit.
        seed: Seed (or stream) of the initial noise and the ancestral noise.
        steps: Number of inference steps.
        use_control: Adds the control injections.
        use_global: Adds the global modulation.
        context: Read-only context keys / values.
        coords: Coordinates to use instead of the selection's own (propagation windows).

    Returns:
        np.ndarray: Final clean rows N_sel x c (64-bit).
    """
    rng = seed if isinstance(seed, RngState) else RngState(seed)
    coords = plan.selection.coords() if coords is None else coords
    global_tokens = None
    if use_global and models.global_embedder is not None:
        global_tokens = models.global_embedder.embed(plan.global_input, models.codec, models.backbone)
    control = models.control if use_control else None
    rows = _run_sampler(models, plan.prompt_ids, coords, rng, steps, control, plan.context.local, global_tokens,
                        context)
    LOG.debug("denoised %d of %d tokens in %d steps", plan.selection.count, plan.selection.total, steps)
    return rows


def denoise_full(models: ModelBundle, plan: EditPlan, seed: int, steps: int) -> np.ndarray:
    """ Runs the DDPM loop over every token with full attention and the full-context control module.

    Returns:
        np.ndarray: Final clean rows of the whole grid, N_total x c.
    """
    rng = RngState(seed)
    full = TokenIndexSet.full(plan.selection.grid_shape)
    return _run_sampler(models, plan.prompt_ids, full.coords(), rng, steps, models.dense_control,
                        plan.context.full)


def decode_video(models: ModelBundle, latent: np.ndarray) -> np.ndarray:
    """ Decodes a latent grid and clips the pixels to [0, 1]. """
    return np.clip(models.codec.decode(latent), 0.0, 1.0)


def finish_edit(models: ModelBundle, plan: EditPlan, rows: np.ndarray) -> np.ndarray:
    """ Scatters the generated rows into the source latent and decodes the video. """
    return decode_video(models, scatter(rows, plan.selection, plan.source_latent))


def sample_edit(models: ModelBundle,
                video: np.ndarray,
                mask: np.ndarray,
                prompt: Prompt,
                seed: int,
                config: Optional[SampleConfig] = None) -> np.ndarray:
    """ Sparse edit: only tokens inside the dilated mask are denoised, with control and global context.

    Raises:
        EmptyMaskError: If the mask is empty.
    """
    config = config or SampleConfig()
    config.validate()
    plan = prepare_edit(models, video, mask, prompt, config.dilation_radius)
    rows = denoise_edit(models, plan, seed, config.steps)
    return finish_edit(models, plan, rows)


def sample_full(models: ModelBundle,
                video: np.ndarray,
                mask: np.ndarray,
                prompt: Prompt,
                seed: int,
                config: Optional[SampleConfig] = None) -> np.ndarray:
    """ Dense baseline: every token denoised with full attention, only the dilated rows are pasted back. """
    config = config or SampleConfig()
    config.validate()
    plan = prepare_edit(models, video, mask, prompt, config.dilation_radius)
    rows = denoise_full(models, plan, seed, config.steps)
    return finish_edit(models, plan, gather(rows, plan.selection))


def sample_base_masked(models: ModelBundle,
                       video: np.ndarray,
                       mask: np.ndarray,
                       prompt: Prompt,
                       seed: int,
                       config: Optional[SampleConfig] = None) -> np.ndarray:
    """ Sparse edit with the frozen backbone alone (no control, no global context). """
    config = config or SampleConfig()
    config.validate()
    plan = prepare_edit(models, video, mask, prompt, config.dilation_radius)
    rows = denoise_edit(models, plan, seed, config.steps, use_control=False, use_global=False)
    return finish_edit(models, plan, rows)
