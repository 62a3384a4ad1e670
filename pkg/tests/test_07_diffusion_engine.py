""" Tests for the noise schedule, the training losses and the masked-token sampler. """
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

from pyEditCtrl.diffusion_engine import (ModelBundle, NoiseSchedule, decode_video, denoise_edit, loss_cdm, loss_dm,
                                         loss_phi, loss_psi, masked_mse_loss, piecewise_loss, prepare_edit,
                                         prepare_example, sample_base_masked, sample_edit, sample_full)
from pyEditCtrl.mask_pipeline import scatter, upsample_mask
from pyEditCtrl.ret import ConfigError, EmptyMaskError
from pyEditCtrl.run_config import SampleConfig
from pyEditCtrl.tensor import GradTape, RngState, Tensor, backward, finite_difference_check

from tests.conftest import box_mask, make_tiny_config, random_video

################################################################################
# Variables
################################################################################

FAST_SAMPLING = SampleConfig(steps=3, seed=0, dilation_radius=1)

################################################################################
# Classes
################################################################################

################################################################################
# Functions
################################################################################


def _models64(lora_rank: int = 2) -> ModelBundle:
    """ Tiny bundle in 64-bit with LoRA and non-zero adapter outputs. """
    models = ModelBundle.create(make_tiny_config(), with_adapters=True)
    models.backbone.cast(np.float64)
    models.control.cast(np.float64)
    models.global_embedder.cast(np.float64)
    models.control.attach_lora(lora_rank, models.config.lora_alpha)
    for index, (name, tensor) in enumerate(sorted(models.control.named_parameters().items())):
        if name.endswith(".b") or ".proj." in name:
            tensor.data = RngState(20, index).normal(tensor.shape, dtype=np.float64) * 0.05
    for index in range(models.config.n_blocks):
        w0 = models.global_embedder.param(f"w0.{index}.weight")
        w0.data = RngState(21, index).normal(w0.shape, dtype=np.float64) * 0.05
    return models


def _examples(models: ModelBundle, count: int = 1) -> list:
    video = random_video(30)
    return [prepare_example(models, video, box_mask(top=4 + 4 * index), random_video(31 + index), "fill red", 1)
            for index in range(count)]


def test_schedule():
    """ Linear betas with alpha-bar_0 = 1 and the inference subsequence. """
    schedule = NoiseSchedule(1000, 1e-4, 2e-2)

    # TC: alpha-bar starts at 1 and decreases strictly.
    bars = [schedule.alpha_bar(t) for t in range(1001)]
    assert bars[0] == 1.0
    assert np.all(np.diff(bars) < 0.0)
    assert schedule.alpha_bar(1) == pytest.approx(1.0 - 1e-4)

    # TC: round((i + 1) * T / steps) for i < steps, ending at T.
    assert schedule.inference_timesteps(25)[:3] == [40, 80, 120]
    assert schedule.inference_timesteps(25)[-1] == 1000
    assert schedule.inference_timesteps(1) == [1000]

    # TC: Out of range step counts are rejected.
    with pytest.raises(ConfigError):
        schedule.inference_timesteps(0)

    # TC: Forward noising formula.
    rows = RngState(1).normal((3, 4), dtype=np.float64)
    noise = RngState(2).normal((3, 4), dtype=np.float64)
    ab = schedule.alpha_bar(500)
    assert np.allclose(schedule.noisy(rows, 500, noise), np.sqrt(ab) * rows + np.sqrt(1.0 - ab) * noise)
    assert np.allclose(schedule.noisy(rows, 500, np.zeros_like(rows)), np.sqrt(ab) * rows)
    assert np.array_equal(schedule.noisy(rows, 0, noise), rows)

    # TC: The variance of the added noise matches 1 - alpha-bar.
    flat = np.zeros(100000)
    noised, eps = schedule.add_noise(flat, 500, RngState(4))
    assert noised.shape == eps.shape == flat.shape
    assert np.var(noised) == pytest.approx(1.0 - ab, rel=0.02)

    # TC: Invalid betas.
    with pytest.raises(ConfigError):
        NoiseSchedule(1000, 0.1, 0.01)


def test_posterior_step():
    """ One ancestral step against the closed form. """
    schedule = NoiseSchedule()
    rows = RngState(3).normal((2, 5), dtype=np.float64)
    pred = RngState(4).normal((2, 5), dtype=np.float64)
    noise = RngState(5).normal((2, 5), dtype=np.float64)

    # TC: Mean plus posterior standard deviation times noise.
    ab_t, ab_prev = schedule.alpha_bar(600), schedule.alpha_bar(560)
    beta = 1.0 - ab_t / ab_prev
    clean = (rows - np.sqrt(1.0 - ab_t) * pred) / np.sqrt(ab_t)
    expected = (np.sqrt(ab_prev) * beta / (1.0 - ab_t)) * clean \
        + (np.sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab_t)) * rows \
        + np.sqrt(beta * (1.0 - ab_prev) / (1.0 - ab_t)) * noise
    assert np.allclose(schedule.posterior_step(rows, pred, 600, 560, noise), expected, atol=1e-12)

    # TC: The last step returns the predicted clean rows without noise.
    ab_first = schedule.alpha_bar(40)
    final = schedule.posterior_step(rows, pred, 40, 0, noise)
    assert np.allclose(final, (rows - np.sqrt(1.0 - ab_first) * pred) / np.sqrt(ab_first), atol=1e-10)


def test_masked_loss_ignores_weight_zero_tokens():
    """ Tokens of weight 0 contribute exactly nothing. """
    target = RngState(6).normal((4, 3), dtype=np.float64)
    prediction = RngState(7).normal((4, 3), dtype=np.float64)
    weights = np.array([1.0, 0.0, 1.0, 0.0])

    # TC: Changing weight-0 rows leaves the loss bit-identical.
    changed = prediction.copy()
    changed[[1, 3]] += 100.0
    loss = masked_mse_loss(Tensor(prediction), target, weights).data
    assert np.array_equal(masked_mse_loss(Tensor(changed), target, weights).data, loss)

    # TC: Value is the weighted mean of per-token mean squared residuals.
    per_token = ((prediction - target) ** 2).mean(axis=1)
    assert float(loss) == pytest.approx(per_token[[0, 2]].mean())

    # TC: All-zero weights have nothing to learn from.
    with pytest.raises(EmptyMaskError):
        masked_mse_loss(Tensor(prediction), target, np.zeros(4))


def test_losses_run_on_tiny_models(tiny_models):
    """ Every loss gives a finite scalar with per-token residuals. """
    examples = _examples(tiny_models, 2)

    # TC: Dense losses cover every token, masked ones the selection.
    for loss_fn in (loss_dm, loss_cdm):
        breakdown = loss_fn(tiny_models, examples, RngState(8))
        assert np.isfinite(breakdown.value)
        assert breakdown.residuals.shape == (2 * 32,)
    for loss_fn in (loss_phi, loss_psi):
        breakdown = loss_fn(tiny_models, examples, RngState(8))
        assert np.isfinite(breakdown.value)
        assert breakdown.residuals.shape == (sum(example.selection.count for example in examples),)

    # TC: The masked losses need a control module.
    bare = ModelBundle.create(make_tiny_config())
    with pytest.raises(ConfigError):
        loss_phi(bare, examples, RngState(8))


def test_piecewise_switch():
    """ psi gets no gradient before the switch iteration and a non-zero one from it on. """
    models = _models64()
    examples = _examples(models)
    w0 = models.global_embedder.param("w0.0.weight")
    lora_b = next(iter(models.control.blocks[0].lora.values())).b

    for iteration, stage in ((3, "phi"), (4, "psi"), (7, "psi")):
        with GradTape() as tape:
            breakdown = piecewise_loss(iteration, 4, models, examples, RngState(9))
        grads = backward(breakdown.loss, tape)

        # TC: Stage tag follows the switch.
        assert breakdown.stage == stage

        # TC: W0 gradient is zero exactly before the switch.
        w0_grad = grads.get(w0, np.zeros_like(w0.data))
        if iteration < 4:
            assert np.all(w0_grad == 0.0)
        else:
            assert np.any(w0_grad != 0.0)

        # TC: The local encoder is trained in both stages.
        assert np.any(grads.get(lora_b, np.zeros_like(lora_b.data)) != 0.0)

    # TC: A negative switch is rejected.
    with pytest.raises(ConfigError):
        piecewise_loss(0, -1, models, examples, RngState(9))


def test_psi_loss_gradient_matches_finite_differences():
    """ Analytic gradient of the global-context loss in 64-bit. """
    models = _models64()
    examples = _examples(models)
    params = [models.global_embedder.param("w0.0.weight"), models.global_embedder.param("k.weight"),
              models.control.param("proj.0.weight")]
    params += [delta.b for delta in models.control.blocks[1].lora.values()]

    # TC: Sampled entries agree within 1e-4.
    error = finite_difference_check(lambda: loss_psi(models, examples, RngState(10)).loss, params,
                                    max_entries=30, rng=RngState(11))
    assert error <= 1e-4


def test_zero_initialised_adapters_reproduce_base_sampler(tiny_models, tiny_video, tiny_mask):
    """ Fresh adapters give the same edit as the frozen backbone alone. """
    adapted = sample_edit(tiny_models, tiny_video, tiny_mask, "fill red", 0, FAST_SAMPLING)
    base = sample_base_masked(tiny_models, tiny_video, tiny_mask, "fill red", 0, FAST_SAMPLING)

    # TC: Bit-identical outputs.
    assert np.array_equal(adapted, base)


def test_background_is_preserved(tiny_models, tiny_video, tiny_mask):
    """ Tokens outside the dilated selection come from the source latent. """
    plan = prepare_edit(tiny_models, tiny_video, tiny_mask, "fill blue", 1)
    rows = denoise_edit(tiny_models, plan, 0, 3)

    # TC: Rows outside the selection are bit-identical to the source rows.
    edited_latent = scatter(rows, plan.selection, plan.source_latent)
    keep = ~plan.selection.mask()
    assert np.array_equal(edited_latent[keep], plan.source_latent[keep])

    # TC: Out of range latents decode into clipped pixels.
    assert decode_video(tiny_models, edited_latent * 1000.0).max() == 1.0
    assert decode_video(tiny_models, edited_latent * -1000.0).min() == 0.0

    # TC: Decoded unmasked pixels match the source for the sparse and the dense sampler.
    outside = ~upsample_mask(plan.selection.mask(), tiny_models.config.patch)
    for sampler in (sample_edit, sample_full):
        out = sampler(tiny_models, tiny_video, tiny_mask, "fill blue", 0, FAST_SAMPLING)
        assert out.shape == tiny_video.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
        diff = out[outside].astype(np.float64) - tiny_video[outside].astype(np.float64)
        assert float(np.mean(diff * diff)) <= 1e-10


def test_sampling_is_deterministic(tiny_models, tiny_video, tiny_mask):
    """ Same seed, same edit; another seed, another edit. """
    first = sample_edit(tiny_models, tiny_video, tiny_mask, "fill red", 4, FAST_SAMPLING)
    second = sample_edit(tiny_models, tiny_video, tiny_mask, "fill red", 4, FAST_SAMPLING)
    other = sample_edit(tiny_models, tiny_video, tiny_mask, "fill red", 5, FAST_SAMPLING)

    # TC: Reproducible bit for bit.
    assert np.array_equal(first, second)

    # TC: The seed matters.
    assert not np.array_equal(first, other)

    # TC: An empty mask has nothing to edit.
    with pytest.raises(EmptyMaskError):
        sample_edit(tiny_models, tiny_video, np.zeros_like(tiny_mask), "fill red", 4, FAST_SAMPLING)
