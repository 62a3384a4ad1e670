""" The three training stages, their checkpoints and the ablation bundles.

    Stage "base" trains the backbone with the plain diffusion loss, stage
    "control_full" trains the control module with full attention on a frozen
    backbone, and stage "adapters_sparse" fine-tunes LoRA deltas, injection
    projections and the global context embedder with the piecewise sparse loss.

    Checkpoint directory layout:
        model_config.json       ModelConfig of every weight file in the directory
        base.etw                backbone
        control.etw             control module after full-attention pretraining
        adapters.etw            LoRA + projections + global embedder (piecewise loss)
        adapters_no_gpsi.etw    the same, trained with the local loss only
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

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from pyEditCtrl.control_adapters import ControlModule, GlobalEmbedder
from pyEditCtrl.diffusion_engine import (VARIANT_FULL, VARIANT_NAIVE, VARIANT_NO_GPSI, VARIANTS, LossBreakdown,
                                         ModelBundle, loss_cdm, loss_dm, piecewise_loss, prepare_example,
                                         sample_edit)
from pyEditCtrl.ret import ConfigError, MissingWeightsError, TrainingDivergedError
from pyEditCtrl.run_config import (STAGE_ADAPTERS_SPARSE, STAGE_BASE, STAGE_CONTROL_FULL, ModelConfig, SampleConfig,
                                   TrainConfig, config_from_dict, config_to_dict, save_config_json)
from pyEditCtrl.synthetic_data import SyntheticDataset
from pyEditCtrl.tensor import GradTape, RngState, Tensor, backward
from pyEditCtrl.tensor_io import assign_entries, load_etw, params_to_entries, save_etw

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPSILON = 1e-8

MODEL_CONFIG_FILE = "model_config.json"
CHECKPOINT_BASE = "base.etw"
CHECKPOINT_CONTROL = "control.etw"
CHECKPOINT_ADAPTERS = "adapters.etw"
CHECKPOINT_ADAPTERS_NO_GPSI = "adapters_no_gpsi.etw"

_STAGE_STREAMS = {
    STAGE_BASE: 0xBA5E,
    STAGE_CONTROL_FULL: 0xC7F1,
    STAGE_ADAPTERS_SPARSE: 0xADA9,
}

################################################################################
# Classes
################################################################################


@dataclass
class OptimizerSlot:
    """ AdamW moments of one parameter. """
    first: np.ndarray
    second: np.ndarray
    step: int = 0


class AdamW:
    """ Adam with decoupled weight decay and linear learning-rate warmup.

        Parameters without a gradient in a step are left untouched (no moment
        update and no decay).
    """

    def __init__(self,
                 params: dict[str, Tensor],
                 learning_rate: float,
                 weight_decay: float = 0.01,
                 warmup_steps: int = 0,
                 betas: tuple = ADAM_BETAS,
                 epsilon: float = ADAM_EPSILON):
        if learning_rate <= 0.0:
            raise ConfigError("The learning rate must be positive.")
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.warmup_steps = warmup_steps
        self.betas = betas
        self.epsilon = epsilon
        self.step_count = 0
        self.slots: dict[str, OptimizerSlot] = {}

    def learning_rate_at(self, step: int) -> float:
        """ Effective learning rate of update number step (1-based): lr * step / warmup during warmup. """
        if self.warmup_steps > 0 and step < self.warmup_steps:
            return self.learning_rate * step / self.warmup_steps
        return self.learning_rate

    def step(self, grads: dict) -> float:
        """ Applies one update.

        Args:
            grads: Parameter tensor -> gradient; parameters missing here are skipped.

        Returns:
            float: The learning rate used.
        """
        self.step_count += 1
        rate = self.learning_rate_at(self.step_count)
        beta1, beta2 = self.betas
        for name, tensor in self.params.items():
            grad = grads.get(tensor)
            if grad is None or tensor.frozen:
                continue
            slot = self.slots.get(name)
            if slot is None:
                slot = OptimizerSlot(np.zeros_like(tensor.data), np.zeros_like(tensor.data))
                self.slots[name] = slot
            slot.step += 1
            slot.first = beta1 * slot.first + (1.0 - beta1) * grad
            slot.second = beta2 * slot.second + (1.0 - beta2) * grad * grad
            first_hat = slot.first / (1.0 - beta1 ** slot.step)
            second_hat = slot.second / (1.0 - beta2 ** slot.step)
            updated = tensor.data * (1.0 - rate * self.weight_decay) \
                - rate * first_hat / (np.sqrt(second_hat) + self.epsilon)
            tensor.data = updated.astype(tensor.dtype)
        return rate


@dataclass
class StageResult:
    """ Outcome of one training stage. """
    stage: str
    iterations: int
    losses: list = field(default_factory=list)

    def mean_loss(self, first: int, last: int) -> float:
        """ Mean loss of the iterations [first, last). """
        values = [value for _, _, value in self.losses[first:last]]
        return float(np.mean(values)) if values else float("nan")


################################################################################
# Functions
################################################################################

def configure_stage(models: ModelBundle, stage: str, lora_rank: int = 8) -> dict[str, Tensor]:
    """ Sets the frozen flags of a stage and creates missing adapters.

    Returns:
        dict: Name -> trainable parameter of the stage.

    Raises:
        ConfigError: On an unknown stage.
        MissingWeightsError: If the sparse stage has no pretrained control module.
    """
    backbone = models.backbone
    if stage == STAGE_BASE:
        backbone.set_frozen(False)
        return backbone.named_parameters()

    backbone.set_frozen(True)
    if stage == STAGE_CONTROL_FULL:
        if models.control is None:
            models.control = ControlModule(models.config, backbone)
        models.control.detach_lora()
        models.control.set_frozen(False)
        return models.control.named_parameters()

    if stage == STAGE_ADAPTERS_SPARSE:
        if models.control is None:
            raise MissingWeightsError("The sparse adapter stage needs the full-attention control module.")
        if models.global_embedder is None:
            models.global_embedder = GlobalEmbedder(models.config, backbone)
        if not models.control.lora_attached:
            models.control.attach_lora(lora_rank, models.config.lora_alpha)
        models.control.set_frozen(True)
        trainable = {}
        trainable.update(models.control.lora_parameters())
        trainable.update(models.control.projection_parameters())
        trainable.update(models.global_embedder.named_parameters())
        for tensor in trainable.values():
            tensor.frozen = False
        return trainable

    raise ConfigError(f"Unknown training stage '{stage}'.")


def _make_batch(models: ModelBundle, dataset: SyntheticDataset, cfg: TrainConfig, iteration: int) -> list:
    size = cfg.batch_size * cfg.grad_accum
    samples = dataset.batch(iteration * size, size)
    examples = [prepare_example(models, sample.video, sample.mask, sample.target, sample.prompt,
                                cfg.dilation_radius) for sample in samples]
    return [examples[start:start + cfg.batch_size] for start in range(0, size, cfg.batch_size)]


def _stage_loss(models: ModelBundle, cfg: TrainConfig, iteration: int, examples: list,
                rng: RngState) -> LossBreakdown:
    if cfg.stage == STAGE_BASE:
        return loss_dm(models, examples, rng)
    if cfg.stage == STAGE_CONTROL_FULL:
        return loss_cdm(models, examples, rng)
    return piecewise_loss(iteration, cfg.resolved_switch, models, examples, rng)


def _gradient_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(grad, dtype=np.float64))) for grad in grads.values())))


def train_step(models: ModelBundle,
               cfg: TrainConfig,
               optimizer: AdamW,
               iteration: int,
               micro_batches: list) -> tuple:
    """ Runs one optimizer update over grad_accum micro-batches.

    Returns:
        tuple: (mean loss, stage tag, gradient norm).

    Raises:
        TrainingDivergedError: If a loss is NaN or infinite.
    """
    accumulated: dict = {}
    values = []
    tag = ""
    trainable = list(optimizer.params.values())
    for micro, examples in enumerate(micro_batches):
        rng = RngState(cfg.seed, _STAGE_STREAMS[cfg.stage], iteration, micro)
        with GradTape() as tape:
            result = _stage_loss(models, cfg, iteration, examples, rng)
        if not np.isfinite(result.value):
            raise TrainingDivergedError(f"Stage {cfg.stage} loss became {result.value} at iteration {iteration}.")
        grads = backward(result.loss, tape)
        for tensor in trainable:
            if tensor in grads:
                accumulated[tensor] = accumulated.get(tensor, 0.0) + grads[tensor]
        values.append(result.value)
        tag = result.stage

    if len(micro_batches) > 1:
        accumulated = {tensor: grad / len(micro_batches) for tensor, grad in accumulated.items()}
    optimizer.step(accumulated)
    return float(np.mean(values)), tag, _gradient_norm(accumulated)


def run_stage(cfg: TrainConfig,
              models: ModelBundle,
              dataset: Optional[SyntheticDataset] = None,
              on_iteration: Optional[Callable[[int, str, float], None]] = None) -> StageResult:
    """ Trains the parameters of one stage in place.

        The next batch is generated on a worker thread while the current one
        trains; sample i depends only on the dataset seed and i.

    Args:
        cfg: Stage settings.
        models: Bundle holding the (pretrained) models; adapters are created as needed.
        dataset: Training data (default: synthetic clips of the configured geometry).
        on_iteration: Called with (iteration, stage tag, loss) after every update.

    Returns:
        StageResult: The loss curve.
    """
    cfg.validate()
    dataset = dataset or SyntheticDataset(cfg.seed, cfg.frames, cfg.height, cfg.width)
    trainable = configure_stage(models, cfg.stage, cfg.lora_rank)
    optimizer = AdamW(trainable, cfg.learning_rate, cfg.weight_decay, cfg.warmup_steps)
    iterations = cfg.resolved_iterations
    result = StageResult(cfg.stage, iterations)
    LOG.info("stage %s: %d iterations, %d trainable tensors, switch at %d", cfg.stage, iterations,
             len(trainable), cfg.resolved_switch)

    if iterations == 0:
        return result

    with ThreadPoolExecutor(max_workers=1) as prefetch:
        pending = prefetch.submit(_make_batch, models, dataset, cfg, 0)
        for iteration in range(iterations):
            micro_batches = pending.result()
            if iteration + 1 < iterations:
                pending = prefetch.submit(_make_batch, models, dataset, cfg, iteration + 1)
            loss, tag, grad_norm = train_step(models, cfg, optimizer, iteration, micro_batches)
            result.losses.append((iteration, tag, loss))
            if on_iteration is not None:
                on_iteration(iteration, tag, loss)
            if iteration % cfg.log_every == 0 or iteration == iterations - 1:
                LOG.info("stage %s iteration %d: loss %.6f (%s), grad norm %.4e, lr %.3e", cfg.stage, iteration,
                         loss, tag, grad_norm, optimizer.learning_rate_at(optimizer.step_count))

    LOG.info("stage %s finished, final loss %.6f", cfg.stage, result.losses[-1][2])
    return result


def write_loss_csv(path: str, result: StageResult) -> None:
    """ Writes the loss curve as CSV with the columns iteration, stage, loss. """
    with open(path, "w", encoding="UTF-8", newline="") as csv_file:
        writer = csv.writer(csv_file)
        writer.writerow(["iteration", "stage", "loss"])
        for iteration, tag, loss in result.losses:
            writer.writerow([iteration, tag, repr(float(loss))])


def _require(directory: str, file_name: str, producer: str) -> str:
    path = os.path.join(directory, file_name)
    if not os.path.isfile(path):
        raise MissingWeightsError(f"Missing checkpoint '{path}'. Run '{producer}' first.")
    return path


def save_model_config(directory: str, config: ModelConfig) -> None:
    """ Writes model_config.json into a checkpoint directory. """
    os.makedirs(directory, exist_ok=True)
    save_config_json(os.path.join(directory, MODEL_CONFIG_FILE), config)


def load_model_config(directory: str) -> ModelConfig:
    """ Reads model_config.json of a checkpoint directory.

    Raises:
        MissingWeightsError: If the file does not exist.
    """
    path = _require(directory, MODEL_CONFIG_FILE, "pretrain")
    with open(path, "r", encoding="UTF-8") as config_file:
        return config_from_dict(ModelConfig, json.load(config_file))


def save_stage_checkpoint(directory: str, stage: str, models: ModelBundle, file_name: Optional[str] = None) -> str:
    """ Writes the weights produced by a stage and the model config.

    Returns:
        str: Path of the written weights file.
    """
    save_model_config(directory, models.config)
    if stage == STAGE_BASE:
        params = models.backbone.named_parameters()
        file_name = file_name or CHECKPOINT_BASE
    elif stage == STAGE_CONTROL_FULL:
        params = models.control.base_parameters()
        file_name = file_name or CHECKPOINT_CONTROL
    else:
        params = {}
        params.update(models.control.lora_parameters())
        params.update(models.control.projection_parameters())
        params.update(models.global_embedder.named_parameters())
        file_name = file_name or CHECKPOINT_ADAPTERS
    path = os.path.join(directory, file_name)
    save_etw(path, params_to_entries(params))
    return path


def _lora_rank_of(entries: list) -> int:
    for entry in entries:
        if ".lora." in entry.name and entry.name.endswith(".a"):
            return int(entry.data.shape[1])
    raise MissingWeightsError("The adapter checkpoint contains no LoRA tensors.")


def load_bundle(directory: str, stages: tuple, adapters_file: str = CHECKPOINT_ADAPTERS) -> ModelBundle:
    """ Rebuilds a model bundle from the checkpoints of the given stages.

    Args:
        directory: Checkpoint directory.
        stages: Stages whose weights are loaded, in pipeline order.
        adapters_file: Weights file of the sparse adapter stage.

    Raises:
        MissingWeightsError: If a required file is missing.
    """
    config = load_model_config(directory)
    models = ModelBundle.create(config)
    if STAGE_BASE in stages:
        assign_entries(models.backbone.named_parameters(),
                       load_etw(_require(directory, CHECKPOINT_BASE, "pretrain --stage base")))
    if STAGE_CONTROL_FULL in stages:
        models.control = ControlModule(config, models.backbone)
        assign_entries(models.control.base_parameters(),
                       load_etw(_require(directory, CHECKPOINT_CONTROL, "pretrain --stage control_full")))
    if STAGE_ADAPTERS_SPARSE in stages:
        entries = load_etw(_require(directory, adapters_file, "train-adapters"))
        models.control.attach_lora(_lora_rank_of(entries), config.lora_alpha)
        models.global_embedder = GlobalEmbedder(config, models.backbone)
        params = {}
        params.update(models.control.lora_parameters())
        params.update(models.control.projection_parameters())
        params.update(models.global_embedder.named_parameters())
        assign_entries(params, entries)
    models.backbone.set_frozen(True)
    return models


def build_ablation(directory: str, variant: str) -> ModelBundle:
    """ Builds an inference bundle of one ablation variant.

        naive: full-attention control module used sparsely, no LoRA, no global context.
        no_gpsi: adapters trained with the local loss only, no global context.
        full: adapters trained with the piecewise loss, with global context.

    Raises:
        ConfigError: On an unknown variant.
        MissingWeightsError: If a required checkpoint is missing.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"Unknown variant '{variant}', expected one of {VARIANTS}.")
    if variant == VARIANT_NAIVE:
        models = load_bundle(directory, (STAGE_BASE, STAGE_CONTROL_FULL))
        models.control_full = models.control
    else:
        adapters_file = CHECKPOINT_ADAPTERS if variant == VARIANT_FULL else CHECKPOINT_ADAPTERS_NO_GPSI
        models = load_bundle(directory, (STAGE_BASE, STAGE_CONTROL_FULL, STAGE_ADAPTERS_SPARSE), adapters_file)
        if variant == VARIANT_NO_GPSI:
            models.global_embedder = None
        models.control_full = load_bundle(directory, (STAGE_BASE, STAGE_CONTROL_FULL)).control
        models.control = models.control.merged_copy()
    models.variant = variant
    models.control.set_frozen(True)
    if models.global_embedder is not None:
        models.global_embedder.set_frozen(True)
    return models


def pretrain(model_config: ModelConfig,
             train_config: TrainConfig,
             directory: str,
             stages: tuple = (STAGE_BASE, STAGE_CONTROL_FULL),
             init_directory: Optional[str] = None) -> dict:
    """ Runs the base and / or full-attention control stage and writes their checkpoints.

    Args:
        model_config: Geometry of fresh models (ignored when weights are loaded).
        train_config: Stage settings; the stage field is set per run.
        directory: Output checkpoint directory.
        stages: Stages to run, in pipeline order.
        init_directory: Optional checkpoint directory to continue from.

    Returns:
        dict: Stage -> StageResult.

    Raises:
        MissingWeightsError: If the control stage runs alone without a base checkpoint.
    """
    if init_directory is not None:
        loaded = (STAGE_BASE,)
        if os.path.isfile(os.path.join(init_directory, CHECKPOINT_CONTROL)):
            loaded = (STAGE_BASE, STAGE_CONTROL_FULL)
        models = load_bundle(init_directory, loaded)
    elif STAGE_BASE in stages:
        models = ModelBundle.create(model_config)
    else:
        models = load_bundle(directory, (STAGE_BASE,))

    settings = config_to_dict(train_config)
    results = {}
    for stage in stages:
        results[stage] = run_stage(config_from_dict(TrainConfig, {**settings, "stage": stage}), models)
        save_stage_checkpoint(directory, stage, models)
    return results


def train_adapters(train_config: TrainConfig, directory: str) -> dict:
    """ Runs the sparse adapter stage twice: with the piecewise loss and with the local loss only.

        Both runs start from the same pretrained checkpoints.

    Returns:
        dict: Adapter file name -> StageResult.
    """
    settings = {**config_to_dict(train_config), "stage": STAGE_ADAPTERS_SPARSE}
    piecewise = config_from_dict(TrainConfig, settings)
    local_only = config_from_dict(TrainConfig, {**settings, "switch_iteration": piecewise.resolved_iterations})

    results = {}
    for file_name, stage_config in ((CHECKPOINT_ADAPTERS, piecewise), (CHECKPOINT_ADAPTERS_NO_GPSI, local_only)):
        models = load_bundle(directory, (STAGE_BASE, STAGE_CONTROL_FULL))
        results[file_name] = run_stage(stage_config, models)
        save_stage_checkpoint(directory, STAGE_ADAPTERS_SPARSE, models, file_name)
    return results


def evaluate_ablation(directory: str,
                      count: int = 8,
                      seed: int = 0,
                      sample_config: Optional[SampleConfig] = None,
                      geometry: tuple = (8, 32, 32)) -> dict:
    """ Masked-region MSE of every ablation variant on held-out "match-scene" clips.

    Returns:
        dict: Variant -> mean masked-region MSE.
    """
    sample_config = sample_config or SampleConfig()
    dataset = SyntheticDataset.eval_split(seed, *geometry)
    samples = dataset.batch(0, count)
    scores = {}
    for variant in VARIANTS:
        models = build_ablation(directory, variant)
        errors = []
        for index, sample in enumerate(samples):
            out = sample_edit(models, sample.video, sample.mask, sample.prompt, sample_config.seed + index,
                              sample_config)
            diff = (out.astype(np.float64) - sample.target)[sample.mask]
            errors.append(float(np.mean(diff * diff)))
        scores[variant] = float(np.mean(errors))
        LOG.info("ablation %s: masked MSE %.6f over %d clips", variant, scores[variant], count)
    return scores
