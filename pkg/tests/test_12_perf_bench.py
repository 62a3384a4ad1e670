""" Tests for the analytic FLOP model, its instrumented counterpart and the sweep output. """
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
import dataclasses

import pytest

from pyEditCtrl import perf_bench
from pyEditCtrl.perf_bench import (CSV_COLUMNS, PLOT_HEADER, analytic_flops, analytic_point, band_mask, bench_run,
                                   measure_point)
from pyEditCtrl.ret import ConfigError, FlopMismatchError
from pyEditCtrl.run_config import BenchConfig, ModelConfig

################################################################################
# Variables
################################################################################

PROMPT_LEN = 3

################################################################################
# Classes
################################################################################

################################################################################
# Functions
################################################################################


def _tiny_bench(**overrides) -> BenchConfig:
    values = {"ratios": [0.5], "resolutions": [16], "frames": 2, "steps": 2, "trials": 1, "seeds": [0]}
    values.update(overrides)
    return BenchConfig(**values)


def test_instrumented_equals_analytic(tiny_models, tiny_config):
    """ Counted FLOPs of both samplers match the closed form exactly. """
    row = measure_point(tiny_models, _tiny_bench(), 16, 0.5)
    n_global = tiny_models.global_embedder.token_count(2)

    # TC: Sparse run, per component.
    expected = analytic_flops(tiny_config, row.n_sel, 32, n_global, PROMPT_LEN, 2)
    assert row.n_sel == 16
    assert (row.sparse.backbone, row.sparse.control, row.sparse.global_context) == \
        (expected.backbone, expected.control, expected.global_context)

    # TC: Dense run over the whole grid.
    dense = analytic_flops(tiny_config, 32, 32, 0, PROMPT_LEN, 2, dense=True)
    assert row.dense.total == dense.total

    # TC: Wall time is recorded for both runs.
    assert row.sparse.wall_ms >= 0.0
    assert row.dense.wall_ms >= 0.0


def test_instrumented_mismatch_is_an_error(tiny_models, monkeypatch):
    """ A counted total that differs from the closed form fails the sweep. """
    def _off_by_one(*args, **kwargs):
        report = analytic_flops(*args, **kwargs)
        return dataclasses.replace(report, backbone=report.backbone + 1)

    monkeypatch.setattr(perf_bench, "analytic_flops", _off_by_one)

    # TC: One FLOP of difference raises.
    with pytest.raises(FlopMismatchError):
        measure_point(tiny_models, _tiny_bench(), 16, 0.5)


def test_instrumented_per_step_is_resolution_independent(tiny_models):
    """ Same selected token count on a 4x larger grid costs the same per step. """
    small = measure_point(tiny_models, _tiny_bench(), 16, 0.5)
    large = measure_point(tiny_models, _tiny_bench(resolutions=[32], ratios=[0.125]), 32, 0.125)

    # TC: 16 selected tokens in both runs, identical per-step FLOPs.
    assert small.n_sel == large.n_sel == 16
    assert small.sparse.per_step == large.sparse.per_step
    assert large.dense.total > small.dense.total


def test_analytic_model_properties():
    """ Linearity in steps, resolution independence and proportionality. """
    config = ModelConfig()

    # TC: Per-step FLOPs do not depend on the step count.
    one = analytic_flops(config, 64, 512, 128, PROMPT_LEN, 1)
    many = analytic_flops(config, 64, 512, 128, PROMPT_LEN, 25)
    assert many.per_step == one.per_step
    assert many.total - many.global_setup == 25 * (one.total - one.global_setup)

    # TC: With N_sel fixed, per-step FLOPs are constant over 512, 2048 and 8192 grid tokens.
    per_step = {analytic_flops(config, 256, total, 128, PROMPT_LEN, 25).per_step for total in (512, 2048, 8192)}
    assert len(per_step) == 1

    # TC: Sparse over dense FLOPs stays within r + 0.10.
    bench = BenchConfig()
    for resolution in (32, 64, 128):
        for ratio in (0.125, 0.25, 0.5):
            assert analytic_point(config, bench, resolution, ratio).normalized <= ratio + 0.10

    # TC: A quarter of the tokens costs at most 35 % of the dense run.
    assert analytic_point(config, bench, 32, 0.25).normalized <= 0.35

    # TC: Invalid counts.
    with pytest.raises(ConfigError):
        analytic_flops(config, 600, 512, 0, PROMPT_LEN, 1)


def test_band_mask():
    """ Centred bands of whole latent rows. """
    mask = band_mask(2, 32, 4, 0.25)

    # TC: round(0.25 * 8) = 2 token rows, centred.
    assert mask.shape == (2, 32, 32)
    assert mask[:, 12:20].all()
    assert not mask[:, :12].any() and not mask[:, 20:].any()

    # TC: Never empty.
    assert band_mask(1, 32, 4, 0.01).any()


def test_bench_outputs(tmp_path):
    """ FLOP-only sweep writes the CSV and the plot data. """
    csv_path = str(tmp_path / "bench.csv")
    plot_path = str(tmp_path / "bench.dat")
    config = BenchConfig(ratios=[0.25, 0.5], resolutions=[32, 64], flops_only=True)

    rows = bench_run(config, ModelConfig(), csv_path=csv_path, plot_path=plot_path)

    # TC: One row per grid point in the documented column order.
    with open(csv_path, "r", encoding="UTF-8") as csv_file:
        lines = list(csv.reader(csv_file))
    assert tuple(lines[0]) == CSV_COLUMNS
    assert len(lines) == 5
    assert lines[1][8] == "nan"

    # TC: Plot file has one block per resolution.
    with open(plot_path, "r", encoding="UTF-8") as plot_file:
        text = plot_file.read()
    assert text.startswith(PLOT_HEADER)
    assert text.count("# resolution") == 2
    assert len(rows) == 4

    # TC: Parallel evaluation gives the same rows.
    parallel = bench_run(BenchConfig(ratios=[0.25, 0.5], resolutions=[32, 64], flops_only=True, parallel=True),
                         ModelConfig())
    assert [row.as_csv() for row in parallel] == [row.as_csv() for row in rows]
