""" Command 'edit': mask-guided edit of one region. """
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

import argparse
import logging

from pyEditCtrl.cmd_common import (add_config_arguments, add_config_file_argument, add_weights_argument,
                                   new_manifest, resolve_from_args, run_guarded, save_video)
from pyEditCtrl.diffusion_engine import VARIANT_FULL, VARIANTS, sample_base_masked, sample_edit, sample_full
from pyEditCtrl.latent_codec import load_video
from pyEditCtrl.mask_pipeline import load_mask
from pyEditCtrl.ret import Ret
from pyEditCtrl.run_config import SampleConfig
from pyEditCtrl.training import build_ablation

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

MODE_SPARSE = "sparse"
MODE_DENSE = "dense"
MODE_BASE = "base"

_SAMPLERS = {
    MODE_SPARSE: sample_edit,
    MODE_DENSE: sample_full,
    MODE_BASE: sample_base_masked,
}

################################################################################
# Classes
################################################################################

################################################################################
# Functions
################################################################################


def register(subparser) -> argparse.ArgumentParser:
    """ Register subparser commands for the edit module.

    Args:
        subparser (obj):   The command subparser object provided via __main__.py.

    Returns:
        obj:    The command parser object of this module.
    """
    parser = subparser.add_parser(
        'edit',
        help="Regenerate the masked region of a video from a prompt."
    )

    add_weights_argument(parser)

    parser.add_argument(
        '-i',
        '--video',
        type=str,
        required=True,
        metavar="<video ETF>",
        help="The source video, F x H x W x 3 in [0, 1]."
    )

    parser.add_argument(
        '-m',
        '--mask',
        type=str,
        required=True,
        metavar="<mask ETF>",
        help="The edit mask, F x H x W with values 0 / 1."
    )

    parser.add_argument(
        '-p',
        '--prompt',
        type=str,
        required=True,
        metavar="<prompt>",
        help="The edit prompt, e.g. 'fill:red' or 'match-scene'."
    )

    parser.add_argument(
        '-o',
        '--out',
        type=str,
        required=True,
        metavar="<video ETF>",
        help="The edited video."
    )

    parser.add_argument(
        '--variant',
        type=str,
        choices=VARIANTS,
        default=VARIANT_FULL,
        help="Model variant built from the checkpoint directory (default: full)."
    )

    parser.add_argument(
        '--mode',
        type=str,
        choices=tuple(_SAMPLERS),
        default=MODE_SPARSE,
        help="sparse: masked tokens only, dense: full-grid baseline, base: backbone only (default: sparse)."
    )

    add_config_file_argument(parser, what="sampling")
    add_config_arguments(parser, SampleConfig)

    return parser


def execute(args) -> Ret.CODE:
    """ This function serves as entry point for the command 'edit'.
        It will be stored as callback for this modules subparser command.

    Args:
        args (obj): The command line arguments.

    Returns:
        Ret.CODE:   Returns Ret.RET_OK if successful or else the corresponding error code.
    """
    return run_guarded(_edit, args)


def _edit(args) -> Ret.CODE:
    config = resolve_from_args(args, SampleConfig)
    models = build_ablation(args.weights, args.variant)
    video = load_video(args.video, models.config.channels)
    mask = load_mask(args.mask)

    out = _SAMPLERS[args.mode](models, video, mask, args.prompt, config.seed, config)

    manifest = new_manifest("edit", config.seed, sample=config)
    manifest.inputs = {"video": args.video, "mask": args.mask, "prompt": args.prompt, "variant": args.variant,
                       "mode": args.mode, "weights": args.weights}
    manifest.add_weights(args.weights)
    save_video(args.out, out, manifest)
    return Ret.CODE.RET_OK
