""" Command 'metrics': PSNR / SSIM / MSE / MAE of an edit inside and outside its mask. """
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
import json
import logging

from pyEditCtrl.cmd_common import new_manifest, run_guarded
from pyEditCtrl.latent_codec import load_video
from pyEditCtrl.mask_pipeline import load_mask
from pyEditCtrl.metrics import GROUP_MASKED, GROUP_UNMASKED, json_ready, metrics, token_footprint
from pyEditCtrl.ret import Ret
from pyEditCtrl.run_manifest import write_manifest
from pyEditCtrl.tensor_io import write_atomic
from pyEditCtrl.training import load_model_config

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

DEFAULT_PATCH = 4

################################################################################
# Classes
################################################################################

################################################################################
# Functions
################################################################################


def register(subparser) -> argparse.ArgumentParser:
    """ Register subparser commands for the metrics module.

    Args:
        subparser (obj):   The command subparser object provided via __main__.py.

    Returns:
        obj:    The command parser object of this module.
    """
    parser = subparser.add_parser(
        'metrics',
        help="Compare an edited video with a reference inside and outside the edit mask."
    )

    parser.add_argument(
        '-i',
        '--video',
        type=str,
        required=True,
        metavar="<video ETF>",
        help="The edited video."
    )

    parser.add_argument(
        '-r',
        '--reference',
        type=str,
        required=True,
        metavar="<video ETF>",
        help="The reference video (the edit input for background preservation)."
    )

    parser.add_argument(
        '-m',
        '--mask',
        type=str,
        required=True,
        metavar="<mask ETF>",
        help="The edit mask."
    )

    parser.add_argument(
        '-o',
        '--out',
        type=str,
        required=True,
        metavar="<JSON file>",
        help="The metrics report."
    )

    parser.add_argument(
        '--footprint-radius',
        type=int,
        required=False,
        metavar="<radius>",
        help="Measure the masked group over every pixel of the dilated token footprint of the mask."
    )

    parser.add_argument(
        '--patch',
        type=int,
        required=False,
        metavar="<patch>",
        help=f"Token patch size of the footprint (default: from --weights, else {DEFAULT_PATCH})."
    )

    parser.add_argument(
        '-w',
        '--weights',
        type=str,
        required=False,
        metavar="<checkpoint directory>",
        help="Checkpoint directory whose model_config.json provides the patch size."
    )

    return parser


def execute(args) -> Ret.CODE:
    """ This function serves as entry point for the command 'metrics'.
        It will be stored as callback for this modules subparser command.

    Args:
        args (obj): The command line arguments.

    Returns:
        Ret.CODE:   Returns Ret.RET_OK if successful or else the corresponding error code.
    """
    return run_guarded(_metrics, args)


def _metrics(args) -> Ret.CODE:
    out = load_video(args.video)
    ref = load_video(args.reference)
    mask = load_mask(args.mask)

    if args.footprint_radius is not None:
        patch = args.patch
        if patch is None:
            patch = load_model_config(args.weights).patch if args.weights else DEFAULT_PATCH
        mask = token_footprint(mask, patch, args.footprint_radius)

    report = json_ready(metrics(out, ref, mask))
    write_atomic(args.out, json.dumps(report, indent=4, sort_keys=True).encode("UTF-8"))

    manifest = new_manifest("metrics")
    manifest.inputs = {"video": args.video, "reference": args.reference, "mask": args.mask,
                       "footprint_radius": args.footprint_radius}
    manifest.outputs = [args.out]
    write_manifest(args.out, manifest)
    print(f"unmasked: PSNR {report[GROUP_UNMASKED]['psnr']}, MSE {report[GROUP_UNMASKED]['mse']:.3e}")
    print(f"masked:   PSNR {report[GROUP_MASKED]['psnr']}, MSE {report[GROUP_MASKED]['mse']:.3e}")
    return Ret.CODE.RET_OK
