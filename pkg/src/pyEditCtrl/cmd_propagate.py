""" Command 'propagate': carries an edit of the first frames into the frames of a stream. """
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
import os

import numpy as np

from pyEditCtrl.cmd_common import (add_config_arguments, add_config_file_argument, add_weights_argument,
                                   new_manifest, resolve_from_args, run_guarded, save_video)
from pyEditCtrl.diffusion_engine import VARIANT_FULL, VARIANTS
from pyEditCtrl.interactive import (DirectoryFrameStream, FrameStream, ListFrameStream, propagate,
                                    write_latency_csv)
from pyEditCtrl.latent_codec import check_video, load_video
from pyEditCtrl.mask_pipeline import load_mask
from pyEditCtrl.ret import Ret, ShapeError, StreamGapError
from pyEditCtrl.run_config import PropagationConfig
from pyEditCtrl.training import build_ablation

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

################################################################################
# Classes
################################################################################

################################################################################
# Functions
################################################################################


def register(subparser) -> argparse.ArgumentParser:
    """ Register subparser commands for the propagate module.

    Args:
        subparser (obj):   The command subparser object provided via __main__.py.

    Returns:
        obj:    The command parser object of this module.
    """
    parser = subparser.add_parser(
        'propagate',
        help="Propagate an edit of frames 0..k to the following frames of a stream."
    )

    add_weights_argument(parser)

    parser.add_argument(
        '-s',
        '--stream',
        type=str,
        required=True,
        metavar="<video ETF or frame directory>",
        help="All frames starting at index 0: one ETF video or a directory of frame_NNNNN.etf files."
    )

    parser.add_argument(
        '-e',
        '--edited',
        type=str,
        required=True,
        metavar="<video ETF>",
        help="The edit of frames 0..k."
    )

    parser.add_argument(
        '-m',
        '--mask',
        type=str,
        required=True,
        metavar="<mask ETF>",
        help="The masks of frames 0..k."
    )

    parser.add_argument(
        '-p',
        '--prompt',
        type=str,
        required=True,
        metavar="<prompt>",
        help="The edit prompt."
    )

    parser.add_argument(
        '-o',
        '--out',
        type=str,
        required=True,
        metavar="<video ETF>",
        help="Edited frames 0..k followed by every propagated frame."
    )

    parser.add_argument(
        '--latency-log',
        type=str,
        required=False,
        metavar="<CSV file>",
        help="Writes frame_index, ahead_margin per emitted frame."
    )

    parser.add_argument(
        '--variant',
        type=str,
        choices=VARIANTS,
        default=VARIANT_FULL,
        help="Model variant built from the checkpoint directory (default: full)."
    )

    add_config_file_argument(parser, what="propagation")
    add_config_arguments(parser, PropagationConfig)

    return parser


def execute(args) -> Ret.CODE:
    """ This function serves as entry point for the command 'propagate'.
        It will be stored as callback for this modules subparser command.

    Args:
        args (obj): The command line arguments.

    Returns:
        Ret.CODE:   Returns Ret.RET_OK if successful or else the corresponding error code.
    """
    return run_guarded(_propagate, args)


def open_stream(path: str) -> FrameStream:
    """ Gets a directory stream for directories, else the frames of one ETF video. """
    if os.path.isdir(path):
        return DirectoryFrameStream(path)
    return ListFrameStream.from_file(path)


def _initial_frames(stream: FrameStream, count: int, channels: int) -> np.ndarray:
    frames = []
    for index in range(count):
        frame = stream.frame(index)
        if frame is None:
            raise StreamGapError(f"The stream ends before the edited frame {index}.")
        frames.append(frame)
    return check_video(np.stack(frames), channels)


def _propagate(args) -> Ret.CODE:
    config = resolve_from_args(args, PropagationConfig)
    models = build_ablation(args.weights, args.variant)
    edited = load_video(args.edited, models.config.channels)
    masks = load_mask(args.mask)
    if masks.shape != edited.shape[:3]:
        raise ShapeError(f"Masks {masks.shape} do not match the edited frames {edited.shape}.")

    stream = open_stream(args.stream)
    initial = _initial_frames(stream, edited.shape[0], models.config.channels)
    latency_log = [] if args.latency_log else None

    frames = list(edited)
    for index, frame in propagate(models, initial, edited, masks, args.prompt, stream, config,
                                  latency_log=latency_log):
        LOG.info("emitted frame %d", index)
        frames.append(frame)

    manifest = new_manifest("propagate", config.seed, propagation=config)
    manifest.inputs = {"stream": args.stream, "edited": args.edited, "mask": args.mask, "prompt": args.prompt,
                       "variant": args.variant, "weights": args.weights}
    manifest.add_weights(args.weights)
    if args.latency_log:
        write_latency_csv(args.latency_log, latency_log)
        manifest.outputs.append(args.latency_log)
    save_video(args.out, np.stack(frames), manifest)
    return Ret.CODE.RET_OK
