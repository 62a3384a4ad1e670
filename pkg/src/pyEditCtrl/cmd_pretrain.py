""" Command 'pretrain': backbone and full-attention control module training. """
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

from pyEditCtrl.cmd_common import (add_config_arguments, add_config_file_argument, new_manifest, resolve_from_args,
                                   run_guarded)
from pyEditCtrl.ret import Ret
from pyEditCtrl.run_config import STAGE_BASE, STAGE_CONTROL_FULL, ModelConfig, TrainConfig
from pyEditCtrl.run_manifest import write_manifest
from pyEditCtrl.training import pretrain, write_loss_csv

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

PRETRAIN_STAGES = (STAGE_BASE, STAGE_CONTROL_FULL)

################################################################################
# Classes
################################################################################

################################################################################
# Functions
################################################################################


def register(subparser) -> argparse.ArgumentParser:
    """ Register subparser commands for the pretrain module.

    Args:
        subparser (obj):   The command subparser object provided via __main__.py.

    Returns:
        obj:    The command parser object of this module.
    """
    parser = subparser.add_parser(
        'pretrain',
        help="Train the base backbone and the full-attention control module on synthetic clips."
    )

    parser.add_argument(
        '-o',
        '--out',
        type=str,
        required=True,
        metavar="<checkpoint directory>",
        help="Directory receiving model_config.json, base.etw, control.etw and the loss curves."
    )

    parser.add_argument(
        '--stage',
        type=str,
        choices=PRETRAIN_STAGES,
        required=False,
        help="Run only this stage (default: base, then control_full)."
    )

    parser.add_argument(
        '--init',
        type=str,
        required=False,
        metavar="<checkpoint directory>",
        help="Continue from the weights of an existing checkpoint directory."
    )

    add_config_file_argument(parser, what="training")
    add_config_file_argument(parser, dest="model_config", flag="--model-config", what="model")
    add_config_arguments(parser, TrainConfig, exclude=("stage",), aliases={"iterations": ("--iters",)})
    add_config_arguments(parser, ModelConfig)

    return parser


def execute(args) -> Ret.CODE:
    """ This function serves as entry point for the command 'pretrain'.
        It will be stored as callback for this modules subparser command.

    Args:
        args (obj): The command line arguments.

    Returns:
        Ret.CODE:   Returns Ret.RET_OK if successful or else the corresponding error code.
    """
    return run_guarded(_pretrain, args)


def _pretrain(args) -> Ret.CODE:
    train_config = resolve_from_args(args, TrainConfig, exclude=("stage",))
    model_config = resolve_from_args(args, ModelConfig, file_attr="model_config")
    stages = (args.stage,) if args.stage else PRETRAIN_STAGES

    results = pretrain(model_config, train_config, args.out, stages, args.init)
    for stage, result in results.items():
        write_loss_csv(os.path.join(args.out, f"loss_{stage}.csv"), result)

    manifest = new_manifest("pretrain", train_config.seed, train=train_config, model=model_config)
    manifest.inputs = {"init": args.init} if args.init else {}
    manifest.add_weights(args.out)
    manifest.outputs = sorted(manifest.weights)
    write_manifest(args.out, manifest)
    print(f"Wrote checkpoints of {', '.join(stages)} to {args.out}.")
    return Ret.CODE.RET_OK
