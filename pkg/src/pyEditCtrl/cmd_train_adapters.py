""" Command 'train-adapters': sparse LoRA adapters, injection projections and global embedder. """
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
from pyEditCtrl.run_config import TrainConfig
from pyEditCtrl.run_manifest import write_manifest
from pyEditCtrl.training import train_adapters, write_loss_csv

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
    """ Register subparser commands for the train-adapters module.

    Args:
        subparser (obj):   The command subparser object provided via __main__.py.

    Returns:
        obj:    The command parser object of this module.
    """
    parser = subparser.add_parser(
        'train-adapters',
        help="Fine-tune the sparse adapters with the piecewise loss and with the local loss only."
    )

    parser.add_argument(
        '-w',
        '--weights',
        type=str,
        required=True,
        metavar="<checkpoint directory>",
        help="Pretrained checkpoint directory; adapters.etw and adapters_no_gpsi.etw are written into it."
    )

    add_config_file_argument(parser, what="training")
    add_config_arguments(parser, TrainConfig, exclude=("stage",), aliases={"iterations": ("--iters",)})

    return parser


def execute(args) -> Ret.CODE:
    """ This function serves as entry point for the command 'train-adapters'.
        It will be stored as callback for this modules subparser command.

    Args:
        args (obj): The command line arguments.

    Returns:
        Ret.CODE:   Returns Ret.RET_OK if successful or else the corresponding error code.
    """
    return run_guarded(_train_adapters, args)


def _train_adapters(args) -> Ret.CODE:
    train_config = resolve_from_args(args, TrainConfig, exclude=("stage",))
    results = train_adapters(train_config, args.weights)
    for file_name, result in results.items():
        write_loss_csv(os.path.join(args.weights, f"loss_{os.path.splitext(file_name)[0]}.csv"), result)

    manifest = new_manifest("train-adapters", train_config.seed, train=train_config)
    manifest.inputs = {"weights": args.weights}
    manifest.add_weights(args.weights)
    manifest.outputs = [os.path.join(args.weights, file_name) for file_name in results]
    write_manifest(args.weights, manifest)
    print(f"Wrote {', '.join(results)} to {args.weights}.")
    return Ret.CODE.RET_OK
