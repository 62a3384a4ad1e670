""" Argument helpers shared by the command modules. """
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
import dataclasses
import logging
import typing
from typing import Callable, Iterable, Optional, Type

import numpy as np

from pyEditCtrl.ret import EditCtrlError, Ret
from pyEditCtrl.run_config import ConfigT, config_to_dict, resolve_config
from pyEditCtrl.run_manifest import RunManifest, write_manifest
from pyEditCtrl.tensor_io import save_etf

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

CommandFn = Callable[[argparse.Namespace], Ret.CODE]

################################################################################
# Classes
################################################################################


################################################################################
# Functions
################################################################################

def _argument_type(hint) -> dict:
    """ Maps a config field type hint to argparse keyword arguments. """
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union and type(None) in args:
        hint = [arg for arg in args if arg is not type(None)][0]
        origin = typing.get_origin(hint)
        args = typing.get_args(hint)

    if origin is list:
        return {"type": args[0], "nargs": "+"}
    if hint is bool:
        return {"action": argparse.BooleanOptionalAction}
    return {"type": hint}


def add_config_arguments(parser: argparse.ArgumentParser,
                         config_cls: Type,
                         exclude: Iterable[str] = (),
                         aliases: Optional[dict] = None) -> None:
    """ Adds one --key flag per config field. Flags default to None so unset flags never override the file.

    Args:
        parser: The command parser.
        config_cls: Config dataclass whose fields become flags.
        exclude: Field names without a flag.
        aliases: Field name -> additional flag spellings.
    """
    aliases = aliases or {}
    hints = typing.get_type_hints(config_cls)
    group = parser.add_argument_group(f"{config_cls.__name__} keys")
    for fld in dataclasses.fields(config_cls):
        if fld.name in exclude:
            continue
        flags = [f"--{fld.name}"] + list(aliases.get(fld.name, ()))
        group.add_argument(*flags,
                           dest=fld.name,
                           default=None,
                           metavar=f"<{fld.name}>" if hints[fld.name] is not bool else None,
                           help=f"Overrides the config key '{fld.name}'.",
                           **_argument_type(hints[fld.name]))


def config_overrides(args: argparse.Namespace, config_cls: Type, exclude: Iterable[str] = ()) -> dict:
    """ Collects the flag values of a config class from parsed arguments. """
    return {fld.name: getattr(args, fld.name, None) for fld in dataclasses.fields(config_cls)
            if fld.name not in exclude}


def resolve_from_args(args: argparse.Namespace,
                      config_cls: Type[ConfigT],
                      file_attr: str = "config",
                      exclude: Iterable[str] = ()) -> ConfigT:
    """ Resolves a config record from defaults, the file given by --<file_attr> and the flags. """
    return resolve_config(config_cls, getattr(args, file_attr, None), config_overrides(args, config_cls, exclude))


def add_weights_argument(parser: argparse.ArgumentParser, required: bool = True) -> None:
    """ Adds --weights <checkpoint directory>. """
    parser.add_argument(
        '-w',
        '--weights',
        type=str,
        required=required,
        metavar="<checkpoint directory>",
        help="Directory holding model_config.json and the .etw weight files."
    )


def add_config_file_argument(parser: argparse.ArgumentParser, dest: str = "config", flag: str = "--config",
                             what: str = "command") -> None:
    """ Adds a --config <file> option. """
    parser.add_argument(
        flag,
        dest=dest,
        type=str,
        required=False,
        metavar="<JSON or TOML file>",
        help=f"The {what} configuration file; flags override its values."
    )


def run_guarded(func: CommandFn, args: argparse.Namespace) -> Ret.CODE:
    """ Runs a command body and turns library exceptions into exit codes.

    Returns:
        Ret.CODE: RET_OK, the code carried by an EditCtrlError or RET_ERROR_FILE_OPEN_FAILED on I/O errors.
    """
    try:
        return func(args)
    except EditCtrlError as exc:
        LOG.error("%s", exc)
        return exc.code
    except OSError as exc:
        LOG.error("%s", exc)
        return Ret.CODE.RET_ERROR_FILE_OPEN_FAILED


def new_manifest(command: str, seed: Optional[int] = None, **configs) -> RunManifest:
    """ Starts a manifest with the resolved config records. """
    return RunManifest(command=command, seed=seed,
                       config={name: config_to_dict(config) for name, config in configs.items()})


def save_video(path: str, video: np.ndarray, manifest: RunManifest) -> None:
    """ Writes an ETF video and its run manifest. """
    save_etf(path, np.asarray(video, dtype=np.float32))
    manifest.outputs.append(path)
    write_manifest(path, manifest)
    print(f"Wrote {path}.")
