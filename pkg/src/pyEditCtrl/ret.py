""" The error codes, messages and exceptions of pyEditCtrl. """
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

from dataclasses import dataclass
from enum import IntEnum

################################################################################
# Variables
################################################################################


################################################################################
# Classes
################################################################################


@dataclass
class Ret():
    """ The return values of pyEditCtrl. """

    class CODE(IntEnum):
        """ The the return values and messages of pyEditCtrl. """
        RET_OK = 0
        RET_ERROR = 1
        RET_ERROR_BAD_INPUT = 2  # Must be 2 to match the argparse error code.
        RET_ERROR_EMPTY_MASK = 3
        RET_ERROR_MISSING_WEIGHTS = 4
        RET_ERROR_OVERLAPPING_REGIONS = 5
        RET_ERROR_TRAINING_DIVERGED = 6
        RET_ERROR_STREAM_GAP = 7
        RET_ERROR_EDIT_LEFT_FRAME = 8
        RET_ERROR_FILE_OPEN_FAILED = 9

    MSG = {
        CODE.RET_OK:                            "Process successful.",
        CODE.RET_ERROR:                         "Error occurred.",
        CODE.RET_ERROR_BAD_INPUT:               "Invalid arguments, configuration or input file.",
        CODE.RET_ERROR_EMPTY_MASK:              "The edit mask is empty, nothing to edit.",
        CODE.RET_ERROR_MISSING_WEIGHTS:         "Required weights are missing. " +
                                                "Run the prerequisite training stage first.",
        CODE.RET_ERROR_OVERLAPPING_REGIONS:     "The dilated masks of two edit regions overlap.",
        CODE.RET_ERROR_TRAINING_DIVERGED:       "The training loss became NaN or infinite.",
        CODE.RET_ERROR_STREAM_GAP:              "The frame stream skipped a frame index.",
        CODE.RET_ERROR_EDIT_LEFT_FRAME:         "The propagated edit mask left the frame.",
        CODE.RET_ERROR_FILE_OPEN_FAILED:        "Failed to open file.",
    }


class EditCtrlError(Exception):
    """ Base class of all pyEditCtrl errors. Every subclass carries its exit code. """
    code: Ret.CODE = Ret.CODE.RET_ERROR


class ShapeError(EditCtrlError, ValueError):
    """ Tensor or video extents do not fit the operation. """
    code = Ret.CODE.RET_ERROR_BAD_INPUT


class ConfigError(EditCtrlError, ValueError):
    """ Unknown configuration key or invalid configuration value. """
    code = Ret.CODE.RET_ERROR_BAD_INPUT


class FormatError(EditCtrlError, ValueError):
    """ A tensor or weights file is malformed. """
    code = Ret.CODE.RET_ERROR_BAD_INPUT


class PromptError(EditCtrlError, ValueError):
    """ A prompt uses an unknown word or is too long. """
    code = Ret.CODE.RET_ERROR_BAD_INPUT


class EmptyMaskError(EditCtrlError, ValueError):
    """ The mask selects no token, so there is nothing to edit. """
    code = Ret.CODE.RET_ERROR_EMPTY_MASK


class MissingWeightsError(EditCtrlError, FileNotFoundError):
    """ A checkpoint or weight tensor required by the operation is missing. """
    code = Ret.CODE.RET_ERROR_MISSING_WEIGHTS


class OverlappingRegionsError(EditCtrlError, ValueError):
    """ Two regions of a region set overlap after dilation. """
    code = Ret.CODE.RET_ERROR_OVERLAPPING_REGIONS


class TrainingDivergedError(EditCtrlError, ArithmeticError):
    """ A training loss became NaN or infinite. """
    code = Ret.CODE.RET_ERROR_TRAINING_DIVERGED


class StreamGapError(EditCtrlError, LookupError):
    """ A frame stream could not deliver the next frame index. """
    code = Ret.CODE.RET_ERROR_STREAM_GAP


class EditLeftFrameError(EditCtrlError):
    """ The flow-warped mask became empty during propagation. """
    code = Ret.CODE.RET_ERROR_EDIT_LEFT_FRAME


class FlopMismatchError(EditCtrlError, ArithmeticError):
    """ Counted FLOPs of a benchmark run differ from the closed-form count. """


################################################################################
# Functions
################################################################################
