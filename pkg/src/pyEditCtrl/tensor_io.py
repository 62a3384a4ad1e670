""" Portable tensor ("ETF") and weights ("ETW") containers.

    ETF: magic b"ETF1", u32 rank, rank x u32 extents, u8 dtype code
    (0 = float32, 1 = float64), row-major little-endian payload.

    ETW: magic b"ETW1", u32 entry count, then per entry a u32 length-prefixed
    UTF-8 name, an embedded ETF blob and a frozen flag byte.
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

import io
import logging
import os
import struct
import tempfile
from dataclasses import dataclass
from typing import BinaryIO

import numpy as np

from pyEditCtrl.ret import FormatError
from pyEditCtrl.tensor import Tensor

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

ETF_MAGIC = b"ETF1"
ETW_MAGIC = b"ETW1"

_DTYPE_CODES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
}
_CODE_OF_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}

################################################################################
# Classes
################################################################################


@dataclass
class WeightEntry:
    """ One named tensor of a weights container. """
    name: str
    data: np.ndarray
    frozen: bool


################################################################################
# Functions
################################################################################

# pylint: disable=R1732
def _open_file(file_path: str, mode: str):
    """ Opens a binary file in the given mode.

    Raises:
        IOError: If the file does not exist, cannot be accessed or cannot be opened.
    """
    try:
        return open(file_path, mode)

    except FileNotFoundError as exc:
        raise IOError(f"File '{file_path}' not found.") from exc
    except PermissionError as exc:
        raise IOError(f"Permission denied for '{file_path}'.") from exc
    except Exception as exc:
        raise IOError(f"Error opening file '{file_path}': {exc}") from exc


def _read_exact(stream: BinaryIO, count: int) -> bytes:
    data = stream.read(count)
    if len(data) != count:
        raise FormatError("Unexpected end of tensor data.")
    return data


def write_atomic(path: str, payload: bytes) -> None:
    """ Writes bytes to a sibling temporary file and renames it over path. """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    handle, tmp_path = tempfile.mkstemp(prefix=".tmp_", dir=directory)
    try:
        with os.fdopen(handle, "wb") as tmp_file:
            tmp_file.write(payload)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_etf_stream(stream: BinaryIO, array: np.ndarray) -> None:
    """ Serialises one array as an ETF blob. """
    array = np.asarray(array)
    if np.issubdtype(array.dtype, np.floating) and array.dtype not in _CODE_OF_DTYPE:
        array = array.astype(np.float32)
    elif not np.issubdtype(array.dtype, np.floating):
        array = array.astype(np.float32)
    code = _CODE_OF_DTYPE[np.dtype(array.dtype)]
    stream.write(ETF_MAGIC)
    stream.write(struct.pack("<I", array.ndim))
    stream.write(struct.pack(f"<{array.ndim}I", *array.shape))
    stream.write(struct.pack("<B", code))
    stream.write(np.ascontiguousarray(array, dtype=_DTYPE_CODES[code]).tobytes(order="C"))


def read_etf_stream(stream: BinaryIO) -> np.ndarray:
    """ Reads one ETF blob.

    Raises:
        FormatError: On a bad magic, unknown dtype code or truncated payload.
    """
    if _read_exact(stream, 4) != ETF_MAGIC:
        raise FormatError("Not an ETF tensor (bad magic).")
    (rank,) = struct.unpack("<I", _read_exact(stream, 4))
    shape = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank)) if rank else ()
    (code,) = struct.unpack("<B", _read_exact(stream, 1))
    if code not in _DTYPE_CODES:
        raise FormatError(f"Unknown ETF dtype code {code}.")
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.int64))
    payload = _read_exact(stream, count * dtype.itemsize)
    return np.frombuffer(payload, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def save_etf(path: str, array: np.ndarray) -> None:
    """ Writes an array to an ETF file atomically. """
    buffer = io.BytesIO()
    write_etf_stream(buffer, array)
    write_atomic(path, buffer.getvalue())
    LOG.debug("wrote ETF %s shape %s", path, np.shape(array))


def load_etf(path: str) -> np.ndarray:
    """ Reads an array from an ETF file. """
    with _open_file(path, "rb") as etf_file:
        return read_etf_stream(etf_file)


def save_etw(path: str, entries: list[WeightEntry]) -> None:
    """ Writes named tensors to an ETW file atomically; tensors are stored as float32. """
    buffer = io.BytesIO()
    buffer.write(ETW_MAGIC)
    buffer.write(struct.pack("<I", len(entries)))
    for entry in entries:
        name = entry.name.encode("utf-8")
        buffer.write(struct.pack("<I", len(name)))
        buffer.write(name)
        write_etf_stream(buffer, np.asarray(entry.data, dtype=np.float32))
        buffer.write(struct.pack("<B", 1 if entry.frozen else 0))
    write_atomic(path, buffer.getvalue())
    LOG.info("wrote %d tensors to %s", len(entries), path)


def load_etw(path: str) -> list[WeightEntry]:
    """ Reads all named tensors of an ETW file. """
    entries = []
    with _open_file(path, "rb") as etw_file:
        if _read_exact(etw_file, 4) != ETW_MAGIC:
            raise FormatError(f"'{path}' is not an ETW weights file (bad magic).")
        (count,) = struct.unpack("<I", _read_exact(etw_file, 4))
        for _ in range(count):
            (length,) = struct.unpack("<I", _read_exact(etw_file, 4))
            name = _read_exact(etw_file, length).decode("utf-8")
            data = read_etf_stream(etw_file)
            (flag,) = struct.unpack("<B", _read_exact(etw_file, 1))
            entries.append(WeightEntry(name, data, bool(flag)))
    return entries


def params_to_entries(params: dict[str, Tensor]) -> list[WeightEntry]:
    """ Converts a name -> parameter mapping into weight entries (sorted by name). """
    return [WeightEntry(name, tensor.data, tensor.frozen) for name, tensor in sorted(params.items())]


def assign_entries(params: dict[str, Tensor], entries: list[WeightEntry], strict: bool = True) -> list[str]:
    """ Copies stored values into existing parameters, keeping their dtype.

    Args:
        params: Name -> parameter of the receiving model.
        entries: Loaded weight entries.
        strict: If set, every parameter must be present in the entries.

    Returns:
        list[str]: Names of parameters that were not found in the entries.

    Raises:
        FormatError: On a shape mismatch, or a missing name in strict mode.
    """
    by_name = {entry.name: entry for entry in entries}
    missing = []
    for name, tensor in params.items():
        entry = by_name.get(name)
        if entry is None:
            missing.append(name)
            continue
        if entry.data.shape != tensor.shape:
            raise FormatError(f"Weight '{name}' has shape {entry.data.shape}, expected {tensor.shape}.")
        tensor.data = entry.data.astype(tensor.dtype)
    if strict and missing:
        raise FormatError(f"Weights file lacks {len(missing)} tensors, first: '{missing[0]}'.")
    return missing
