""" Run manifests written next to every command output. """
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

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Optional

from pyEditCtrl.tensor_io import write_atomic
from pyEditCtrl.version import __version__

################################################################################
# Variables
################################################################################

LOG: logging.Logger = logging.getLogger(__name__)

MANIFEST_SUFFIX = ".manifest.json"
WEIGHT_SUFFIXES = (".etw",)
_HASH_CHUNK = 1 << 20

################################################################################
# Classes
################################################################################


@dataclass
class RunManifest:
    """ Everything needed to reproduce one command run.

    Attributes:
        command: CLI command name.
        config: Resolved configuration records by name.
        seed: Seed of the run (None if the command draws no noise).
        inputs: Input role -> path.
        outputs: Paths written by the run.
        weights: Weight file path -> git blob SHA-1.
        timestamp: UTC time of the run, ISO 8601.
        version: Package version.
    """
    command: str
    config: dict = field(default_factory=dict)
    seed: Optional[int] = None
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    weights: dict = field(default_factory=dict)
    timestamp: str = ""
    version: str = __version__

    def add_weights(self, directory: str) -> None:
        """ Hashes every weight file of a checkpoint directory. """
        if not os.path.isdir(directory):
            return
        for name in sorted(os.listdir(directory)):
            if name.endswith(WEIGHT_SUFFIXES):
                path = os.path.join(directory, name)
                self.weights[path] = git_blob_sha1(path)

    def to_json(self) -> str:
        """ Serialises the manifest with sorted keys. """
        return json.dumps(asdict(self), indent=4, sort_keys=True)


################################################################################
# Functions
################################################################################

def git_blob_sha1(path: str) -> str:
    """ SHA-1 of a file as git computes it for a blob ("blob <size>\\0" + content). """
    hasher = hashlib.sha1()
    hasher.update(f"blob {os.path.getsize(path)}\0".encode("ascii"))
    with open(path, "rb") as blob:
        for chunk in iter(lambda: blob.read(_HASH_CHUNK), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def manifest_path(output_path: str) -> str:
    """ Gets the manifest path of an output file or directory. """
    return output_path.rstrip("/\\") + MANIFEST_SUFFIX


def write_manifest(output_path: str, manifest: RunManifest) -> str:
    """ Stamps the manifest with the current time and writes it atomically next to the output.

    Returns:
        str: The manifest path.
    """
    manifest.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    path = manifest_path(output_path)
    write_atomic(path, manifest.to_json().encode("UTF-8"))
    LOG.info("wrote manifest %s", path)
    return path


def read_manifest(path: str) -> RunManifest:
    """ Loads a manifest written by write_manifest(). """
    with open(path, "r", encoding="UTF-8") as manifest_file:
        return RunManifest(**json.load(manifest_file))
