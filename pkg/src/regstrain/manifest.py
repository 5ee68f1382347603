"""Run manifests: a JSON record sufficient to repeat a CLI run exactly.

A manifest stores the command and its arguments, the fully resolved
configuration, input files with SHA-256 digests, the root seed and the named
seeds derived from it, the artifacts written and summary numbers. It holds no
timestamps or host details, so repeating a run rewrites it byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

MANIFEST_NAME = "manifest.json"
SUBSTREAMS = ("speckle", "noise", "sampling")


def derive_seeds(root: int) -> dict:
    """Named 32-bit seeds spawned from ``root``; order of ``SUBSTREAMS`` is fixed."""
    children = np.random.SeedSequence(int(root)).spawn(len(SUBSTREAMS))
    return {name: int(child.generate_state(1)[0]) for name, child in zip(SUBSTREAMS, children)}


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return str(value)
    return value


@dataclass
class RunManifest:
    command: str
    argv: list
    config: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)
    inputs: list = field(default_factory=list)
    seed: int | None = None
    seeds: dict = field(default_factory=dict)
    artifacts: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    status: str = "ok"

    def add_input(self, path) -> None:
        self.inputs.append({"path": os.fspath(path), "sha256": sha256_file(path)})

    def add_artifact(self, path, out_dir) -> None:
        self.artifacts.append(os.path.relpath(path, out_dir))

    def to_json(self) -> str:
        return json.dumps(_plain(asdict(self)), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> str:
        path = os.path.join(out_dir, MANIFEST_NAME)
        with open(path, "w") as fh:
            fh.write(self.to_json())
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        if os.path.isdir(path):
            path = os.path.join(path, MANIFEST_NAME)
        with open(path) as fh:
            return cls(**json.load(fh))
