"""Versioned named-array checkpoints.

The container is a plain .npz archive (zip of .npy members, each with its own
shape/dtype header) plus a format version entry. Float64 arrays round-trip
bit-exactly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigurationError

FORMAT_VERSION = 1
_VERSION_KEY = "__format_version__"


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray]) -> None:
    if _VERSION_KEY in arrays:
        raise ConfigurationError(f"{_VERSION_KEY} is a reserved checkpoint key")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **{_VERSION_KEY: np.int64(FORMAT_VERSION)}, **arrays)


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    with np.load(Path(path), allow_pickle=False) as archive:
        if _VERSION_KEY not in archive:
            raise ConfigurationError(f"{path} is not a checkpoint (missing {_VERSION_KEY})")
        version = int(archive[_VERSION_KEY])
        if version != FORMAT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {version}")
        return {k: archive[k] for k in archive.files if k != _VERSION_KEY}
