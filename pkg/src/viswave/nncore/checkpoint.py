"""Model checkpoints: manifest.json (spec, hyperparameters, seed, step) plus
params.bin with little-endian floats in spec order."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import TruncatedFileError, UnsupportedVersionError
from .network import NetworkSpec, init_params, spec_from_dict, spec_to_dict

CHECKPOINT_VERSION = "1"


def save_checkpoint(
    directory: str | Path,
    spec: NetworkSpec,
    params: list[np.ndarray],
    hyperparameters: dict,
    seed: int,
    step: int,
) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dtype = params[0].dtype if params else np.dtype(np.float64)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "spec": spec_to_dict(spec),
        "hyperparameters": hyperparameters,
        "seed": int(seed),
        "step": int(step),
        "dtype": dtype.name,
        "param_shapes": [list(p.shape) for p in params],
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    le = "<f4" if dtype == np.float32 else "<f8"
    with open(directory / "params.bin", "wb") as f:
        for p in params:
            f.write(np.ascontiguousarray(p, dtype=le).tobytes())


def load_checkpoint(directory: str | Path):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint format_version {manifest.get('format_version')!r}"
        )
    spec = spec_from_dict(manifest["spec"])
    le = "<f4" if manifest["dtype"] == "float32" else "<f8"
    itemsize = 4 if manifest["dtype"] == "float32" else 8
    raw = (directory / "params.bin").read_bytes()
    shapes = [tuple(s) for s in manifest["param_shapes"]]
    expected = sum(int(np.prod(s)) for s in shapes) * itemsize
    if len(raw) != expected:
        raise TruncatedFileError(f"params.bin is {len(raw)} bytes, expected {expected}")
    params = []
    offset = 0
    for shape in shapes:
        n = int(np.prod(shape))
        params.append(np.frombuffer(raw, dtype=le, count=n, offset=offset).reshape(shape).copy())
        offset += n * itemsize
    return spec, params, manifest
