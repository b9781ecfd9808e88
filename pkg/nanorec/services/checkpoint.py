"""
Checkpoint format: an 8-byte little-endian header length, a canonical JSON
header (names, shapes, config, seed, extra), then every tensor as raw
little-endian float64 in sorted-name order. Identical bytes mean identical
models.
"""

from __future__ import annotations

import json
import logging
import os
import struct
from pathlib import Path

import numpy as np
import torch

from curerec.exceptions import ConfigurationError

from .config import ModelConfig
from .model import DTYPE, ModelState

logger = logging.getLogger(__name__)

FORMAT = "curerec-checkpoint/1"
_LENGTH = struct.Struct("<Q")


def _header(state: ModelState, extra: dict | None) -> dict:
    names = sorted(state.params)
    return {
        "format": FORMAT,
        "config": state.config.model_dump(),
        "seed": state.config.seed,
        "names": names,
        "shapes": [list(state.params[name].shape) for name in names],
        "extra": extra or {},
    }


def save_checkpoint(state: ModelState, path: str | Path, *, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _header(state, extra)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as handle:
        handle.write(_LENGTH.pack(len(blob)))
        handle.write(blob)
        for name in header["names"]:
            array = state.params[name].detach().cpu().numpy().astype("<f8", copy=False)
            handle.write(np.ascontiguousarray(array).tobytes())
    os.replace(tmp, path)
    logger.info("Saved checkpoint %s (%d tensors)", path, len(header["names"]))
    return path


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as handle:
        (length,) = _LENGTH.unpack(handle.read(_LENGTH.size))
        return json.loads(handle.read(length).decode("utf-8"))


def load_checkpoint(path: str | Path) -> ModelState:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ConfigurationError(f"checkpoint {path} does not exist") from None
    (length,) = _LENGTH.unpack_from(raw, 0)
    header = json.loads(raw[_LENGTH.size : _LENGTH.size + length].decode("utf-8"))
    if header.get("format") != FORMAT:
        raise ConfigurationError(f"{path} is not a {FORMAT} file")

    config = ModelConfig(**header["config"])
    offset = _LENGTH.size + length
    params: dict[str, torch.Tensor] = {}
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        array = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape)
        params[name] = torch.tensor(array, dtype=DTYPE)
        offset += count * 8
    if offset != len(raw):
        raise ConfigurationError(f"{path} has {len(raw) - offset} trailing bytes")
    return ModelState(config, params)
