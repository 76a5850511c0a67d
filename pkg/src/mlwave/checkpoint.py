"""Checkpoint directories: one binary tensor file per parameter plus text metadata.

Layout::

    config.txt        key=value network configuration
    manifest.txt      one "name shape dtype" line per tensor, e.g. "embed.w 16x3x3x3 float32"
    tensors/<name>.mlwt
    banks/<prefix>.txt   every LWN filter bank in the bank text format
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .network import NetworkConfig, NetworkParams, param_specs
from .tensor import Tensor, TensorFormatError, load_tensor, save_tensor
from .wavelet import save_bank

_CONFIG_KEYS = ("base_width", "scales", "blocks_per_stage", "r", "filter_len")


class CheckpointError(ValueError):
    pass


def _format_shape(shape):
    return "x".join(str(d) for d in shape) if shape else "scalar"


def save_checkpoint(path, params: NetworkParams, config: NetworkConfig) -> None:
    root = Path(path)
    (root / "tensors").mkdir(parents=True, exist_ok=True)
    (root / "banks").mkdir(exist_ok=True)
    lines = []
    for name in sorted(params.tensors):
        t = params[name]
        save_tensor(root / "tensors" / f"{name}.mlwt", t)
        lines.append(f"{name} {_format_shape(t.shape)} {t.dtype.name}")
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")
    for prefix in params.bank_prefixes():
        save_bank(root / "banks" / f"{prefix}.txt", params.bank(prefix))
    cfg = [f"{k}={','.join(map(str, v)) if isinstance(v, tuple) else v}"
           for k, v in ((k, getattr(config, k)) for k in _CONFIG_KEYS)]
    (root / "config.txt").write_text("\n".join(cfg) + "\n")


def load_config_file(path) -> NetworkConfig:
    values = {}
    for line in Path(path).read_text().splitlines():
        key, sep, raw = line.partition("=")
        if not sep or key not in _CONFIG_KEYS:
            raise CheckpointError(f"bad checkpoint config line {line!r}")
        values[key] = tuple(int(v) for v in raw.split(",")) if key == "blocks_per_stage" else int(raw)
    try:
        return NetworkConfig(**values)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(str(exc)) from exc


def load_checkpoint(path) -> tuple[NetworkParams, NetworkConfig]:
    """Inverse of :func:`save_checkpoint`; shapes are checked against the config."""
    root = Path(path)
    if not (root / "manifest.txt").is_file():
        raise CheckpointError(f"{root} has no manifest.txt")
    config = load_config_file(root / "config.txt")
    specs = param_specs(config)
    tensors = {}
    for line in (root / "manifest.txt").read_text().splitlines():
        parts = line.split()
        if len(parts) != 3:
            raise CheckpointError(f"bad manifest line {line!r}")
        name, shape, dtype = parts
        try:
            t = load_tensor(root / "tensors" / f"{name}.mlwt")
        except (OSError, TensorFormatError) as exc:
            raise CheckpointError(f"cannot read tensor {name}: {exc}") from exc
        if _format_shape(t.shape) != shape or t.dtype.name != dtype:
            raise CheckpointError(f"tensor {name} does not match its manifest entry")
        if name not in specs or tuple(specs[name][0]) != t.shape:
            raise CheckpointError(f"tensor {name} does not fit the checkpoint config")
        tensors[name] = Tensor(t.data, requires_grad=True, name=name, dtype=t.dtype)
    missing = set(specs) - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint lacks {sorted(missing)[0]}")
    return NetworkParams({k: tensors[k] for k in specs}), config
