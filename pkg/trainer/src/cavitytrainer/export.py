"""Writer for the portable actor weight file.

Independent implementation of the documented format (magic `CFPWNET1`, JSON
header, float64-LE arrays, trailing CRC-32); the consumer's loader is the
other side of the contract and the cross-parity test meets in the middle.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

WEIGHT_MAGIC = b"CFPWNET1"
WEIGHT_VERSION = 1


def write_weight_file(layers, action_dim: int, path) -> None:
    """layers: ordered (weight, bias) pairs; tanh is applied after every
    layer at evaluation time, the last layer's width is the action count."""
    widths = [layers[0][0].shape[1]] + [w.shape[0] for w, _ in layers]
    if widths[-1] != action_dim:
        raise ValueError(f"last layer width {widths[-1]} != action_dim {action_dim}")
    header = {
        "version": WEIGHT_VERSION,
        "action_dim": action_dim,
        "activation": "tanh",
        "layer_widths": widths,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [WEIGHT_MAGIC, struct.pack("<I", len(header_bytes)), header_bytes]
    for weight, bias in layers:
        if weight.ndim != 2 or bias.shape != (weight.shape[0],):
            raise ValueError(f"bad layer shapes {weight.shape} / {bias.shape}")
        chunks.append(np.ascontiguousarray(weight, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(bias, dtype="<f8").tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def write_manifest(path, trainer_config: dict, env_spec: dict, extra: dict | None = None) -> None:
    manifest = {
        "format": "CFPWNET1",
        "trainer_config": trainer_config,
        "environment_spec": env_spec,
    }
    if extra:
        manifest.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
