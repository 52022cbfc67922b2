"""Reward shaping, observation encoding, and deterministic MLP actor inference.

The portable weight file lets any trainer hand over an actor: a magic tag,
a JSON header (widths, activation, action count), float64 little-endian
arrays, and a trailing CRC32.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ChecksumError, FormatError, ShapeMismatch
from .fock import DensityMatrix, FockSpace

WEIGHT_MAGIC = b"CFPWNET1"
WEIGHT_VERSION = 1


def reward(fidelity: float) -> float:
    """r = F^4 + 4 F^25; dense guidance plus a sharp peak at unit fidelity."""
    if not -1e-12 <= fidelity <= 1.0 + 1e-12:
        raise ValueError(f"fidelity {fidelity} outside [0, 1]")
    f = min(max(fidelity, 0.0), 1.0)
    return float(f**4 + 4.0 * f**25)


def observation_length(dim: int, complex_mode: bool) -> int:
    return 2 * dim * dim if complex_mode else dim * dim


def encode_observation(rho: DensityMatrix, complex_mode: bool) -> np.ndarray:
    """Row-major flattening of the estimate; imaginary parts appended only
    when the target carries a relative phase (complex mode)."""
    real = rho.entries.real.ravel()
    if complex_mode:
        return np.concatenate([real, rho.entries.imag.ravel()])
    return real.copy()


def decode_observation(values: np.ndarray, space: FockSpace, complex_mode: bool) -> DensityMatrix:
    """Inverse of encode_observation up to Hermitization."""
    values = np.asarray(values, dtype=float)
    expected = observation_length(space.dim, complex_mode)
    if values.shape != (expected,):
        raise ShapeMismatch(f"observation length {values.shape} != ({expected},)")
    d = space.dim
    if complex_mode:
        entries = values[: d * d].reshape(d, d) + 1j * values[d * d :].reshape(d, d)
    else:
        entries = values.reshape(d, d).astype(complex)
    entries = 0.5 * (entries + entries.conj().T)
    return DensityMatrix(entries, space)


@dataclass(frozen=True)
class PolicyNet:
    """Feed-forward actor: tanh hidden layers, tanh-squashed outputs."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    action_dim: int
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation != "tanh":
            raise FormatError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("weights and biases must pair up")
        if self.action_dim not in (1, 2):
            raise ShapeMismatch(f"action_dim must be 1 or 2, got {self.action_dim}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeMismatch(f"layer {i} shapes {w.shape} / {b.shape}")
            if i > 0 and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeMismatch(f"layer {i} input width {w.shape[1]} mismatched")
        if self.weights[-1].shape[0] != self.action_dim:
            raise ShapeMismatch(
                f"output width {self.weights[-1].shape[0]} != action_dim {self.action_dim}"
            )

    @property
    def layer_widths(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]


def act(net: PolicyNet, obs: np.ndarray) -> complex:
    """Deterministic forward pass; returns the complex displacement action."""
    x = np.asarray(obs, dtype=float)
    if x.shape != (net.layer_widths[0],):
        raise ShapeMismatch(
            f"observation length {x.shape} != ({net.layer_widths[0]},)"
        )
    for w, b in zip(net.weights, net.biases):
        x = np.tanh(w @ x + b)
    if net.action_dim == 1:
        return complex(x[0], 0.0)
    return complex(x[0], x[1])


def save_policy(net: PolicyNet, path) -> None:
    header = {
        "version": WEIGHT_VERSION,
        "action_dim": net.action_dim,
        "activation": net.activation,
        "layer_widths": net.layer_widths,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [WEIGHT_MAGIC, struct.pack("<I", len(header_bytes)), header_bytes]
    for w, b in zip(net.weights, net.biases):
        chunks.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        chunks.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_policy(path) -> PolicyNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(WEIGHT_MAGIC) + 8:
        raise FormatError("weight file too short")
    if blob[: len(WEIGHT_MAGIC)] != WEIGHT_MAGIC:
        raise FormatError("bad magic in weight file")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("weight file checksum mismatch")
    offset = len(WEIGHT_MAGIC)
    (header_len,) = struct.unpack_from("<I", body, offset)
    offset += 4
    if offset + header_len > len(body):
        raise FormatError("truncated weight file header")
    try:
        header = json.loads(body[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable weight file header: {exc}") from exc
    offset += header_len
    if header.get("version") != WEIGHT_VERSION:
        raise FormatError(f"unsupported weight file version {header.get('version')}")
    widths = header.get("layer_widths")
    action_dim = header.get("action_dim")
    if not isinstance(widths, list) or len(widths) < 2:
        raise FormatError("header layer_widths missing or malformed")
    weights = []
    biases = []
    for w_in, w_out in zip(widths[:-1], widths[1:]):
        need = w_out * w_in * 8
        if offset + need > len(body):
            raise FormatError("weight file truncated in weight block")
        weights.append(
            np.frombuffer(body, dtype="<f8", count=w_out * w_in, offset=offset)
            .reshape(w_out, w_in)
            .copy()
        )
        offset += need
        need = w_out * 8
        if offset + need > len(body):
            raise FormatError("weight file truncated in bias block")
        biases.append(np.frombuffer(body, dtype="<f8", count=w_out, offset=offset).copy())
        offset += need
    if offset != len(body):
        raise FormatError(f"{len(body) - offset} trailing bytes in weight file")
    # PolicyNet validation raises ShapeMismatch on header/array disagreement
    return PolicyNet(
        weights=tuple(weights),
        biases=tuple(biases),
        action_dim=action_dim,
        activation=header.get("activation", "tanh"),
    )
