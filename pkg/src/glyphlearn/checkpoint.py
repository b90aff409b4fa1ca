"""Binary model checkpoints: network weights plus token-noise parameters.

Layout (all integers little-endian uint32 unless noted):
  magic "GLCP", format version, config-echo length + JSON bytes,
  tensor count, then per tensor (sorted by name): name length + UTF-8 name,
  ndim, dims..., float32 payload; trailing CRC32 of everything before it.

The config echo pins the architecture; loading against a different
architecture fails loudly rather than mis-binding tensors. Weights are
float32 on disk, so quantized weights round-trip losslessly and a repeated
save yields identical bytes.
"""

from __future__ import annotations

import io
import json
import struct
import zlib

import numpy as np

from .config import ArchConfig, RunConfig
from .errors import DataError
from .nets import NetworkWeights
from .token_model import TokenNoiseParams

MAGIC = b"GLCP"
VERSION = 1

_NOISE_KEYS = ("token_noise.sigma_loc", "token_noise.sigma_traj", "token_noise.affine_cov")


def _u32(x: int) -> bytes:
    return struct.pack("<I", x)


def save_checkpoint(
    weights: NetworkWeights, noise: TokenNoiseParams, path: str
) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(_u32(VERSION))
    echo = json.dumps(
        {"arch": weights.arch.__dict__, "canvas_size": weights.canvas_size},
        sort_keys=True,
    ).encode("utf-8")
    buf.write(_u32(len(echo)))
    buf.write(echo)

    tensors = dict(weights.tensors)
    tensors["token_noise.sigma_loc"] = np.array([noise.sigma_loc])
    tensors["token_noise.sigma_traj"] = np.array([noise.sigma_traj])
    tensors["token_noise.affine_cov"] = noise.affine_cov
    buf.write(_u32(len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype=np.float32)
        nb = name.encode("utf-8")
        buf.write(_u32(len(nb)))
        buf.write(nb)
        buf.write(_u32(arr.ndim))
        for d in arr.shape:
            buf.write(_u32(d))
        buf.write(arr.astype("<f4").tobytes())
    payload = buf.getvalue()
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(_u32(crc))


def load_checkpoint(
    path: str, expect: RunConfig | None = None
) -> tuple[NetworkWeights, TokenNoiseParams]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if len(blob) < 16:
        raise DataError(f"checkpoint {path} is truncated")
    payload, crc_bytes = blob[:-4], blob[-4:]
    crc = struct.unpack("<I", crc_bytes)[0]
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise DataError(f"checkpoint {path} failed its CRC check")
    view = io.BytesIO(payload)
    if view.read(4) != MAGIC:
        raise DataError(f"checkpoint {path} has a bad magic header")
    (version,) = struct.unpack("<I", view.read(4))
    if version != VERSION:
        raise DataError(f"checkpoint {path} is format version {version}, expected {VERSION}")
    (echo_len,) = struct.unpack("<I", view.read(4))
    echo = json.loads(view.read(echo_len).decode("utf-8"))
    arch = ArchConfig(**echo["arch"])
    canvas_size = int(echo["canvas_size"])
    if expect is not None:
        if arch != expect.arch or canvas_size != expect.canvas_size:
            raise DataError(
                "checkpoint architecture does not match the run configuration: "
                f"{echo} vs {{'arch': {expect.arch.__dict__}, 'canvas_size': {expect.canvas_size}}}"
            )
    (count,) = struct.unpack("<I", view.read(4))
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", view.read(4))
        name = view.read(nlen).decode("utf-8")
        (ndim,) = struct.unpack("<I", view.read(4))
        shape = struct.unpack(f"<{ndim}I", view.read(4 * ndim)) if ndim else ()
        n_items = int(np.prod(shape)) if ndim else 1
        raw = view.read(4 * n_items)
        if len(raw) != 4 * n_items:
            raise DataError(f"checkpoint {path} tensor {name!r} is truncated")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    noise = TokenNoiseParams(
        sigma_loc=float(tensors.pop("token_noise.sigma_loc")[0]),
        sigma_traj=float(tensors.pop("token_noise.sigma_traj")[0]),
        affine_cov=tensors.pop("token_noise.affine_cov"),
    )
    return NetworkWeights(arch, canvas_size, tensors), noise
