"""Neural building blocks: shared canvas encoder, mixture-density heads for
stroke starts and offsets, a recurrent stroke model with additive attention,
and the stroke/type termination heads.

All forward passes run on the autodiff tape so the same code serves
sampling (values only), training (weight gradients), and inference
(gradients w.r.t. drawing coordinates through the rendered canvases).

Network coordinates are normalized to [-1, 1] canvas units; densities are
reported in pixel units via the constant Jacobian of that rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ArchConfig
from .errors import ContractError
from .gmm import GmmParams

Array = np.ndarray


@dataclass
class NetworkWeights:
    """Named weight arrays plus the architecture they instantiate."""

    arch: ArchConfig
    canvas_size: int
    tensors: dict[str, Array]

    def __post_init__(self):
        for name, arr in self.tensors.items():
            if not np.all(np.isfinite(arr)):
                raise ContractError(f"weight '{name}' contains non-finite values")

    def copy(self) -> "NetworkWeights":
        return NetworkWeights(self.arch, self.canvas_size, {k: v.copy() for k, v in self.tensors.items()})

    def quantized(self) -> "NetworkWeights":
        """Weights rounded to float32 resolution (the checkpoint precision)."""
        return NetworkWeights(
            self.arch,
            self.canvas_size,
            {k: v.astype(np.float32).astype(np.float64) for k, v in self.tensors.items()},
        )

    # encoder geometry ---------------------------------------------------

    def encoder_grid(self) -> tuple[int, int, int]:
        """(channels, h, w) of the encoder output."""
        size = self.canvas_size
        if self.arch.pool > 1:
            size = (size - self.arch.pool) // self.arch.pool + 1
        for _ in self.arch.channels:
            size = (size + 2 - 3) // 2 + 1
        return self.arch.channels[-1], size, size

    @property
    def flat_dim(self) -> int:
        c, h, w = self.encoder_grid()
        return c * h * w

    @property
    def norm_scale(self) -> float:
        """Pixels-to-normalized-units factor (2 / (size - 1))."""
        return 2.0 / (self.canvas_size - 1)

    @property
    def coord_jacobian(self) -> float:
        """log-density correction per 2-D point for pixel-unit reporting."""
        return 2.0 * float(np.log(self.norm_scale))


def init_weights(arch: ArchConfig, canvas_size: int, rng: np.random.Generator) -> NetworkWeights:
    """Glorot-uniform initialization of every submodel."""
    tensors: dict[str, Array] = {}

    def glorot(name, shape, fan_in, fan_out):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = rng.uniform(-lim, lim, shape)

    c_in = 1
    for i, c_out in enumerate(arch.channels):
        glorot(f"enc.conv{i}.w", (c_out, c_in, 3, 3), c_in * 9, c_out * 9)
        tensors[f"enc.conv{i}.b"] = np.zeros(c_out)
        c_in = c_out

    stub = NetworkWeights(arch, canvas_size, dict(tensors))
    flat = stub.flat_dim
    k = arch.mixture_components
    gmm_out = 6 * k

    glorot("loc.fc.w", (flat, arch.loc_hidden), flat, arch.loc_hidden)
    tensors["loc.fc.b"] = np.zeros(arch.loc_hidden)
    glorot("loc.out.w", (arch.loc_hidden, gmm_out), arch.loc_hidden, gmm_out)
    tensors["loc.out.b"] = np.zeros(gmm_out)

    glorot("term.fc.w", (flat, arch.term_hidden), flat, arch.term_hidden)
    tensors["term.fc.b"] = np.zeros(arch.term_hidden)
    glorot("term.out.w", (arch.term_hidden, 1), arch.term_hidden, 1)
    tensors["term.out.b"] = np.zeros(1)

    enc_ch = arch.channels[-1]
    in_dim = 2 + 2 + enc_ch
    hidden = arch.lstm_hidden
    glorot("stroke.lstm.w", (in_dim + hidden, 4 * hidden), in_dim + hidden, 4 * hidden)
    bias = np.zeros(4 * hidden)
    bias[hidden : 2 * hidden] = 1.0  # forget-gate bias
    tensors["stroke.lstm.b"] = bias
    glorot("stroke.out.w", (hidden, gmm_out + 1), hidden, gmm_out + 1)
    tensors["stroke.out.b"] = np.zeros(gmm_out + 1)

    glorot("attn.key.w", (enc_ch, arch.attn_hidden), enc_ch, arch.attn_hidden)
    tensors["attn.key.b"] = np.zeros(arch.attn_hidden)
    glorot("attn.query.w", (hidden, arch.attn_hidden), hidden, arch.attn_hidden)
    glorot("attn.v", (arch.attn_hidden, 1), arch.attn_hidden, 1)

    return NetworkWeights(arch, canvas_size, tensors)


class WeightTape:
    """Leaf tensors for one graph; reuse ties all ops to the same leaves.

    With ``constant=True`` the leaves are gradient-free constants, letting
    the backward pass skip every weight-gradient computation (inference over
    drawing coordinates with frozen weights).
    """

    def __init__(self, weights: NetworkWeights, constant: bool = False):
        self.weights = weights
        maker = ad.constant if constant else Tensor
        self.leaves: dict[str, Tensor] = {k: maker(v) for k, v in weights.tensors.items()}

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.leaves[name]
        except KeyError:
            raise ContractError(f"weights missing tensor '{name}' (unloaded checkpoint?)") from None

    def names(self) -> list[str]:
        return sorted(self.leaves)

    def grads(self) -> dict[str, Array]:
        return {
            k: (t.grad if t.grad is not None else np.zeros_like(t.value))
            for k, t in self.leaves.items()
        }


# ---------------------------------------------------------------------------
# forward passes


def encode_canvases(tape: WeightTape, canvases: Tensor) -> Tensor:
    """Shared CNN over a stack of canvases (N, H, W) -> (N, C, h, w)."""
    arch = tape.weights.arch
    n = canvases.shape[0]
    x = ad.reshape(canvases, (n, 1) + canvases.shape[1:])
    if arch.pool > 1:
        x = ad.mean_pool2d(x, arch.pool)
    for i in range(len(arch.channels)):
        x = ad.tanh(ad.conv2d(x, tape[f"enc.conv{i}.w"], tape[f"enc.conv{i}.b"], stride=2, pad=1))
    return x


def flatten_encoding(enc: Tensor) -> Tensor:
    n = enc.shape[0]
    return ad.reshape(enc, (n, int(np.prod(enc.shape[1:]))))


def location_head_raw(tape: WeightTape, enc_flat: Tensor) -> Tensor:
    h = ad.tanh(ad.add(ad.matmul(enc_flat, tape["loc.fc.w"]), tape["loc.fc.b"]))
    return ad.add(ad.matmul(h, tape["loc.out.w"]), tape["loc.out.b"])


def termination_head_logit(tape: WeightTape, enc_flat: Tensor) -> Tensor:
    h = ad.tanh(ad.add(ad.matmul(enc_flat, tape["term.fc.w"]), tape["term.fc.b"]))
    return ad.add(ad.matmul(h, tape["term.out.w"]), tape["term.out.b"])


def mdn_pieces(raw: Tensor, k: int, sigma_floor: float):
    """Split a raw head output (M, 6K) into mixture pieces:
    (logits (M,K), means (M,K,2), scales (M,K,2), corrs (M,K))."""
    m = raw.shape[0]
    logits = raw[:, :k]
    means = ad.reshape(raw[:, k : 3 * k], (m, k, 2))
    scales = ad.add(ad.softplus(ad.reshape(raw[:, 3 * k : 5 * k], (m, k, 2))), sigma_floor)
    corrs = ad.mul(0.99, ad.tanh(raw[:, 5 * k : 6 * k]))
    return logits, means, scales, corrs


def mdn_log_pdf_rows(logits, means, scales, corrs, points) -> Tensor:
    """Row-wise mixture log-density: one mixture and one 2-D point per row.

    Shapes: logits (M, K), means/scales (M, K, 2), corrs (M, K),
    points (M, 2) -> (M,).
    """
    logw = ad.sub(logits, ad.logsumexp(logits, axis=1, keepdims=True))
    dx = ad.sub(ad.reshape(points[:, 0], (-1, 1)), means[:, :, 0])
    dy = ad.sub(ad.reshape(points[:, 1], (-1, 1)), means[:, :, 1])
    sx = scales[:, :, 0]
    sy = scales[:, :, 1]
    one_m_r2 = ad.sub(1.0, ad.mul(corrs, corrs))
    zx = ad.div(dx, sx)
    zy = ad.div(dy, sy)
    quad = ad.sub(ad.add(ad.mul(zx, zx), ad.mul(zy, zy)), ad.mul(ad.mul(2.0, corrs), ad.mul(zx, zy)))
    log_norm = ad.add(
        ad.add(ad.log(ad.mul(sx, sy)), ad.mul(0.5, ad.log(one_m_r2))), float(np.log(2 * np.pi))
    )
    comp = ad.sub(ad.mul(-0.5, ad.div(quad, one_m_r2)), log_norm)
    return ad.logsumexp(ad.add(comp, logw), axis=1)


def gmm_params_from_raw(raw_row: Array, k: int, sigma_floor: float) -> GmmParams:
    """Numpy mixture parameters from one raw head output row (sampling path)."""
    logits = raw_row[:k]
    e = np.exp(logits - logits.max())
    weights = e / e.sum()
    means = raw_row[k : 3 * k].reshape(k, 2)
    scales = np.logaddexp(0.0, raw_row[3 * k : 5 * k]).reshape(k, 2) + sigma_floor
    corrs = 0.99 * np.tanh(raw_row[5 * k : 6 * k])
    return GmmParams(weights, means, scales, corrs)


def lstm_step(tape: WeightTape, x: Tensor, h: Tensor, c: Tensor):
    """One recurrent cell step; gate order [input, forget, cell, output]."""
    hidden = tape.weights.arch.lstm_hidden
    z = ad.add(ad.matmul(ad.concat([x, h], axis=1), tape["stroke.lstm.w"]), tape["stroke.lstm.b"])
    i = ad.sigmoid(z[:, :hidden])
    f = ad.sigmoid(z[:, hidden : 2 * hidden])
    g = ad.tanh(z[:, 2 * hidden : 3 * hidden])
    o = ad.sigmoid(z[:, 3 * hidden : 4 * hidden])
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def stroke_head_raw(tape: WeightTape, h: Tensor) -> Tensor:
    return ad.add(ad.matmul(h, tape["stroke.out.w"]), tape["stroke.out.b"])


def attention_keys(tape: WeightTape, enc: Tensor):
    """Per-stroke attention keys and values from an encoder output (N,C,h,w).

    Returns (keys (N, L, A), values (N, L, C)) with L = h * w.
    """
    n, c, gh, gw = enc.shape
    values = ad.transpose(ad.reshape(enc, (n, c, gh * gw)), (0, 2, 1))
    keys = ad.add(ad.matmul(values, tape["attn.key.w"]), tape["attn.key.b"])
    return keys, values


def attention_read(tape: WeightTape, keys: Tensor, values: Tensor, h: Tensor) -> Tensor:
    """Additive attention over the encoded grid; returns (B, C)."""
    b = h.shape[0]
    query = ad.reshape(ad.matmul(h, tape["attn.query.w"]), (b, 1, keys.shape[2]))
    scores = ad.matmul(ad.tanh(ad.add(keys, query)), tape["attn.v"])  # (B, L, 1)
    alpha = ad.softmax(ad.reshape(scores, (b, keys.shape[1])), axis=1)
    read = ad.matmul(ad.reshape(alpha, (b, 1, keys.shape[1])), values)  # (B, 1, C)
    return ad.reshape(read, (b, values.shape[2]))
