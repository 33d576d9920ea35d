"""Shared per-media feature encoder: a small leaky-ReLU perceptron.

Every medium in every set runs through the same weights; set encoding is the
row-wise application of the single-vector map. No normalization happens here;
unit-length projection belongs to the reconstruction stage downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import MediaSet
from .errors import ConfigError, ShapeError

LEAKY_SLOPE = 0.25


@dataclass(eq=False)
class EncoderParams:
    """Layer weights (in, out), biases (out,), and the fixed leaky slope."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    alpha: float = LEAKY_SLOPE

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ConfigError("encoder needs matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} mismatch")
            if i > 0 and w.shape[0] != self.weights[i - 1].shape[1]:
                raise ShapeError(f"layer {i}: input width {w.shape[0]} breaks the chain")

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[1]


def init_encoder(
    dims: list[int], rng: np.random.Generator, std: float = 1e-3, alpha: float = LEAKY_SLOPE
) -> EncoderParams:
    """Gaussian-initialized encoder over the widths in `dims` (input first)."""
    if len(dims) < 2:
        raise ConfigError("dims must list the input width and at least one layer width")
    weights = [std * rng.standard_normal((dims[i], dims[i + 1])) for i in range(len(dims) - 1)]
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
    return EncoderParams(weights, biases, alpha)


def _leaky(z: np.ndarray, alpha: float) -> np.ndarray:
    return np.where(z > 0, z, alpha * z)


def encode_forward(params: EncoderParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Encode rows of `x`; also return per-layer pre-activations for backward."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.d_in:
        raise ShapeError(f"expected (n, {params.d_in}) input, got {x.shape}")
    pre = []
    h = x
    for w, b in zip(params.weights, params.biases):
        z = h @ w + b
        pre.append(z)
        h = _leaky(z, params.alpha)
    return h, [x] + pre


def encode_backward(
    params: EncoderParams, cache: list[np.ndarray], d_out: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
    """Backpropagate d(loss)/d(output) to the input and every weight and bias.

    `cache` is the second return of encode_forward. Returns (d_input,
    d_weights, d_biases) with shapes mirroring the parameters.
    """
    x, pre = cache[0], cache[1:]
    d_weights: list[np.ndarray] = [None] * len(params.weights)
    d_biases: list[np.ndarray] = [None] * len(params.biases)
    grad = np.asarray(d_out, dtype=np.float64)
    for i in range(len(params.weights) - 1, -1, -1):
        dz = grad * np.where(pre[i] > 0, 1.0, params.alpha)
        inp = x if i == 0 else _leaky(pre[i - 1], params.alpha)
        d_weights[i] = inp.T @ dz
        d_biases[i] = dz.sum(axis=0)
        grad = dz @ params.weights[i].T
    return grad, d_weights, d_biases


def encode_matrix(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Encode an (n, d_in) array of raw vectors to (n, d_out)."""
    out, _ = encode_forward(params, x)
    return out


def encode(params: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Encode a single raw vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("encode expects a single vector; use encode_matrix for batches")
    return encode_matrix(params, x[None, :])[0]


def encode_set(params: EncoderParams, s: MediaSet) -> np.ndarray:
    """Encode every medium of a set with the shared weights, preserving order."""
    return encode_matrix(params, s.matrix())
