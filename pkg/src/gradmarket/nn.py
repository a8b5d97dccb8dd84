"""Minimal dense-network engine with reverse-mode gradients.

Feed-forward stacks of affine layers with tanh hidden activations and one of
three output heads: plain logits, a softmax over the whole output vector, or
row-grouped softmaxes (each contiguous group of ``row_group`` logits is
normalized independently, the convention used for per-owner allocation heads
with a dummy slot).  A forward pass records a gradient tape; backward consumes
the tape exactly once and returns reverse-mode gradients for parameters and
input.  Matrix work goes through the kernel backend (compiled when available).

This module also owns the "MBRv1" checkpoint container: a magic string, a
JSON header (which records array shapes), then the arrays as raw little-endian
float64 bytes in row-major order.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from gradmarket.backend import kernels

OUTPUT_ACTIVATIONS = ("linear", "softmax_rows", "softmax_vector")

MBR_MAGIC = b"MBRv1\n"


@dataclass
class DenseNetwork:
    """Affine-tanh stack; the last layer is affine followed by the output head."""

    weights: list[np.ndarray]  # (d_in, d_out) per layer
    biases: list[np.ndarray]  # (d_out,) per layer
    output_activation: str = "linear"
    row_group: int | None = None  # group width for softmax_rows

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight/bias lists")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {i}: bias shape must match weight columns")
            if i > 0 and self.weights[i - 1].shape[1] != W.shape[0]:
                raise ValueError(f"layer {i}: input dim does not chain from layer {i-1}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        out_dim = self.weights[-1].shape[1]
        if self.output_activation == "softmax_rows":
            if not self.row_group or out_dim % self.row_group != 0:
                raise ValueError("softmax_rows needs row_group dividing the output dim")
        elif self.row_group is not None:
            raise ValueError("row_group only applies to softmax_rows")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [W.shape[1] for W in self.weights]


def init_network(
    layer_sizes: Sequence[int],
    output_activation: str,
    rng: np.random.Generator,
    row_group: int | None = None,
) -> DenseNetwork:
    """Uniform init in [-r, r] with r = sqrt(6 / (fan_in + fan_out)); zero biases."""
    if len(layer_sizes) < 2 or any(s < 1 for s in layer_sizes):
        raise ValueError("layer_sizes needs at least an input and an output dim")
    weights, biases = [], []
    for din, dout in zip(layer_sizes[:-1], layer_sizes[1:]):
        r = math.sqrt(6.0 / (din + dout))
        weights.append(rng.uniform(-r, r, size=(din, dout)))
        biases.append(np.zeros(dout))
    return DenseNetwork(weights, biases, output_activation, row_group)


@dataclass
class GradientTape:
    """Intermediates of one forward pass; consumed by at most one backward."""

    net: DenseNetwork
    x: np.ndarray  # (K, d_in)
    hidden: list[np.ndarray]  # post-tanh activations per hidden layer
    output: np.ndarray  # (K, d_out) after the output head
    squeezed: bool
    consumed: bool = field(default=False)


def forward(net: DenseNetwork, x: np.ndarray) -> tuple[np.ndarray, GradientTape]:
    """Run the network on a (K, d_in) batch or a single (d_in,) vector."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    squeezed = x.ndim == 1
    if squeezed:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise ValueError(f"input dim {x.shape} does not match network ({net.input_dim})")

    act = x
    hidden: list[np.ndarray] = []
    for W, b in zip(net.weights[:-1], net.biases[:-1]):
        z = np.empty((x.shape[0], W.shape[1]))
        kernels.linear_forward(act, W, b, z)
        kernels.tanh_forward(z, z)
        hidden.append(z)
        act = z
    logits = np.empty((x.shape[0], net.output_dim))
    kernels.linear_forward(act, net.weights[-1], net.biases[-1], logits)

    out = _apply_head(net, logits)
    tape = GradientTape(net, x, hidden, out, squeezed)
    return (out[0] if squeezed else out), tape


def _apply_head(net: DenseNetwork, logits: np.ndarray) -> np.ndarray:
    if net.output_activation == "linear":
        return logits
    if net.output_activation == "softmax_vector":
        return _softmax_groups(logits, logits.shape[1])
    return _softmax_groups(logits, net.row_group)


def _softmax_groups(logits: np.ndarray, group: int) -> np.ndarray:
    k, d = logits.shape
    z = logits.reshape(k, d // group, group)
    z = z - z.max(axis=2, keepdims=True)  # stable: shift each group by its max
    e = np.exp(z)
    return (e / e.sum(axis=2, keepdims=True)).reshape(k, d)


def backward(
    tape: GradientTape,
    upstream: np.ndarray,
    need_params: bool = True,
    need_input: bool = True,
):
    """Reverse-mode gradients of sum(upstream * output) for one recorded pass.

    Returns (param_grads, input_grad): a list of (dW, db) per layer (None when
    need_params is false) and the gradient with respect to the input (None when
    need_input is false).  The tape is consumed; a second call raises.
    """
    if tape.consumed:
        raise RuntimeError("gradient tape already consumed")
    tape.consumed = True
    net = tape.net

    up = np.ascontiguousarray(upstream, dtype=np.float64)
    if tape.squeezed:
        up = up[None, :]
    if up.shape != tape.output.shape:
        raise ValueError("upstream gradient shape must match the forward output")

    d_logits = _head_backward(net, tape.output, up)

    param_grads: list[tuple[np.ndarray, np.ndarray] | None] | None = (
        [None] * len(net.weights) if need_params else None
    )
    grad = d_logits
    for layer in range(len(net.weights) - 1, -1, -1):
        below = tape.hidden[layer - 1] if layer > 0 else tape.x
        want_dx = layer > 0 or need_input
        dx = np.empty_like(below) if want_dx else None
        if need_params:
            dW = np.empty_like(net.weights[layer])
            db = np.empty_like(net.biases[layer])
            kernels.linear_backward(grad, below, net.weights[layer], dW, db, dx)
            param_grads[layer] = (dW, db)
        elif want_dx:
            kernels.linear_backward_input(grad, net.weights[layer], dx)
        if layer > 0:
            # through the tanh of the layer below
            kernels.tanh_backward(dx, below, dx)
            grad = dx

    input_grad = None
    if need_input:
        input_grad = dx[0] if tape.squeezed else dx
    return param_grads, input_grad


def _head_backward(net: DenseNetwork, output: np.ndarray, up: np.ndarray) -> np.ndarray:
    if net.output_activation == "linear":
        return np.ascontiguousarray(up)
    group = output.shape[1] if net.output_activation == "softmax_vector" else net.row_group
    k, d = output.shape
    s = output.reshape(k, d // group, group)
    u = up.reshape(k, d // group, group)
    # d logits = s * (u - <u, s>_group)
    dot = (u * s).sum(axis=2, keepdims=True)
    return np.ascontiguousarray((s * (u - dot)).reshape(k, d))


def sgd_step(net: DenseNetwork, param_grads, lr: float) -> DenseNetwork:
    """In-place plain gradient-descent update: params -= lr * grads."""
    if not (lr >= 0.0 and math.isfinite(lr)):
        raise ValueError("learning rate must be finite and >= 0")
    if len(param_grads) != len(net.weights):
        raise ValueError("one (dW, db) pair per layer required")
    for (W, b), (dW, db) in zip(zip(net.weights, net.biases), param_grads):
        if dW.shape != W.shape or db.shape != b.shape:
            raise ValueError("gradient shapes must match parameters")
        W -= lr * dW
        b -= lr * db
    return net


def network_header(net: DenseNetwork) -> dict:
    return {
        "layer_sizes": net.layer_sizes(),
        "output_activation": net.output_activation,
        "row_group": net.row_group,
    }


def network_arrays(net: DenseNetwork) -> list[np.ndarray]:
    arrays: list[np.ndarray] = []
    for W, b in zip(net.weights, net.biases):
        arrays.extend((W, b))
    return arrays


def network_from_parts(header: dict, arrays: Sequence[np.ndarray]) -> DenseNetwork:
    n_layers = len(header["layer_sizes"]) - 1
    if len(arrays) != 2 * n_layers:
        raise ValueError("array count does not match layer_sizes")
    weights = [np.array(arrays[2 * i], dtype=np.float64) for i in range(n_layers)]
    biases = [np.array(arrays[2 * i + 1], dtype=np.float64) for i in range(n_layers)]
    return DenseNetwork(weights, biases, header["output_activation"], header["row_group"])


def write_mbr_file(path, header: dict, arrays: Sequence[np.ndarray]) -> None:
    """Write an MBRv1 file: magic, length-prefixed JSON header, raw float64 data."""
    header = dict(header)
    header["shapes"] = [list(a.shape) for a in arrays]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MBR_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_mbr_file(path) -> tuple[dict, list[np.ndarray]]:
    """Read an MBRv1 file back into its header dict and float64 arrays."""
    data = Path(path).read_bytes()
    if not data.startswith(MBR_MAGIC):
        raise ValueError(f"{path}: missing MBRv1 magic header")
    off = len(MBR_MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen
    arrays = []
    for shape in header["shapes"]:
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off)
        arrays.append(arr.reshape(shape).astype(np.float64))
        off += 8 * count
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes after declared arrays")
    return header, arrays
