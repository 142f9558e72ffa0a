"""Minimal dense-network engine with exact reverse-mode gradients.

The topology is a fixed feed-forward chain: optional Fourier feature
encoding of the leading input coordinates, then fully-connected layers with
sine / sigmoid / softmax / identity activations.  Parameters live in 32-bit
floats; the same forward/backward code runs in 64-bit when handed 64-bit
arrays, which is what the finite-difference gradient check relies on.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("sine", "sigmoid", "softmax", "identity")
LOSSES = ("mae", "cross_entropy")

WEIGHT_MAGIC = b"NISPW1"


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """A parameter, input, or loss value is NaN/inf."""


@dataclass(frozen=True)
class FourierSpec:
    """Dyadic sin/cos feature lift; each input scalar becomes 2L features."""

    L: int = 5

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")


@dataclass
class Layer:
    weight: np.ndarray          # (out, in)
    bias: np.ndarray            # (out,)
    activation: str
    mask: np.ndarray | None = None  # 0/1, same shape as weight

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def out_dim(self):
        return self.weight.shape[0]

    @property
    def in_dim(self):
        return self.weight.shape[1]

    def effective_weight(self):
        if self.mask is None:
            return self.weight
        return self.weight * self.mask


@dataclass
class MlpModel:
    layers: list
    encoding: FourierSpec | None = None
    encoded_dims: int = 3       # leading raw inputs lifted by the encoding
    omega0: float = 1.0

    def __post_init__(self):
        if self.omega0 <= 0:
            raise ValueError("omega0 must be > 0")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if nxt.in_dim != prev.out_dim:
                raise ShapeError(
                    f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")

    @property
    def raw_input_dim(self):
        """Input width before the Fourier lift."""
        first = self.layers[0].in_dim
        if self.encoding is None:
            return first
        return first - self.encoded_dims * (2 * self.encoding.L - 1)

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    def num_parameters(self):
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def copy(self, dtype=None):
        layers = [
            Layer(
                weight=np.array(l.weight, dtype=dtype or l.weight.dtype),
                bias=np.array(l.bias, dtype=dtype or l.bias.dtype),
                activation=l.activation,
                mask=None if l.mask is None else l.mask.copy(),
            )
            for l in self.layers
        ]
        return MlpModel(layers, self.encoding, self.encoded_dims, self.omega0)


def positional_encode(x, L):
    """Fourier features (sin 2^l pi p, cos 2^l pi p) for l = 0..L-1.

    The 2L-feature block of each input scalar is emitted in coordinate
    order, frequency-major within the block.
    """
    x = np.asarray(x)
    freqs = (2.0 ** np.arange(L)) * np.pi
    angles = x[..., :, None] * freqs            # (..., D, L)
    feats = np.stack([np.sin(angles), np.cos(angles)], axis=-1)  # (..., D, L, 2)
    return feats.reshape(*x.shape[:-1], x.shape[-1] * 2 * L)


def encode_input(model, x):
    """Apply the model's encoding to the leading coordinates of raw input."""
    if model.encoding is None:
        return np.asarray(x)
    x = np.asarray(x)
    head = positional_encode(x[..., :model.encoded_dims], model.encoding.L)
    tail = x[..., model.encoded_dims:]
    if tail.shape[-1] == 0:
        return head
    return np.concatenate([head, tail], axis=-1)


def init_he_uniform(rows, cols, rng, dtype=np.float32):
    """Uniform in [-sqrt(6/fan_in), +sqrt(6/fan_in)] (fan_in = cols)."""
    bound = np.sqrt(6.0 / cols)
    return rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)


def _apply_activation(z, tag):
    if tag == "sine":
        return np.sin(z)
    if tag == "sigmoid":
        # evaluated in the branch-stable form to avoid overflow either side
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if tag == "softmax":
        shifted = z - z.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)
    return z  # identity


def forward(model, batch, return_cache=False):
    """Feed a (B, raw_input_dim) batch through the network.

    Returns outputs, or (outputs, cache) where the cache holds encoded
    inputs, pre-activations, and activations for the backward pass.
    """
    batch = np.atleast_2d(np.asarray(batch))
    if batch.shape[-1] != model.raw_input_dim:
        raise ShapeError(
            f"input dim {batch.shape[-1]} != expected {model.raw_input_dim}")
    encoded = encode_input(model, batch)
    return _forward_encoded(model, encoded, return_cache)


def _forward_encoded(model, encoded, return_cache=False):
    a = encoded
    pre = []
    acts = [a]
    for layer in model.layers:
        scale = model.omega0 if layer.activation == "sine" else 1.0
        z = scale * (a @ layer.effective_weight().T) + layer.bias
        a = _apply_activation(z, layer.activation)
        pre.append(z)
        acts.append(a)
    if return_cache:
        return a, (acts, pre)
    return a


def _activation_grad(layer_act, z, a):
    if layer_act == "sine":
        return np.cos(z)
    if layer_act == "sigmoid":
        return a * (1.0 - a)
    if layer_act == "identity":
        return np.ones_like(z)
    raise ShapeError("softmax backward is only fused with cross-entropy")


def loss_and_grad(model, batch, targets, loss, encoded=None):
    """Mean loss over the batch and exact gradients for every parameter.

    ``targets`` is (B, out) for MAE, or an integer class vector for
    cross-entropy (fused with the softmax head).  Pass ``encoded`` to skip
    re-encoding a precomputed input lift.
    """
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}")
    if encoded is None:
        batch = np.atleast_2d(np.asarray(batch))
        if not np.isfinite(batch).all():
            raise NonFiniteError("non-finite input batch")
        encoded = encode_input(model, batch)
    output, (acts, pre) = _forward_encoded(model, encoded, return_cache=True)
    b = output.shape[0]

    if loss == "cross_entropy":
        if model.layers[-1].activation != "softmax":
            raise ShapeError("cross-entropy requires a softmax head")
        classes = np.asarray(targets).reshape(-1)
        picked = np.clip(output[np.arange(b), classes], 1e-300, None)
        value = float(-np.mean(np.log(picked)))
        dz = output.copy()
        dz[np.arange(b), classes] -= 1.0
        dz /= b
    else:
        targets = np.atleast_2d(np.asarray(targets, dtype=output.dtype))
        diff = output - targets
        value = float(np.mean(np.abs(diff)))
        da = np.sign(diff) / diff.size  # subgradient at 0 is 0
        last = model.layers[-1]
        dz = da * _activation_grad(last.activation, pre[-1], output)

    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite loss value {value}")

    grads = []
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        scale = model.omega0 if layer.activation == "sine" else 1.0
        dw = scale * (dz.T @ acts[i])
        db = dz.sum(axis=0)
        if layer.mask is not None:
            dw *= layer.mask
        grads.append((dw, db))
        if i > 0:
            da_prev = scale * (dz @ layer.effective_weight())
            prev = model.layers[i - 1]
            dz = da_prev * _activation_grad(prev.activation, pre[i - 1],
                                            acts[i])
    grads.reverse()
    return value, grads


@dataclass
class AdamState:
    """Bias-corrected Adam with per-parameter first/second moments."""

    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: list = field(default_factory=list)  # [(m_w, v_w, m_b, v_b), ...]

    @classmethod
    def for_model(cls, model, learning_rate):
        state = cls(learning_rate=learning_rate)
        for layer in model.layers:
            state.moments.append((
                np.zeros_like(layer.weight), np.zeros_like(layer.weight),
                np.zeros_like(layer.bias), np.zeros_like(layer.bias)))
        return state


def adam_step(state, model, grads):
    """One in-place Adam update; masked weight entries are re-zeroed."""
    state.step += 1
    t = state.step
    lr = state.learning_rate
    b1, b2, eps = state.beta1, state.beta2, state.eps
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for layer, (dw, db), (mw, vw, mb, vb) in zip(model.layers, grads,
                                                 state.moments):
        for param, grad, m, v in ((layer.weight, dw, mw, vw),
                                  (layer.bias, db, mb, vb)):
            m *= b1
            m += (1.0 - b1) * grad
            v *= b2
            v += (1.0 - b2) * grad * grad
            param -= (lr * (m / corr1)
                      / (np.sqrt(v / corr2) + eps)).astype(param.dtype)
        if layer.mask is not None:
            layer.weight *= layer.mask
    return model


# -- weight archive ----------------------------------------------------------

def save_model(model, path_or_file):
    """Write the NISPW1 archive: JSON header then raw little-endian blobs."""
    header = {
        "layers": [
            {"out": int(l.out_dim), "in": int(l.in_dim),
             "activation": l.activation, "has_mask": l.mask is not None}
            for l in model.layers
        ],
        "omega0": model.omega0,
        "encoding_L": None if model.encoding is None else model.encoding.L,
        "encoded_dims": model.encoded_dims,
        "dtype": "<f4",
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")

    def write(f):
        f.write(WEIGHT_MAGIC)
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        for l in model.layers:
            f.write(np.ascontiguousarray(l.weight, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(l.bias, dtype="<f4").tobytes())
        for l in model.layers:
            if l.mask is not None:
                f.write(np.packbits(
                    l.mask.astype(np.uint8).reshape(-1)).tobytes())

    if hasattr(path_or_file, "write"):
        write(path_or_file)
    else:
        with open(path_or_file, "wb") as f:
            write(f)


def load_model(path_or_file):
    def read(f):
        magic = f.read(len(WEIGHT_MAGIC))
        if magic != WEIGHT_MAGIC:
            raise ValueError(f"not a weight archive (magic {magic!r})")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        layers = []
        for spec in header["layers"]:
            rows, cols = spec["out"], spec["in"]
            w = np.frombuffer(f.read(rows * cols * 4),
                              dtype="<f4").reshape(rows, cols).copy()
            b = np.frombuffer(f.read(rows * 4), dtype="<f4").copy()
            layers.append(Layer(w, b, spec["activation"]))
        for layer, spec in zip(layers, header["layers"]):
            if spec["has_mask"]:
                nbits = layer.weight.size
                raw = np.frombuffer(f.read((nbits + 7) // 8), dtype=np.uint8)
                bits = np.unpackbits(raw)[:nbits]
                layer.mask = bits.reshape(layer.weight.shape).astype(
                    np.float32)
        enc = header["encoding_L"]
        return MlpModel(
            layers,
            encoding=None if enc is None else FourierSpec(enc),
            encoded_dims=header["encoded_dims"],
            omega0=header["omega0"],
        )

    if hasattr(path_or_file, "read"):
        return read(path_or_file)
    with open(path_or_file, "rb") as f:
        return read(f)


def model_bytes(model):
    buf = io.BytesIO()
    save_model(model, buf)
    return buf.getvalue()
