"""The three overfit networks and their training loops.

One network regresses the signed distance, one classifies the chart label,
and one regresses UV conditioned on a one-hot chart label.  The two
parameterization networks never share parameters or gradients; at inference
the classifier's argmax feeds the regressor, while training conditions the
regressor on the ground-truth label (teacher forcing).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .sampling import derive_rng


class CompositionError(ValueError):
    """The two parameterization networks disagree on the chart count."""


@dataclass(frozen=True)
class NetworkSpec:
    hidden_layers: int = 8
    hidden_width: int = 64
    k: int = 1
    encoding_terms: int = 5
    omega0: float = 1.0
    sdf_activation: str = "sine"  # hidden activation of the distance net

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_width < 1 or self.k < 1:
            raise ValueError("hidden_layers, hidden_width, k must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    epochs: int = 2000
    batch_size: int = 2048
    seed: int = 0
    validation_fraction: float = 0.05

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation fraction must be in [0, 1)")


@dataclass
class TrainHistory:
    metric_name: str
    train_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)

    def __len__(self):
        return len(self.train_loss)


def _build_chain(in_dim, out_dim, out_activation, spec, rng,
                 hidden_activation="sine"):
    dims = ([in_dim] + [spec.hidden_width] * spec.hidden_layers + [out_dim])
    acts = [hidden_activation] * spec.hidden_layers + [out_activation]
    layers = []
    for rows, cols, act in zip(dims[1:], dims[:-1], acts):
        layers.append(nn.Layer(
            weight=nn.init_he_uniform(rows, cols, rng),
            bias=np.zeros(rows, dtype=np.float32),
            activation=act))
    return nn.MlpModel(layers, encoding=nn.FourierSpec(spec.encoding_terms),
                       encoded_dims=3, omega0=spec.omega0)


def build_overfit_sdf(spec, rng):
    """encode(3D) -> N sine layers of width H -> scalar identity output."""
    return _build_chain(3 * 2 * spec.encoding_terms, 1, "identity", spec, rng,
                        hidden_activation=spec.sdf_activation)


def build_point2component(spec, rng):
    """encode(3D) -> N sine layers -> k softmax probabilities."""
    return _build_chain(3 * 2 * spec.encoding_terms, spec.k, "softmax", spec,
                        rng)


def build_point2uv(spec, rng):
    """encode(3D) ++ one-hot chart label -> N sine layers -> 2 sigmoid UV."""
    return _build_chain(3 * 2 * spec.encoding_terms + spec.k, 2, "sigmoid",
                        spec, rng)


def one_hot(labels, k, dtype=np.float32):
    labels = np.asarray(labels).reshape(-1)
    out = np.zeros((len(labels), k), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1.0
    return out


def uv_inputs(points, labels, k):
    """Raw point2uv input rows: 3D point followed by the one-hot label."""
    return np.concatenate(
        [np.asarray(points, dtype=np.float32), one_hot(labels, k)], axis=1)


def train(model, inputs, targets, config, loss, stream_name="train",
          prune_hook=None):
    """Shuffled mini-batch Adam training with a per-epoch validation metric.

    ``inputs`` are raw input rows; a validation split of
    ``config.validation_fraction`` is carved out deterministically from the
    seed.  The optional ``prune_hook(epoch, model)`` runs after each epoch
    (used by the lottery-ticket loop).  The model is updated in place and
    the per-epoch history is returned.
    """
    inputs = np.asarray(inputs, dtype=np.float32)
    rng = derive_rng(config.seed, stream_name)
    n = len(inputs)
    n_val = int(round(n * config.validation_fraction))
    perm = rng.permutation(n)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    encoded = nn.encode_input(model, inputs).astype(np.float32)
    enc_train = encoded[train_idx]
    enc_val = encoded[val_idx]
    targets = np.asarray(targets)
    t_train = targets[train_idx]
    t_val = targets[val_idx]

    metric_name = "accuracy" if loss == "cross_entropy" else "mae"
    history = TrainHistory(metric_name=metric_name)
    state = nn.AdamState.for_model(model, config.learning_rate)
    n_train = len(train_idx)
    bs = config.batch_size

    for epoch in range(config.epochs):
        started = time.perf_counter()
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        for start in range(0, n_train, bs):
            sel = order[start:start + bs]
            try:
                value, grads = nn.loss_and_grad(
                    model, None, t_train[sel], loss, encoded=enc_train[sel])
            except nn.NonFiniteError as exc:
                raise nn.NonFiniteError(
                    f"epoch {epoch}, batch at {start}: {exc}") from exc
            nn.adam_step(state, model, grads)
            epoch_loss += value * len(sel)
        if prune_hook is not None:
            prune_hook(epoch, model)
        history.train_loss.append(epoch_loss / n_train)
        history.val_metric.append(
            _validation_metric(model, enc_val, t_val, loss))
        history.epoch_seconds.append(time.perf_counter() - started)
    return history


def _validation_metric(model, encoded_val, targets_val, loss):
    if len(encoded_val) == 0:
        return float("nan")
    out = nn._forward_encoded(model, encoded_val)
    if loss == "cross_entropy":
        return float(np.mean(np.argmax(out, axis=1) == targets_val))
    return float(np.mean(np.abs(out - np.atleast_2d(targets_val))))


def predict_components(model, points):
    """Chart label probabilities collapsed to argmax (lowest index on ties)."""
    probs = nn.forward(model, np.asarray(points, dtype=np.float32))
    return np.argmax(probs, axis=1)


def predict_parameterization(point2component, point2uv, points):
    """Two-stage UV prediction: classify the chart, then regress UV."""
    k = point2component.output_dim
    k_uv = point2uv.raw_input_dim - 3
    if k != k_uv:
        raise CompositionError(
            f"point2component predicts {k} charts, point2uv expects {k_uv}")
    points = np.atleast_2d(np.asarray(points, dtype=np.float32))
    labels = predict_components(point2component, points)
    return nn.forward(point2uv, uv_inputs(points, labels, k))


def predict_sdf(model, points):
    """Scalar distance estimates for a batch of 3D points."""
    out = nn.forward(model, np.atleast_2d(
        np.asarray(points, dtype=np.float32)))
    return out[:, 0]
