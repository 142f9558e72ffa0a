"""Lottery-ticket pruning and sparse weight storage.

Iterative magnitude pruning with weight rewinding: each round retrains the
surviving weights from their original initialization, then prunes so the
cumulative pruned fraction follows (1 - (1-q)^(i/R)), landing exactly on
the target rate q after R rounds.  Per-round quotas are apportioned with
largest remainders so the global pruned count is exact to one weight.
Pruned weight matrices serialize to COO / CSC / CSR / DIA with 32-bit
indices and values.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .models import train

STRATEGIES = ("smallest", "smallest_global", "large_final")
SPARSE_FORMATS = ("coo", "csc", "csr", "dia")

SPARSE_MAGIC = b"NISPW1"  # same container, sparse per-layer payloads


class LayerCollapseError(ValueError):
    """Requested rate would leave a layer with zero surviving weights."""


@dataclass(frozen=True)
class PruneConfig:
    strategy: str
    q: float                      # final pruned fraction of prunable weights
    rounds: int = 10
    epochs_per_round: int = 100
    include_output: bool = False  # output-layer weights join the prunable set

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must be in (0, 1)")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


def prunable_layers(model, include_output=False):
    """Indices of layers whose weights participate in pruning (biases never do)."""
    last = len(model.layers) - 1
    return [i for i in range(len(model.layers))
            if include_output or i != last]


def _ensure_masks(model, layer_ids):
    for i in layer_ids:
        layer = model.layers[i]
        if layer.mask is None:
            layer.mask = np.ones_like(layer.weight, dtype=np.float32)


def _apportion(total, capacities):
    """Integer quotas proportional to capacities, exact sum (largest remainder)."""
    capacities = np.asarray(capacities, dtype=np.float64)
    if capacities.sum() == 0:
        raise LayerCollapseError("no surviving weights to prune")
    raw = total * capacities / capacities.sum()
    quotas = np.floor(raw).astype(np.int64)
    short = total - quotas.sum()
    order = np.argsort(-(raw - quotas), kind="stable")
    quotas[order[:short]] += 1
    return np.minimum(quotas, capacities.astype(np.int64))


def prune_count(model, count, strategy, reference=None, include_output=False):
    """Zero ``count`` additional surviving weights in place; masks are monotone.

    ``smallest`` ranks per layer (quotas proportional to surviving counts),
    ``smallest_global`` and ``large_final`` rank in one pool across layers;
    ``large_final`` ranks by the reference pre-trained model's magnitudes.
    Ties break to the lowest parameter index via stable sorting.
    """
    layer_ids = prunable_layers(model, include_output)
    _ensure_masks(model, layer_ids)
    if count <= 0:
        return
    if strategy == "large_final" and reference is None:
        raise ValueError("large_final needs the reference pre-trained model")

    surviving = [int(model.layers[i].mask.sum()) for i in layer_ids]
    if strategy == "smallest":
        quotas = _apportion(count, surviving)
        for i, quota, alive in zip(layer_ids, quotas, surviving):
            if quota >= alive:
                raise LayerCollapseError(
                    f"layer {i} would lose all {alive} surviving weights")
            _prune_layer_smallest(model.layers[i], int(quota))
    else:
        source = model if strategy == "smallest_global" else reference
        mags = []
        for i in layer_ids:
            w = source.layers[i].weight
            mask = model.layers[i].mask
            m = np.abs(w).reshape(-1).astype(np.float64)
            m[mask.reshape(-1) == 0] = -1.0  # already pruned, skip
            mags.append(m)
        pooled = np.concatenate(mags)
        order = np.argsort(pooled, kind="stable")
        order = order[pooled[order] >= 0.0][:count]
        offsets = np.cumsum([0] + [model.layers[i].weight.size
                                   for i in layer_ids])
        for j, i in enumerate(layer_ids):
            local = order[(order >= offsets[j]) & (order < offsets[j + 1])]
            local -= offsets[j]
            mask = model.layers[i].mask
            flat = mask.reshape(-1)
            if len(local) >= flat.sum():
                raise LayerCollapseError(
                    f"layer {i} would lose all surviving weights")
            flat[local] = 0.0
            model.layers[i].weight *= mask


def _prune_layer_smallest(layer, quota):
    if quota <= 0:
        return
    flat_mask = layer.mask.reshape(-1)
    mags = np.abs(layer.weight).reshape(-1).astype(np.float64)
    mags[flat_mask == 0] = -1.0
    order = np.argsort(mags, kind="stable")
    order = order[mags[order] >= 0.0][:quota]
    flat_mask[order] = 0.0
    layer.weight *= layer.mask


def prune_mask(model, fraction, strategy, reference=None,
               include_output=False):
    """Prune a ``fraction`` of the currently surviving prunable weights."""
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must be in [0, 1)")
    layer_ids = prunable_layers(model, include_output)
    _ensure_masks(model, layer_ids)
    alive = sum(int(model.layers[i].mask.sum()) for i in layer_ids)
    prune_count(model, int(round(fraction * alive)), strategy, reference,
                include_output)
    return [model.layers[i].mask.copy() for i in layer_ids]


def pruned_fraction(model, include_output=False):
    layer_ids = prunable_layers(model, include_output)
    total = sum(model.layers[i].weight.size for i in layer_ids)
    alive = sum(int(model.layers[i].mask.sum())
                if model.layers[i].mask is not None
                else model.layers[i].weight.size
                for i in layer_ids)
    return 1.0 - alive / total


@dataclass
class PruneRound:
    round_index: int
    target_rate: float
    achieved_rate: float
    val_metric: float


def lottery_ticket_train(build_fn, inputs, targets, train_config,
                         prune_config, loss, reference=None):
    """Iterative magnitude pruning with rewinding to the initialization.

    ``build_fn(rng)`` constructs the fresh model.  Each of the R rounds
    rewinds surviving weights to their initial values, retrains, and prunes
    up to the round's cumulative target rate; a final rewind-and-retrain
    fits the winning ticket.  Returns (model, per-round records).
    """
    import dataclasses

    from .sampling import derive_rng

    round_config = dataclasses.replace(
        train_config, epochs=prune_config.epochs_per_round)
    rng = derive_rng(train_config.seed, "lottery-init")
    model = build_fn(rng)
    initial = [(l.weight.copy(), l.bias.copy()) for l in model.layers]
    layer_ids = prunable_layers(model, prune_config.include_output)
    _ensure_masks(model, layer_ids)
    total = sum(model.layers[i].weight.size for i in layer_ids)

    if prune_config.strategy == "large_final" and reference is None:
        # the dense pre-trained reference: one full training pass
        reference = build_fn(derive_rng(train_config.seed, "lottery-init"))
        _rewind(reference, initial)
        train(reference, inputs, targets, round_config, loss,
              stream_name="lottery-reference")

    rounds = []
    for i in range(1, prune_config.rounds + 1):
        _rewind(model, initial)
        history = train(model, inputs, targets, round_config, loss,
                        stream_name=f"lottery-round-{i}")
        target = 1.0 - (1.0 - prune_config.q) ** (i / prune_config.rounds)
        target_count = int(round(total * target))
        already = total - sum(int(model.layers[j].mask.sum())
                              for j in layer_ids)
        prune_count(model, target_count - already, prune_config.strategy,
                    reference, prune_config.include_output)
        rounds.append(PruneRound(
            round_index=i, target_rate=target,
            achieved_rate=pruned_fraction(model, prune_config.include_output),
            val_metric=history.val_metric[-1]))

    _rewind(model, initial)
    final_history = train(model, inputs, targets, round_config, loss,
                          stream_name="lottery-final")
    rounds.append(PruneRound(
        round_index=prune_config.rounds + 1,
        target_rate=prune_config.q,
        achieved_rate=pruned_fraction(model, prune_config.include_output),
        val_metric=final_history.val_metric[-1]))
    return model, rounds


def _rewind(model, initial):
    for layer, (w0, b0) in zip(model.layers, initial):
        np.copyto(layer.weight, w0)
        np.copyto(layer.bias, b0)
        if layer.mask is not None:
            layer.weight *= layer.mask


# -- sparse matrix formats ---------------------------------------------------

@dataclass
class SparseMatrix:
    fmt: str
    shape: tuple
    arrays: dict = field(default_factory=dict)

    def nnz(self):
        return len(self.arrays["data"]) if "data" in self.arrays else 0


def to_sparse(dense, fmt):
    """Exact sparse encoding of a dense matrix in one of the four formats."""
    if fmt not in SPARSE_FORMATS:
        raise ValueError(f"unknown sparse format {fmt!r}")
    dense = np.asarray(dense)
    rows, cols = dense.shape
    r, c = np.nonzero(dense)  # row-major lexicographic order
    data = dense[r, c].astype("<f4")
    if fmt == "coo":
        arrays = {"row": r.astype("<u4"), "col": c.astype("<u4"),
                  "data": data}
    elif fmt == "csr":
        indptr = np.zeros(rows + 1, dtype="<u4")
        np.cumsum(np.bincount(r, minlength=rows), out=indptr[1:])
        arrays = {"indptr": indptr, "indices": c.astype("<u4"), "data": data}
    elif fmt == "csc":
        order = np.lexsort((r, c))
        indptr = np.zeros(cols + 1, dtype="<u4")
        np.cumsum(np.bincount(c, minlength=cols), out=indptr[1:])
        arrays = {"indptr": indptr, "indices": r[order].astype("<u4"),
                  "data": data[order]}
    else:  # dia
        offsets = np.unique(c.astype(np.int64) - r.astype(np.int64))
        diag_data = np.zeros((len(offsets), cols), dtype="<f4")
        for i, off in enumerate(offsets):
            sel = (c.astype(np.int64) - r.astype(np.int64)) == off
            diag_data[i, c[sel]] = data[sel]
        arrays = {"offsets": offsets.astype("<i4"), "data": diag_data}
    return SparseMatrix(fmt=fmt, shape=(rows, cols), arrays=arrays)


def to_dense(sparse):
    rows, cols = sparse.shape
    out = np.zeros((rows, cols), dtype=np.float32)
    a = sparse.arrays
    if sparse.fmt == "coo":
        out[a["row"], a["col"]] = a["data"]
    elif sparse.fmt == "csr":
        indptr = a["indptr"]
        for i in range(rows):
            cols_i = a["indices"][indptr[i]:indptr[i + 1]]
            out[i, cols_i] = a["data"][indptr[i]:indptr[i + 1]]
    elif sparse.fmt == "csc":
        indptr = a["indptr"]
        for j in range(cols):
            rows_j = a["indices"][indptr[j]:indptr[j + 1]]
            out[rows_j, j] = a["data"][indptr[j]:indptr[j + 1]]
    else:  # dia
        for off, diag in zip(a["offsets"], a["data"]):
            j = np.arange(max(0, off), min(cols, rows + off))
            out[j - off, j] = diag[j]
    return out


_ARRAY_ORDER = {
    "coo": ("row", "col", "data"),
    "csr": ("indptr", "indices", "data"),
    "csc": ("indptr", "indices", "data"),
    "dia": ("offsets", "data"),
}


def _dia_span(rows, cols, offset):
    """Length of the valid (in-matrix) part of one diagonal."""
    return max(0, min(cols, rows + offset) - max(0, offset))


def _serial_arrays(sp):
    """Blob arrays for the container; DIA diagonals are trimmed to spans."""
    if sp.fmt != "dia":
        return {name: sp.arrays[name] for name in _ARRAY_ORDER[sp.fmt]}
    rows, cols = sp.shape
    pieces = []
    for off, diag in zip(sp.arrays["offsets"], sp.arrays["data"]):
        lo = max(0, off)
        pieces.append(diag[lo:lo + _dia_span(rows, cols, off)])
    data = (np.concatenate(pieces).astype("<f4") if pieces
            else np.zeros(0, dtype="<f4"))
    return {"offsets": sp.arrays["offsets"], "data": data}


def save_sparse_model(model, fmt, path_or_file):
    """NISPW1-sparse container: JSON header plus per-layer sparse blobs."""
    encoded = [to_sparse(l.effective_weight(), fmt) for l in model.layers]
    serial = [_serial_arrays(sp) for sp in encoded]
    header = {
        "sparse_format": fmt,
        "layers": [
            {"out": int(l.out_dim), "in": int(l.in_dim),
             "activation": l.activation,
             "counts": {name: int(len(np.ravel(arrays[name])))
                        for name in _ARRAY_ORDER[fmt]}}
            for l, arrays in zip(model.layers, serial)
        ],
        "omega0": model.omega0,
        "encoding_L": None if model.encoding is None else model.encoding.L,
        "encoded_dims": model.encoded_dims,
        "dtype": "<f4",
    }
    payload = json.dumps(header, sort_keys=True).encode("utf-8")

    def write(f):
        f.write(SPARSE_MAGIC)
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)
        for layer, arrays in zip(model.layers, serial):
            for name in _ARRAY_ORDER[fmt]:
                f.write(np.ascontiguousarray(arrays[name]).tobytes())
            f.write(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())

    if hasattr(path_or_file, "write"):
        write(path_or_file)
    else:
        with open(path_or_file, "wb") as f:
            write(f)


def load_sparse_model(path_or_file):
    def read(f):
        magic = f.read(len(SPARSE_MAGIC))
        if magic != SPARSE_MAGIC:
            raise ValueError(f"not a weight archive (magic {magic!r})")
        (header_len,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(header_len).decode("utf-8"))
        fmt = header["sparse_format"]
        dtypes = {"row": "<u4", "col": "<u4", "indptr": "<u4",
                  "indices": "<u4", "data": "<f4", "offsets": "<i4"}
        layers = []
        for spec in header["layers"]:
            rows, cols = spec["out"], spec["in"]
            arrays = {}
            for name in _ARRAY_ORDER[fmt]:
                count = spec["counts"][name]
                dt = np.dtype(dtypes[name])
                arrays[name] = np.frombuffer(
                    f.read(count * dt.itemsize), dtype=dt)
            if fmt == "dia":
                # expand trimmed diagonal spans back to the padded layout
                padded = np.zeros((len(arrays["offsets"]), cols),
                                  dtype="<f4")
                cursor = 0
                for i, off in enumerate(arrays["offsets"]):
                    span = _dia_span(rows, cols, int(off))
                    lo = max(0, int(off))
                    padded[i, lo:lo + span] = arrays["data"][
                        cursor:cursor + span]
                    cursor += span
                arrays["data"] = padded
            sp = SparseMatrix(fmt=fmt, shape=(rows, cols), arrays=arrays)
            bias = np.frombuffer(f.read(rows * 4), dtype="<f4").copy()
            layers.append(nn.Layer(to_dense(sp), bias, spec["activation"]))
        enc = header["encoding_L"]
        return nn.MlpModel(
            layers,
            encoding=None if enc is None else nn.FourierSpec(enc),
            encoded_dims=header["encoded_dims"],
            omega0=header["omega0"])

    if hasattr(path_or_file, "read"):
        return read(path_or_file)
    with open(path_or_file, "rb") as f:
        return read(f)


def serialized_size(model, fmt=None):
    """On-disk byte count of the model in dense or sparse container form."""
    buf = io.BytesIO()
    if fmt is None:
        nn.save_model(model, buf)
    else:
        save_sparse_model(model, fmt, buf)
    return buf.getbuffer().nbytes
