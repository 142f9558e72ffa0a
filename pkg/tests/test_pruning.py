"""Pruning strategies, lottery loop, and sparse serialization."""

import io

import numpy as np
import pytest

from texfit import models, nn, pruning
from texfit.sampling import derive_rng

scipy_sparse = pytest.importorskip("scipy.sparse")


def small_net(k=2, hidden_layers=2, width=16, seed=0):
    spec = models.NetworkSpec(hidden_layers=hidden_layers, hidden_width=width,
                              k=k)
    return models.build_point2component(spec, derive_rng(seed, "net"))


def test_output_layer_and_biases_exempt():
    model = small_net()
    pruning.prune_mask(model, 0.5, "smallest")
    assert model.layers[-1].mask is None
    for layer in model.layers[:-1]:
        assert np.array_equal(layer.bias, layer.bias)  # untouched by design
        assert layer.mask is not None


def test_include_output_flag():
    model = small_net()
    pruning.prune_mask(model, 0.3, "smallest", include_output=True)
    assert model.layers[-1].mask is not None


def test_smallest_removes_smallest_magnitudes():
    model = small_net(hidden_layers=1)
    w = np.abs(model.layers[0].weight)
    pruning.prune_mask(model, 0.25, "smallest")
    mask = model.layers[0].mask
    kept_min = w[mask == 1].min()
    cut_max = w[mask == 0].max()
    assert cut_max <= kept_min


def test_tie_break_lowest_parameter_index():
    model = small_net(hidden_layers=1)
    model.layers[0].weight[:] = 1.0  # all magnitudes equal
    pruning.prune_mask(model, 0.5, "smallest")
    flat = model.layers[0].mask.reshape(-1)
    cut = int((flat == 0).sum())
    assert np.all(flat[:cut] == 0)  # the lowest indices go first
    assert np.all(flat[cut:] == 1)


def test_strategies_coincide_on_single_hidden_layer():
    a = small_net(hidden_layers=1, seed=3)
    b = a.copy()
    pruning.prune_mask(a, 0.4, "smallest")
    pruning.prune_mask(b, 0.4, "smallest_global")
    assert np.array_equal(a.layers[0].mask, b.layers[0].mask)


def test_large_final_uses_reference():
    model = small_net(hidden_layers=1, seed=5)
    reference = model.copy()
    # flip the reference so the *largest* current weights look smallest
    reference.layers[0].weight = -1.0 / (np.abs(model.layers[0].weight) + 0.1)
    reference.layers[0].weight = np.abs(reference.layers[0].weight).astype(
        np.float32)
    pruning.prune_mask(model, 0.25, "large_final", reference=reference)
    w_ref = np.abs(reference.layers[0].weight)
    mask = model.layers[0].mask
    assert w_ref[mask == 0].max() <= w_ref[mask == 1].min()


def test_large_final_requires_reference():
    model = small_net()
    with pytest.raises(ValueError):
        pruning.prune_mask(model, 0.2, "large_final")


def test_mask_monotone_and_exact_rate():
    for strategy in pruning.STRATEGIES:
        model = small_net(seed=7)
        reference = model.copy()
        layer_ids = pruning.prunable_layers(model)
        total = sum(model.layers[i].weight.size for i in layer_ids)
        prev_masks = None
        q, rounds = 0.8442, 6
        done = 0
        for i in range(1, rounds + 1):
            target = int(round(total * (1 - (1 - q) ** (i / rounds))))
            pruning.prune_count(model, target - done, strategy,
                                reference=reference)
            done = target
            masks = [model.layers[j].mask.copy() for j in layer_ids]
            if prev_masks is not None:
                for old, new in zip(prev_masks, masks):
                    assert np.all(new <= old)  # pruned weights stay pruned
            prev_masks = masks
        pruned = total - sum(int(m.sum()) for m in prev_masks)
        assert abs(pruned - q * total) <= 1


def test_layer_collapse_error():
    model = small_net(hidden_layers=1)
    with pytest.raises(pruning.LayerCollapseError):
        pruning.prune_count(model, model.layers[0].weight.size, "smallest")


def test_lottery_ticket_protocol():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(2000, 3)).astype(np.float32)
    labels = (pts[:, 0] > 0).astype(np.int64)
    spec = models.NetworkSpec(hidden_layers=2, hidden_width=16, k=2)
    tc = models.TrainConfig(learning_rate=1e-3, epochs=1, batch_size=512,
                            seed=0)
    pc = pruning.PruneConfig(strategy="smallest", q=0.6, rounds=3,
                             epochs_per_round=2)
    model, rounds = pruning.lottery_ticket_train(
        lambda r: models.build_point2component(spec, r), pts, labels, tc, pc,
        loss="cross_entropy")
    assert len(rounds) == 4  # 3 pruning rounds + the final retrain record
    assert rounds[-1].achieved_rate == pytest.approx(0.6, abs=1e-3)
    rates = [r.achieved_rate for r in rounds]
    assert rates == sorted(rates)
    layer_ids = pruning.prunable_layers(model)
    total = sum(model.layers[i].weight.size for i in layer_ids)
    pruned = round(pruning.pruned_fraction(model) * total)
    assert abs(pruned - 0.6 * total) <= 1


# -- sparse formats ----------------------------------------------------------

def random_sparse_dense(rng, shape, density=0.4):
    dense = rng.standard_normal(shape).astype(np.float32)
    dense[rng.random(shape) >= density] = 0.0
    return dense


@pytest.mark.parametrize("fmt", pruning.SPARSE_FORMATS)
@pytest.mark.parametrize("shape", [(5, 9), (64, 30), (1, 7), (8, 8)])
def test_round_trip_bit_exact(fmt, shape):
    rng = np.random.default_rng(hash((fmt, shape)) % 2**31)
    dense = random_sparse_dense(rng, shape)
    back = pruning.to_dense(pruning.to_sparse(dense, fmt))
    assert np.array_equal(back, dense)
    assert back.dtype == np.float32


def test_coo_row_major_sorted():
    dense = random_sparse_dense(np.random.default_rng(0), (12, 7))
    sp = pruning.to_sparse(dense, "coo")
    keys = sp.arrays["row"].astype(np.int64) * 7 + sp.arrays["col"]
    assert np.all(np.diff(keys) > 0)
    assert sp.arrays["row"].dtype == np.dtype("<u4")
    assert sp.arrays["data"].dtype == np.dtype("<f4")


@pytest.mark.parametrize("fmt", ["csr", "csc", "coo"])
def test_matches_scipy_layout(fmt):
    dense = random_sparse_dense(np.random.default_rng(3), (20, 13))
    sp = pruning.to_sparse(dense, fmt)
    ref = getattr(scipy_sparse, f"{fmt}_matrix")(dense)
    if fmt == "coo":
        assert np.array_equal(sp.arrays["row"], ref.row)
        assert np.array_equal(sp.arrays["col"], ref.col)
        assert np.array_equal(sp.arrays["data"], ref.data)
    else:
        assert np.array_equal(sp.arrays["indptr"], ref.indptr)
        assert np.array_equal(sp.arrays["indices"], ref.indices)
        assert np.array_equal(sp.arrays["data"], ref.data)


def test_dia_reconstruction_matches_scipy():
    dense = random_sparse_dense(np.random.default_rng(4), (9, 9), 0.3)
    sp = pruning.to_sparse(dense, "dia")
    ref = scipy_sparse.dia_matrix(dense)
    assert np.array_equal(np.sort(sp.arrays["offsets"]),
                          np.sort(ref.offsets.astype(np.int32)))
    assert np.array_equal(pruning.to_dense(sp), dense)


@pytest.mark.parametrize("fmt", pruning.SPARSE_FORMATS)
def test_sparse_model_forward_identical(fmt):
    model = small_net(seed=9)
    pruning.prune_mask(model, 0.7, "smallest")
    buf = io.BytesIO()
    pruning.save_sparse_model(model, fmt, buf)
    buf.seek(0)
    back = pruning.load_sparse_model(buf)
    x = np.random.default_rng(1).uniform(-1, 1, (16, 3)).astype(np.float32)
    assert np.array_equal(nn.forward(model, x), nn.forward(back, x))


def test_sparse_beats_dense_when_pruned():
    spec = models.NetworkSpec(k=2)  # the full 8x64 stack
    model = models.build_point2component(spec, derive_rng(0, "big"))
    # the published compression table prunes point2component at 84.42%
    pruning.prune_mask(model, 0.8442, "smallest_global")
    dense_size = pruning.serialized_size(model)
    for fmt in pruning.SPARSE_FORMATS:
        assert pruning.serialized_size(model, fmt) < dense_size, fmt
    # compressed-index formats already win at half pruning
    half = models.build_point2component(spec, derive_rng(0, "big"))
    pruning.prune_mask(half, 0.5, "smallest_global")
    for fmt in ("csr", "csc"):
        assert pruning.serialized_size(half, fmt) < pruning.serialized_size(
            half)


def test_serialized_size_scale():
    spec = models.NetworkSpec(hidden_width=76, k=2)
    model = models.build_point2component(spec, derive_rng(0, "sz"))
    size_kb = pruning.serialized_size(model) / 1024.0
    # a ~43.5k-parameter network lands near the published 174.4 KB figure
    assert abs(size_kb - 174.4) / 174.4 < 0.15


def test_unknown_format_rejected():
    with pytest.raises(ValueError):
        pruning.to_sparse(np.eye(3), "bsr")
    with pytest.raises(ValueError):
        pruning.PruneConfig(strategy="nope", q=0.5)
