"""Command-line driver for the overfit-network pipeline.

Commands: ingest, train, render, eval-distortion, eval-image, prune,
compress.  A TOML configuration file supplies defaults; command-line flags
override it.  All randomness derives from a single top-level seed through
named sub-streams, so a run is reproducible from one number; report
commands write matplotlib figures next to their CSV ledgers.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import metrics, models, nn, pruning, render, sampling
from .mesh_io import MeshError, load_asset, load_texture, write_obj
from .surface import SurfaceOracle

FIG9_RATES = (0.20, 0.3685, 0.5152, 0.6437, 0.7542,
              0.8442, 0.9117, 0.9565, 0.982, 0.9939)

BUNDLES = ("overfit_sdf", "point2component", "point2uv")


def _load_toml(path):
    if path is None:
        return {}
    with open(path, "rb") as f:
        return tomllib.load(f)


def _cfg(config, section, key, default):
    return config.get(section, {}).get(key, default)


def _emit(payload, as_json, lines=None):
    if as_json:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
    else:
        for line in lines or []:
            click.echo(line)


def _write_csv(path, header, rows):
    """Deterministic delimited output: %.10g floats, LF endings."""
    def fmt(v):
        if isinstance(v, float):
            return "%.10g" % v
        return str(v)

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")


def _save_figure(fig, path):
    fig.savefig(path, dpi=120, metadata={"Software": None})
    import matplotlib.pyplot as plt
    plt.close(fig)


def _new_figure(*args, **kwargs):
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt
    return plt.subplots(*args, **kwargs)


def _network_spec(config, k=1):
    net = config.get("network", {})
    return models.NetworkSpec(
        hidden_layers=net.get("hidden_layers", 8),
        hidden_width=net.get("hidden_width", 64),
        k=k,
        encoding_terms=net.get("encoding_terms", 5),
        omega0=net.get("omega0", 1.0),
        sdf_activation=net.get("sdf_activation", "sine"),
    )


def _train_config(config, section, default_lr, epochs, seed):
    t = config.get("train", {}).get(section, {})
    shared = config.get("train", {})
    return models.TrainConfig(
        learning_rate=t.get("learning_rate", default_lr),
        epochs=epochs if epochs is not None else t.get(
            "epochs", shared.get("epochs", 2000)),
        batch_size=t.get("batch_size", shared.get("batch_size", 2048)),
        seed=seed,
        validation_fraction=t.get(
            "validation_fraction", shared.get("validation_fraction", 0.05)),
    )


def _task_for(model_name, samples, spec):
    """(build_fn, inputs, targets, loss, default_lr) for one network."""
    points = samples.points
    if model_name == "overfit_sdf":
        return (lambda r: models.build_overfit_sdf(spec, r),
                points, samples.sdf[:, None], "mae", 1e-4)
    if model_name == "point2component":
        return (lambda r: models.build_point2component(spec, r),
                points, samples.component.astype(np.int64),
                "cross_entropy", 5e-4)
    if model_name == "point2uv":
        return (lambda r: models.build_point2uv(spec, r),
                models.uv_inputs(points, samples.component, spec.k),
                samples.uv, "mae", 5e-4)
    raise click.ClickException(f"unknown model {model_name!r}")


@click.group()
@click.option("--threads", type=int, default=None,
              help="Cap worker threads (results are unchanged).")
def main(threads):
    """Overfit compact networks to one textured mesh and evaluate them."""
    if threads is not None and threads >= 1:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)


@main.command()
@click.argument("obj", type=click.Path())
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--json", "as_json", is_flag=True)
def ingest(obj, out, as_json):
    """Parse, normalize, and chart-label a mesh; write the cache + report."""
    if not os.path.exists(obj):
        raise click.ClickException(f"no such file: {obj}")
    try:
        asset = load_asset(obj)
    except (MeshError, OSError) as exc:
        raise click.ClickException(f"{obj}: {exc}") from exc
    mesh = asset.mesh
    os.makedirs(out, exist_ok=True)
    cache = os.path.join(out, "normalized.obj")
    with open(cache, "w", encoding="utf-8", newline="\n") as f:
        f.write(write_obj(mesh, asset.material_of_triangle))
    counts = np.bincount(mesh.chart_of_triangle, minlength=mesh.chart_count)
    _write_csv(os.path.join(out, "charts.csv"),
               ["chart", "triangles"],
               [(int(c), int(n)) for c, n in enumerate(counts)])
    payload = {
        "obj": obj, "cache": cache, "k": int(mesh.chart_count),
        "triangles": int(mesh.num_triangles),
        "chart_triangles": [int(n) for n in counts],
        "center": [float(v) for v in asset.center],
        "scale": float(asset.scale),
    }
    _emit(payload, as_json, [
        f"k={mesh.chart_count}",
        *(f"chart {c}: {n} triangles" for c, n in enumerate(counts)),
        f"wrote {cache}",
    ])


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="TOML configuration file.")
@click.option("--obj", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--samples", "n_samples", type=int, default=None,
              help="Training set size (default 10^6).")
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
def train(config_path, obj, out, n_samples, epochs, seed, as_json):
    """Sample the mesh and overfit the three networks; write bundles."""
    config = _load_toml(config_path)
    obj = obj or _cfg(config, "paths", "obj", None)
    if obj is None:
        raise click.ClickException("an OBJ path is required (--obj or config)")
    seed = seed if seed is not None else config.get("seed", 0)
    n = n_samples if n_samples is not None else _cfg(
        config, "sampling", "n", 1_000_000)

    sampler = sampling.SamplerConfig(
        n=n,
        beta=_cfg(config, "sampling", "beta", 60.0),
        oversample_factor=_cfg(config, "sampling", "oversample_factor", 10),
        seed=seed)
    sdf_tc = _train_config(config, "sdf", 1e-4, epochs, seed)
    par_tc = _train_config(config, "parameterization", 5e-4, epochs, seed)

    asset = load_asset(obj)
    oracle = SurfaceOracle(asset.mesh)
    samples = sampling.build_training_set(oracle, sampler)
    os.makedirs(out, exist_ok=True)
    sampling.save_samples(os.path.join(out, "samples.nisp"), samples)

    summary = {"obj": obj, "seed": seed, "n": n, "k": samples.k,
               "bundles": {}, "val": {}}
    lines = [f"sampled {n} points (k={samples.k})"]
    axes_data = []
    for name in BUNDLES:
        spec = _network_spec(config, k=samples.k)
        build_fn, inputs, targets, loss, _ = _task_for(name, samples, spec)
        tc = sdf_tc if name == "overfit_sdf" else par_tc
        model = build_fn(sampling.derive_rng(seed, f"init-{name}"))
        history = models.train(model, inputs, targets, tc, loss,
                               stream_name=f"train-{name}")
        bundle = os.path.join(out, f"{name}.nispw")
        nn.save_model(model, bundle)
        _write_csv(os.path.join(out, f"history_{name}.csv"),
                   ["epoch", "train_loss", f"val_{history.metric_name}"],
                   [(e, l, v) for e, (l, v) in enumerate(
                       zip(history.train_loss, history.val_metric))])
        summary["bundles"][name] = bundle
        summary["val"][name] = {history.metric_name: history.val_metric[-1]}
        lines.append(f"{name}: final val {history.metric_name} "
                     f"= {history.val_metric[-1]:.6g} -> {bundle}")
        axes_data.append((name, history))

    fig, axes = _new_figure(1, len(axes_data), figsize=(4 * len(axes_data), 3))
    for ax, (name, history) in zip(np.atleast_1d(axes), axes_data):
        ax.plot(history.train_loss, label="train loss")
        ax.plot(history.val_metric, label=f"val {history.metric_name}")
        ax.set_title(name)
        ax.set_xlabel("epoch")
        ax.legend()
    fig.tight_layout()
    _save_figure(fig, os.path.join(out, "history.png"))
    _emit(summary, as_json, lines)


def _load_bundle(path):
    if not os.path.exists(path):
        raise click.ClickException(f"missing bundle: {path}")
    return nn.load_model(path)


def _scene_texture(scene, key, obj_asset, color_space):
    path = scene.get(key)
    if path is not None:
        return load_texture(path, color_space)
    if obj_asset is not None:
        table = (obj_asset.diffuse_textures if key == "diffuse"
                 else obj_asset.normal_textures)
        for name in sorted(table):
            return table[name]
    return None


@main.command("render")
@click.argument("scene_path", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default="render.png",
              show_default=True)
@click.option("--oracle", "use_oracle", is_flag=True,
              help="Trace the exact mesh oracle instead of the networks.")
@click.option("--edit-texture", type=click.Path(exists=True), default=None,
              help="Substitute diffuse texture (texture-editing workflow).")
@click.option("--json", "as_json", is_flag=True)
def render_cmd(scene_path, out, use_oracle, edit_texture, as_json):
    """Sphere-trace a scene description (JSON) to a PNG."""
    with open(scene_path, "r", encoding="utf-8") as f:
        scene = json.load(f)
    base = os.path.dirname(os.path.abspath(scene_path))

    def resolve(p):
        if p is None or os.path.isabs(p):
            return p
        return os.path.join(base, p)

    for key in ("obj", "sdf_bundle", "point2component_bundle",
                "point2uv_bundle", "diffuse", "normal_map"):
        if key in scene:
            scene[key] = resolve(scene[key])

    asset = load_asset(scene["obj"]) if scene.get("obj") else None
    if use_oracle:
        if asset is None:
            raise click.ClickException("--oracle needs an 'obj' in the scene")
        oracle = SurfaceOracle(asset.mesh)
        sdf_fn = oracle.signed_distances
        uv_fn = oracle.uvs_at
    else:
        sdf_model = _load_bundle(scene["sdf_bundle"])
        sdf_fn = render.domain_guard(
            lambda p: models.predict_sdf(sdf_model, p))
        uv_fn = None
        if scene.get("point2component_bundle"):
            p2c = _load_bundle(scene["point2component_bundle"])
            p2uv = _load_bundle(scene["point2uv_bundle"])
            k = p2c.output_dim
            if p2uv.raw_input_dim - 3 != k:
                raise models.CompositionError(
                    f"bundles disagree on chart count: {k} vs "
                    f"{p2uv.raw_input_dim - 3}")
            uv_fn = lambda p: models.predict_parameterization(p2c, p2uv, p)

    diffuse = _scene_texture(scene, "diffuse", asset, "srgb")
    if edit_texture is not None:
        diffuse = load_texture(edit_texture, "srgb")
    normal_map = _scene_texture(scene, "normal_map", asset, "linear")

    cam_cfg = scene.get("camera", {})
    camera = render.Camera(
        eye=tuple(cam_cfg.get("eye", (1.6, -1.6, 1.2))),
        look_at=tuple(cam_cfg.get("look_at", (0.0, 0.0, 0.0))),
        up=tuple(cam_cfg.get("up", (0.0, 0.0, 1.0))),
        fov_degrees=cam_cfg.get("fov_degrees", 45.0),
        width=cam_cfg.get("width", 256),
        height=cam_cfg.get("height", 256))
    rc = scene.get("render", {})
    config = render.RenderConfig(
        epsilon=rc.get("epsilon", 1e-4),
        max_steps=rc.get("max_steps", 256),
        max_distance=rc.get("max_distance", 4.0),
        step_scale=rc.get("step_scale", 0.9),
        light_direction=tuple(rc.get(
            "light_direction", (0.408248, -0.408248, 0.816497))),
        background=tuple(rc.get("background", (1.0, 1.0, 1.0))))

    image = render.render(
        render.Scene(sdf_fn=sdf_fn, uv_fn=uv_fn, diffuse=diffuse,
                     normal_map=normal_map, config=config),
        camera)
    render.save_png(image, out)
    payload = {"out": out, "width": camera.width, "height": camera.height,
               "oracle": bool(use_oracle)}
    _emit(payload, as_json, [f"wrote {out} ({camera.width}x{camera.height})"])


def _per_chart_mean(mesh, deltas):
    """Average the per-chart delta means (the other Table-style aggregation)."""
    means = []
    for c in range(mesh.chart_count):
        sel = deltas[mesh.chart_of_triangle == c]
        sel = sel[np.isfinite(sel)]
        if len(sel):
            means.append(sel.mean())
    return float(np.mean(means)) if means else float("nan")


@main.command("eval-distortion")
@click.option("--obj", type=click.Path(exists=True), required=True)
@click.option("--bundles", type=click.Path(), default=None,
              help="Directory with the trained weight bundles.")
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--json", "as_json", is_flag=True)
def eval_distortion(obj, bundles, out, as_json):
    """Parameterization distortion ledger for GT and neural UV maps."""
    asset = load_asset(obj)
    mesh = asset.mesh
    variants = {"ground_truth": None}
    if bundles is not None:
        p2c = _load_bundle(os.path.join(bundles, "point2component.nispw"))
        p2uv = _load_bundle(os.path.join(bundles, "point2uv.nispw"))
        variants["neural_two_stage"] = np.asarray(
            models.predict_parameterization(p2c, p2uv, mesh.positions))

    rows = []
    payload = {}
    hist_data = []
    for name, uvs in variants.items():
        deltas = metrics.distortion_per_triangle(mesh, uvs)
        stats = metrics.distortion_stats(mesh, uvs)
        rows.append((name, "pooled", stats.delta_mean, stats.delta_max,
                     stats.delta_std, stats.triangle_count,
                     stats.excluded_count))
        rows.append((name, "per_chart_mean", _per_chart_mean(mesh, deltas),
                     stats.delta_max, stats.delta_std, stats.triangle_count,
                     stats.excluded_count))
        payload[name] = {
            "delta_mean": stats.delta_mean, "delta_max": stats.delta_max,
            "delta_std": stats.delta_std,
            "delta_mean_per_chart": _per_chart_mean(mesh, deltas),
            "excluded": stats.excluded_count,
        }
        hist_data.append((name, deltas[np.isfinite(deltas)]))

    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, "distortion.csv")
    _write_csv(csv_path,
               ["parameterization", "aggregation", "delta_mean", "delta_max",
                "delta_std", "triangles", "excluded"], rows)
    fig, ax = _new_figure(figsize=(5, 3.5))
    for name, vals in hist_data:
        ax.hist(vals, bins=40, alpha=0.6, label=name)
    ax.set_xlabel("per-triangle distortion")
    ax.set_ylabel("triangles")
    ax.legend()
    fig.tight_layout()
    _save_figure(fig, os.path.join(out, "distortion.png"))
    _emit(payload, as_json,
          [f"{name}: delta_mean={v['delta_mean']:.4f} "
           f"delta_max={v['delta_max']:.4f}" for name, v in payload.items()]
          + [f"wrote {csv_path}"])


@main.command("eval-image")
@click.argument("image_a", type=click.Path(exists=True))
@click.argument("image_b", type=click.Path(exists=True))
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--json", "as_json", is_flag=True)
def eval_image(image_a, image_b, out, as_json):
    """MSE / PSNR / SSIM between two renders, with a difference figure."""
    a = render.load_png(image_a)
    b = render.load_png(image_b)
    m = metrics.image_metrics(a, b)
    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, "image_metrics.csv")
    _write_csv(csv_path, ["image_a", "image_b", "mse", "psnr", "ssim"],
               [(image_a, image_b, m.mse, m.psnr, m.ssim)])
    fig, axes = _new_figure(1, 3, figsize=(10, 3.5))
    axes[0].imshow(a.pixels)
    axes[0].set_title("A")
    axes[1].imshow(b.pixels)
    axes[1].set_title("B")
    diff = np.abs(a.pixels.astype(np.int16)
                  - b.pixels.astype(np.int16)).mean(axis=-1)
    im = axes[2].imshow(diff, cmap="magma")
    axes[2].set_title("|A - B|")
    fig.colorbar(im, ax=axes[2])
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    _save_figure(fig, os.path.join(out, "image_metrics.png"))
    payload = {"mse": m.mse, "psnr": m.psnr, "ssim": m.ssim}
    _emit(payload, as_json,
          [f"mse={m.mse:.4f} psnr={m.psnr:.4f} ssim={m.ssim:.6f}",
           f"wrote {csv_path}"])


@main.command("prune")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
@click.option("--samples", "samples_path", type=click.Path(exists=True),
              required=True, help="Training sample file (NISPSAMP).")
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--model", "model_name", default="point2component",
              type=click.Choice(["overfit_sdf", "point2component",
                                 "point2uv"]), show_default=True)
@click.option("--epochs", type=int, default=40, show_default=True,
              help="Training epochs per pruning stage.")
@click.option("--rates", default=",".join(str(r) for r in FIG9_RATES),
              help="Comma-separated cumulative pruning rates.")
@click.option("--strategies", default=",".join(pruning.STRATEGIES),
              help="Comma-separated strategies to sweep.")
@click.option("--seed", type=int, default=None)
@click.option("--json", "as_json", is_flag=True)
def prune_cmd(config_path, samples_path, out, model_name, epochs, rates,
              strategies, seed, as_json):
    """Iterative magnitude-pruning sweep over a rate schedule."""
    config = _load_toml(config_path)
    seed = seed if seed is not None else config.get("seed", 0)
    rate_list = sorted(float(r) for r in rates.split(","))
    strategy_list = [s.strip() for s in strategies.split(",")]
    for s in strategy_list:
        if s not in pruning.STRATEGIES:
            raise click.ClickException(f"unknown strategy {s!r}")

    samples = sampling.load_samples(samples_path)
    spec = _network_spec(config, k=samples.k)
    build_fn, inputs, targets, loss, default_lr = _task_for(
        model_name, samples, spec)
    tc = _train_config(
        config, "sdf" if model_name == "overfit_sdf" else "parameterization",
        default_lr, epochs, seed)

    rows = []
    curves = {}
    metric_name = "accuracy" if loss == "cross_entropy" else "mae"
    for strategy in strategy_list:
        model = build_fn(sampling.derive_rng(seed, "prune-init"))
        initial = [(l.weight.copy(), l.bias.copy()) for l in model.layers]
        layer_ids = pruning.prunable_layers(model)
        pruning._ensure_masks(model, layer_ids)
        total = sum(model.layers[i].weight.size for i in layer_ids)
        models.train(model, inputs, targets, tc, loss,
                     stream_name=f"prune-{strategy}-dense")
        reference = model.copy()

        curve = []
        for rate in rate_list:
            target = int(round(total * rate))
            pruned = total - sum(int(model.layers[i].mask.sum())
                                 for i in layer_ids)
            pruning.prune_count(model, target - pruned, strategy,
                                reference=reference)
            pruning._rewind(model, initial)
            history = models.train(
                model, inputs, targets, tc, loss,
                stream_name=f"prune-{strategy}-{rate:.4f}")
            achieved = pruning.pruned_fraction(model)
            metric = history.val_metric[-1]
            rows.append((strategy, rate, achieved, metric_name, metric))
            curve.append((achieved, metric))
        curves[strategy] = curve

    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, "prune_sweep.csv")
    _write_csv(csv_path,
               ["strategy", "rate_target", "rate_achieved", "metric",
                "value"], rows)
    fig, ax = _new_figure(figsize=(5, 3.5))
    for strategy, curve in curves.items():
        xs = [100 * r for r, _ in curve]
        ys = [v for _, v in curve]
        ax.plot(xs, ys, marker="o", label=strategy)
    ax.set_xlabel("pruning rate (%)")
    ax.set_ylabel(f"validation {metric_name}")
    ax.legend()
    fig.tight_layout()
    _save_figure(fig, os.path.join(out, "prune_sweep.png"))
    payload = {"model": model_name, "metric": metric_name,
               "rows": [{"strategy": s, "rate": r, "achieved": a,
                         "value": v} for s, r, a, _, v in rows]}
    _emit(payload, as_json,
          [f"{s} @ {r:.4f}: {metric_name}={v:.6g}"
           for s, r, a, _, v in rows] + [f"wrote {csv_path}"])


@main.command("compress")
@click.option("--bundles", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), default="out", show_default=True)
@click.option("--json", "as_json", is_flag=True)
def compress(bundles, out, as_json):
    """Size table: dense container vs the four sparse formats per network."""
    rows = []
    payload = {}
    for name in BUNDLES:
        path = os.path.join(bundles, f"{name}.nispw")
        if not os.path.exists(path):
            continue
        model = nn.load_model(path)
        sizes = {"dense": pruning.serialized_size(model)}
        for fmt in pruning.SPARSE_FORMATS:
            sizes[fmt] = pruning.serialized_size(model, fmt)
        for fmt, size in sizes.items():
            rows.append((name, fmt, size))
        payload[name] = sizes
    if not rows:
        raise click.ClickException(f"no weight bundles found in {bundles}")

    os.makedirs(out, exist_ok=True)
    csv_path = os.path.join(out, "compression.csv")
    _write_csv(csv_path, ["network", "format", "bytes"], rows)
    fig, ax = _new_figure(figsize=(6, 3.5))
    names = sorted(payload)
    formats = ["dense"] + list(pruning.SPARSE_FORMATS)
    width = 0.8 / len(formats)
    xs = np.arange(len(names))
    for i, fmt in enumerate(formats):
        ax.bar(xs + i * width, [payload[n][fmt] / 1024 for n in names],
               width=width, label=fmt)
    ax.set_xticks(xs + 0.4 - width / 2)
    ax.set_xticklabels(names, rotation=15)
    ax.set_ylabel("size (KiB)")
    ax.legend()
    fig.tight_layout()
    _save_figure(fig, os.path.join(out, "compression.png"))
    _emit(payload, as_json,
          [f"{name} {fmt}: {size} bytes" for name, fmt, size in rows]
          + [f"wrote {csv_path}"])


if __name__ == "__main__":
    sys.exit(main())
