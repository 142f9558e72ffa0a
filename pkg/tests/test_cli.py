"""End-to-end exercise of every CLI command at a tiny scale."""

import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from texfit.cli import main

from conftest import ASSET_DIR

OBJ = str(ASSET_DIR / "sphere.obj")


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, runner):
    """One tiny training run shared by the downstream command tests."""
    out = tmp_path_factory.mktemp("bundles")
    result = runner.invoke(main, [
        "train", "--obj", OBJ, "--out", str(out), "--samples", "2000",
        "--epochs", "2", "--seed", "5", "--json"])
    assert result.exit_code == 0, result.output
    return out


def test_ingest_reports_charts(runner, tmp_path):
    result = runner.invoke(main, ["ingest", OBJ, "--out", str(tmp_path)])
    assert result.exit_code == 0
    assert "k=2" in result.output
    assert (tmp_path / "normalized.obj").exists()
    assert (tmp_path / "charts.csv").read_text().splitlines() == [
        "chart,triangles", "0,256", "1,256"]


def test_ingest_missing_file(runner, tmp_path):
    result = runner.invoke(main, ["ingest", "no/such.obj", "--out",
                                  str(tmp_path)])
    assert result.exit_code != 0
    assert "no/such.obj" in result.output


def test_ingest_idempotent(runner, tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        assert runner.invoke(main, ["ingest", OBJ, "--out",
                                    str(out)]).exit_code == 0
    assert (a / "normalized.obj").read_bytes() == (
        b / "normalized.obj").read_bytes()


def test_train_outputs(trained_dir):
    for name in ("overfit_sdf", "point2component", "point2uv"):
        assert (trained_dir / f"{name}.nispw").exists()
        assert (trained_dir / f"history_{name}.csv").exists()
    assert (trained_dir / "samples.nisp").exists()
    assert (trained_dir / "history.png").exists()


def test_train_seed_reproducible(runner, tmp_path):
    outs = []
    for sub in ("r1", "r2"):
        out = tmp_path / sub
        result = runner.invoke(main, [
            "train", "--obj", OBJ, "--out", str(out), "--samples", "500",
            "--epochs", "2", "--seed", "3"])
        assert result.exit_code == 0, result.output
        outs.append(out)
    for name in ("samples.nisp", "overfit_sdf.nispw",
                 "history_point2uv.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_train_config_file(runner, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        f'seed = 9\n[paths]\nobj = "{OBJ}"\n'
        "[sampling]\nn = 400\n[train]\nepochs = 1\n")
    result = runner.invoke(main, [
        "train", "--config", str(cfg), "--out", str(tmp_path / "o"),
        "--json"])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["seed"] == 9
    assert payload["n"] == 400


def _scene(path, trained_dir, **extra):
    scene = {
        "obj": OBJ,
        "sdf_bundle": str(trained_dir / "overfit_sdf.nispw"),
        "point2component_bundle": str(trained_dir / "point2component.nispw"),
        "point2uv_bundle": str(trained_dir / "point2uv.nispw"),
        "camera": {"width": 32, "height": 32},
    }
    scene.update(extra)
    path.write_text(json.dumps(scene))
    return path


def test_render_oracle_and_neural(runner, tmp_path, trained_dir):
    scene = _scene(tmp_path / "scene.json", trained_dir)
    for flag, name in ((["--oracle"], "o.png"), ([], "n.png")):
        result = runner.invoke(main, [
            "render", str(scene), "--out", str(tmp_path / name)] + flag)
        assert result.exit_code == 0, result.output
        assert (tmp_path / name).exists()


def test_render_deterministic(runner, tmp_path, trained_dir):
    scene = _scene(tmp_path / "scene.json", trained_dir)
    for name in ("a.png", "b.png"):
        assert runner.invoke(main, [
            "render", str(scene), "--out", str(tmp_path / name),
            "--oracle"]).exit_code == 0
    assert (tmp_path / "a.png").read_bytes() == (
        tmp_path / "b.png").read_bytes()


def test_render_edit_texture(runner, tmp_path, trained_dir):
    from PIL import Image
    edited = tmp_path / "red.png"
    Image.fromarray(np.full((8, 8, 3), (255, 0, 0), dtype=np.uint8)).save(
        edited)
    scene = _scene(tmp_path / "scene.json", trained_dir)
    base = tmp_path / "base.png"
    swapped = tmp_path / "swap.png"
    assert runner.invoke(main, ["render", str(scene), "--out", str(base),
                                "--oracle"]).exit_code == 0
    assert runner.invoke(main, [
        "render", str(scene), "--out", str(swapped), "--oracle",
        "--edit-texture", str(edited)]).exit_code == 0
    assert base.read_bytes() != swapped.read_bytes()


def test_render_k_mismatch(runner, tmp_path, trained_dir):
    from texfit import models, nn
    from texfit.sampling import derive_rng
    bad = models.build_point2uv(
        models.NetworkSpec(hidden_layers=1, hidden_width=8, k=5),
        derive_rng(0, "bad"))
    bad_path = tmp_path / "bad.nispw"
    nn.save_model(bad, bad_path)
    scene = _scene(tmp_path / "scene.json", trained_dir,
                   point2uv_bundle=str(bad_path))
    result = runner.invoke(main, ["render", str(scene), "--out",
                                  str(tmp_path / "x.png")])
    assert result.exit_code != 0


def test_eval_distortion(runner, tmp_path, trained_dir):
    result = runner.invoke(main, [
        "eval-distortion", "--obj", OBJ, "--bundles", str(trained_dir),
        "--out", str(tmp_path), "--json"])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert "ground_truth" in payload and "neural_two_stage" in payload
    lines = (tmp_path / "distortion.csv").read_text().splitlines()
    # both aggregation variants for both parameterizations, plus header
    assert len(lines) == 5
    assert (tmp_path / "distortion.png").exists()


def test_eval_image(runner, tmp_path, trained_dir):
    scene = _scene(tmp_path / "scene.json", trained_dir)
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    assert runner.invoke(main, ["render", str(scene), "--out", str(a),
                                "--oracle"]).exit_code == 0
    assert runner.invoke(main, ["render", str(scene), "--out",
                                str(b)]).exit_code == 0
    result = runner.invoke(main, [
        "eval-image", str(a), str(b), "--out", str(tmp_path), "--json"])
    assert result.exit_code == 0, result.output
    payload = json.loads(result.output)
    assert payload["mse"] >= 0
    assert (tmp_path / "image_metrics.csv").exists()
    assert (tmp_path / "image_metrics.png").exists()


def test_prune_sweep_rows(runner, tmp_path, trained_dir):
    result = runner.invoke(main, [
        "prune", "--samples", str(trained_dir / "samples.nisp"),
        "--out", str(tmp_path), "--epochs", "1",
        "--rates", "0.2,0.5", "--seed", "1", "--json"])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "prune_sweep.csv").read_text().splitlines()
    assert lines[0] == "strategy,rate_target,rate_achieved,metric,value"
    assert len(lines) == 1 + 2 * 3  # two rates x three strategies
    assert (tmp_path / "prune_sweep.png").exists()


def test_compress_table(runner, tmp_path, trained_dir):
    result = runner.invoke(main, [
        "compress", "--bundles", str(trained_dir), "--out", str(tmp_path),
        "--json"])
    assert result.exit_code == 0, result.output
    lines = (tmp_path / "compression.csv").read_text().splitlines()
    assert len(lines) == 1 + 3 * 5  # three networks x (dense + 4 formats)
    payload = json.loads(result.output)
    for sizes in payload.values():
        assert set(sizes) == {"dense", "coo", "csc", "csr", "dia"}


def test_compress_missing_bundles(runner, tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    result = runner.invoke(main, ["compress", "--bundles", str(empty),
                                  "--out", str(tmp_path)])
    assert result.exit_code != 0
