"""Shared fixtures: the committed two-chart sphere asset and its oracle."""

import pathlib

import pytest

from texfit.mesh_io import load_asset
from texfit.surface import SurfaceOracle

ASSET_DIR = pathlib.Path(__file__).resolve().parent.parent / "assets" / "fixture"


@pytest.fixture(scope="session")
def fixture_asset():
    return load_asset(str(ASSET_DIR / "sphere.obj"))


@pytest.fixture(scope="session")
def fixture_mesh(fixture_asset):
    return fixture_asset.mesh


@pytest.fixture(scope="session")
def fixture_oracle(fixture_mesh):
    return SurfaceOracle(fixture_mesh)


@pytest.fixture(scope="session")
def fixture_texture(fixture_asset):
    for name in sorted(fixture_asset.diffuse_textures):
        return fixture_asset.diffuse_textures[name]
    raise RuntimeError("fixture has no diffuse texture")
