"""CLI smoke tests through click's CliRunner (exact backend, tiny sizes)."""

import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from cli import cli
from odf.camera import load_depth_dir
from odf.forward_maps import load_voxels
from odf.geometry import load_mesh, load_points
from odf.sampling import RayDataset, load_dataset, save_dataset

SMALL = """\
sampling:
  resolution: 8
metrics:
  n_eval_rays: 500
  voxel_resolution: 8
  sign_directions: 16
jumping_cubes:
  n: 16
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL)
    return str(path)


def _run(runner, *args):
    result = runner.invoke(cli, [str(a) for a in args])
    assert result.exit_code == 0, result.output
    return result


def test_shape(runner, tmp_path):
    out = tmp_path / "sphere.obj"
    _run(runner, "shape", "sphere", "-o", out)
    assert load_mesh(out).n_faces > 0
    assert (tmp_path / "sphere.obj.json").exists()


def test_unknown_shape_is_config_error(runner, tmp_path):
    result = runner.invoke(cli, ["shape", "bogus", "-o", str(tmp_path / "x.obj")])
    assert result.exit_code == 2
    assert "ERROR" in result.output


def test_missing_mesh_is_data_error(runner, tmp_path):
    result = runner.invoke(cli, ["sample", str(tmp_path / "missing.obj"), "-o", str(tmp_path / "r.odfr")])
    assert result.exit_code == 3
    assert "ERROR" in result.output


def test_missing_required_config(runner, tmp_path):
    result = runner.invoke(cli, ["--config", str(tmp_path / "none.yaml"), "table"])
    assert result.exit_code == 2


def test_sample_needs_exactly_one_source(runner, tmp_path):
    result = runner.invoke(cli, ["sample", "-o", str(tmp_path / "r.odfr")])
    assert result.exit_code == 2


def test_sample_is_deterministic(runner, tmp_path):
    a, b = tmp_path / "a.odfr", tmp_path / "b.odfr"
    for out in (a, b):
        _run(runner, "sample", "sphere", "--n", 200, "--aug", "abc", "--seed", 7, "-o", out,
             "--csv", out.with_suffix(".csv"))
    assert a.read_bytes() == b.read_bytes()
    ds = load_dataset(a)
    assert ds.counts["ball"] + ds.counts["surface"] == 200
    assert len(ds) > 200
    meta = json.loads((tmp_path / "a.odfr.json").read_text())
    assert meta["augment"] == "abc"
    assert "config_hash" in meta


def test_views_then_sample_from_depth(runner, tmp_path):
    views = tmp_path / "views"
    _run(runner, "views", "sphere", "--k", 2, "--resolution", 8, "-o", views)
    assert len(load_depth_dir(views)) == 2
    assert len(list(views.glob("*.png"))) == 2

    out = tmp_path / "d.odfr"
    _run(runner, "sample", "--from-depth", views, "-o", out)
    assert len(load_dataset(out)) == 128


class TestExtract:
    def test_pointcloud(self, runner, tmp_path):
        out = tmp_path / "p.npy"
        _run(runner, "extract", "sphere", "--exact", "--rep", "pointcloud", "--n-points", 400, "-o", out)
        points = load_points(out)
        assert len(points) > 0
        assert abs(float((points ** 2).sum(axis=1).max()) ** 0.5 - 1) < 0.01

    def test_voxel(self, runner, tmp_path, small_config):
        out = tmp_path / "v.odfv"
        _run(runner, "--config", small_config, "extract", "sphere", "--exact", "--rep", "voxel", "-o", out)
        grid, meta = load_voxels(out)
        assert grid.n == 8
        assert 0 < int(grid.occupancy.sum()) < 8 ** 3
        assert meta["representation"] == "voxel"

    def test_depth(self, runner, tmp_path, small_config):
        out = tmp_path / "front.pfm"
        _run(runner, "--config", small_config, "extract", "sphere", "--exact", "--rep", "depth",
             "--camera", "1.3,0,0", "-o", out)
        (image,) = load_depth_dir(tmp_path)
        assert image.values.shape == (8, 8)
        assert image.foreground.any()

    def test_mesh(self, runner, tmp_path):
        out = tmp_path / "jc.obj"
        _run(runner, "extract", "sphere", "--exact", "--rep", "mesh", "--n", 16, "-o", out)
        assert load_mesh(out).n_faces > 0

    def test_bad_camera(self, runner, tmp_path):
        result = runner.invoke(cli, ["extract", "sphere", "--exact", "--rep", "depth", "--camera", "1,2",
                                     "-o", str(tmp_path / "d.pfm")])
        assert result.exit_code == 2


def test_eval_points_against_themselves(runner, tmp_path):
    points = tmp_path / "p.npy"
    _run(runner, "extract", "sphere", "--exact", "--rep", "pointcloud", "--n-points", 300, "-o", points)
    report = tmp_path / "r.json"
    _run(runner, "eval", points, points, "--brute-force", "--json", report, "--csv", tmp_path / "r.csv")
    values = {r["metric"]: r["value"] for r in json.loads(report.read_text())["rows"]}
    assert values["chamfer_x1000"] == 0.0
    assert values["chamfer_x1000_brute_force"] == 0.0
    assert values["fscore_depth"] == pytest.approx(100.0)


def test_table(runner):
    result = _run(runner, "table")
    assert "218" in result.output


def test_ablate_recursion(runner, tmp_path, small_config):
    out = tmp_path / "recursion.csv"
    _run(runner, "--config", small_config, "ablate", "recursion", "sphere", "--csv", out)
    with open(out, newline="") as f:
        rows = list(csv.DictReader(f))
    assert [r["experiment"] for r in rows] == ["n=1", "n=3", "n=5"]
    assert float(rows[2]["recall"]) > 99


def test_fit_writes_checkpoint(runner, tmp_path):
    data = tmp_path / "sphere.odfr"
    _run(runner, "sample", "sphere", "--n", 300, "-o", data)
    ckpt = tmp_path / "sphere.odfm"
    result = _run(runner, "fit", data, "--layers", 3, "--width", 16, "--epochs", 1, "--batch-size", 64,
                  "-o", ckpt)
    assert ckpt.exists()
    assert "final loss" in result.output


def test_fit_overfit_takes_one_dataset(runner, tmp_path):
    data = tmp_path / "sphere.odfr"
    _run(runner, "sample", "sphere", "--n", 100, "-o", data)
    other = tmp_path / "other.odfr"
    other.write_bytes(data.read_bytes())
    result = runner.invoke(cli, ["fit", str(data), str(other), "-o", str(tmp_path / "m.odfm")])
    assert result.exit_code == 2


def test_fit_non_finite_loss_exits_4(runner, tmp_path):
    data = tmp_path / "sphere.odfr"
    _run(runner, "sample", "sphere", "--n", 100, "-o", data)
    ds = load_dataset(data)
    depth = ds.depth.copy()
    depth[:] = np.nan
    broken = tmp_path / "broken.odfr"
    save_dataset(RayDataset(ds.origins, ds.dirs, depth, ds.hit), broken)
    result = runner.invoke(cli, ["fit", str(broken), "--layers", "3", "--width", "8", "--epochs", "1",
                                 "-o", str(tmp_path / "m.odfm")])
    assert result.exit_code == 4
    assert "ERROR" in result.output
