"""Tests for odf.experiments: evaluation protocol and ablation suites."""

import math

import pytest
import torch

from odf.config import ExperimentConfig, override
from odf.errors import ConfigError
from odf.experiments import (
    AUGMENTATION_ROWS,
    augmentation_suite,
    evaluate_backend,
    fit_shape,
    ground_truth_rays,
    input_rep_suite,
    recursion_suite,
    render_views,
    training_rays,
)
from odf.geometry import ExactODF
from odf.network import NeuralODF, OdfMLP
from odf.sampling import sample_rays_from_depth_maps
from odf.shapes import EmptyODF, ellipsoid
from odf.training import infer_latent, train


@pytest.fixture
def small_cfg():
    return override(ExperimentConfig(), {
        "metrics.n_eval_rays": 500,
        "sampling.n_rays": 400,
        "sampling.views": 2,
        "sampling.resolution": 8,
    })


def test_exact_backend_scores_perfectly(sphere_mesh, small_cfg):
    row = evaluate_backend(ExactODF(sphere_mesh), sphere_mesh, small_cfg, n_iterations=5)
    assert row["chamfer_x1000"] < 1e-6
    assert row["fscore_depth"] == pytest.approx(100.0)
    assert row["recall"] == 100.0
    assert row["iterations"] == 5
    assert row["n_rays"] == 500


def test_empty_backend_scores_nothing(sphere_mesh, small_cfg):
    row = evaluate_backend(EmptyODF(), sphere_mesh, small_cfg)
    assert math.isinf(row["chamfer_x1000"])
    assert row["fscore_depth"] == 0.0
    assert row["recall"] == 0.0
    assert row["n_points"] == 0


def test_ground_truth_is_deterministic(sphere_mesh, small_cfg):
    a = ground_truth_rays(sphere_mesh, small_cfg)
    b = ground_truth_rays(sphere_mesh, small_cfg)
    assert a.content_hash() == b.content_hash()


def test_recursion_suite_rows(sphere_mesh, small_cfg):
    rows = recursion_suite(ExactODF(sphere_mesh), sphere_mesh, small_cfg)
    assert [r["experiment"] for r in rows] == ["n=1", "n=3", "n=5"]
    assert [r["iterations"] for r in rows] == [1, 3, 5]
    assert rows[0]["recall"] <= rows[2]["recall"]


def test_render_views(sphere_mesh, small_cfg):
    images = render_views(sphere_mesh, small_cfg)
    assert len(images) == 2
    assert all(im.values.shape == (8, 8) and im.foreground.any() for im in images)


def test_training_rays_sources(sphere_mesh, small_cfg):
    assert len(training_rays(sphere_mesh, small_cfg, "Depth Images")) == 128
    mesh_rays = training_rays(sphere_mesh, small_cfg, "Mesh")
    assert mesh_rays.counts["ball"] + mesh_rays.counts["surface"] == 400
    with pytest.raises(ConfigError):
        training_rays(sphere_mesh, small_cfg, "Voxels")


# ─── Desk-scale training runs ────────────────────────────────────────────

DESK = {
    "sampling.n_rays": 100_000,
    "sampling.views": 8,
    "sampling.resolution": 128,
    "augment.enable_a": True,
    "augment.enable_b": True,
    "augment.enable_c": True,
    "model.n_layers": 4,
    "model.width": 128,
    "train.epochs": 40,
    "train.batch_size": 4096,
    "train.lr": 1e-3,
    "metrics.n_eval_rays": 30_000,
}


@pytest.fixture(scope="module")
def desk_cfg():
    return override(ExperimentConfig(), DESK)


@pytest.fixture(scope="module")
def sphere_model(sphere_mesh, desk_cfg):
    return fit_shape(sphere_mesh, desk_cfg)


def _chamfer_by_row(rows):
    return {r["experiment"]: r["chamfer_x1000"] for r in rows}


@pytest.mark.slow
def test_overfit_sphere_reaches_thresholds(sphere_mesh, desk_cfg, sphere_model):
    row = evaluate_backend(sphere_model, sphere_mesh, desk_cfg, n_iterations=3)
    assert row["chamfer_x1000"] < 1.0
    assert row["recall"] > 95
    assert row["fscore_mask"] > 92


@pytest.mark.slow
def test_recursion_improves_trained_model(sphere_mesh, desk_cfg, sphere_model):
    one, three, _ = recursion_suite(sphere_model, sphere_mesh, desk_cfg)
    assert three["chamfer_x1000"] < one["chamfer_x1000"]
    assert three["recall"] > one["recall"] + 10


@pytest.mark.slow
def test_augmentation_ordering(sphere_mesh, desk_cfg):
    rows = augmentation_suite(sphere_mesh, desk_cfg, variants=("none", "a", "abc"))
    assert set(AUGMENTATION_ROWS) >= {r["experiment"] for r in rows}
    chamfer = _chamfer_by_row(rows)
    assert chamfer["abc"] < chamfer["a"] < chamfer["none"]


@pytest.mark.slow
def test_mesh_input_beats_depth_images(sphere_mesh, desk_cfg):
    rows = input_rep_suite(sphere_mesh, desk_cfg)
    assert [r["experiment"] for r in rows] == ["Mesh", "Depth Images"]
    chamfer = _chamfer_by_row(rows)
    assert chamfer["Mesh"] < chamfer["Depth Images"]


# (1, 1, 1) and (1, 0.6, 0.6) bracket the held-out shape
AUTODECODER_SHAPES = {
    "sphere": (1.0, 1.0, 1.0),
    "long_x": (1.0, 0.6, 0.6),
    "long_y": (0.6, 1.0, 0.6),
    "long_z": (0.6, 0.6, 1.0),
    "flat": (1.0, 1.0, 0.5),
}
HELD_OUT_AXES = (1.0, 0.8, 0.8)


@pytest.mark.slow
def test_autodecoder_reconstructs_held_out_interpolant(desk_cfg):
    cfg = override(desk_cfg, {
        "sampling.n_rays": 20_000,
        "model.latent_dim": 16,
        "train.mode": "autodecoder",
        "train.epochs": 60,
        "train.latent_epochs": 200,
    })
    datasets = {name: training_rays(ellipsoid(axes), cfg, "Mesh") for name, axes in AUTODECODER_SHAPES.items()}
    model = OdfMLP(cfg.model)
    result = train(model, datasets, cfg.train, cfg.loss)

    codes = result.latents.codes.weight.detach()
    gaps = torch.cdist(codes, codes)[~torch.eye(len(codes), dtype=torch.bool)]
    assert float(gaps.min()) > 1e-3

    held = ellipsoid(HELD_OUT_AXES)
    views = sample_rays_from_depth_maps(render_views(held, cfg), cfg.domain, cfg.seed)
    latent, loss = infer_latent(model, views, cfg.train, cfg.loss)
    assert loss < 2 * result.final_loss

    gt = ground_truth_rays(held, cfg)
    inferred = evaluate_backend(NeuralODF(model, latent, cfg.domain), held, cfg, gt=gt)
    reused = [evaluate_backend(NeuralODF(model, result.latents.code(name).detach(), cfg.domain), held, cfg, gt=gt)
              for name in AUTODECODER_SHAPES]
    assert inferred["chamfer_x1000"] < min(r["chamfer_x1000"] for r in reused)
