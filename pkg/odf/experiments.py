"""Evaluation protocol and ablation suites (recursion count, augmentation, input representation)."""

from __future__ import annotations

import logging

from odf.camera import DepthImage, sample_cameras
from odf.config import ExperimentConfig
from odf.domain import OdfBackend, make_rng
from odf.errors import ConfigError
from odf.forward_maps import ray_cast_depth_map
from odf.geometry import ExactODF, TriMesh
from odf.inference import batch_recursive_inference
from odf.metrics import chamfer, fscore_depth, mask_metrics
from odf.network import NeuralODF, OdfMLP
from odf.sampling import AugmentConfig, RayDataset, augment_rays, sample_rays_from_depth_maps, sample_rays_from_mesh
from odf.training import train

logger = logging.getLogger(__name__)

RECURSION_ROWS = (1, 3, 5)
AUGMENTATION_ROWS = ("none", "a", "b", "c", "abc")
INPUT_REP_ROWS = ("Mesh", "Depth Images")

# rng stream per role
EVAL_STREAM = 11
SAMPLE_STREAM = 1
AUGMENT_STREAM = 2
VIEW_STREAM = 3


def ground_truth_rays(mesh: TriMesh, cfg: ExperimentConfig, oracle: ExactODF | None = None) -> RayDataset:
    return sample_rays_from_mesh(mesh, cfg.metrics.n_eval_rays, make_rng(cfg.seed, EVAL_STREAM),
                                 cfg.domain, seed=cfg.seed, oracle=oracle)


def evaluate_backend(backend: OdfBackend, mesh: TriMesh, cfg: ExperimentConfig = ExperimentConfig(),
                     n_iterations: int | None = None, gt: RayDataset | None = None) -> dict:
    """Chamfer / F-score of inferred surface points against the GT ray end points, plus mask scores."""
    gt = gt if gt is not None else ground_truth_rays(mesh, cfg)
    inference = cfg.inference.with_n(n_iterations or cfg.inference.n)
    out = batch_recursive_inference(backend, gt.origins, gt.dirs, inference)
    pred = out.points[out.mask]
    gt_cloud = gt.end_points()
    masks = mask_metrics(out.mask, gt.hit)
    row = {
        "chamfer_x1000": float("inf"),
        "fscore_depth": 0.0,
        "recall": masks.recall,
        "fscore_mask": masks.fscore,
        "n_rays": len(gt),
        "n_points": len(pred),
        "iterations": inference.n,
    }
    if len(pred) and len(gt_cloud):
        row["chamfer_x1000"] = chamfer(pred, gt_cloud)
        row["fscore_depth"] = fscore_depth(pred, gt_cloud, cfg.metrics.fscore_threshold)
    else:
        logger.warning("No surface points to compare (%d predicted, %d ground truth)", len(pred), len(gt_cloud))
    logger.info("n=%d  chamfer %.4f  F %.2f  recall %.2f", inference.n, row["chamfer_x1000"],
                row["fscore_depth"], row["recall"])
    return row


def render_views(mesh: TriMesh, cfg: ExperimentConfig, k: int | None = None,
                 oracle: ExactODF | None = None) -> list[DepthImage]:
    """Ground-truth depth images from k cameras on the enclosing sphere."""
    oracle = oracle if oracle is not None else ExactODF(mesh, cfg.domain)
    s = cfg.sampling
    cameras = sample_cameras(k or s.views, make_rng(cfg.seed, VIEW_STREAM), cfg.domain,
                             s.resolution, s.resolution, s.fov_deg)
    return [ray_cast_depth_map(oracle, cam) for cam in cameras]


def training_rays(mesh: TriMesh, cfg: ExperimentConfig, source: str = "Mesh",
                  aug: AugmentConfig | None = None, oracle: ExactODF | None = None) -> RayDataset:
    """Training set for one shape from the mesh itself or from its rendered views."""
    if source not in INPUT_REP_ROWS:
        raise ConfigError(f"training source must be one of {INPUT_REP_ROWS}, got '{source}'")
    aug = aug if aug is not None else cfg.augment
    oracle = oracle if oracle is not None else ExactODF(mesh, cfg.domain)
    if source == "Mesh":
        ds = sample_rays_from_mesh(mesh, cfg.sampling.n_rays, make_rng(cfg.seed, SAMPLE_STREAM), cfg.domain,
                                   seed=cfg.seed, balance=cfg.sampling.balance, oracle=oracle)
        return augment_rays(ds, oracle, aug, make_rng(cfg.seed, AUGMENT_STREAM), cfg.domain)
    ds = sample_rays_from_depth_maps(render_views(mesh, cfg, oracle=oracle), cfg.domain, cfg.seed)
    return augment_rays(ds, None, aug, make_rng(cfg.seed, AUGMENT_STREAM), cfg.domain)


def fit_shape(mesh: TriMesh, cfg: ExperimentConfig, source: str = "Mesh",
              aug: AugmentConfig | None = None) -> NeuralODF:
    data = training_rays(mesh, cfg, source, aug)
    model = OdfMLP(cfg.model)
    train(model, data, cfg.train, cfg.loss)
    return NeuralODF(model, domain=cfg.domain)


# ─── Ablations ───────────────────────────────────────────────────────────


def recursion_suite(backend: OdfBackend, mesh: TriMesh, cfg: ExperimentConfig = ExperimentConfig(),
                    iterations=RECURSION_ROWS) -> list[dict]:
    gt = ground_truth_rays(mesh, cfg)
    return [{"experiment": f"n={n}", **evaluate_backend(backend, mesh, cfg, n, gt)} for n in iterations]


def augmentation_suite(mesh: TriMesh, cfg: ExperimentConfig = ExperimentConfig(),
                       variants=AUGMENTATION_ROWS) -> list[dict]:
    """One model per augmentation setting, identical budgets and seeds."""
    gt = ground_truth_rays(mesh, cfg)
    rows = []
    for flags in variants:
        aug = AugmentConfig.from_flags(flags, cfg.augment.perturb_max, cfg.augment.ratio)
        logger.info("Augmentation ablation: training with '%s'", aug.flags)
        backend = fit_shape(mesh, cfg, "Mesh", aug)
        rows.append({"experiment": aug.flags, **evaluate_backend(backend, mesh, cfg, gt=gt)})
    return rows


def input_rep_suite(mesh: TriMesh, cfg: ExperimentConfig = ExperimentConfig(),
                    sources=INPUT_REP_ROWS) -> list[dict]:
    """Mesh-sampled rays against rays lifted from multi-view depth images."""
    gt = ground_truth_rays(mesh, cfg)
    rows = []
    for source in sources:
        logger.info("Input-representation ablation: training on %s", source)
        backend = fit_shape(mesh, cfg, source)
        rows.append({"experiment": source, **evaluate_backend(backend, mesh, cfg, gt=gt)})
    return rows

