#!/usr/bin/env python3
"""ODF CLI: omnidirectional distance fields from meshes and depth maps."""

import logging
import time
import click
import numpy as np
from pathlib import Path
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table
from rich.panel import Panel
from rich import box

from odf.errors import OdfError, ConfigError, DataError

CONFIG_PATH = Path(__file__).parent / "config.yaml"
REPRESENTATIONS = ("pointcloud", "depth", "voxel", "mesh", "udf-grid")
SUITES = ("recursion", "augmentation", "input-rep")
console = Console()


def _fmt_duration(seconds: float) -> str:
    """Format duration: <60s as '42s', >=60s as '1.5m'."""
    if seconds < 60:
        return f"{seconds:.0f}s"
    return f"{seconds / 60:.1f}m"


def _fmt_metric(value: float) -> str:
    if value is None or not np.isfinite(value):
        return "[dim]-[/]"
    return f"{value:.4f}" if abs(value) < 1000 else f"{value:,.0f}"


def _setup_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False, markup=False)],
        force=True,
    )


def _config(ctx, **overrides):
    from odf.config import override
    return override(ctx.obj["cfg"], overrides)


def _manifest(cfg, **extra) -> dict:
    from odf.config import config_hash, domain_dict
    from odf.storage import timestamp
    return {"config_hash": config_hash(cfg), "domain": domain_dict(cfg.domain), "created": timestamp(), **extra}


def _load_shape(source: str):
    """Built-in shape name or mesh file."""
    from odf.shapes import BUILTIN_SHAPES, builtin_shape
    from odf.geometry import load_mesh
    if source in BUILTIN_SHAPES:
        return builtin_shape(source)
    return load_mesh(source)


def _parse_vec(text: str) -> tuple[float, float, float]:
    try:
        x, y, z = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"expected 'x,y,z', got '{text}'") from None
    return x, y, z


def _backend(source: str, exact: bool, cfg, latent_path: str | None = None, instance: str | None = None):
    """Exact backend for a mesh/shape, or a NeuralODF for an ODFM checkpoint."""
    if exact:
        from odf.geometry import ExactODF
        return ExactODF(_load_shape(source), cfg.domain)
    from odf.network import NeuralODF, load_checkpoint
    ckpt = load_checkpoint(source)
    latent = None
    if latent_path:
        latent = np.load(latent_path)
    elif instance:
        if ckpt.latents is None:
            raise ConfigError(f"{source} has no latent table")
        latent = ckpt.latents.code(instance)
    elif ckpt.model.cfg.latent_dim:
        raise ConfigError("autodecoder checkpoint: pass --instance ID or --latent FILE")
    return NeuralODF(ckpt.model, latent, cfg.domain)


def _artifact_domain(path: str) -> dict | None:
    from odf.storage import load_json, sidecar_path
    p = Path(path)
    if not p.exists():
        return None
    return load_json(sidecar_path(p)).get("domain")


# ─── CLI ─────────────────────────────────────────────────────────────────


class OdfGroup(click.Group):
    """Reports library errors as one line and exits with the error's code."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except OdfError as e:
            console.print(f"[red]ERROR:[/] {e}")
            ctx.exit(e.exit_code)


@click.group(cls=OdfGroup)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="Experiment config (default: config.yaml next to cli.py)")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.pass_context
def cli(ctx, config_path, verbose):
    """ODF CLI: omnidirectional distance fields from meshes and depth maps."""
    from odf.config import load_config
    _setup_logging(verbose)
    ctx.ensure_object(dict)
    if config_path:
        ctx.obj["cfg"] = load_config(config_path, required=True)
    else:
        ctx.obj["cfg"] = load_config(CONFIG_PATH)


@cli.command()
@click.argument("source", required=False)
@click.option("--from-depth", "depth_dir", type=click.Path(file_okay=False), default=None,
              help="Lift rays from a directory of depth images instead of a mesh")
@click.option("--n", "n_rays", type=int, default=None, help="Number of base rays (mesh input)")
@click.option("--aug", default=None, help="Augmentations: any of 'abc', or 'none'")
@click.option("--seed", type=int, default=None)
@click.option("--out", "-o", required=True, type=click.Path(dir_okay=False), help="ODFR output file")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None, help="Also export as CSV")
@click.pass_context
def sample(ctx, source, depth_dir, n_rays, aug, seed, out, csv_path):
    """Sample labeled rays from a mesh (or built-in shape) or from depth images."""
    from odf.camera import load_depth_dir
    from odf.domain import make_rng
    from odf.experiments import AUGMENT_STREAM, training_rays
    from odf.sampling import AugmentConfig, augment_rays, export_csv, sample_rays_from_depth_maps, save_dataset

    if bool(source) == bool(depth_dir):
        raise ConfigError("give either a mesh/shape SOURCE or --from-depth DIR")
    overrides = {"sampling.n_rays": n_rays, "seed": seed}
    if aug is not None:
        flags = AugmentConfig.from_flags(aug)
        overrides.update({"augment.enable_a": flags.enable_a, "augment.enable_b": flags.enable_b,
                          "augment.enable_c": flags.enable_c})
    cfg = _config(ctx, **overrides)

    if depth_dir:
        images = load_depth_dir(depth_dir)
        ds = sample_rays_from_depth_maps(images, cfg.domain, cfg.seed)
        ds = augment_rays(ds, None, cfg.augment, make_rng(cfg.seed, AUGMENT_STREAM), cfg.domain)
    else:
        ds = training_rays(_load_shape(source), cfg, "Mesh")

    save_dataset(ds, out, _manifest(cfg, source=source or depth_dir, augment=cfg.augment.flags))
    console.print(f"[green]+[/] {len(ds):,} rays -> {out}  "
                  f"[dim]({', '.join(f'{k} {v:,}' for k, v in ds.counts.items())}; "
                  f"{100 * ds.hit_fraction:.1f}% intersect)[/]")
    if csv_path:
        export_csv(ds, csv_path)
        console.print(f"[green]+[/] CSV -> {csv_path}")


@cli.command()
@click.argument("source")
@click.option("--k", "k", type=int, default=None, help="Number of views (default: sampling.views)")
@click.option("--resolution", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out-dir", "-o", required=True, type=click.Path(file_okay=False))
@click.pass_context
def views(ctx, source, k, resolution, seed, out_dir):
    """Render ground-truth depth images of a mesh from cameras on the enclosing sphere."""
    from odf.camera import save_depth_image
    from odf.experiments import render_views

    cfg = _config(ctx, **{"sampling.views": k, "sampling.resolution": resolution, "seed": seed})
    images = render_views(_load_shape(source), cfg)
    out = Path(out_dir)
    for i, image in enumerate(images):
        save_depth_image(image, out / f"view_{i:03d}.pfm", cfg.domain, meta=_manifest(cfg, source=source))
    fg = sum(int(im.foreground.sum()) for im in images)
    console.print(f"[green]+[/] {len(images)} depth images ({cfg.sampling.resolution}²) -> {out}  "
                  f"[dim]{fg:,} foreground pixels[/]")


@cli.command()
@click.argument("datasets", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["overfit", "autodecoder"]), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--layers", type=int, default=None, help="Dense layers in the MLP")
@click.option("--width", type=int, default=None)
@click.option("--latent-dim", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "-o", required=True, type=click.Path(dir_okay=False), help="ODFM checkpoint")
@click.option("--resume", is_flag=True, help="Continue training the checkpoint at --out")
@click.pass_context
def fit(ctx, datasets, mode, epochs, batch_size, lr, layers, width, latent_dim, seed, out, resume):
    """Train a NeuralODF on one dataset (overfit) or many (autodecoder)."""
    from odf.config import to_dict
    from odf.network import OdfMLP, load_checkpoint
    from odf.sampling import load_dataset
    from odf.training import resume_epoch, train

    cfg = _config(ctx, **{"train.mode": mode, "train.epochs": epochs, "train.batch_size": batch_size,
                          "train.lr": lr, "model.n_layers": layers, "model.width": width,
                          "model.latent_dim": latent_dim, "seed": seed, "train.seed": seed,
                          "model.seed": seed})
    if cfg.train.mode == "overfit" and len(datasets) > 1:
        raise ConfigError("overfit mode takes exactly one dataset")
    loaded = {Path(p).stem: load_dataset(p) for p in datasets}
    if len(loaded) != len(datasets):
        raise ConfigError("dataset file names must have distinct stems (they become instance ids)")
    data = next(iter(loaded.values())) if cfg.train.mode == "overfit" else loaded

    latents, start = None, 0
    if resume:
        ckpt = load_checkpoint(out)
        model, latents, start = ckpt.model, ckpt.latents, resume_epoch(out)
        console.print(f"  Resuming {out} from epoch {start}")
    else:
        model = OdfMLP(cfg.model)

    t0 = time.monotonic()
    result = train(model, data, cfg.train, cfg.loss, latents, checkpoint=out, start_epoch=start,
                   manifest=_manifest(cfg, config=to_dict(cfg), datasets=list(datasets)))
    final = result.final_loss
    console.print(Panel(
        f"epochs: {cfg.train.epochs}  (from {start})\n"
        f"final loss: {_fmt_metric(final)}\n"
        f"instances: {len(loaded) if cfg.train.mode == 'autodecoder' else 1}\n"
        f"time: {_fmt_duration(time.monotonic() - t0)}",
        title=f"[green]+[/] {out}", box=box.ROUNDED,
    ))


@cli.command(name="fit-latent")
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.argument("depth_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--epochs", type=int, default=None, help="Latent optimization epochs")
@click.option("--out", "-o", required=True, type=click.Path(dir_okay=False), help="Latent code (.npy)")
@click.pass_context
def fit_latent(ctx, checkpoint, depth_dir, epochs, out):
    """Optimize a latent code for an unseen shape from its depth images (weights frozen)."""
    from odf.camera import load_depth_dir
    from odf.network import load_checkpoint
    from odf.sampling import sample_rays_from_depth_maps
    from odf.storage import save_json, sidecar_path
    from odf.training import infer_latent

    cfg = _config(ctx, **{"train.latent_epochs": epochs})
    ckpt = load_checkpoint(checkpoint)
    ds = sample_rays_from_depth_maps(load_depth_dir(depth_dir), cfg.domain, cfg.seed)
    latent, loss = infer_latent(ckpt.model, ds, cfg.train, cfg.loss)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    np.save(out, latent.numpy())
    save_json(sidecar_path(out), _manifest(cfg, checkpoint=checkpoint, depth_dir=depth_dir, loss=loss))
    console.print(f"[green]+[/] latent ({latent.numel()} values, loss {loss:.6f}) -> {out}")


@cli.command()
@click.argument("source")
@click.option("--rep", type=click.Choice(REPRESENTATIONS), required=True)
@click.option("--exact", is_flag=True, help="SOURCE is a mesh or built-in shape; use the ray-cast backend")
@click.option("--instance", default=None, help="Latent id of an autodecoder checkpoint")
@click.option("--latent", "latent_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--n", "n", type=int, default=None, help="Lattice / grid resolution")
@click.option("--n-points", type=int, default=None, help="Rays for the point cloud")
@click.option("--fps", type=int, default=None, help="Downsample the cloud by farthest point sampling")
@click.option("--camera", default="1.3,0,0", help="Depth camera center 'x,y,z'")
@click.option("--resolution", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "-o", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def extract(ctx, source, rep, exact, instance, latent_path, n, n_points, fps, camera, resolution, seed, out):
    """Run a forward map on a checkpoint (or --exact mesh): point cloud, depth, voxels, mesh, UDF grid."""
    from odf.domain import make_rng
    from odf.storage import save_json, sidecar_path

    overrides = {"seed": seed, "sampling.resolution": resolution}
    if rep == "mesh":
        overrides["jumping_cubes.n"] = n
    cfg = _config(ctx, **overrides)
    backend = _backend(source, exact, cfg, latent_path, instance)
    rng = make_rng(cfg.seed, 21)
    meta = _manifest(cfg, source=source, representation=rep, exact=exact)

    if rep == "pointcloud":
        from odf.forward_maps import extract_point_cloud
        from odf.geometry import save_points
        points = extract_point_cloud(backend, n_points or cfg.metrics.n_eval_rays, rng,
                                     cfg.inference.with_n(3), fps, cfg.domain)
        save_points(points, out)
        save_json(sidecar_path(out), meta)
        console.print(f"[green]+[/] {len(points):,} points -> {out}")
    elif rep == "depth":
        from odf.camera import look_at_camera, save_depth_image
        from odf.forward_maps import render_depth_map
        res = cfg.sampling.resolution
        cam = look_at_camera(_parse_vec(camera), width=res, height=res, fov_deg=cfg.sampling.fov_deg)
        image = render_depth_map(backend, cam, cfg.inference.with_n(4))
        save_depth_image(image, out, cfg.domain, meta=meta)
        console.print(f"[green]+[/] {res}x{res} depth map -> {Path(out).with_suffix('.pfm')} "
                      f"[dim](+ .png, {int(image.foreground.sum()):,} foreground pixels)[/]")
    elif rep == "voxel":
        from odf.forward_maps import save_voxels, voxelize
        grid = voxelize(backend, n or cfg.metrics.voxel_resolution, cfg.metrics.sign_directions, rng)
        save_voxels(grid, out, meta)
        console.print(f"[green]+[/] {grid.n}³ voxels ({int(grid.occupancy.sum()):,} occupied) -> {out}")
    elif rep == "mesh":
        from odf.geometry import save_mesh
        from odf.jumping_cubes import jumping_cubes
        mesh = jumping_cubes(backend, cfg.jc_config())
        if mesh.is_empty():
            raise DataError("Jumping Cubes found no surface")
        save_mesh(mesh, out, meta=meta)
        console.print(f"[green]+[/] mesh ({len(mesh.vertices):,} vertices, {mesh.n_faces:,} faces) -> {out}")
    else:
        from odf.forward_maps import udf_grid
        size = n or cfg.metrics.voxel_resolution
        values = udf_grid(backend, size, cfg.metrics.udf_directions, rng)
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        np.save(out, values)
        save_json(sidecar_path(out), {**meta, "n": size, "extent": 1.0})
        console.print(f"[green]+[/] {size}³ UDF grid -> {out}")


def _points_of(path: str, cfg) -> np.ndarray:
    """Surface samples of a mesh artifact, ray end points of a dataset, or a point file."""
    from odf.domain import make_rng
    from odf.geometry import load_mesh, load_points, sample_surface
    from odf.sampling import load_dataset
    from odf.shapes import BUILTIN_SHAPES

    suffix = Path(path).suffix.lower()
    if suffix == ".odfr":
        return load_dataset(path).end_points()
    if suffix in (".npy", ".xyz"):
        return load_points(path)
    if path in BUILTIN_SHAPES:
        from odf.experiments import ground_truth_rays
        return ground_truth_rays(_load_shape(path), cfg).end_points()
    try:
        mesh = load_mesh(path)
    except DataError:
        return load_points(path)
    return sample_surface(mesh, cfg.metrics.n_eval_rays, make_rng(cfg.seed, 31))[0]


@cli.command(name="eval")
@click.argument("pred")
@click.argument("gt")
@click.option("--instance", default=None, help="Latent id when PRED is an autodecoder checkpoint")
@click.option("--latent", "latent_path", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--iterations", type=int, default=None, help="Recursion steps when PRED is a checkpoint")
@click.option("--threshold", type=float, default=None, help="F-score distance threshold")
@click.option("--brute-force", is_flag=True, help="Cross-check chamfer with all-pairs nearest neighbors")
@click.option("--json", "json_path", type=click.Path(dir_okay=False), default=None)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def evaluate(ctx, pred, gt, instance, latent_path, iterations, threshold, brute_force, json_path, csv_path):
    """Compare a predicted artifact (or checkpoint) with ground truth (mesh, shape, dataset, points)."""
    from odf.config import check_same_domain, config_hash
    from odf.metrics import chamfer, chamfer_brute_force, fscore_depth, report_rows, write_report

    cfg = _config(ctx, **{"metrics.fscore_threshold": threshold})
    check_same_domain(_artifact_domain(pred), _artifact_domain(gt))

    if Path(pred).suffix.lower() == ".odfm":
        from odf.experiments import evaluate_backend
        backend = _backend(pred, False, cfg, latent_path, instance)
        metrics = evaluate_backend(backend, _load_shape(gt), cfg, iterations)
        b, a = None, None
    else:
        a, b = _points_of(pred, cfg), _points_of(gt, cfg)
        metrics = {"chamfer_x1000": chamfer(a, b),
                   "fscore_depth": fscore_depth(a, b, cfg.metrics.fscore_threshold),
                   "n_pred": len(a), "n_gt": len(b)}
    if brute_force:
        if a is None:
            raise ConfigError("--brute-force compares point artifacts, not checkpoints")
        metrics["chamfer_x1000_brute_force"] = chamfer_brute_force(a, b)
        if metrics["chamfer_x1000_brute_force"] != metrics["chamfer_x1000"]:
            console.print("[red]x[/] k-d tree and brute-force chamfer disagree")

    table = Table(title=f"{Path(pred).name} vs {Path(gt).name}", box=box.ROUNDED)
    table.add_column("Metric", style="bold")
    table.add_column("Value", justify="right")
    for k, v in metrics.items():
        table.add_row(k, _fmt_metric(v))
    console.print(table)

    if json_path or csv_path:
        rows = report_rows(Path(pred).name, metrics, config_hash(cfg))
        write_report(rows, json_path, csv_path, {"pred": pred, "gt": gt})
        console.print(f"[green]+[/] report -> {', '.join(p for p in (json_path, csv_path) if p)}")


@cli.command()
@click.argument("suite", type=click.Choice(SUITES))
@click.argument("source")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Model for the recursion suite (default: exact backend of SOURCE)")
@click.option("--epochs", type=int, default=None, help="Training budget per row")
@click.option("--seed", type=int, default=None)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False), default=None)
@click.option("--json", "json_path", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def ablate(ctx, suite, source, checkpoint, epochs, seed, csv_path, json_path):
    """Reproduce an ablation table: recursion count, augmentation, or training input."""
    from odf.config import config_hash
    from odf.experiments import augmentation_suite, input_rep_suite, recursion_suite
    from odf.metrics import report_rows, write_report

    cfg = _config(ctx, **{"train.epochs": epochs, "seed": seed})
    mesh = _load_shape(source)
    t0 = time.monotonic()
    if suite == "recursion":
        backend = _backend(checkpoint, False, cfg) if checkpoint else _backend(source, True, cfg)
        rows = recursion_suite(backend, mesh, cfg)
    elif suite == "augmentation":
        rows = augmentation_suite(mesh, cfg)
    else:
        rows = input_rep_suite(mesh, cfg)

    table = Table(title=f"{suite} ablation on {Path(source).name} ({_fmt_duration(time.monotonic() - t0)})",
                  box=box.ROUNDED)
    table.add_column("Setting", style="bold")
    for col in ("Chamfer x1000", "F-score", "Recall", "Mask F"):
        table.add_column(col, justify="right")
    for r in rows:
        table.add_row(r["experiment"], _fmt_metric(r["chamfer_x1000"]), _fmt_metric(r["fscore_depth"]),
                      _fmt_metric(r["recall"]), _fmt_metric(r["fscore_mask"]))
    console.print(table)

    if csv_path or json_path:
        h = config_hash(cfg)
        long_rows = [row for r in rows
                     for row in report_rows(r["experiment"], {k: v for k, v in r.items() if k != "experiment"}, h)]
        write_report(long_rows, json_path, csv_path, {"suite": suite, "source": source})
        console.print(f"[green]+[/] report -> {', '.join(p for p in (json_path, csv_path) if p)}")


@cli.command()
@click.argument("name")
@click.option("--out", "-o", required=True, type=click.Path(dir_okay=False), help="OBJ or PLY file")
@click.pass_context
def shape(ctx, name, out):
    """Write a built-in analytic shape (sphere, quad, half-sphere, torus) as a mesh file."""
    from odf.geometry import boundary_loops, save_mesh
    from odf.shapes import builtin_shape

    mesh = builtin_shape(name)
    save_mesh(mesh, out, meta=_manifest(ctx.obj["cfg"], shape=name))
    console.print(f"[green]+[/] {name}: {len(mesh.vertices):,} vertices, {mesh.n_faces:,} faces, "
                  f"{boundary_loops(mesh)} boundary loop(s) -> {out}")


@cli.command(name="table")
@click.option("--out", "-o", type=click.Path(dir_okay=False), default=None, help="Also write the table here")
@click.option("--regenerate", is_flag=True, help="Ignore the cached table")
def jc_table(out, regenerate):
    """Generate (or load from cache) the Jumping Cubes triangulation table."""
    from odf.jumping_cubes import generate_jc_table, load_or_generate_table, save_table
    from odf.storage import cache_dir

    table = generate_jc_table() if regenerate else load_or_generate_table()
    counts = np.array([len(t) for t in table.triangles])
    console.print(Panel(
        f"configurations: {len(table):,}\n"
        f"rotation classes: {table.n_classes}\n"
        f"ambiguous configurations: {int(table.ambiguous.sum()):,}\n"
        f"triangles per cube: max {counts.max()}, mean {counts.mean():.2f}\n"
        f"cache: {cache_dir()}",
        title=f"Jumping Cubes table v{table.version}", box=box.ROUNDED,
    ))
    if out:
        save_table(table, out)
        console.print(f"[green]+[/] table -> {out}")


def main():
    cli()


if __name__ == "__main__":
    main()
