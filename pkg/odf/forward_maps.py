"""Forward maps from any ODF backend: depth maps, point clouds, UDF, SDF sign, voxels."""

from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from odf.camera import Camera, DepthImage, pixel_rays
from odf.domain import (
    DEFAULT_DOMAIN,
    DomainConfig,
    OdfBackend,
    uniform_ball_sample,
    uniform_dir_sample,
)
from odf.errors import ConfigError, DataError
from odf.inference import InferenceConfig, batch_recursive_inference

logger = logging.getLogger(__name__)

DEPTH_MAP_INFERENCE = InferenceConfig(n=4)
POINT_CLOUD_INFERENCE = InferenceConfig(n=3)
SIGN_DIRECTIONS = 64
UDF_DIRECTIONS = 1024
VOXEL_EXTENT = 1.0


def render_depth_map(backend: OdfBackend, camera: Camera, cfg: InferenceConfig = DEPTH_MAP_INFERENCE) -> DepthImage:
    """Per-pixel recursive inference; masked-out pixels are background (0)."""
    origins, dirs = pixel_rays(camera)
    out = batch_recursive_inference(backend, origins, dirs, cfg)
    values = np.where(out.mask, np.maximum(out.depth, 0.0), 0.0)
    logger.debug("Rendered %dx%d depth map, %d foreground pixels",
                 camera.width, camera.height, int(out.mask.sum()))
    return DepthImage(camera, values.reshape(camera.height, camera.width))


def ray_cast_depth_map(oracle: OdfBackend, camera: Camera) -> DepthImage:
    """Single first-hit query per pixel; used for ground-truth views of a mesh."""
    origins, dirs = pixel_rays(camera)
    label = getattr(oracle, "label", oracle.batch_query)
    out = label(origins, dirs)
    values = np.where(out.hit, out.depth, 0.0)
    return DepthImage(camera, values.reshape(camera.height, camera.width))


# ─── Point clouds ────────────────────────────────────────────────────────


def farthest_point_sample(points: np.ndarray, k: int, start_index: int = 0) -> np.ndarray:
    """Indices of k points chosen greedily by distance to the chosen set."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if k < 1:
        raise ConfigError(f"sample count must be ≥ 1, got {k}")
    if n == 0:
        raise DataError("cannot downsample an empty point set")
    k = min(k, n)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start_index
    dist = np.linalg.norm(points - points[start_index], axis=1)
    for i in range(1, k):
        chosen[i] = int(np.argmax(dist))
        dist = np.minimum(dist, np.linalg.norm(points - points[chosen[i]], axis=1))
    return chosen


def extract_point_cloud(backend: OdfBackend, n_points: int, rng: np.random.Generator,
                        cfg: InferenceConfig = POINT_CLOUD_INFERENCE, fps_count: int | None = None,
                        domain: DomainConfig = DEFAULT_DOMAIN) -> np.ndarray:
    """Random rays from the enclosing ball, recursive inference, keep masked end points."""
    if n_points < 1:
        raise ConfigError(f"n_points must be ≥ 1, got {n_points}")
    origins = uniform_ball_sample(rng, domain.sphere_radius, n_points)
    dirs = uniform_dir_sample(rng, n_points)
    out = batch_recursive_inference(backend, origins, dirs, cfg)
    points = out.points[out.mask]
    if not len(points):
        raise DataError(f"no ray of {n_points} reached a surface; the backend looks degenerate")
    logger.info("Point cloud: %d of %d rays reached the surface", len(points), n_points)
    if fps_count is not None:
        points = points[farthest_point_sample(points, fps_count)]
    return points


# ─── UDF / SDF ───────────────────────────────────────────────────────────


def udf_inference(domain: DomainConfig = DEFAULT_DOMAIN, tau: float = 0.01) -> InferenceConfig:
    """Enough recursion steps to walk across the whole enclosing sphere."""
    n = math.ceil(2 * domain.sphere_radius / domain.depth_clamp) + 1
    return InferenceConfig(n=n, psi=domain.depth_clamp, tau=tau)


def udf_from_dirs(backend: OdfBackend, points: np.ndarray, dirs: np.ndarray,
                  cfg: InferenceConfig | None = None, chunk_rays: int = 1 << 20) -> np.ndarray:
    """min over the given directions of the masked recursive depth, +inf if none reach a surface."""
    cfg = cfg or udf_inference(backend.domain)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    m = len(dirs)
    out = np.full(len(points), np.inf)
    per = max(1, chunk_rays // max(m, 1))
    for s in range(0, len(points), per):
        p = points[s:s + per]
        o = np.repeat(p, m, axis=0)
        d = np.tile(dirs, (len(p), 1))
        res = batch_recursive_inference(backend, o, d, cfg)
        depth = np.where(res.mask, np.maximum(res.depth, 0.0), np.inf).reshape(len(p), m)
        out[s:s + per] = depth.min(axis=1)
    return out


def udf_query(backend: OdfBackend, x, n_dirs: int = UDF_DIRECTIONS, rng: np.random.Generator | None = None,
              cfg: InferenceConfig | None = None) -> float:
    """Unsigned distance at x estimated from n_dirs uniform directions."""
    if n_dirs < 1:
        raise ConfigError(f"direction count must be ≥ 1, got {n_dirs}")
    rng = rng if rng is not None else np.random.default_rng(0)
    return float(udf_from_dirs(backend, np.asarray(x)[None], uniform_dir_sample(rng, n_dirs), cfg)[0])


def sign_from_dirs(backend: OdfBackend, points: np.ndarray, dirs: np.ndarray,
                   chunk_rays: int = 1 << 20) -> np.ndarray:
    """−1 where every direction reports an intersection, +1 elsewhere."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    m = len(dirs)
    sign = np.ones(len(points), dtype=np.int8)
    per = max(1, chunk_rays // max(m, 1))
    for s in range(0, len(points), per):
        p = points[s:s + per]
        hit = backend.batch_query(np.repeat(p, m, axis=0), np.tile(dirs, (len(p), 1))).hit
        inside = hit.reshape(len(p), m).all(axis=1)
        sign[s:s + per] = np.where(inside, -1, 1)
    return sign


def sdf_sign_query(backend: OdfBackend, x, n_dirs: int = SIGN_DIRECTIONS,
                   rng: np.random.Generator | None = None) -> int:
    if n_dirs < 1:
        raise ConfigError(f"direction count must be ≥ 1, got {n_dirs}")
    rng = rng if rng is not None else np.random.default_rng(0)
    return int(sign_from_dirs(backend, np.asarray(x)[None], uniform_dir_sample(rng, n_dirs))[0])


# ─── Voxel grids ─────────────────────────────────────────────────────────


@dataclass
class VoxelGrid:
    """n³ cells covering [−1, 1]³; occupancy[i, j, k] is the cell at x_i, y_j, z_k."""

    occupancy: np.ndarray
    extent: float = VOXEL_EXTENT

    def __post_init__(self):
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        n = self.occupancy.shape[0]
        if self.occupancy.shape != (n, n, n):
            raise DataError(f"voxel grid must be cubic, got {self.occupancy.shape}")

    @property
    def n(self) -> int:
        return self.occupancy.shape[0]

    @property
    def cell_size(self) -> float:
        return 2 * self.extent / self.n

    @property
    def origin(self) -> tuple[float, float, float]:
        return (-self.extent, -self.extent, -self.extent)

    def centers(self) -> np.ndarray:
        return cell_centers(self.n, self.extent)


def cell_centers(n: int, extent: float = VOXEL_EXTENT) -> np.ndarray:
    """(n³, 3) cell centers in C order over (x, y, z)."""
    c = -extent + (np.arange(n) + 0.5) * (2 * extent / n)
    x, y, z = np.meshgrid(c, c, c, indexing="ij")
    return np.stack([x, y, z], axis=-1).reshape(-1, 3)


def voxelize(backend: OdfBackend, n: int, n_dirs: int = SIGN_DIRECTIONS,
             rng: np.random.Generator | None = None) -> VoxelGrid:
    """Occupancy from the sign rule at each cell center (one direction set for all cells)."""
    if n < 2:
        raise ConfigError(f"voxel resolution must be ≥ 2, got {n}")
    rng = rng if rng is not None else np.random.default_rng(0)
    dirs = uniform_dir_sample(rng, n_dirs)
    sign = sign_from_dirs(backend, cell_centers(n), dirs)
    grid = VoxelGrid((sign < 0).reshape(n, n, n))
    logger.info("Voxelized at %d³: %d occupied cells", n, int(grid.occupancy.sum()))
    return grid


def udf_grid(backend: OdfBackend, n: int, n_dirs: int = 256, rng: np.random.Generator | None = None,
             cfg: InferenceConfig | None = None) -> np.ndarray:
    """(n, n, n) UDF estimates at the voxel cell centers."""
    if n < 2:
        raise ConfigError(f"grid resolution must be ≥ 2, got {n}")
    rng = rng if rng is not None else np.random.default_rng(0)
    dirs = uniform_dir_sample(rng, n_dirs)
    return udf_from_dirs(backend, cell_centers(n), dirs, cfg).reshape(n, n, n)


VOXEL_MAGIC = b"ODFV"
_RUN = np.dtype([("value", "u1"), ("length", "<u4")])


def _runs(flat: np.ndarray) -> np.ndarray:
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    starts = np.concatenate([[0], change])
    lengths = np.diff(np.concatenate([starts, [len(flat)]]))
    runs = np.empty(len(starts), dtype=_RUN)
    runs["value"] = flat[starts]
    runs["length"] = lengths
    return runs


def save_voxels(grid: VoxelGrid, path: str | Path, meta: dict | None = None):
    """magic, u32 header length, JSON header, then (u8 value, u32 length) runs in C order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"n": grid.n, "origin": list(grid.origin), "cell_size": grid.cell_size,
              "order": "C (x, y, z)", "encoding": "rle-u8-u32"}
    header.update(meta or {})
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(VOXEL_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(_runs(grid.occupancy.reshape(-1)).tobytes())


def load_voxels(path: str | Path) -> tuple[VoxelGrid, dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"voxel file not found: {path}")
    raw = path.read_bytes()
    if raw[:4] != VOXEL_MAGIC:
        raise DataError(f"{path} is not a voxel file")
    (size,) = struct.unpack_from("<I", raw, 4)
    header = json.loads(raw[8:8 + size].decode("utf-8"))
    runs = np.frombuffer(raw, dtype=_RUN, offset=8 + size)
    flat = np.repeat(runs["value"].astype(bool), runs["length"].astype(np.int64))
    n = int(header["n"])
    if len(flat) != n ** 3:
        raise DataError(f"{path}: decoded {len(flat)} cells, expected {n ** 3}")
    return VoxelGrid(flat.reshape(n, n, n), extent=n * float(header["cell_size"]) / 2), header
