"""Labeled ray datasets: mesh and depth-map sampling, augmentations, ODFR files."""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from odf.camera import DepthImage, pixel_rays
from odf.domain import (
    DEFAULT_DOMAIN,
    DomainConfig,
    OdfBackend,
    OdfSamples,
    Ray,
    normalize,
    uniform_ball_sample,
    uniform_dir_sample,
)
from odf.errors import ConfigError, DataError
from odf.geometry import ExactODF, TriMesh, sample_surface
from odf.storage import load_json, save_json, sidecar_path, timestamp, write_csv

logger = logging.getLogger(__name__)

MAGIC = b"ODFR"
VERSION = 1
HEADER = struct.Struct("<4sIQQB")
RECORD = np.dtype([("origin", "<f8", (3,)), ("dir", "<f8", (3,)), ("depth", "<f8"), ("hit", "u1")])

BALL_FRACTION = 0.6
BALANCE_RANGE = (0.4, 0.6)
MAX_BALANCE_ROUNDS = 64
LABEL_TOLERANCE = 1e-6


class Provenance(IntEnum):
    MESH = 0
    DEPTH_MAPS = 1


@dataclass(frozen=True)
class LabeledRay:
    ray: Ray
    depth: float
    intersects: bool


@dataclass
class RayDataset:
    """Rays (origins, dirs) with unclamped depth labels; misses carry the sentinel."""

    origins: np.ndarray
    dirs: np.ndarray
    depth: np.ndarray
    hit: np.ndarray
    provenance: Provenance = Provenance.MESH
    seed: int = 0
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.origins = np.ascontiguousarray(self.origins, dtype=np.float64).reshape(-1, 3)
        self.dirs = np.ascontiguousarray(self.dirs, dtype=np.float64).reshape(-1, 3)
        self.depth = np.ascontiguousarray(self.depth, dtype=np.float64).reshape(-1)
        self.hit = np.ascontiguousarray(self.hit, dtype=bool).reshape(-1)
        n = len(self.origins)
        if n == 0:
            raise DataError("ray dataset is empty")
        if not (len(self.dirs) == len(self.depth) == len(self.hit) == n):
            raise DataError("ray dataset arrays have different lengths")
        self.provenance = Provenance(self.provenance)

    def __len__(self) -> int:
        return len(self.origins)

    def __getitem__(self, i: int) -> LabeledRay:
        return LabeledRay(Ray(self.origins[i], self.dirs[i]), float(self.depth[i]), bool(self.hit[i]))

    @property
    def hit_fraction(self) -> float:
        return float(self.hit.mean())

    def subset(self, idx: np.ndarray) -> RayDataset:
        idx = np.asarray(idx)
        return RayDataset(self.origins[idx], self.dirs[idx], self.depth[idx], self.hit[idx],
                          self.provenance, self.seed, {"subset": len(self.depth[idx])})

    def end_points(self) -> np.ndarray:
        """Surface points of the intersecting rays."""
        h = self.hit
        return self.origins[h] + self.depth[h, None] * self.dirs[h]

    def records(self) -> np.ndarray:
        rec = np.empty(len(self), dtype=RECORD)
        rec["origin"] = self.origins
        rec["dir"] = self.dirs
        rec["depth"] = self.depth
        rec["hit"] = self.hit
        return rec

    def content_hash(self) -> str:
        return hashlib.sha256(self.records().tobytes()).hexdigest()[:16]


def concat(datasets: list[RayDataset]) -> RayDataset:
    """Stable concatenation; counts are summed per key."""
    if not datasets:
        raise DataError("nothing to concatenate")
    counts: dict[str, int] = {}
    for ds in datasets:
        for key, value in ds.counts.items():
            counts[key] = counts.get(key, 0) + value
    first = datasets[0]
    return RayDataset(
        np.concatenate([d.origins for d in datasets]),
        np.concatenate([d.dirs for d in datasets]),
        np.concatenate([d.depth for d in datasets]),
        np.concatenate([d.hit for d in datasets]),
        first.provenance, first.seed, counts,
    )


def _label(oracle: OdfBackend, origins: np.ndarray, dirs: np.ndarray) -> OdfSamples:
    label = getattr(oracle, "label", None)
    return label(origins, dirs) if label is not None else oracle.batch_query(origins, dirs)


# ─── Mesh → rays ─────────────────────────────────────────────────────────


def split_counts(n_total: int) -> tuple[int, int]:
    """(ball, surface) ray counts; the remainder goes to the ball strategy."""
    n_surface = (n_total * 2) // 5
    return n_total - n_surface, n_surface


def _ball_rays(oracle: OdfBackend, n: int, rng: np.random.Generator, domain: DomainConfig,
               balance: bool):
    """Strategy (a): origin in the enclosing ball, uniform direction."""

    def draw(count: int):
        o = uniform_ball_sample(rng, domain.sphere_radius, count)
        d = uniform_dir_sample(rng, count)
        return o, d, _label(oracle, o, d)

    o, d, lab = draw(n)
    lo_frac, hi_frac = BALANCE_RANGE
    lo, hi = int(np.ceil(lo_frac * n)), int(np.floor(hi_frac * n))
    n_hit = int(lab.hit.sum())
    if not balance or lo > hi or lo <= n_hit <= hi:
        return o, d, lab.depth, lab.hit

    want_hits = min(max(n_hit, lo), hi)
    pool_o, pool_d, pool_depth, pool_hit = [o], [d], [lab.depth], [lab.hit]
    for _ in range(MAX_BALANCE_ROUNDS):
        hits = int(sum(h.sum() for h in pool_hit))
        misses = int(sum((~h).sum() for h in pool_hit))
        if hits >= want_hits and misses >= n - want_hits:
            break
        o, d, lab = draw(n)
        pool_o.append(o)
        pool_d.append(d)
        pool_depth.append(lab.depth)
        pool_hit.append(lab.hit)
    o, d = np.concatenate(pool_o), np.concatenate(pool_d)
    depth, hit = np.concatenate(pool_depth), np.concatenate(pool_hit)
    hit_idx, miss_idx = np.flatnonzero(hit), np.flatnonzero(~hit)
    if len(hit_idx) < want_hits or len(miss_idx) < n - want_hits:
        logger.warning("Could not balance ball rays (%d hits, %d misses in pool); keeping the first draw",
                       len(hit_idx), len(miss_idx))
        return o[:n], d[:n], depth[:n], hit[:n]
    keep = np.sort(np.concatenate([hit_idx[:want_hits], miss_idx[:n - want_hits]]))
    logger.debug("Balanced ball rays: %d of %d intersect", want_hits, n)
    return o[keep], d[keep], depth[keep], hit[keep]


def _surface_rays(oracle: OdfBackend, mesh: TriMesh, n: int, rng: np.random.Generator,
                  domain: DomainConfig):
    """Strategy (b): end point on the surface, origin in the enclosing ball."""
    ends, _ = sample_surface(mesh, n, rng)
    origins = uniform_ball_sample(rng, domain.sphere_radius, n)
    gap = np.linalg.norm(ends - origins, axis=1)
    while (gap < 1e-9).any():
        bad = gap < 1e-9
        origins[bad] = uniform_ball_sample(rng, domain.sphere_radius, int(bad.sum()))
        gap = np.linalg.norm(ends - origins, axis=1)
    dirs = normalize(ends - origins)
    lab = _label(oracle, origins, dirs)
    return origins, dirs, lab.depth, lab.hit


def sample_rays_from_mesh(mesh: TriMesh, n_total: int, rng: np.random.Generator,
                          domain: DomainConfig = DEFAULT_DOMAIN, seed: int = 0,
                          balance: bool = True, oracle: ExactODF | None = None) -> RayDataset:
    """60% ball rays + 40% surface-targeted rays, all labeled by ray casting."""
    if n_total < 1:
        raise ConfigError(f"number of rays must be ≥ 1, got {n_total}")
    oracle = oracle if oracle is not None else ExactODF(mesh, domain)
    n_ball, n_surface = split_counts(n_total)
    parts = []
    if n_ball:
        parts.append(_ball_rays(oracle, n_ball, rng, domain, balance))
    if n_surface:
        parts.append(_surface_rays(oracle, mesh, n_surface, rng, domain))
    origins, dirs, depth, hit = (np.concatenate(x) for x in zip(*parts))
    ds = RayDataset(origins, dirs, depth, hit, Provenance.MESH, seed,
                    {"ball": n_ball, "surface": n_surface})
    logger.info("Sampled %d mesh rays (%d ball, %d surface), %.1f%% intersect",
                len(ds), n_ball, n_surface, 100 * ds.hit_fraction)
    return ds


# ─── Depth maps → rays ───────────────────────────────────────────────────


def sample_rays_from_depth_maps(depth_maps: list[DepthImage], domain: DomainConfig = DEFAULT_DOMAIN,
                                seed: int = 0) -> RayDataset:
    """One ray per pixel from each camera center; background pixels become misses."""
    if not depth_maps:
        raise DataError("no depth images given")
    parts = []
    for image in depth_maps:
        if not isinstance(image, DepthImage):
            camera, values = image
            image = DepthImage(camera, values)
        origins, dirs = pixel_rays(image.camera)
        fg = image.foreground.reshape(-1)
        depth = np.where(fg, image.values.reshape(-1), domain.nonintersect_sentinel)
        parts.append((origins, dirs, depth, fg))
    origins, dirs, depth, hit = (np.concatenate(x) for x in zip(*parts))
    ds = RayDataset(origins, dirs, depth, hit, Provenance.DEPTH_MAPS, seed,
                    {"pixels": len(origins), "cameras": len(depth_maps)})
    logger.info("Lifted %d rays from %d depth images, %.1f%% foreground",
                len(ds), len(depth_maps), 100 * ds.hit_fraction)
    return ds


# ─── Augmentations ───────────────────────────────────────────────────────


@dataclass(frozen=True)
class AugmentConfig:
    """Recursive-property augmentations: (a) slide origin, (b) flip at hit, (c) re-aim at hit."""

    enable_a: bool = False
    enable_b: bool = False
    enable_c: bool = False
    perturb_max: float = 0.1
    ratio: float = 1.0

    def __post_init__(self):
        if not self.perturb_max > 0:
            raise ConfigError(f"perturb_max must be > 0, got {self.perturb_max}")
        if self.ratio < 0:
            raise ConfigError(f"augmentation ratio must be ≥ 0, got {self.ratio}")

    @classmethod
    def from_flags(cls, flags: str, perturb_max: float = 0.1, ratio: float = 1.0) -> AugmentConfig:
        """'abc', 'a', 'none' or '' → config."""
        flags = (flags or "").lower()
        if flags == "none":
            flags = ""
        unknown = set(flags) - set("abc")
        if unknown:
            raise ConfigError(f"unknown augmentation flags: {''.join(sorted(unknown))}")
        return cls("a" in flags, "b" in flags, "c" in flags, perturb_max, ratio)

    @property
    def flags(self) -> str:
        return "".join(k for k, on in zip("abc", (self.enable_a, self.enable_b, self.enable_c)) if on) or "none"


def _verify(oracle: OdfBackend | None, origins, dirs, depth, hit):
    """Oracle wins wherever it disagrees with the arithmetic label."""
    if oracle is None:
        return depth, hit, 0
    lab = _label(oracle, origins, dirs)
    agree = (lab.hit == hit) & (~hit | (np.abs(lab.depth - depth) <= LABEL_TOLERANCE))
    depth = np.where(agree, depth, lab.depth)
    return depth, lab.hit.copy(), int((~agree).sum())


def _augment_a(ds: RayDataset, count: int, pm: float, rng, oracle, domain):
    idx = rng.integers(0, len(ds), count)
    delta = rng.uniform(-pm, pm, count)
    o = ds.origins[idx] + delta[:, None] * ds.dirs[idx]
    d = ds.dirs[idx]
    hit = ds.hit[idx].copy()
    depth = np.where(hit, ds.depth[idx] - delta, domain.nonintersect_sentinel)
    crossed = hit & (depth < 0)
    if oracle is None:
        # without an oracle a crossed surface leaves the label unknown
        keep = ~crossed
        o, d, depth, hit = o[keep], d[keep], depth[keep], hit[keep]
        return o, d, depth, hit, int(crossed.sum())
    depth, hit, fixed = _verify(oracle, o, d, np.maximum(depth, 0.0), hit)
    return o, d, depth, hit, fixed


def _augment_b(ds: RayDataset, count: int, pm: float, rng, oracle, domain):
    hits = np.flatnonzero(ds.hit)
    idx = hits[rng.integers(0, len(hits), count)]
    end = ds.origins[idx] + ds.depth[idx, None] * ds.dirs[idx]
    delta = rng.uniform(0.0, pm, count)
    delta = np.where(delta > 0, delta, 0.5 * pm)
    o = end + delta[:, None] * ds.dirs[idx]
    d = -ds.dirs[idx]
    depth, hit, fixed = _verify(oracle, o, d, delta, np.ones(count, dtype=bool))
    return o, d, depth, hit, fixed


def _augment_c(ds: RayDataset, count: int, pm: float, rng, oracle, domain):
    hits = np.flatnonzero(ds.hit)
    idx = hits[rng.integers(0, len(hits), count)]
    end = ds.origins[idx] + ds.depth[idx, None] * ds.dirs[idx]
    o = end + uniform_ball_sample(rng, pm, count)
    gap = np.linalg.norm(end - o, axis=1)
    while (gap < 1e-9).any():
        bad = gap < 1e-9
        o[bad] = end[bad] + uniform_ball_sample(rng, pm, int(bad.sum()))
        gap = np.linalg.norm(end - o, axis=1)
    d = normalize(end - o)
    depth, hit, fixed = _verify(oracle, o, d, gap, np.ones(count, dtype=bool))
    return o, d, depth, hit, fixed


def augment_rays(dataset: RayDataset, oracle: OdfBackend | None, aug: AugmentConfig,
                 rng: np.random.Generator, domain: DomainConfig = DEFAULT_DOMAIN) -> RayDataset:
    """Base rays followed by each enabled augmentation (ratio × base size each)."""
    count = int(round(aug.ratio * len(dataset)))
    strategies = [("a", aug.enable_a, _augment_a), ("b", aug.enable_b, _augment_b),
                  ("c", aug.enable_c, _augment_c)]
    parts = [dataset]
    for name, enabled, fn in strategies:
        if not enabled or count == 0:
            continue
        if name in "bc" and (dataset.provenance == Provenance.DEPTH_MAPS or oracle is None):
            logger.warning("Augmentation %s needs a mesh oracle; skipped", name)
            continue
        if name in "bc" and not dataset.hit.any():
            logger.warning("Augmentation %s needs intersecting rays; skipped", name)
            continue
        o, d, depth, hit, fixed = fn(dataset, count, aug.perturb_max, rng, oracle, domain)
        if fixed:
            logger.info("Augmentation %s: %d of %d labels corrected by the oracle", name, fixed, count)
        parts.append(RayDataset(o, d, depth, hit, dataset.provenance, dataset.seed, {f"aug_{name}": len(o)}))
    return concat(parts)


# ─── Files ───────────────────────────────────────────────────────────────


def save_dataset(dataset: RayDataset, path: str | Path, manifest: dict | None = None):
    """Write `<path>` (ODFR binary) and `<path>.json` (counts, hash, extra manifest keys)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, VERSION, len(dataset), int(dataset.seed), int(dataset.provenance)))
        f.write(dataset.records().tobytes())
    meta = {
        "count": len(dataset),
        "counts": dataset.counts,
        "provenance": dataset.provenance.name.lower(),
        "seed": int(dataset.seed),
        "hit_fraction": dataset.hit_fraction,
        "dataset_hash": dataset.content_hash(),
        "created": timestamp(),
    }
    meta.update(manifest or {})
    save_json(sidecar_path(path), meta)


def load_dataset(path: str | Path) -> RayDataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"ray dataset not found: {path}")
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise DataError(f"{path} is too short for an ODFR header")
    magic, version, count, seed, provenance = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path} is not an ODFR file")
    if version != VERSION:
        raise DataError(f"{path}: unsupported ODFR version {version}")
    if len(raw) != HEADER.size + count * RECORD.itemsize:
        raise DataError(f"{path}: expected {count} records, file size does not match")
    rec = np.frombuffer(raw, dtype=RECORD, count=count, offset=HEADER.size)
    counts = load_json(sidecar_path(path)).get("counts", {})
    return RayDataset(rec["origin"], rec["dir"], rec["depth"], rec["hit"].astype(bool),
                      Provenance(provenance), seed, counts)


def export_csv(dataset: RayDataset, path: str | Path):
    columns = ["ox", "oy", "oz", "dx", "dy", "dz", "depth", "intersects"]
    rows = [
        dict(zip(columns, [*o, *d, z, int(h)]))
        for o, d, z, h in zip(dataset.origins.tolist(), dataset.dirs.tolist(),
                              dataset.depth.tolist(), dataset.hit.tolist())
    ]
    write_csv(path, rows, columns)
