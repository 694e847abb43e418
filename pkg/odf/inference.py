"""Recursive inference: re-query an ODF along each ray to land on the surface."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from odf.domain import DEFAULT_DOMAIN, OdfBackend, Ray, check_unit_dirs, clamp_depth
from odf.errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InferenceConfig:
    """n recursion steps, clamp ψ, surface margin τ."""

    n: int = 3
    psi: float = DEFAULT_DOMAIN.depth_clamp
    tau: float = 0.01
    workers: int = 1
    chunk: int = 65536

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"recursion count must be ≥ 1, got {self.n}")
        if not self.tau > 0:
            raise ConfigError(f"surface margin must be > 0, got {self.tau}")
        if not self.psi > 0:
            raise ConfigError(f"clamp must be > 0, got {self.psi}")
        if self.workers < 1 or self.chunk < 1:
            raise ConfigError("workers and chunk must be ≥ 1")

    def with_n(self, n: int) -> InferenceConfig:
        return InferenceConfig(n, self.psi, self.tau, self.workers, self.chunk)


@dataclass(frozen=True)
class InferenceResult:
    surface_point: np.ndarray
    total_depth: float
    mask: bool


@dataclass
class InferenceBatch:
    """Per-ray final points, signed accumulated depth along the ray, and masks."""

    points: np.ndarray
    depth: np.ndarray
    mask: np.ndarray

    def __len__(self) -> int:
        return len(self.depth)

    def __getitem__(self, i: int) -> InferenceResult:
        return InferenceResult(self.points[i].copy(), float(self.depth[i]), bool(self.mask[i]))


def single_inference(backend: OdfBackend, ray: Ray, psi: float = DEFAULT_DOMAIN.depth_clamp) -> tuple[float, bool]:
    """One query: (min(depth, ψ), intersection bit)."""
    sample = backend.query(ray)
    return clamp_depth(sample.depth, psi), sample.intersects


def _both_ways(backend: OdfBackend, x: np.ndarray, dirs: np.ndarray):
    """Forward and backward answers from one backend call."""
    out = backend.batch_query(np.concatenate([x, x]), np.concatenate([dirs, -dirs]))
    n = len(x)
    return out.depth[:n], out.hit[:n], out.depth[n:], out.hit[n:]


def _recurse(backend: OdfBackend, origins: np.ndarray, dirs: np.ndarray, cfg: InferenceConfig) -> InferenceBatch:
    """Steps compare clamped depths, but only directions reporting a hit may be taken.

    A miss answers with the sentinel depth, so a depth-only comparison could
    step toward empty space. A point where both directions miss stays put.
    """
    psi, tau = cfg.psi, cfg.tau
    n = len(origins)
    x = origins.copy()
    first = backend.batch_query(x, dirs)
    step = np.minimum(first.depth, psi)
    mask = first.hit.copy()
    total = step.copy()
    x = x + step[:, None] * dirs

    for _ in range(cfg.n - 1):
        f_depth, f_hit, b_depth, b_hit = _both_ways(backend, x, dirs)
        df = np.minimum(f_depth, psi)
        db = np.minimum(b_depth, psi)
        # a backward step may not carry the point behind the original origin
        back_ok = b_hit & (db <= total + tau)
        go_back = back_ok & (db < df)
        go_fwd = ~go_back & f_hit
        signed = np.where(go_back, -db, np.where(go_fwd, df, 0.0))
        mask = go_back | go_fwd
        x = x + signed[:, None] * dirs
        total = total + signed

    f_depth, f_hit, b_depth, b_hit = _both_ways(backend, x, dirs)
    residual = np.minimum(np.where(f_hit, f_depth, np.inf), np.where(b_hit, b_depth, np.inf))
    mask = mask & (residual < tau)
    return InferenceBatch(points=x, depth=total, mask=mask.astype(bool).reshape(n))


def batch_recursive_inference(backend: OdfBackend, origins: np.ndarray, dirs: np.ndarray,
                              cfg: InferenceConfig = InferenceConfig()) -> InferenceBatch:
    """Recursive inference for many rays; chunks run on `cfg.workers` threads.

    Every ray is processed independently, so the result does not depend on
    the chunking or on the number of workers.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = check_unit_dirs(np.asarray(dirs, dtype=np.float64).reshape(-1, 3))
    n = len(origins)
    if n == 0:
        return InferenceBatch(np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=bool))
    bounds = [(s, min(s + cfg.chunk, n)) for s in range(0, n, cfg.chunk)]
    if cfg.workers == 1 or len(bounds) == 1:
        parts = [_recurse(backend, origins[a:b], dirs[a:b], cfg) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(lambda ab: _recurse(backend, origins[ab[0]:ab[1]], dirs[ab[0]:ab[1]], cfg),
                                  bounds))
    return InferenceBatch(
        points=np.concatenate([p.points for p in parts]),
        depth=np.concatenate([p.depth for p in parts]),
        mask=np.concatenate([p.mask for p in parts]),
    )


def recursive_inference(backend: OdfBackend, ray: Ray, cfg: InferenceConfig = InferenceConfig()) -> InferenceResult:
    out = batch_recursive_inference(backend, ray.origin[None], ray.direction[None], cfg)
    return out[0]
