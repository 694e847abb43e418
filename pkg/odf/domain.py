"""ODF query interface, shared domain constants, seeded samplers."""

from __future__ import annotations

import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from odf.errors import ConfigError, DataError

UNIT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class DomainConfig:
    """Enclosing sphere, depth clamp ψ and miss sentinel used by every module."""

    sphere_radius: float = 1.3
    depth_clamp: float = 0.5
    nonintersect_sentinel: float = 0.5

    def __post_init__(self):
        if not self.sphere_radius > 0:
            raise ConfigError(f"sphere_radius must be > 0, got {self.sphere_radius}")
        if not 0 < self.depth_clamp <= 2 * self.sphere_radius:
            raise ConfigError(
                f"depth_clamp must be in (0, {2 * self.sphere_radius}], got {self.depth_clamp}"
            )


DEFAULT_DOMAIN = DomainConfig()


def clamp_depth(d, psi: float):
    """min(d, ψ); works on scalars and arrays."""
    if not psi > 0:
        raise ConfigError(f"clamp value must be > 0, got {psi}")
    if np.isscalar(d):
        return min(float(d), psi)
    return np.minimum(d, psi)


# ─── Rays ────────────────────────────────────────────────────────────────


def check_unit_dirs(dirs: np.ndarray, tol: float = UNIT_TOLERANCE) -> np.ndarray:
    """Validate an (N, 3) array of unit directions; never renormalizes."""
    dirs = np.asarray(dirs, dtype=np.float64)
    if dirs.ndim != 2 or dirs.shape[1] != 3:
        raise DataError(f"directions must have shape (N, 3), got {dirs.shape}")
    norms = np.sqrt(dirs[:, 0] * dirs[:, 0] + dirs[:, 1] * dirs[:, 1] + dirs[:, 2] * dirs[:, 2])
    bad = np.abs(norms - 1.0) > tol
    if bad.any():
        raise DataError(f"{int(bad.sum())} ray directions are not unit length (tolerance {tol})")
    return dirs


def normalize(v: np.ndarray) -> np.ndarray:
    """Normalize rows of an (N, 3) array (or a single 3-vector)."""
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


@dataclass(frozen=True)
class Ray:
    """3D origin + unit direction."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if not np.isfinite(origin).all():
            raise DataError("ray origin must be finite")
        check_unit_dirs(direction[None, :])
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


# ─── Samples ─────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class ODFSample:
    """One answer of an ODF: depth along the ray and intersection flag/confidence."""

    depth: float
    confidence: float

    @property
    def intersects(self) -> bool:
        return self.confidence > 0.5


@dataclass
class OdfSamples:
    """Batched ODF answers; `confidence` is 0/1 for exact backends."""

    depth: np.ndarray
    confidence: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.confidence > 0.5

    def __len__(self) -> int:
        return len(self.depth)

    def __getitem__(self, i: int) -> ODFSample:
        return ODFSample(float(self.depth[i]), float(self.confidence[i]))


class OdfBackend(ABC):
    """Anything that maps rays to (depth, intersection).

    Implementations are read-only after construction and safe to share
    between threads. `batch_query(o, d)[i]` equals `query(Ray(o[i], d[i]))`.
    """

    domain: DomainConfig = DEFAULT_DOMAIN

    @abstractmethod
    def batch_query(self, origins: np.ndarray, dirs: np.ndarray) -> OdfSamples:
        ...

    def query(self, ray: Ray) -> ODFSample:
        out = self.batch_query(ray.origin[None, :], ray.direction[None, :])
        return out[0]


class CountingBackend(OdfBackend):
    """Wraps a backend and counts how many rays were queried."""

    def __init__(self, inner: OdfBackend):
        self.inner = inner
        self.domain = inner.domain
        self.queries = 0
        self.calls = 0
        self._lock = threading.Lock()

    def batch_query(self, origins: np.ndarray, dirs: np.ndarray) -> OdfSamples:
        with self._lock:
            self.queries += len(origins)
            self.calls += 1
        return self.inner.batch_query(origins, dirs)


# ─── Random sampling ─────────────────────────────────────────────────────


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based (Philox) generator; (seed, stream) fully determines the sequence."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent per-worker streams for one seed."""
    return [make_rng(seed, stream=i + 1) for i in range(count)]


def uniform_dir_sample(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Directions uniform on S² (normalized Gaussian). Shape (3,) or (n, 3)."""
    count = 1 if n is None else n
    v = rng.standard_normal((count, 3))
    norms = np.linalg.norm(v, axis=1)
    # a zero vector has probability zero, but keep the output valid
    while (norms == 0).any():
        zero = norms == 0
        v[zero] = rng.standard_normal((int(zero.sum()), 3))
        norms = np.linalg.norm(v, axis=1)
    v = v / norms[:, None]
    return v[0] if n is None else v


def uniform_ball_sample(rng: np.random.Generator, radius: float, n: int | None = None) -> np.ndarray:
    """Points uniform in the ball of `radius` (cube-root radius method)."""
    if not radius > 0:
        raise ConfigError(f"radius must be > 0, got {radius}")
    count = 1 if n is None else n
    dirs = uniform_dir_sample(rng, count)
    r = radius * np.cbrt(rng.random(count))
    pts = dirs * r[:, None]
    return pts[0] if n is None else pts
