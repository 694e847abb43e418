"""Procedural test shapes and closed-form ODF backends.

Every generator returns a mesh whose farthest vertex has norm 1, centered on
the shape's natural origin (sphere center, quad center, ...), so analytic
distances stay simple and the 1.3 enclosing sphere always contains it.
"""

from __future__ import annotations

import numpy as np

from odf.domain import DEFAULT_DOMAIN, DomainConfig, OdfBackend, OdfSamples, check_unit_dirs
from odf.errors import ConfigError
from odf.geometry import SURFACE_TOLERANCE, TriMesh


def unit_sphere(subdivisions: int = 3) -> TriMesh:
    """Icosphere of radius 1 (subdivisions=3 gives 1280 faces)."""
    import trimesh

    ico = trimesh.creation.icosphere(subdivisions=subdivisions, radius=1.0)
    return TriMesh(np.asarray(ico.vertices), np.asarray(ico.faces))


def ellipsoid(axes: tuple[float, float, float], subdivisions: int = 3) -> TriMesh:
    """Icosphere scaled per axis; the largest semi-axis must be ≤ 1."""
    axes = np.asarray(axes, dtype=np.float64)
    if (axes <= 0).any() or axes.max() > 1.0:
        raise ConfigError(f"ellipsoid semi-axes must be in (0, 1], got {axes.tolist()}")
    sphere = unit_sphere(subdivisions)
    return TriMesh(sphere.vertices * axes, sphere.faces)


def open_quad() -> TriMesh:
    """Two triangles spanning the square |x|, |y| ≤ 1/√2 in the plane z = 0."""
    a = 1.0 / np.sqrt(2.0)
    vertices = np.array([[-a, -a, 0.0], [a, -a, 0.0], [a, a, 0.0], [-a, a, 0.0]])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return TriMesh(vertices, faces)


def _grid_faces(rows: int, cols: int, wrap_cols: bool, offset: int = 0) -> list[list[int]]:
    faces = []
    col_range = cols if wrap_cols else cols - 1
    for i in range(rows - 1):
        for j in range(col_range):
            jn = (j + 1) % cols
            a = offset + i * cols + j
            b = offset + i * cols + jn
            c = offset + (i + 1) * cols + jn
            d = offset + (i + 1) * cols + j
            faces.append([a, b, c])
            faces.append([a, c, d])
    return faces


def half_sphere(rings: int = 16, segments: int = 48) -> TriMesh:
    """Upper unit hemisphere (z ≥ 0), open along the z = 0 rim."""
    theta = np.linspace(0.0, np.pi / 2, rings + 1)[1:]
    phi = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    t, p = np.meshgrid(theta, phi, indexing="ij")
    ring_pts = np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1).reshape(-1, 3)
    vertices = np.concatenate([[[0.0, 0.0, 1.0]], ring_pts])
    faces = [[0, 1 + j, 1 + (j + 1) % segments] for j in range(segments)]
    faces += _grid_faces(rings, segments, wrap_cols=True, offset=1)
    return TriMesh(vertices, np.array(faces))


def torus(major: float = 0.7, minor: float = 0.3, segments: int = 48, tube_segments: int = 24) -> TriMesh:
    """Torus around the z axis; major + minor must be ≤ 1."""
    if major <= minor or major + minor > 1.0:
        raise ConfigError(f"torus needs minor < major and major + minor ≤ 1, got {major}, {minor}")
    u = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    v = np.linspace(0.0, 2 * np.pi, tube_segments, endpoint=False)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ring = major + minor * np.cos(vv)
    vertices = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor * np.sin(vv)], axis=-1).reshape(-1, 3)
    faces = _grid_faces(segments, tube_segments, wrap_cols=True)
    # close the seam between the last and the first tube ring
    last = (segments - 1) * tube_segments
    for j in range(tube_segments):
        jn = (j + 1) % tube_segments
        faces.append([last + j, last + jn, jn])
        faces.append([last + j, jn, j])
    return TriMesh(vertices, np.array(faces))


BUILTIN_SHAPES = {
    "sphere": unit_sphere,
    "quad": open_quad,
    "half-sphere": half_sphere,
    "torus": torus,
}


def builtin_shape(name: str) -> TriMesh:
    try:
        return BUILTIN_SHAPES[name]()
    except KeyError:
        raise ConfigError(f"unknown shape '{name}', choose from {sorted(BUILTIN_SHAPES)}") from None


# ─── Analytic backends ───────────────────────────────────────────────────


class SphereODF(OdfBackend):
    """Closed-form ODF of a sphere centered at `center` (first root of |o + t·d − c| = r)."""

    def __init__(self, radius: float = 1.0, center=(0.0, 0.0, 0.0),
                 domain: DomainConfig = DEFAULT_DOMAIN, t_min: float = -SURFACE_TOLERANCE):
        if not radius > 0:
            raise ConfigError(f"radius must be > 0, got {radius}")
        self.radius = float(radius)
        self.center = np.asarray(center, dtype=np.float64)
        self.domain = domain
        self.t_min = t_min

    def batch_query(self, origins: np.ndarray, dirs: np.ndarray) -> OdfSamples:
        dirs = check_unit_dirs(dirs)
        o = np.asarray(origins, dtype=np.float64) - self.center
        b = (o * dirs).sum(axis=1)
        c = (o * o).sum(axis=1) - self.radius * self.radius
        disc = b * b - c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 >= self.t_min, t0, np.where(t1 >= self.t_min, t1, np.inf))
        t = np.where(disc >= 0, t, np.inf)
        hit = np.isfinite(t)
        depth = np.where(hit, np.maximum(t, 0.0), self.domain.nonintersect_sentinel)
        return OdfSamples(depth=depth, confidence=hit.astype(np.float64))


class EmptyODF(OdfBackend):
    """A scene with no surface: every ray misses."""

    def __init__(self, domain: DomainConfig = DEFAULT_DOMAIN):
        self.domain = domain

    def batch_query(self, origins: np.ndarray, dirs: np.ndarray) -> OdfSamples:
        n = len(origins)
        return OdfSamples(
            depth=np.full(n, self.domain.nonintersect_sentinel),
            confidence=np.zeros(n),
        )
