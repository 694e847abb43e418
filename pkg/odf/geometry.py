"""Triangle meshes, BVH ray casting and the exact (mesh-backed) ODF."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from odf.domain import (
    DEFAULT_DOMAIN,
    DomainConfig,
    OdfBackend,
    OdfSamples,
    ODFSample,
    Ray,
    check_unit_dirs,
)
from odf.errors import DataError
from odf.storage import load_json, save_json, sidecar_path

logger = logging.getLogger(__name__)

# Hits closer than this are discarded when labeling rays (self-intersection guard).
T_MIN = 1e-6
# The exact backend treats an origin this close to the surface as lying on it.
SURFACE_TOLERANCE = 1e-9
# Conservative padding for BVH boxes and pruning, far above float64 rounding.
BOX_PAD = 1e-9
DET_EPS = 1e-15
LEAF_SIZE = 4


# ─── Meshes ──────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class TriMesh:
    """Vertices (V, 3) float64 and faces (F, 3) int64."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if not np.isfinite(v).all():
            raise DataError("mesh vertices must be finite")
        if len(f) and (f.min() < 0 or f.max() >= len(v)):
            raise DataError(f"face index out of range for {len(v)} vertices")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def triangles(self) -> np.ndarray:
        """(F, 3, 3) corner coordinates."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        tri = self.triangles()
        cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        return 0.5 * np.linalg.norm(cross, axis=1)

    def is_empty(self) -> bool:
        return len(self.vertices) == 0 or len(self.faces) == 0


def remove_degenerate_faces(mesh: TriMesh, min_area: float = 1e-20) -> TriMesh:
    """Drop faces with repeated indices or (numerically) zero area."""
    f = mesh.faces
    if not len(f):
        return mesh
    distinct = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    keep = distinct & (mesh.face_areas() > min_area)
    dropped = int((~keep).sum())
    if dropped:
        logger.info("Removed %d degenerate faces", dropped)
    return TriMesh(mesh.vertices, f[keep])


@dataclass(frozen=True)
class Normalization:
    """normalized = (original - offset) * scale."""

    scale: float
    offset: tuple[float, float, float]

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.offset)) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + np.asarray(self.offset)

    def to_dict(self) -> dict:
        return {"scale": self.scale, "offset": list(self.offset)}

    @classmethod
    def from_dict(cls, data: dict) -> Normalization:
        return cls(float(data["scale"]), tuple(float(x) for x in data["offset"]))


def normalize_mesh(mesh: TriMesh, target_norm: float = 1.0) -> tuple[TriMesh, Normalization]:
    """Center the bounding box at the origin and scale the farthest vertex to `target_norm`."""
    if mesh.is_empty():
        raise DataError("cannot normalize an empty mesh")
    v = mesh.vertices
    offset = 0.5 * (v.min(axis=0) + v.max(axis=0))
    centered = v - offset
    radius = float(np.linalg.norm(centered, axis=1).max())
    if radius == 0:
        raise DataError("mesh collapses to a single point")
    params = Normalization(target_norm / radius, tuple(float(x) for x in offset))
    return TriMesh(centered * params.scale, mesh.faces), params


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Area-weighted uniform points on the surface; returns (points, face ids)."""
    if mesh.is_empty():
        raise DataError("cannot sample an empty mesh")
    areas = mesh.face_areas()
    cdf = np.cumsum(areas)
    faces = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    faces = np.minimum(faces, len(areas) - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.triangles()[faces]
    pts = (
        (1 - r1)[:, None] * tri[:, 0]
        + (r1 * (1 - r2))[:, None] * tri[:, 1]
        + (r1 * r2)[:, None] * tri[:, 2]
    )
    return pts, faces


def boundary_edges(mesh: TriMesh) -> np.ndarray:
    """Undirected edges used by exactly one face, shape (E, 2)."""
    f = mesh.faces
    if not len(f):
        return np.zeros((0, 2), dtype=np.int64)
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    return uniq[counts == 1]


def boundary_loops(mesh: TriMesh) -> int:
    """Number of connected boundary curves (0 for a watertight mesh)."""
    from scipy.sparse import coo_matrix
    from scipy.sparse.csgraph import connected_components

    edges = boundary_edges(mesh)
    if not len(edges):
        return 0
    verts, local = np.unique(edges, return_inverse=True)
    local = local.reshape(-1, 2)
    graph = coo_matrix(
        (np.ones(len(local)), (local[:, 0], local[:, 1])), shape=(len(verts), len(verts))
    )
    n_components, _ = connected_components(graph, directed=False)
    return int(n_components)


# ─── Mesh I/O ────────────────────────────────────────────────────────────


def load_mesh(path: str | Path) -> TriMesh:
    """Read an OBJ (v/f records) or PLY file; degenerate faces are removed."""
    import trimesh

    path = Path(path)
    if not path.exists():
        raise DataError(f"mesh file not found: {path}")
    try:
        loaded = trimesh.load(str(path), force="mesh", process=False)
    except Exception as e:
        raise DataError(f"cannot read mesh {path}: {e}") from e
    mesh = TriMesh(np.asarray(loaded.vertices), np.asarray(loaded.faces))
    if mesh.is_empty():
        raise DataError(f"mesh {path} has no faces")
    return remove_degenerate_faces(mesh)


def save_mesh(mesh: TriMesh, path: str | Path, normalization: Normalization | None = None,
              meta: dict | None = None):
    """Write OBJ or binary little-endian PLY by suffix; optional JSON sidecar ({scale, offset} + meta)."""
    import trimesh

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tm = trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.faces, process=False)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        tm.export(str(path), file_type="ply", encoding="binary")
    elif suffix == ".obj":
        tm.export(str(path), file_type="obj", include_normals=False, include_texture=False)
    else:
        raise DataError(f"unsupported mesh format: {suffix}")
    if normalization is not None or meta:
        save_json(sidecar_path(path), {**(meta or {}), **(normalization.to_dict() if normalization else {})})


def load_normalization(path: str | Path) -> Normalization | None:
    data = load_json(sidecar_path(path))
    return Normalization.from_dict(data) if "scale" in data else None


def save_points(points: np.ndarray, path: str | Path):
    """Point cloud as PLY (vertices only), .xyz text or .npy by suffix."""
    import trimesh

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        trimesh.PointCloud(points).export(str(path), file_type="ply", encoding="binary")
    elif suffix == ".xyz":
        np.savetxt(path, points, fmt="%.9f")
    elif suffix == ".npy":
        np.save(path, points)
    else:
        raise DataError(f"unsupported point cloud format: {suffix}")


def load_points(path: str | Path) -> np.ndarray:
    """Points from .npy, .xyz or a PLY/OBJ file (its vertices)."""
    import trimesh

    path = Path(path)
    if not path.exists():
        raise DataError(f"point file not found: {path}")
    suffix = path.suffix.lower()
    try:
        if suffix == ".npy":
            points = np.load(path)
        elif suffix == ".xyz":
            points = np.loadtxt(path, ndmin=2)
        else:
            points = np.asarray(trimesh.load(str(path), process=False).vertices)
    except Exception as e:
        raise DataError(f"cannot read points from {path}: {e}") from e
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise DataError(f"{path}: expected (N, 3) points, got {points.shape}")
    return points


# ─── Ray–triangle kernel ─────────────────────────────────────────────────


@dataclass(frozen=True)
class TriangleData:
    """Per-face Möller–Trumbore constants: v0 and the two edge vectors."""

    v0: np.ndarray
    e1: np.ndarray
    e2: np.ndarray

    @classmethod
    def from_mesh(cls, mesh: TriMesh) -> TriangleData:
        tri = mesh.triangles()
        return cls(tri[:, 0].copy(), (tri[:, 1] - tri[:, 0]).copy(), (tri[:, 2] - tri[:, 0]).copy())


def _intersect_kernel(o, d, v0, e1, e2, t_min: float) -> np.ndarray:
    """Möller–Trumbore hit distance (inf on miss) for broadcastable (..., 3) inputs.

    Written component-wise so every (ray, face) pair is evaluated with the same
    float operations no matter how the inputs are batched.
    """
    ox, oy, oz = o[..., 0], o[..., 1], o[..., 2]
    dx, dy, dz = d[..., 0], d[..., 1], d[..., 2]
    ax, ay, az = e1[..., 0], e1[..., 1], e1[..., 2]
    bx, by, bz = e2[..., 0], e2[..., 1], e2[..., 2]

    px = dy * bz - dz * by
    py = dz * bx - dx * bz
    pz = dx * by - dy * bx
    det = ax * px + ay * py + az * pz

    with np.errstate(divide="ignore", invalid="ignore"):
        inv_det = 1.0 / det
        sx = ox - v0[..., 0]
        sy = oy - v0[..., 1]
        sz = oz - v0[..., 2]
        u = (sx * px + sy * py + sz * pz) * inv_det
        qx = sy * az - sz * ay
        qy = sz * ax - sx * az
        qz = sx * ay - sy * ax
        v = (dx * qx + dy * qy + dz * qz) * inv_det
        t = (bx * qx + by * qy + bz * qz) * inv_det

    ok = (np.abs(det) > DET_EPS) & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t >= t_min)
    return np.where(ok, t, np.inf)


def _better(t, f, best_t, best_f):
    """Smaller t wins; equal t goes to the lower face index."""
    return (t < best_t) | ((t == best_t) & (f < best_f))


# ─── BVH ─────────────────────────────────────────────────────────────────


@dataclass(frozen=True)
class Bvh:
    """Flattened median-split AABB tree.

    Node i is a leaf when `left[i] == -1`; its faces are
    `face_order[start[i]:start[i] + count[i]]`.
    """

    lo: np.ndarray
    hi: np.ndarray
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    face_order: np.ndarray
    tri: TriangleData

    @property
    def n_nodes(self) -> int:
        return len(self.lo)

    def depth(self) -> int:
        """Longest root-to-leaf path, counted in nodes."""
        best = 0
        stack = [(0, 1)]
        while stack:
            node, level = stack.pop()
            best = max(best, level)
            if self.left[node] >= 0:
                stack.append((int(self.left[node]), level + 1))
                stack.append((int(self.right[node]), level + 1))
        return best

    def leaves(self) -> list[np.ndarray]:
        return [
            self.face_order[self.start[i]:self.start[i] + self.count[i]]
            for i in range(self.n_nodes)
            if self.left[i] < 0
        ]


def build_bvh(mesh: TriMesh, leaf_size: int = LEAF_SIZE) -> Bvh:
    """Median split along the longest centroid axis until leaves hold ≤ leaf_size faces."""
    if mesh.is_empty():
        raise DataError("cannot build a BVH over an empty mesh")
    tri = mesh.triangles()
    f_lo = tri.min(axis=1)
    f_hi = tri.max(axis=1)
    centroids = tri.mean(axis=1)

    lo, hi, left, right, start, count = [], [], [], [], [], []
    order: list[np.ndarray] = []
    offset = 0

    def new_node(faces: np.ndarray) -> int:
        lo.append(f_lo[faces].min(axis=0) - BOX_PAD)
        hi.append(f_hi[faces].max(axis=0) + BOX_PAD)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(lo) - 1

    root = new_node(np.arange(mesh.n_faces))
    stack = [(root, np.arange(mesh.n_faces))]
    while stack:
        node, faces = stack.pop()
        if len(faces) <= leaf_size:
            start[node] = offset
            count[node] = len(faces)
            order.append(faces)
            offset += len(faces)
            continue
        c = centroids[faces]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        sorted_faces = faces[np.argsort(c[:, axis], kind="stable")]
        mid = len(sorted_faces) // 2
        a, b = sorted_faces[:mid], sorted_faces[mid:]
        left[node] = new_node(a)
        right[node] = new_node(b)
        # right pushed first so the left subtree is laid out first
        stack.append((right[node], b))
        stack.append((left[node], a))

    bvh = Bvh(
        lo=np.array(lo),
        hi=np.array(hi),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        start=np.array(start, dtype=np.int64),
        count=np.array(count, dtype=np.int64),
        face_order=np.concatenate(order).astype(np.int64),
        tri=TriangleData.from_mesh(mesh),
    )
    logger.debug("BVH: %d faces, %d nodes, depth %d", mesh.n_faces, bvh.n_nodes, bvh.depth())
    return bvh


def _slab(lo, hi, o, inv):
    """Entry/exit distances of rays against one box."""
    t1 = (lo - o) * inv
    t2 = (hi - o) * inv
    tnear = np.minimum(t1, t2).max(axis=1)
    tfar = np.maximum(t1, t2).min(axis=1)
    return tnear, tfar


def intersect(bvh: Bvh, origins: np.ndarray, dirs: np.ndarray, t_min: float = T_MIN):
    """Nearest hit per ray: (t, face) with t=inf and face=-1 on a miss."""
    origins = np.asarray(origins, dtype=np.float64)
    n = len(origins)
    best_t = np.full(n, np.inf)
    best_f = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return best_t, best_f
    safe = np.where(dirs == 0.0, 1e-300, dirs)
    inv = 1.0 / safe
    tri = bvh.tri

    stack = [(0, np.arange(n))]
    while stack:
        node, idx = stack.pop()
        tnear, tfar = _slab(bvh.lo[node], bvh.hi[node], origins[idx], inv[idx])
        keep = (tfar >= np.maximum(tnear, t_min - BOX_PAD)) & (tnear <= best_t[idx] + BOX_PAD)
        idx = idx[keep]
        if not len(idx):
            continue
        if bvh.left[node] >= 0:
            stack.append((int(bvh.right[node]), idx))
            stack.append((int(bvh.left[node]), idx))
            continue
        o, d = origins[idx], dirs[idx]
        s = bvh.start[node]
        for face in bvh.face_order[s:s + bvh.count[node]]:
            t = _intersect_kernel(o, d, tri.v0[face], tri.e1[face], tri.e2[face], t_min)
            better = _better(t, face, best_t[idx], best_f[idx])
            upd = idx[better]
            best_t[upd] = t[better]
            best_f[upd] = face
    return best_t, best_f


def brute_force_intersect(mesh: TriMesh, origins: np.ndarray, dirs: np.ndarray,
                          t_min: float = T_MIN, chunk: int = 2048):
    """O(rays × faces) reference for `intersect`; same kernel, same tie-break."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    tri = TriangleData.from_mesh(mesh)
    n = len(origins)
    chunk = max(1, min(chunk, 1_000_000 // max(mesh.n_faces, 1)))
    best_t = np.full(n, np.inf)
    best_f = np.full(n, -1, dtype=np.int64)
    if mesh.n_faces == 0:
        return best_t, best_f
    for s in range(0, n, chunk):
        o = origins[s:s + chunk, None, :]
        d = dirs[s:s + chunk, None, :]
        t = _intersect_kernel(o, d, tri.v0[None], tri.e1[None], tri.e2[None], t_min)
        f = np.argmin(t, axis=1)
        tt = t[np.arange(len(f)), f]
        best_t[s:s + chunk] = tt
        best_f[s:s + chunk] = np.where(np.isfinite(tt), f, -1)
    return best_t, best_f


def _to_samples(t: np.ndarray, sentinel: float) -> OdfSamples:
    hit = np.isfinite(t)
    return OdfSamples(depth=np.where(hit, np.maximum(t, 0.0), sentinel), confidence=hit.astype(np.float64))


def batch_ray_cast(bvh: Bvh, mesh: TriMesh, origins: np.ndarray, dirs: np.ndarray,
                   t_min: float = T_MIN, sentinel: float = DEFAULT_DOMAIN.nonintersect_sentinel) -> OdfSamples:
    """First-hit depths for many rays; misses get the sentinel depth."""
    if len(bvh.tri.v0) != mesh.n_faces:
        raise DataError("BVH was built for a different mesh")
    dirs = check_unit_dirs(dirs)
    t, _ = intersect(bvh, origins, dirs, t_min)
    return _to_samples(t, sentinel)


def ray_cast(bvh: Bvh, mesh: TriMesh, ray: Ray, t_min: float = T_MIN,
             sentinel: float = DEFAULT_DOMAIN.nonintersect_sentinel) -> ODFSample:
    """Nearest intersection of one ray; (sentinel, miss) when nothing is hit."""
    return batch_ray_cast(bvh, mesh, ray.origin[None], ray.direction[None], t_min, sentinel)[0]


def brute_force_ray_cast(mesh: TriMesh, origins: np.ndarray, dirs: np.ndarray, t_min: float = T_MIN,
                         sentinel: float = DEFAULT_DOMAIN.nonintersect_sentinel) -> OdfSamples:
    t, _ = brute_force_intersect(mesh, origins, check_unit_dirs(dirs), t_min)
    return _to_samples(t, sentinel)


# ─── Exact ODF ───────────────────────────────────────────────────────────


class ExactODF(OdfBackend):
    """Ground-truth ODF backed by BVH ray casting.

    Queries starting on the surface (within SURFACE_TOLERANCE along the ray)
    report depth 0, so recursive inference has an exact fixpoint. Labeling
    code calls `ray_cast` with T_MIN instead.
    """

    def __init__(self, mesh: TriMesh, domain: DomainConfig = DEFAULT_DOMAIN,
                 t_min: float = -SURFACE_TOLERANCE, bvh: Bvh | None = None):
        self.mesh = mesh
        self.domain = domain
        self.t_min = t_min
        self.bvh = bvh if bvh is not None else build_bvh(mesh)

    def batch_query(self, origins: np.ndarray, dirs: np.ndarray) -> OdfSamples:
        return batch_ray_cast(self.bvh, self.mesh, origins, dirs, self.t_min,
                              self.domain.nonintersect_sentinel)

    def label(self, origins: np.ndarray, dirs: np.ndarray) -> OdfSamples:
        """Labels with the self-intersection guard used for training data."""
        return batch_ray_cast(self.bvh, self.mesh, origins, dirs, T_MIN,
                              self.domain.nonintersect_sentinel)


def exact_odf(mesh: TriMesh, domain: DomainConfig = DEFAULT_DOMAIN) -> ExactODF:
    return ExactODF(mesh, domain)
