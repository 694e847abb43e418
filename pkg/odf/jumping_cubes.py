"""Jumping Cubes: O(n²)-query mesh extraction from an ODF.

Each lattice column is walked along +x, +y or +z. A query at a vertex
returns the distance d to the next surface along the column; the Recursive
Property then fills the following ⌊d/s − b⌋ vertices without querying.
An edge (v, v + s·axis) is crossed when depth(v) < s. Crossed edges of a
cube form a 12-bit key into a triangulation table generated from the cube's
face adjacency and reduced by the 24 cube rotations.
"""

from __future__ import annotations

import itertools
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from odf.domain import DEFAULT_DOMAIN, DomainConfig, OdfBackend, check_unit_dirs
from odf.errors import ConfigError, DataError
from odf.geometry import TriMesh, boundary_edges
from odf.storage import cache_dir

logger = logging.getLogger(__name__)

GENERATOR_VERSION = 1
TABLE_MAGIC = b"ODFJ"
N_CONFIGS = 1 << 12


@dataclass(frozen=True)
class JumpingCubesConfig:
    n: int = 128
    b: float = 1.0
    smoothing_iterations: int = 5
    smoothing_weight: float = 0.5
    midpoint: bool = False
    psi: float = DEFAULT_DOMAIN.depth_clamp
    domain: DomainConfig = field(default=DEFAULT_DOMAIN)

    def __post_init__(self):
        if self.n < 8:
            raise ConfigError(f"lattice resolution must be ≥ 8, got {self.n}")
        if self.b < 0:
            raise ConfigError(f"steps adjustment must be ≥ 0, got {self.b}")
        if self.smoothing_iterations < 0 or not 0 <= self.smoothing_weight <= 1:
            raise ConfigError("smoothing needs iterations ≥ 0 and a weight in [0, 1]")

    @property
    def extent(self) -> float:
        return self.domain.sphere_radius

    @property
    def spacing(self) -> float:
        return 2 * self.extent / self.n

    def coords(self) -> np.ndarray:
        """Vertex coordinates along one axis (cell-centered in [−extent, extent])."""
        return -self.extent + (np.arange(self.n) + 0.5) * self.spacing


# ─── Column walks ────────────────────────────────────────────────────────


def _walk(backend: OdfBackend, positions, dirs: np.ndarray, n_cols: int, n: int, s: float,
          cfg: JumpingCubesConfig) -> tuple[np.ndarray, int]:
    """Jumping schedule over many columns in lockstep.

    `positions(cols, i)` gives the lattice points of vertex i in the given
    columns. Returns per-vertex depths (n_cols, n) and the number of queries.
    """
    sentinel = cfg.domain.nonintersect_sentinel
    depth = np.empty((n_cols, n))
    pos = np.zeros(n_cols, dtype=np.int64)
    active = np.arange(n_cols)
    queries = 0
    while len(active):
        i = pos[active]
        out = backend.batch_query(positions(active, i), dirs[active])
        queries += len(active)
        value = np.where(out.hit, out.depth, sentinel)
        steps = np.maximum(1, np.floor(np.minimum(value, cfg.psi) / s - cfg.b)).astype(np.int64)
        k = np.arange(int(steps.max()))
        idx = i[:, None] + k[None, :]
        valid = (k[None, :] < steps[:, None]) & (idx < n)
        fill = np.where(out.hit[:, None], value[:, None] - s * k[None, :], sentinel)
        rows = np.broadcast_to(active[:, None], idx.shape)
        depth[rows[valid], idx[valid]] = fill[valid]
        pos[active] = i + steps
        active = active[pos[active] < n]
    return depth, queries


def jc_column(backend: OdfBackend, start, direction, n: int, cfg: JumpingCubesConfig) -> tuple[np.ndarray, int]:
    """Depths at the n vertices start + i·s·direction, and the query count."""
    start = np.asarray(start, dtype=np.float64).reshape(3)
    direction = check_unit_dirs(np.asarray(direction, dtype=np.float64).reshape(1, 3))
    s = cfg.spacing

    def positions(cols, i):
        return start[None, :] + (i * s)[:, None] * direction

    depth, queries = _walk(backend, positions, direction, 1, n, s, cfg)
    return depth[0], queries


def _other_axes(axis: int) -> tuple[int, int]:
    p, q = (a for a in range(3) if a != axis)
    return p, q


def _axis_positions(coords: np.ndarray, axis: int, n: int):
    p, q = _other_axes(axis)

    def positions(cols, i):
        pts = np.empty((len(cols), 3))
        pts[:, axis] = coords[i]
        pts[:, p] = coords[cols // n]
        pts[:, q] = coords[cols % n]
        return pts

    return positions


@dataclass
class EdgeGrid:
    """Per-axis crossed-edge bits on the n³ lattice; edge (axis, v) joins v and v + s·axis."""

    crossed: np.ndarray
    offsets: np.ndarray
    depth: np.ndarray
    spacing: float
    extent: float
    queries: int = 0

    @property
    def n(self) -> int:
        return self.crossed.shape[1]

    @property
    def n_crossed(self) -> int:
        return int(self.crossed.sum())


def _edge_grid_from_depths(depth: np.ndarray, cfg: JumpingCubesConfig, queries: int) -> EdgeGrid:
    n, s = cfg.n, cfg.spacing
    crossed = depth < s
    for axis in range(3):
        last = [slice(None)] * 3
        last[axis] = n - 1
        crossed[axis][tuple(last)] = False
    offsets = np.where(crossed, np.clip(depth / s, 0.0, 1.0), np.nan)
    return EdgeGrid(crossed, offsets, depth, s, cfg.extent, queries)


def build_edge_grid(backend: OdfBackend, cfg: JumpingCubesConfig) -> EdgeGrid:
    """Walk all 3·n² boundary columns with the jumping schedule."""
    n, s = cfg.n, cfg.spacing
    coords = cfg.coords()
    depth = np.empty((3, n, n, n))
    total = 0
    for axis in range(3):
        dirs = np.zeros((n * n, 3))
        dirs[:, axis] = 1.0
        cols, queries = _walk(backend, _axis_positions(coords, axis, n), dirs, n * n, n, s, cfg)
        depth[axis] = np.moveaxis(cols.reshape(n, n, n), -1, axis)
        total += queries
    logger.info("Edge grid at n=%d: %d backend queries (dense would need %d)", n, total, 3 * n ** 3)
    return _edge_grid_from_depths(depth, cfg, total)


def dense_edge_grid(backend: OdfBackend, cfg: JumpingCubesConfig) -> EdgeGrid:
    """Reference evaluation: one query per vertex and axis."""
    n = cfg.n
    coords = cfg.coords()
    sentinel = cfg.domain.nonintersect_sentinel
    x, y, z = np.meshgrid(coords, coords, coords, indexing="ij")
    pts = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    depth = np.empty((3, n, n, n))
    for axis in range(3):
        dirs = np.zeros_like(pts)
        dirs[:, axis] = 1.0
        out = backend.batch_query(pts, dirs)
        depth[axis] = np.where(out.hit, out.depth, sentinel).reshape(n, n, n)
    return _edge_grid_from_depths(depth, cfg, 3 * n ** 3)


# ─── Triangulation table ─────────────────────────────────────────────────
#
# Local edge 4·a + 2·b + c runs along axis a from the corner whose other two
# coordinates (in increasing axis order) are (b, c).


def _cube_edges() -> list[tuple[tuple[int, int, int], tuple[int, int, int]]]:
    edges = []
    for a in range(3):
        p, q = _other_axes(a)
        for b in (0, 1):
            for c in (0, 1):
                lo = [0, 0, 0]
                lo[p], lo[q] = b, c
                hi = list(lo)
                hi[a] = 1
                edges.append((tuple(lo), tuple(hi)))
    return edges


EDGES = _cube_edges()
_EDGE_INDEX = {frozenset(e): i for i, e in enumerate(EDGES)}
EDGE_AXIS = np.array([i // 4 for i in range(12)])
EDGE_CORNER = np.array([lo for lo, _ in EDGES])


def _face_cycles() -> list[list[int]]:
    """The four edges of each cube face in cyclic order."""
    faces = []
    for f in range(3):
        u, v = _other_axes(f)
        for t in (0, 1):
            corners = []
            for cu, cv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                c = [0, 0, 0]
                c[f], c[u], c[v] = t, cu, cv
                corners.append(tuple(c))
            faces.append([_EDGE_INDEX[frozenset((corners[i], corners[(i + 1) % 4]))] for i in range(4)])
    return faces


FACES = _face_cycles()


def _rotations() -> np.ndarray:
    """(24, 12) edge permutations of the proper cube rotations."""
    perms = []
    for axes in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            m = np.zeros((3, 3), dtype=int)
            for row, (col, sign) in enumerate(zip(axes, signs)):
                m[row, col] = sign
            if round(np.linalg.det(m)) != 1:
                continue

            def move(corner):
                centered = 2 * np.array(corner) - 1
                return tuple(int(x) for x in (m @ centered + 1) // 2)

            perms.append([_EDGE_INDEX[frozenset((move(lo), move(hi)))] for lo, hi in EDGES])
    return np.array(perms, dtype=np.int64)


ROTATIONS = _rotations()


def _permute_keys(keys: np.ndarray, perm: np.ndarray) -> np.ndarray:
    out = np.zeros_like(keys)
    for e in range(12):
        out |= ((keys >> e) & 1) << perm[e]
    return out


def _face_options(key: int) -> list[list[list[tuple[int, int]]]]:
    options = []
    for cycle in FACES:
        marked = [e for e in cycle if key >> e & 1]
        if len(marked) < 2:
            options.append([[]])
        elif len(marked) == 2:
            options.append([[tuple(marked)]])
        elif len(marked) == 3:
            m0, m1, m2 = marked
            options.append([[(m0, m1)], [(m1, m2)], [(m0, m2)]])
        else:
            c0, c1, c2, c3 = cycle
            options.append([[(c0, c1), (c2, c3)], [(c1, c2), (c3, c0)]])
    return options


def _components(nodes: list[int], segments: list[tuple[int, int]]) -> list[tuple[list[int], bool]]:
    """Walk a max-degree-2 graph into (ordered nodes, closed) components."""
    adj: dict[int, list[int]] = {v: [] for v in nodes}
    for a, b in segments:
        adj[a].append(b)
        adj[b].append(a)
    seen: set[int] = set()
    comps = []
    # open paths first, walked from their lower endpoint
    starts = [v for v in nodes if len(adj[v]) < 2] + [v for v in nodes if len(adj[v]) == 2]
    for start in starts:
        if start in seen:
            continue
        path, prev, cur = [start], None, start
        seen.add(start)
        while True:
            nxt = [w for w in adj[cur] if w != prev and w not in seen]
            if not nxt:
                break
            prev, cur = cur, min(nxt)
            seen.add(cur)
            path.append(cur)
        closed = len(path) >= 3 and path[0] in adj[path[-1]] and len(adj[start]) == 2
        comps.append((path, closed))
    return comps


def _triangulate(key: int) -> tuple[list[tuple[int, int, int]], bool]:
    """Fan triangles for one configuration and whether its face pairing was a choice."""
    nodes = [e for e in range(12) if key >> e & 1]
    options = _face_options(key)
    ambiguous = any(len(o) > 1 for o in options)
    best, best_score = None, None
    for combo in itertools.product(*options):
        segments = [seg for face in combo for seg in face]
        comps = _components(nodes, segments)
        open_nodes = sum(len(p) for p, closed in comps if not closed)
        n_cycles = sum(1 for _, closed in comps if closed)
        score = (open_nodes, n_cycles)
        if best_score is None or score < best_score:
            best, best_score = comps, score
    triangles = []
    for path, _ in best or []:
        for i in range(1, len(path) - 1):
            triangles.append((path[0], path[i], path[i + 1]))
    return triangles, ambiguous


@dataclass
class JCTable:
    """Triangles (as local edge triples) for all 4096 crossed-edge configurations."""

    triangles: list[np.ndarray]
    class_id: np.ndarray
    ambiguous: np.ndarray
    version: int = GENERATOR_VERSION

    def __len__(self) -> int:
        return len(self.triangles)

    @property
    def n_classes(self) -> int:
        return len(np.unique(self.class_id))


def generate_jc_table() -> JCTable:
    """Triangulate one representative per rotation class and rotate it to every member."""
    keys = np.arange(N_CONFIGS, dtype=np.int64)
    images = np.stack([_permute_keys(keys, perm) for perm in ROTATIONS])
    canonical = images.min(axis=0)
    which = images.argmin(axis=0)

    reps = {}
    for key in np.unique(canonical):
        reps[int(key)] = _triangulate(int(key))

    triangles, ambiguous = [], np.zeros(N_CONFIGS, dtype=bool)
    for key in range(N_CONFIGS):
        tris, amb = reps[int(canonical[key])]
        perm = ROTATIONS[which[key]]
        inverse = np.argsort(perm)
        local = inverse[np.array(tris, dtype=np.int64).reshape(-1, 3)]
        triangles.append(local.astype(np.int8))
        ambiguous[key] = amb
    _, class_id = np.unique(canonical, return_inverse=True)
    table = JCTable(triangles, class_id.astype(np.int64), ambiguous)
    logger.info("Generated Jumping Cubes table: %d configurations, %d rotation classes, %d ambiguous",
                len(table), table.n_classes, int(ambiguous.sum()))
    return table


def save_table(table: JCTable, path: str | Path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    counts = np.array([len(t) for t in table.triangles], dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack("<4sII", TABLE_MAGIC, table.version, N_CONFIGS))
        f.write(table.class_id.astype("<u2").tobytes())
        f.write(table.ambiguous.astype(np.uint8).tobytes())
        f.write(counts.tobytes())
        for tris in table.triangles:
            f.write(tris.astype(np.uint8).tobytes())


def load_table(path: str | Path) -> JCTable:
    raw = Path(path).read_bytes()
    magic, version, count = struct.unpack_from("<4sII", raw)
    if magic != TABLE_MAGIC or count != N_CONFIGS:
        raise DataError(f"{path} is not a Jumping Cubes table")
    pos = 12
    class_id = np.frombuffer(raw, "<u2", count, pos).astype(np.int64)
    pos += 2 * count
    ambiguous = np.frombuffer(raw, np.uint8, count, pos).astype(bool)
    pos += count
    counts = np.frombuffer(raw, np.uint8, count, pos)
    pos += count
    flat = np.frombuffer(raw, np.uint8, offset=pos).astype(np.int8)
    if len(flat) != 3 * int(counts.sum()):
        raise DataError(f"{path} is truncated")
    splits = np.cumsum(3 * counts.astype(np.int64))[:-1]
    triangles = [t.reshape(-1, 3) for t in np.split(flat, splits)]
    return JCTable(triangles, class_id, ambiguous, version)


def load_or_generate_table(directory: str | Path | None = None) -> JCTable:
    """Table from the cache directory, generated and stored on first use."""
    directory = Path(directory) if directory is not None else cache_dir()
    path = directory / f"jc_table_v{GENERATOR_VERSION}.bin"
    if path.exists():
        try:
            table = load_table(path)
            if table.version == GENERATOR_VERSION:
                return table
        except DataError as e:
            logger.warning("Ignoring unreadable table cache: %s", e)
    table = generate_jc_table()
    save_table(table, path)
    logger.debug("Cached Jumping Cubes table at %s", path)
    return table


# ─── Meshing ─────────────────────────────────────────────────────────────


def cube_keys(grid: EdgeGrid) -> np.ndarray:
    """(n−1)³ array of 12-bit crossed-edge keys."""
    m = grid.n - 1
    keys = np.zeros((m, m, m), dtype=np.int64)
    for e in range(12):
        a = EDGE_AXIS[e]
        ox, oy, oz = EDGE_CORNER[e]
        bits = grid.crossed[a][ox:ox + m, oy:oy + m, oz:oz + m]
        keys |= bits.astype(np.int64) << e
    return keys


def mesh_edge_grid(grid: EdgeGrid, table: JCTable, midpoint: bool = False) -> TriMesh:
    """Table lookup per cube, vertices welded by global edge id."""
    n = grid.n
    keys = cube_keys(grid)
    faces = []
    for key in np.unique(keys):
        tris = table.triangles[int(key)]
        if not len(tris):
            continue
        cubes = np.argwhere(keys == key)
        t = tris.astype(np.int64)
        axis = EDGE_AXIS[t]
        corner = EDGE_CORNER[t]
        v = cubes[:, None, None, :] + corner[None]
        gid = axis[None] * n ** 3 + (v[..., 0] * n + v[..., 1]) * n + v[..., 2]
        faces.append(gid.reshape(-1, 3))
    if not faces:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    gids = np.concatenate(faces)
    uniq, local = np.unique(gids, return_inverse=True)
    axis = uniq // n ** 3
    rest = uniq % n ** 3
    vi, vj, vk = rest // (n * n), (rest // n) % n, rest % n
    coords = -grid.extent + (np.arange(n) + 0.5) * grid.spacing
    verts = np.stack([coords[vi], coords[vj], coords[vk]], axis=1)
    offset = 0.5 if midpoint else grid.offsets[axis, vi, vj, vk]
    verts[np.arange(len(uniq)), axis] += offset * grid.spacing
    return TriMesh(verts, local.reshape(-1, 3))


def laplacian_smooth(mesh: TriMesh, iterations: int = 5, weight: float = 0.5) -> TriMesh:
    """Uniform-weight Laplacian smoothing; boundary vertices stay fixed."""
    if mesh.is_empty() or iterations == 0:
        return mesh
    from scipy.sparse import coo_matrix

    f = mesh.faces
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    edges = np.unique(np.sort(edges, axis=1), axis=0)
    nv = len(mesh.vertices)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nv, nv)).tocsr()
    degree = np.asarray(adj.sum(axis=1)).reshape(-1)
    movable = degree > 0
    movable[np.unique(boundary_edges(mesh))] = False
    v = mesh.vertices.copy()
    for _ in range(iterations):
        mean = adj @ v / np.maximum(degree, 1)[:, None]
        v[movable] += weight * (mean[movable] - v[movable])
    return TriMesh(v, mesh.faces)


def jumping_cubes(backend: OdfBackend, cfg: JumpingCubesConfig = JumpingCubesConfig(),
                  table: JCTable | None = None) -> TriMesh:
    """Edge grid → cube keys → table → welded mesh → boundary-pinned smoothing."""
    table = table if table is not None else load_or_generate_table()
    grid = build_edge_grid(backend, cfg)
    if grid.n_crossed == 0:
        logger.warning("No crossed edges at n=%d; the mesh is empty", cfg.n)
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    mesh = mesh_edge_grid(grid, table, cfg.midpoint)
    mesh = laplacian_smooth(mesh, cfg.smoothing_iterations, cfg.smoothing_weight)
    logger.info("Jumping Cubes mesh: %d vertices, %d faces", len(mesh.vertices), mesh.n_faces)
    return mesh
