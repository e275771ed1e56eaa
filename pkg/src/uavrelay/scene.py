"""3D urban scene layer: OBJ-subset IO, synthetic block-grid city generation,
ray/triangle intersection queries and outdoor user sampling.

Coordinates are meters, z up. Scenes carry an implicit infinite ground plane
at ``ground_z`` unless disabled, so flat synthetic cities need no terrain mesh.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

GROUND_ID = -1  # pseudo triangle id of the implicit ground plane
NO_HIT = -2
EPS_HIT = 1e-4  # m, lower bound on hit distance (self-intersection guard)


@dataclass(frozen=True)
class Material:
    """Electromagnetic surface description used by the reflection model."""

    name: str
    rel_permittivity: float  # dimensionless, >= 1
    conductivity: float      # S/m, >= 0
    perfect_conductor: bool = False

    def __post_init__(self):
        if self.rel_permittivity < 1.0:
            raise ValueError(f"rel_permittivity must be >= 1, got {self.rel_permittivity}")
        if self.conductivity < 0.0:
            raise ValueError(f"conductivity must be >= 0, got {self.conductivity}")


# ITU-R P.2040-style constants around 2 GHz; metal is an ideal reflector.
MATERIAL_LIBRARY = {
    "marble": Material("marble", 7.07, 0.0055),
    "metal": Material("metal", 1.0, 0.0, perfect_conductor=True),
    "concrete": Material("concrete", 5.24, 0.0462),
}
DEFAULT_MATERIAL = "concrete"


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray  # unit vector

    def __post_init__(self):
        n = float(np.linalg.norm(self.direction))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, |d|={n}")


@dataclass(frozen=True)
class Hit:
    triangle: int    # triangle index, or GROUND_ID
    t: float         # m along the ray
    point: np.ndarray
    normal: np.ndarray  # unit, oriented toward the ray origin side


@dataclass
class Footprint:
    polygon: np.ndarray  # (K, 2) vertices, simple polygon
    height: float


@dataclass
class Scene:
    """Immutable-after-construction triangle soup plus planning metadata.

    ``triangles`` is (T, 3, 3): per-triangle vertex coordinates. Vertices are
    stored expanded (not index-shared) so that save/load round trips are
    bitwise exact.
    """

    triangles: np.ndarray
    material_index: np.ndarray          # (T,) into materials
    materials: list[Material]
    groups: list[str]                   # per-triangle group name (OBJ `g`)
    footprints: list[Footprint] = field(default_factory=list)
    bounds: np.ndarray = None
    ground_z: float = 0.0
    has_ground: bool = True
    ground_material: str = DEFAULT_MATERIAL
    terrain: object = None              # optional callable (x, y) -> z

    def __post_init__(self):
        self.triangles = np.asarray(self.triangles, dtype=np.float64).reshape(-1, 3, 3)
        self.material_index = np.asarray(self.material_index, dtype=np.int64).reshape(-1)
        t = len(self.triangles)
        if len(self.material_index) != t or len(self.groups) != t:
            raise ValueError("triangles, material_index and groups must align")
        if t and (self.material_index.min() < 0 or self.material_index.max() >= len(self.materials)):
            raise ValueError("material index out of range")
        if self.bounds is None:
            if t:
                lo = self.triangles.reshape(-1, 3).min(axis=0)
                hi = self.triangles.reshape(-1, 3).max(axis=0)
            else:
                lo = hi = np.zeros(3)
            self.bounds = np.stack([lo, hi])
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(2, 3)
        self._edges1 = self.triangles[:, 1] - self.triangles[:, 0]
        self._edges2 = self.triangles[:, 2] - self.triangles[:, 0]
        n = np.cross(self._edges1, self._edges2)
        ln = np.linalg.norm(n, axis=1)
        ln[ln == 0] = 1.0
        self._normals = n / ln[:, None]
        self._accel = None

    # -- queries ----------------------------------------------------------

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def accel(self) -> "AccelIndex":
        if self._accel is None:
            self._accel = AccelIndex(self)
        return self._accel

    def ground_elevation(self, x: float, y: float) -> float:
        if self.terrain is not None:
            return float(self.terrain(x, y))
        return self.ground_z

    def material_of(self, triangle_id: int) -> Material:
        if triangle_id == GROUND_ID:
            return MATERIAL_LIBRARY.get(self.ground_material) or self.materials[0]
        return self.materials[int(self.material_index[triangle_id])]

    def triangle_normal(self, triangle_id: int) -> np.ndarray:
        if triangle_id == GROUND_ID:
            return np.array([0.0, 0.0, 1.0])
        return self._normals[triangle_id]

    def equivalent_to(self, other: "Scene") -> bool:
        """Exact structural equality (used by round-trip checks)."""
        if self.n_triangles != other.n_triangles or len(self.footprints) != len(other.footprints):
            return False
        if not (np.array_equal(self.triangles, other.triangles)
                and np.array_equal(self.material_index, other.material_index)
                and self.groups == other.groups
                and np.array_equal(self.bounds, other.bounds)):
            return False
        if [m.name for m in self.materials] != [m.name for m in other.materials]:
            return False
        for fa, fb in zip(self.footprints, other.footprints):
            if fa.height != fb.height or not np.array_equal(fa.polygon, fb.polygon):
                return False
        return (self.ground_z == other.ground_z and self.has_ground == other.has_ground
                and self.ground_material == other.ground_material)


# -- intersection ----------------------------------------------------------

def _moller_trumbore(origins, dirs, v0, e1, e2):
    """Batched ray/triangle test: (N,3) rays against (T,3) triangle data.

    Returns (N, T) hit parameter t, +inf where there is no hit. Works on
    per-component (N,1)x(1,T) broadcasts to avoid (N,T,3) temporaries.
    """
    dx, dy, dz = (dirs[:, k:k + 1] for k in range(3))
    e1x, e1y, e1z = (e1[None, :, k] for k in range(3))
    e2x, e2y, e2z = (e2[None, :, k] for k in range(3))
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    near_zero = np.abs(det) < 1e-12
    inv = 1.0 / np.where(near_zero, 1.0, det)
    tvx = origins[:, 0:1] - v0[None, :, 0]
    tvy = origins[:, 1:2] - v0[None, :, 1]
    tvz = origins[:, 2:3] - v0[None, :, 2]
    u = (tvx * px + tvy * py + tvz * pz) * inv
    qx = tvy * e1z - tvz * e1y
    qy = tvz * e1x - tvx * e1z
    qz = tvx * e1y - tvy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    ok = (~near_zero) & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > EPS_HIT)
    return np.where(ok, t, np.inf)


def intersect_batch(scene: Scene, origins, dirs, t_max=np.inf, chunk=8192):
    """Nearest hit for many rays at once (exhaustive triangle scan + ground).

    Returns (t, hit_id) arrays; hit_id is GROUND_ID for the implicit plane and
    NO_HIT where nothing is closer than t_max.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(origins)
    t_best = np.full(n, np.inf)
    id_best = np.full(n, NO_HIT, dtype=np.int64)
    tcount = scene.n_triangles
    v0 = scene.triangles[:, 0]
    for s in range(0, n, chunk):
        e = min(s + chunk, n)
        if tcount:
            tmat = _moller_trumbore(origins[s:e], dirs[s:e], v0, scene._edges1, scene._edges2)
            idx = np.argmin(tmat, axis=1)
            tt = tmat[np.arange(e - s), idx]
            t_best[s:e] = tt
            id_best[s:e] = np.where(np.isfinite(tt), idx, NO_HIT)
    if scene.has_ground:
        dz = dirs[:, 2]
        safe = np.where(np.abs(dz) < 1e-15, 1.0, dz)
        tg = (scene.ground_z - origins[:, 2]) / safe
        ok = (np.abs(dz) >= 1e-15) & (tg > EPS_HIT) & (tg < t_best)
        t_best = np.where(ok, tg, t_best)
        id_best = np.where(ok, GROUND_ID, id_best)
    beyond = t_best > t_max
    t_best[beyond] = np.inf
    id_best[beyond] = NO_HIT
    return t_best, id_best


def segments_clear_batch(scene: Scene, starts, ends, shrink: float = 1e-4) -> np.ndarray:
    """Occlusion test for many segments at once.

    Returns a bool array: True where the open segment (shrunk by ``shrink`` at
    both ends) meets no scene geometry, ground plane included.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    ends = np.atleast_2d(np.asarray(ends, dtype=np.float64))
    d = ends - starts
    length = np.linalg.norm(d, axis=1)
    safe_len = np.where(length == 0, 1.0, length)
    u = d / safe_len[:, None]
    origins = starts + u * shrink
    t_max = length - 2 * shrink
    clear = np.ones(len(starts), dtype=bool)
    live = t_max > 0
    if not live.any():
        return clear
    t_hit = np.full(len(starts), np.inf)
    if scene.n_triangles:
        tmat = _moller_trumbore(origins[live], u[live], scene.triangles[:, 0],
                                scene._edges1, scene._edges2)
        t_hit[live] = tmat.min(axis=1)
    if scene.has_ground:
        dz = u[:, 2]
        safe = np.where(np.abs(dz) < 1e-15, 1.0, dz)
        tg = (scene.ground_z - origins[:, 2]) / safe
        ok = (np.abs(dz) >= 1e-15) & (tg > EPS_HIT)
        t_hit = np.where(ok & (tg < t_hit), tg, t_hit)
    clear[live] = t_hit[live] > t_max[live]
    return clear


class AccelIndex:
    """Median-split BVH over scene triangles.

    Query results are identical to an exhaustive scan; the tree only prunes.
    """

    LEAF_SIZE = 8

    def __init__(self, scene: Scene):
        self.scene = scene
        t = scene.n_triangles
        self._lo = []
        self._hi = []
        self._left = []
        self._right = []
        self._items = []  # triangle ids per leaf; inner nodes store None
        if t:
            lo = scene.triangles.min(axis=1)
            hi = scene.triangles.max(axis=1)
            cent = scene.triangles.mean(axis=1)
            self._build(np.arange(t), lo, hi, cent)

    def _build(self, ids, lo, hi, cent) -> int:
        node = len(self._lo)
        self._lo.append(lo[ids].min(axis=0))
        self._hi.append(hi[ids].max(axis=0))
        self._left.append(-1)
        self._right.append(-1)
        self._items.append(None)
        if len(ids) <= self.LEAF_SIZE:
            self._items[node] = ids
            return node
        span = cent[ids].max(axis=0) - cent[ids].min(axis=0)
        axis = int(np.argmax(span))
        order = np.argsort(cent[ids, axis], kind="stable")
        half = len(ids) // 2
        left_ids, right_ids = ids[order[:half]], ids[order[half:]]
        if len(left_ids) == 0 or len(right_ids) == 0:
            self._items[node] = ids
            return node
        self._left[node] = self._build(left_ids, lo, hi, cent)
        self._right[node] = self._build(right_ids, lo, hi, cent)
        return node

    def _box_hit(self, node, o, inv_d, t_best):
        t0 = (self._lo[node] - o) * inv_d
        t1 = (self._hi[node] - o) * inv_d
        tn = np.minimum(t0, t1).max()
        tf = np.maximum(t0, t1).min()
        return tf >= max(tn, 0.0) and tn < t_best

    def intersect(self, origin, direction, t_max=np.inf):
        """Nearest (t, triangle_id) among mesh triangles, or (inf, NO_HIT)."""
        if not self._lo:
            return np.inf, NO_HIT
        o = np.asarray(origin, dtype=np.float64)
        d = np.asarray(direction, dtype=np.float64)
        with np.errstate(divide="ignore"):
            inv_d = np.where(d == 0.0, np.inf, 1.0 / d)
        best_t, best_id = np.inf, NO_HIT
        stack = [0]
        scene = self.scene
        while stack:
            node = stack.pop()
            if not self._box_hit(node, o, inv_d, min(best_t, t_max)):
                continue
            items = self._items[node]
            if items is None:
                stack.append(self._left[node])
                stack.append(self._right[node])
                continue
            tmat = _moller_trumbore(o[None, :], d[None, :],
                                    scene.triangles[items, 0],
                                    scene._edges1[items], scene._edges2[items])[0]
            k = int(np.argmin(tmat))
            if tmat[k] < best_t and tmat[k] <= t_max:
                best_t, best_id = float(tmat[k]), int(items[k])
        if best_t > t_max:
            return np.inf, NO_HIT
        return best_t, best_id


def intersect(scene_or_index, ray: Ray, t_max: float = np.inf):
    """Nearest hit of a single ray against scene geometry (incl. ground).

    Returns a Hit or None. The reported normal faces the ray origin side.
    """
    if t_max <= 0:
        raise ValueError("t_max must be > 0")
    index = scene_or_index if isinstance(scene_or_index, AccelIndex) else scene_or_index.accel
    scene = index.scene
    t, tid = index.intersect(ray.origin, ray.direction, t_max)
    if scene.has_ground:
        dz = ray.direction[2]
        if abs(dz) >= 1e-15:
            tg = (scene.ground_z - ray.origin[2]) / dz
            if EPS_HIT < tg <= t_max and tg < t:
                t, tid = tg, GROUND_ID
    if tid == NO_HIT:
        return None
    point = ray.origin + t * ray.direction
    normal = scene.triangle_normal(tid)
    if float(np.dot(normal, ray.direction)) > 0:
        normal = -normal
    return Hit(tid, float(t), point, normal)


# -- point containment ------------------------------------------------------

def point_in_polygon(polygon: np.ndarray, point) -> bool:
    """Even-odd crossing test; points on an edge count as inside."""
    px, py = float(point[0]), float(point[1])
    xs, ys = polygon[:, 0], polygon[:, 1]
    xn, yn = np.roll(xs, -1), np.roll(ys, -1)
    # edge hits
    dx, dy = xn - xs, yn - ys
    cross = (px - xs) * dy - (py - ys) * dx
    dot = (px - xs) * dx + (py - ys) * dy
    seg2 = dx * dx + dy * dy
    on_edge = (np.abs(cross) < 1e-12 * np.maximum(seg2, 1.0)) & (dot >= 0) & (dot <= seg2)
    if bool(on_edge.any()):
        return True
    crosses = ((ys > py) != (yn > py))
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = xs + (py - ys) * dx / np.where(dy == 0, 1.0, dy)
    return bool(((crosses) & (px < xc)).sum() % 2 == 1)


def is_outdoor(scene: Scene, point_2d) -> bool:
    """True iff the 2D point is not inside any building footprint.

    Falls back to a vertical ray cast against the mesh when the scene carries
    no footprint metadata (e.g. meshes loaded without a meta sidecar).
    """
    if scene.footprints:
        for fp in scene.footprints:
            if point_in_polygon(fp.polygon, point_2d):
                return False
        return True
    if scene.n_triangles == 0:
        return True
    zs = scene.bounds[1, 2] + 1.0
    origin = np.array([point_2d[0], point_2d[1], zs])
    down = np.array([0.0, 0.0, -1.0])
    _, tid = intersect_batch(scene, origin[None, :], down[None, :])
    return int(tid[0]) in (NO_HIT, GROUND_ID)


def sample_outdoor_ues(scene: Scene, count: int, ue_height: float, seed: int) -> np.ndarray:
    """Uniform outdoor positions, z = local ground + ue_height. (count, 3)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = scene.bounds[0, :2], scene.bounds[1, :2]
    if not np.all(hi > lo):
        # degenerate footprint: widen to a unit box so empty scenes still sample
        hi = lo + 1.0
    out = []
    budget = max(10_000, 200 * count)
    for _ in range(budget):
        p = rng.uniform(lo, hi)
        if is_outdoor(scene, p):
            out.append([p[0], p[1], scene.ground_elevation(p[0], p[1]) + ue_height])
            if len(out) == count:
                return np.array(out)
    raise RuntimeError(f"outdoor sampling exhausted {budget} attempts; scene too built-up")


# -- synthetic city ----------------------------------------------------------

def _box_triangles(x0, y0, x1, y1, z0, z1):
    """12 triangles of an axis-aligned box: 10 wall (sides+bottom), 2 roof."""
    a = [x0, y0, z0]; b = [x1, y0, z0]; c = [x1, y1, z0]; d = [x0, y1, z0]
    e = [x0, y0, z1]; f = [x1, y0, z1]; g = [x1, y1, z1]; h = [x0, y1, z1]
    walls = [
        (a, b, f), (a, f, e),      # south
        (b, c, g), (b, g, f),      # east
        (c, d, h), (c, h, g),      # north
        (d, a, e), (d, e, h),      # west
        (a, d, c), (a, c, b),      # bottom (faces down)
    ]
    roof = [(e, f, g), (e, g, h)]
    return np.array(walls, dtype=np.float64), np.array(roof, dtype=np.float64)


def generate_manhattan(blocks_x: int, blocks_y: int, block_w: float, street_w: float,
                       height_range, seed: int) -> Scene:
    """Axis-aligned grid city: blocks_x * blocks_y box buildings on street grid.

    Walls take the marble material and roofs metal; building heights draw
    uniformly from height_range. Deterministic for a fixed seed.
    """
    if blocks_x < 1 or blocks_y < 1 or block_w <= 0 or street_w <= 0:
        raise ValueError("grid dimensions must be positive")
    hmin, hmax = float(height_range[0]), float(height_range[1])
    if hmin <= 0 or hmax < hmin:
        raise ValueError("height_range must satisfy 0 < hmin <= hmax")
    rng = np.random.default_rng(seed)
    materials = [MATERIAL_LIBRARY["marble"], MATERIAL_LIBRARY["metal"]]
    tris, mat_idx, groups, feet = [], [], [], []
    for j in range(blocks_y):
        for i in range(blocks_x):
            x0 = street_w + i * (block_w + street_w)
            y0 = street_w + j * (block_w + street_w)
            h = float(rng.uniform(hmin, hmax))
            walls, roof = _box_triangles(x0, y0, x0 + block_w, y0 + block_w, 0.0, h)
            tris.append(walls); tris.append(roof)
            mat_idx += [0] * 10 + [1] * 2
            groups += ["walls"] * 10 + ["roofs"] * 2
            feet.append(Footprint(np.array([[x0, y0], [x0 + block_w, y0],
                                            [x0 + block_w, y0 + block_w], [x0, y0 + block_w]]), h))
    width_x = blocks_x * block_w + (blocks_x + 1) * street_w
    width_y = blocks_y * block_w + (blocks_y + 1) * street_w
    tri_arr = np.concatenate(tris) if tris else np.zeros((0, 3, 3))
    zmax = float(tri_arr[:, :, 2].max()) if len(tri_arr) else 0.0
    bounds = np.array([[0.0, 0.0, 0.0], [width_x, width_y, zmax]])
    return Scene(tri_arr, np.array(mat_idx), materials, groups, feet, bounds)


# -- OBJ subset IO -----------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def save_scene(scene: Scene, obj_path, material_map_path=None) -> None:
    """Write scene.obj + material map JSON (+ meta sidecar with footprints)."""
    obj_path = Path(obj_path)
    if material_map_path is None:
        material_map_path = obj_path.with_suffix(".materials.json")
    lines = []
    last_group = None
    vcount = 0
    for k in range(scene.n_triangles):
        g = scene.groups[k]
        if g != last_group:
            lines.append(f"g {g}")
            last_group = g
        for v in scene.triangles[k]:
            lines.append(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}")
        lines.append(f"f {vcount + 1} {vcount + 2} {vcount + 3}")
        vcount += 3
    obj_path.write_text("\n".join(lines) + "\n")
    group_mats = {}
    for k in range(scene.n_triangles):
        group_mats.setdefault(scene.groups[k], scene.materials[scene.material_index[k]].name)
    Path(material_map_path).write_text(json.dumps(group_mats, indent=2, sort_keys=True) + "\n")
    meta = {
        "ground_z": scene.ground_z,
        "has_ground": scene.has_ground,
        "ground_material": scene.ground_material,
        "bounds": scene.bounds.tolist(),
        "footprints": [{"polygon": fp.polygon.tolist(), "height": fp.height}
                       for fp in scene.footprints],
    }
    obj_path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_scene(path, material_map=None, strict: bool = False) -> Scene:
    """Read a triangulated-OBJ-subset scene plus its material map.

    Only v and f records are honored (vt/vn ignored); faces with more than
    three vertices are fan triangulated. Group names come from g/o records
    and resolve to materials through the JSON map; unmapped groups get the
    default material unless strict mode is on.
    """
    path = Path(path)
    mapping = {}
    if material_map is not None and Path(material_map).exists():
        mapping = json.loads(Path(material_map).read_text())
    verts = []
    tris, groups_per_tri = [], []
    group = "default"
    for ln, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tag, _, rest = line.partition(" ")
        if tag == "v":
            parts = rest.split()
            if len(parts) < 3:
                raise ValueError(f"{path}:{ln}: malformed vertex record")
            verts.append([float(parts[0]), float(parts[1]), float(parts[2])])
        elif tag == "f":
            idx = []
            for tokn in rest.split():
                head = tokn.split("/")[0]
                try:
                    i = int(head)
                except ValueError as exc:
                    raise ValueError(f"{path}:{ln}: malformed face record {tokn!r}") from exc
                if i < 0:
                    i = len(verts) + 1 + i
                if i < 1 or i > len(verts):
                    raise ValueError(f"{path}:{ln}: face index {i} out of range")
                idx.append(i - 1)
            if len(idx) < 3:
                raise ValueError(f"{path}:{ln}: non-triangulatable polygon (needs >= 3 vertices)")
            for k in range(1, len(idx) - 1):
                tris.append([verts[idx[0]], verts[idx[k]], verts[idx[k + 1]]])
                groups_per_tri.append(group)
        elif tag in ("g", "o"):
            group = rest.strip() or "default"
    material_names = []
    mat_index = []
    for g in groups_per_tri:
        name = mapping.get(g, DEFAULT_MATERIAL)
        if name not in MATERIAL_LIBRARY:
            if strict:
                raise ValueError(f"unknown material {name!r} for group {g!r}")
            name = DEFAULT_MATERIAL
        if name not in material_names:
            material_names.append(name)
        mat_index.append(material_names.index(name))
    if strict:
        for g, name in mapping.items():
            if name not in MATERIAL_LIBRARY:
                raise ValueError(f"unknown material {name!r} for group {g!r}")
    materials = [MATERIAL_LIBRARY[n] for n in material_names] or [MATERIAL_LIBRARY[DEFAULT_MATERIAL]]
    tri_arr = np.array(tris, dtype=np.float64) if tris else np.zeros((0, 3, 3))
    kwargs = {}
    meta_path = path.with_suffix(".meta.json")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        kwargs = {
            "ground_z": meta.get("ground_z", 0.0),
            "has_ground": meta.get("has_ground", True),
            "ground_material": meta.get("ground_material", DEFAULT_MATERIAL),
            "bounds": np.array(meta["bounds"]) if "bounds" in meta else None,
            "footprints": [Footprint(np.array(f["polygon"], dtype=np.float64), float(f["height"]))
                           for f in meta.get("footprints", [])],
        }
    return Scene(tri_arr, np.array(mat_index, dtype=np.int64), materials,
                 groups_per_tri, **kwargs)
