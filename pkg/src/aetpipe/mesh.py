"""Triangulations of the unit disk with marked boundary arcs.

The disk is meshed by concentric rings: ring k (radius k/n) carries 6k
vertices, so resolution n gives 1 + 3n(n+1) vertices and 6n^2 triangles.
The accessible boundary arc Gamma_1 is marked per vertex and per edge;
everything else is Gamma_2 (grounded).  Meshes are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

RADIUS_TOL = 1e-9
DUPLICATE_TOL = 1e-12


class MeshError(ValueError):
    """Invalid mesh parameters or a broken mesh invariant."""


@dataclass
class TriMesh:
    """Triangulated planar domain (unit-disk scale).

    vertices       : (V, 2) float array
    triangles      : (T, 3) int array, counterclockwise
    boundary_edges : (B, 2) int array, endpoints ordered along the circle
    boundary_t     : (B,) arc parameter of each edge midpoint in [0, 2pi)
    gamma1_edge    : (B,) bool, edge lies on Gamma_1
    gamma1_mask    : (V,) bool, boundary vertex lies on the closed Gamma_1 arc
    gamma1_arc     : (start, span) in radians when built from a view config,
                     None for meshes loaded from file
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_t: np.ndarray
    gamma1_edge: np.ndarray
    gamma1_mask: np.ndarray
    gamma1_arc: tuple | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.boundary_edges = np.ascontiguousarray(self.boundary_edges, dtype=np.int64)
        self.boundary_t = np.ascontiguousarray(self.boundary_t, dtype=float)
        self.gamma1_edge = np.ascontiguousarray(self.gamma1_edge, dtype=bool)
        self.gamma1_mask = np.ascontiguousarray(self.gamma1_mask, dtype=bool)
        for arr in (self.vertices, self.triangles, self.boundary_edges,
                    self.boundary_t, self.gamma1_edge, self.gamma1_mask):
            arr.setflags(write=False)

    @property
    def vertex_count(self) -> int:
        return self.vertices.shape[0]

    @property
    def triangle_count(self) -> int:
        return self.triangles.shape[0]

    def areas(self) -> np.ndarray:
        """Signed triangle areas (positive for CCW triangles)."""
        if "areas" not in self._cache:
            p = self.vertices[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._cache["areas"] = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._cache["areas"]

    def area(self) -> float:
        return float(self.areas().sum())

    def boundary_vertex_mask(self) -> np.ndarray:
        if "bmask" not in self._cache:
            mask = np.zeros(self.vertex_count, dtype=bool)
            mask[self.boundary_edges.ravel()] = True
            self._cache["bmask"] = mask
        return self._cache["bmask"]

    def boundary_vertices(self) -> np.ndarray:
        """Boundary vertex indices sorted by arc parameter."""
        if "bverts" not in self._cache:
            idx = np.flatnonzero(self.boundary_vertex_mask())
            t = self.vertex_arc_params(idx)
            self._cache["bverts"] = idx[np.argsort(t, kind="stable")]
        return self._cache["bverts"]

    def interior_vertices(self) -> np.ndarray:
        if "iverts" not in self._cache:
            self._cache["iverts"] = np.flatnonzero(~self.boundary_vertex_mask())
        return self._cache["iverts"]

    def vertex_arc_params(self, idx) -> np.ndarray:
        """Arc parameters atan2(y, x) mod 2pi of the given vertices."""
        p = self.vertices[idx]
        return np.mod(np.arctan2(p[:, 1], p[:, 0]), TWO_PI)

    def min_angle_deg(self) -> float:
        p = self.vertices[self.triangles]
        angles = []
        for i in range(3):
            a = p[:, (i + 1) % 3] - p[:, i]
            b = p[:, (i + 2) % 3] - p[:, i]
            cosang = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
            angles.append(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))
        return float(np.min(angles))

    def gamma1_arc_length(self) -> float:
        """Total length of the edges marked Gamma_1."""
        e = self.boundary_edges[self.gamma1_edge]
        d = self.vertices[e[:, 0]] - self.vertices[e[:, 1]]
        return float(np.linalg.norm(d, axis=1).sum())


@dataclass
class NestedMeshPair:
    """Coarse mesh plus its uniform refinement; coarse vertex i sits at
    fine vertex injection[i] with identical coordinates."""

    coarse: TriMesh
    fine: TriMesh
    injection: np.ndarray


def _in_closed_arc(t, start, span, tol=1e-12):
    """True where arc parameter t lies in the closed arc [start, start+span]."""
    if span >= TWO_PI - 1e-15:
        return np.ones_like(np.asarray(t, dtype=float), dtype=bool)
    rel = np.mod(np.asarray(t, dtype=float) - start, TWO_PI)
    return rel <= span + tol


def _orient_ccw(vertices, triangles):
    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    signed = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    flip = signed < 0
    if np.any(flip):
        triangles = triangles.copy()
        triangles[flip, 1], triangles[flip, 2] = (
            triangles[flip, 2].copy(), triangles[flip, 1].copy())
    return triangles


def _mark_gamma1(vertex_t, edges, edge_endpoint_in, arc):
    """Vertex rule: arc parameter in the closed arc.  Edge rule: both endpoints in."""
    start, span = arc
    vert_in = _in_closed_arc(vertex_t, start, span)
    edge_in = edge_endpoint_in[:, 0] & edge_endpoint_in[:, 1]
    return vert_in, edge_in


def build_disk_mesh(target_h: float, view_fraction: float = 1.0,
                    view_offset: float = 0.0) -> TriMesh:
    """Triangulate the unit disk at resolution target_h with Gamma_1 marked.

    Gamma_1 is the closed arc [view_offset, view_offset + 2pi*view_fraction].
    Construction is deterministic: same arguments, same mesh.
    """
    if not (0.0 < target_h <= 0.5):
        raise MeshError(f"target_h must be in (0, 0.5], got {target_h}")
    if not (0.0 < view_fraction <= 1.0):
        raise MeshError(f"view_fraction must be in (0, 1], got {view_fraction}")
    if not np.isfinite(view_offset):
        raise MeshError(f"view_offset must be finite, got {view_offset}")
    view_offset = float(np.mod(view_offset, TWO_PI))

    n = max(2, int(round(1.0 / target_h)))

    verts = [np.zeros((1, 2))]
    ring_start = [0, 1]
    for k in range(1, n + 1):
        ang = TWO_PI * np.arange(6 * k) / (6 * k)
        r = k / n
        verts.append(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
        ring_start.append(ring_start[-1] + 6 * k)
    vertices = np.vstack(verts)

    tris = []
    for j in range(6):
        tris.append((0, 1 + j, 1 + (j + 1) % 6))
    for k in range(1, n):
        ni, no = 6 * k, 6 * (k + 1)
        si, so = ring_start[k], ring_start[k + 1]
        i = j = 0
        while i < ni or j < no:
            # advance whichever ring has the nearer next node (by turn fraction)
            if j < no and (i == ni or (j + 1) / no <= (i + 1) / ni):
                tris.append((si + i % ni, so + j % no, so + (j + 1) % no))
                j += 1
            else:
                tris.append((si + i % ni, so + j % no, si + (i + 1) % ni))
                i += 1
    triangles = _orient_ccw(vertices, np.asarray(tris, dtype=np.int64))

    nb = 6 * n
    sb = ring_start[n]
    b0 = sb + np.arange(nb)
    b1 = sb + (np.arange(nb) + 1) % nb
    boundary_edges = np.column_stack([b0, b1])
    edge_t = TWO_PI * (np.arange(nb) + 0.5) / nb

    arc = (view_offset, TWO_PI * view_fraction)
    vert_t_all = TWO_PI * np.arange(nb) / nb
    vert_in = _in_closed_arc(vert_t_all, *arc)
    edge_in = vert_in & np.roll(vert_in, -1)

    gamma1_mask = np.zeros(vertices.shape[0], dtype=bool)
    gamma1_mask[sb:sb + nb] = vert_in

    mesh = TriMesh(vertices, triangles, boundary_edges, edge_t,
                   edge_in, gamma1_mask, gamma1_arc=arc)
    validate_mesh(mesh)
    return mesh


def refine_nested(coarse: TriMesh) -> NestedMeshPair:
    """Uniformly refine: each triangle splits into 4 at edge midpoints,
    boundary midpoints projected out to the unit circle."""
    V = coarse.vertex_count
    tris = coarse.triangles

    edge_index: dict[tuple, int] = {}
    midpoints = []

    boundary_set = {tuple(sorted(e)) for e in coarse.boundary_edges.tolist()}

    def midpoint(a: int, b: int) -> int:
        key = (a, b) if a < b else (b, a)
        if key in edge_index:
            return edge_index[key]
        p = 0.5 * (coarse.vertices[a] + coarse.vertices[b])
        if key in boundary_set:
            p = p / np.linalg.norm(p)
        idx = V + len(midpoints)
        midpoints.append(p)
        edge_index[key] = idx
        return idx

    fine_tris = []
    for a, b, c in tris.tolist():
        mab, mbc, mca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        fine_tris.extend([(a, mab, mca), (mab, b, mbc),
                          (mca, mbc, c), (mab, mbc, mca)])

    fine_vertices = np.vstack([coarse.vertices, np.asarray(midpoints)])
    fine_triangles = _orient_ccw(fine_vertices, np.asarray(fine_tris, dtype=np.int64))

    fine_bedges = []
    parent_flag = []
    for (a, b), flag in zip(coarse.boundary_edges.tolist(),
                            coarse.gamma1_edge.tolist()):
        m = edge_index[(a, b) if a < b else (b, a)]
        fine_bedges.extend([(a, m), (m, b)])
        parent_flag.extend([flag, flag])
    fine_bedges = np.asarray(fine_bedges, dtype=np.int64)

    pts = fine_vertices[fine_bedges]
    mids = 0.5 * (pts[:, 0] + pts[:, 1])
    fine_t = np.mod(np.arctan2(mids[:, 1], mids[:, 0]), TWO_PI)
    order = np.argsort(fine_t, kind="stable")
    fine_bedges = fine_bedges[order]
    fine_t = fine_t[order]
    parent_flag = np.asarray(parent_flag, dtype=bool)[order]

    gamma1_mask = np.zeros(fine_vertices.shape[0], dtype=bool)
    if coarse.gamma1_arc is not None:
        bidx = np.unique(fine_bedges)
        tvert = np.mod(np.arctan2(fine_vertices[bidx, 1],
                                  fine_vertices[bidx, 0]), TWO_PI)
        vin = _in_closed_arc(tvert, *coarse.gamma1_arc)
        gamma1_mask[bidx] = vin
        edge_flags = gamma1_mask[fine_bedges[:, 0]] & gamma1_mask[fine_bedges[:, 1]]
    else:
        edge_flags = parent_flag
        gamma1_mask[fine_bedges[edge_flags].ravel()] = True
        gamma1_mask[coarse.gamma1_mask.nonzero()[0]] = True

    fine = TriMesh(fine_vertices, fine_triangles, fine_bedges, fine_t,
                   edge_flags, gamma1_mask, gamma1_arc=coarse.gamma1_arc)
    validate_mesh(fine)
    return NestedMeshPair(coarse=coarse, fine=fine, injection=np.arange(V))


def validate_mesh(mesh: TriMesh) -> None:
    """Check the TriMesh invariants; raise MeshError on violation."""
    if np.any(mesh.areas() <= 0):
        bad = int(np.argmin(mesh.areas()))
        raise MeshError(f"non-positive triangle area at triangle {bad}")

    b = np.unique(mesh.boundary_edges)
    radii = np.linalg.norm(mesh.vertices[b], axis=1)
    if np.any(np.abs(radii - 1.0) > RADIUS_TOL):
        raise MeshError("boundary vertex off the unit circle beyond tolerance")

    order = np.lexsort((mesh.vertices[:, 1], mesh.vertices[:, 0]))
    sv = mesh.vertices[order]
    close = np.all(np.abs(np.diff(sv, axis=0)) <= DUPLICATE_TOL, axis=1)
    if np.any(close):
        raise MeshError("duplicate vertices within tolerance")

    # Gamma_1 edges must form a single contiguous run along the circle
    flags = mesh.gamma1_edge
    if flags.any() and not flags.all():
        transitions = int(np.sum(flags != np.roll(flags, 1)))
        if transitions != 2:
            raise MeshError(f"Gamma_1 is not a single contiguous arc "
                            f"({transitions} transitions)")


# ---------------------------------------------------------------------------
# Text format: "aetmesh v1"

def save_mesh(mesh: TriMesh, path) -> None:
    lines = ["aetmesh v1"]
    lines.append(f"vertices {mesh.vertex_count}")
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r}")
    lines.append(f"triangles {mesh.triangle_count}")
    for i, j, k in mesh.triangles:
        lines.append(f"{i} {j} {k}")
    lines.append(f"boundary {len(mesh.boundary_edges)}")
    for (i, j), t, g in zip(mesh.boundary_edges, mesh.boundary_t,
                            mesh.gamma1_edge):
        lines.append(f"{i} {j} {float(t)!r} {int(g)}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_mesh(path) -> TriMesh:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if lines[0] != "aetmesh v1":
        raise MeshError(f"unsupported mesh header: {lines[0]!r}")
    pos = 1

    def expect(keyword):
        nonlocal pos
        tag, count = lines[pos].split()
        if tag != keyword:
            raise MeshError(f"expected '{keyword}' section, got {tag!r}")
        pos += 1
        return int(count)

    nv = expect("vertices")
    vertices = np.array([[float(v) for v in lines[pos + i].split()]
                         for i in range(nv)])
    pos += nv
    nt = expect("triangles")
    triangles = np.array([[int(v) for v in lines[pos + i].split()]
                          for i in range(nt)], dtype=np.int64)
    pos += nt
    nb = expect("boundary")
    bedges, bt, flags = [], [], []
    for i in range(nb):
        a, b_, t, g = lines[pos + i].split()
        bedges.append((int(a), int(b_)))
        bt.append(float(t))
        flags.append(bool(int(g)))
    bedges = np.asarray(bedges, dtype=np.int64)
    flags = np.asarray(flags, dtype=bool)

    gamma1_mask = np.zeros(nv, dtype=bool)
    gamma1_mask[bedges[flags].ravel()] = True

    return TriMesh(vertices, triangles, bedges, np.asarray(bt), flags,
                   gamma1_mask, gamma1_arc=None)
