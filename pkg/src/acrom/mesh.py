"""Triangular meshes of the offset-cylinder domain.

The domain is the disk of radius ``r1`` centered at the origin with a
smaller disk of radius ``r2`` centered at ``(c1, c2)`` removed.  Both
circles carry no-slip walls, so every boundary edge is tagged with the
cylinder it lies on.

The generator is fully deterministic: it lays concentric rings of points
that blend from the inner circle to the outer circle and stitches
consecutive rings with a shortest-diagonal zipper.  A geometric grading
refines one band of rings next to the inner cylinder.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class MeshError(Exception):
    """Base class for mesh construction and validation failures."""


class GeometryError(MeshError):
    """Requested domain parameters do not describe a valid annulus."""


class ResolutionError(MeshError):
    """Target element size cannot resolve the inner cylinder."""


class MeshFormatError(MeshError):
    """Mesh file is truncated, malformed, or of an unsupported version."""


class TopologyError(MeshError):
    """Boundary loop queries met an inconsistent edge structure."""


class BoundaryTag(enum.IntEnum):
    OUTER_CYLINDER = 0
    INNER_CYLINDER = 1


_SNAP_TOL = 1e-8
MESH_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Mesh:
    """Conforming triangulation with tagged boundary edges.

    vertices : (n_v, 2) float array
    triangles : (n_t, 3) int array, positively oriented
    boundary_edges : (n_b, 2) int array of vertex pairs
    boundary_tags : (n_b,) int array of BoundaryTag values
    geometry : (r1, r2, c1, c2) when generated from circles, else None
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    geometry: tuple[float, float, float, float] | None = None
    _areas: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "boundary_edges", np.ascontiguousarray(self.boundary_edges, dtype=np.int64))
        object.__setattr__(self, "boundary_tags", np.ascontiguousarray(self.boundary_tags, dtype=np.int64))
        object.__setattr__(self, "_areas", self._signed_areas())
        self.validate()

    # -- basic metrics ------------------------------------------------

    def _signed_areas(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        d1 = v[t[:, 1]] - v[t[:, 0]]
        d2 = v[t[:, 2]] - v[t[:, 0]]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self._areas

    @property
    def total_area(self) -> float:
        return float(self._areas.sum())

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def max_diameter(self) -> float:
        v = self.vertices
        t = self.triangles
        m = 0.0
        for a, b in ((0, 1), (1, 2), (2, 0)):
            e = np.linalg.norm(v[t[:, a]] - v[t[:, b]], axis=1)
            m = max(m, float(e.max()))
        return m

    # -- validation ---------------------------------------------------

    def validate(self) -> None:
        """Check all structural invariants, raising MeshError on failure."""
        if self.triangles.size and self.triangles.max() >= self.n_vertices:
            raise MeshFormatError("triangle vertex index out of range")
        if np.any(self._areas <= 0.0):
            bad = int(np.argmax(self._areas <= 0.0))
            raise MeshError(f"triangle {bad} has non-positive signed area {self._areas[bad]:.3e}")

        # Conformity: each undirected edge used by at most two triangles,
        # and with opposite orientations when shared.
        directed = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (int(a), int(b))
                if key in directed:
                    raise MeshError(f"directed edge {key} repeated: inconsistent orientation")
                directed[key] = True
        boundary = set()
        for (a, b) in directed:
            if (b, a) not in directed:
                boundary.add((min(a, b), max(a, b)))

        listed = {}
        for (a, b), tag in zip(self.boundary_edges, self.boundary_tags):
            key = (int(min(a, b)), int(max(a, b)))
            if key in listed:
                raise MeshError(f"boundary edge {key} listed twice")
            listed[key] = int(tag)
        if set(listed) != boundary:
            missing = boundary - set(listed)
            extra = set(listed) - boundary
            raise MeshError(
                f"boundary edge list mismatch: {len(missing)} untagged, {len(extra)} not on boundary"
            )

        if self.geometry is not None:
            r1, r2, c1, c2 = self.geometry
            for (a, b), tag in listed.items():
                for vi in (a, b):
                    x, y = self.vertices[vi]
                    if tag == BoundaryTag.OUTER_CYLINDER:
                        dev = abs(math.hypot(x, y) - r1)
                    else:
                        dev = abs(math.hypot(x - c1, y - c2) - r2)
                    if dev > _SNAP_TOL:
                        raise MeshError(
                            f"boundary vertex {vi} off its circle by {dev:.3e} (tag {BoundaryTag(tag).name})"
                        )

    def boundary_vertex_deviation(self) -> float:
        """Max distance of tagged boundary vertices to their circles."""
        if self.geometry is None:
            return 0.0
        r1, r2, c1, c2 = self.geometry
        dev = 0.0
        for (a, b), tag in zip(self.boundary_edges, self.boundary_tags):
            for vi in (int(a), int(b)):
                x, y = self.vertices[vi]
                if tag == BoundaryTag.OUTER_CYLINDER:
                    dev = max(dev, abs(math.hypot(x, y) - r1))
                else:
                    dev = max(dev, abs(math.hypot(x - c1, y - c2) - r2))
        return dev


# ---------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------


def _ring_points(center: np.ndarray, radius: float, n: int, stagger: float) -> np.ndarray:
    theta = 2.0 * math.pi * (np.arange(n) + stagger) / n
    return center[None, :] + radius * np.column_stack([np.cos(theta), np.sin(theta)])


def _zip_rings(inner_idx, inner_ang, outer_idx, outer_ang, triangles):
    """Stitch two rings of vertices into a strip of triangles.

    Both rings are ordered counterclockwise by their own angular
    parameter.  The walk merges the two angle sequences so each triangle
    connects angularly-close vertices; triangles come out positively
    oriented (inner vertex, outer vertex, advanced vertex).
    """
    na, nb = len(inner_idx), len(outer_idx)
    base = inner_ang[0]
    a_seq = np.mod(inner_ang - base, 2.0 * math.pi)  # increasing, a_seq[0] = 0
    rel = np.mod(outer_ang - base, 2.0 * math.pi)
    b_order = np.argsort(rel, kind="stable")  # rotation of the outer ring
    b_seq = rel[b_order]
    a_seq = np.concatenate([a_seq, [2.0 * math.pi]])
    b_seq = np.concatenate([b_seq, [b_seq[0] + 2.0 * math.pi]])

    i = j = 0
    while i < na or j < nb:
        if j == nb or (i < na and a_seq[i + 1] <= b_seq[j + 1]):
            triangles.append(
                (inner_idx[i % na], outer_idx[b_order[j % nb]], inner_idx[(i + 1) % na])
            )
            i += 1
        else:
            triangles.append(
                (inner_idx[i % na], outer_idx[b_order[j % nb]], outer_idx[b_order[(j + 1) % nb]])
            )
            j += 1


def generate_offset_cylinder_mesh(
    r1: float, r2: float, c1: float, c2: float, target_h: float
) -> Mesh:
    """Mesh the region between an outer circle and an offset inner circle.

    Parameters are the outer radius, inner radius, inner center, and the
    target element size.  Boundary vertices land exactly on the circles,
    the triangulation is conforming with positive orientation, and the
    maximum triangle diameter stays below ``1.5 * target_h``.
    """
    if r2 <= 0.0:
        raise GeometryError("inner radius must be positive")
    if target_h <= 0.0:
        raise GeometryError("target_h must be positive")
    offset = math.hypot(c1, c2)
    if r1 <= r2 + offset:
        raise GeometryError(
            f"inner disk (r2={r2}, center offset {offset:.3g}) is not strictly inside the outer circle (r1={r1})"
        )
    if target_h > r2:
        raise ResolutionError(
            f"target_h={target_h} exceeds inner radius {r2}: inner cylinder unresolvable"
        )

    center = np.array([c1, c2])
    gap = r1 - r2  # radial budget of the ring interpolation
    # Safety factor absorbs zipper diagonals and the angular shear of the
    # blended rings so the 1.5*target_h diameter bound holds.
    h_cap = 0.85 * target_h
    h_fine = 0.5 * h_cap  # refinement band next to the inner wall
    band = 3.0 * target_h

    # March normalized stations s in [0, 1]; ring s blends center and radius
    # linearly from the inner circle (s=0) to the outer circle (s=1).  The
    # physical distance between consecutive rings varies with angle by up to
    # (gap + offset) per unit s, which bounds the radial edge length.  The
    # ladder is rescaled onto [0, 1] afterwards, which only shrinks steps.
    stretch = gap + offset
    stations = [0.0]
    while stations[-1] < 1.0:
        d_phys = stations[-1] * gap  # distance from the inner wall, mid side
        step = h_fine + (h_cap - h_fine) * min(1.0, d_phys / band)
        stations.append(stations[-1] + step / stretch)
    stations = [s / stations[-1] for s in stations]

    vertices: list[np.ndarray] = []
    ring_index: list[np.ndarray] = []
    ring_angle: list[np.ndarray] = []
    for k, s in enumerate(stations):
        c = (1.0 - s) * center
        rho = (1.0 - s) * r2 + s * r1
        d_phys = s * gap
        spacing = h_fine + (h_cap - h_fine) * min(1.0, d_phys / band)
        n = max(12, int(math.ceil(2.0 * math.pi * rho / spacing)))
        pts = _ring_points(c, rho, n, stagger=0.5 * (k % 2))
        start = sum(len(v) for v in vertices)
        vertices.append(pts)
        ring_index.append(np.arange(start, start + n))
        ring_angle.append(2.0 * math.pi * (np.arange(n) + 0.5 * (k % 2)) / n)

    verts = np.vstack(vertices)
    triangles: list[tuple[int, int, int]] = []
    for k in range(len(stations) - 1):
        _zip_rings(ring_index[k], ring_angle[k], ring_index[k + 1], ring_angle[k + 1], triangles)

    tri = np.array(triangles, dtype=np.int64)

    def ring_edges(idx, tag):
        n = len(idx)
        e = np.column_stack([idx, np.roll(idx, -1)])
        return e, np.full(n, int(tag), dtype=np.int64)

    e_in, t_in = ring_edges(ring_index[0], BoundaryTag.INNER_CYLINDER)
    e_out, t_out = ring_edges(ring_index[-1], BoundaryTag.OUTER_CYLINDER)
    b_edges = np.vstack([e_in, e_out])
    b_tags = np.concatenate([t_in, t_out])

    mesh = Mesh(verts, tri, b_edges, b_tags, geometry=(r1, r2, c1, c2))
    if mesh.max_diameter() > 1.5 * target_h:
        raise MeshError(
            f"generated mesh violates diameter bound: {mesh.max_diameter():.4g} > 1.5*{target_h}"
        )
    return mesh


# ---------------------------------------------------------------------
# persistence (plain text, versioned)
# ---------------------------------------------------------------------


def save_mesh(mesh: Mesh, path) -> None:
    """Write a mesh as a line-oriented text file (diff-able, versioned)."""
    lines = [f"acrom-mesh {MESH_FORMAT_VERSION}"]
    if mesh.geometry is not None:
        lines.append("geometry " + " ".join(repr(float(g)) for g in mesh.geometry))
    lines.append(f"vertices {mesh.n_vertices}")
    for x, y in mesh.vertices:
        lines.append(f"{float(x)!r} {float(y)!r}")
    lines.append(f"triangles {mesh.n_triangles}")
    for a, b, c in mesh.triangles:
        lines.append(f"{a} {b} {c}")
    lines.append(f"boundary_edges {len(mesh.boundary_edges)}")
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        lines.append(f"{a} {b} {BoundaryTag(int(tag)).name}")
    lines.append("end")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    """Read a mesh file written by save_mesh; validates all invariants."""
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    lines = [ln for ln in lines if ln.strip()]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError(f"{path}: truncated mesh file")
        ln = lines[pos]
        pos += 1
        return ln

    head = take().split()
    if len(head) != 2 or head[0] != "acrom-mesh":
        raise MeshFormatError(f"{path}: not an acrom mesh file")
    if int(head[1]) != MESH_FORMAT_VERSION:
        raise MeshFormatError(f"{path}: unsupported mesh format version {head[1]}")

    geometry = None
    ln = take()
    if ln.startswith("geometry"):
        parts = ln.split()
        geometry = tuple(float(p) for p in parts[1:5])
        ln = take()

    def expect_count(ln, name):
        parts = ln.split()
        if len(parts) != 2 or parts[0] != name:
            raise MeshFormatError(f"{path}: expected '{name} <count>', found {ln!r}")
        return int(parts[1])

    nv = expect_count(ln, "vertices")
    verts = np.empty((nv, 2))
    for i in range(nv):
        x, y = take().split()
        verts[i] = (float(x), float(y))

    nt = expect_count(take(), "triangles")
    tris = np.empty((nt, 3), dtype=np.int64)
    for i in range(nt):
        tris[i] = [int(v) for v in take().split()]

    nb = expect_count(take(), "boundary_edges")
    edges = np.empty((nb, 2), dtype=np.int64)
    tags = np.empty(nb, dtype=np.int64)
    for i in range(nb):
        a, b, tag = take().split()
        edges[i] = (int(a), int(b))
        tags[i] = BoundaryTag[tag]

    if take() != "end":
        raise MeshFormatError(f"{path}: missing end marker (truncated?)")
    return Mesh(verts, tris, edges, tags, geometry=geometry)


# ---------------------------------------------------------------------
# boundary queries
# ---------------------------------------------------------------------


def inner_boundary_edges(mesh: Mesh) -> np.ndarray:
    """Ordered inner-cylinder boundary loop as (n, 2) directed vertex pairs.

    The loop is a single closed cycle oriented counterclockwise about the
    inner-cylinder center; TopologyError otherwise.
    """
    sel = mesh.boundary_tags == BoundaryTag.INNER_CYLINDER
    edges = mesh.boundary_edges[sel]
    if len(edges) == 0:
        raise TopologyError("mesh has no edges tagged INNER_CYLINDER")

    adj: dict[int, list[int]] = {}
    for a, b in edges:
        adj.setdefault(int(a), []).append(int(b))
        adj.setdefault(int(b), []).append(int(a))
    for v, nb in adj.items():
        if len(nb) != 2:
            raise TopologyError(f"inner boundary is not a simple loop at vertex {v}")

    start = int(edges[0, 0])
    loop = [start]
    prev, cur = None, start
    while True:
        nxt = [w for w in adj[cur] if w != prev]
        if not nxt:
            raise TopologyError("inner boundary chain terminated early")
        prev, cur = cur, nxt[0]
        if cur == start:
            break
        loop.append(cur)
        if len(loop) > len(edges):
            raise TopologyError("inner boundary has more than one component")
    if len(loop) != len(edges):
        raise TopologyError("inner boundary has more than one component")

    pts = mesh.vertices[loop]
    if mesh.geometry is not None:
        center = np.array(mesh.geometry[2:4])
    else:
        center = pts.mean(axis=0)
    rel = pts - center
    nxt = np.roll(rel, -1, axis=0)
    winding = 0.5 * np.sum(rel[:, 0] * nxt[:, 1] - rel[:, 1] * nxt[:, 0])
    if winding < 0:
        loop = loop[::-1]
    return np.column_stack([loop, np.roll(loop, -1)]).astype(np.int64)
