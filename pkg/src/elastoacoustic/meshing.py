"""Conforming triangulations of coupled solid/fluid vessel geometries.

The mesh carries per-triangle subdomain tags (solid or fluid) and per-edge
boundary tags.  Refinement is newest-vertex bisection with conformity
closure; the refinement edge of every generated triangle is tracked so that
repeated bisection stays shape regular.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

# subdomain tags
SOLID = 1
FLUID = 2

# edge tags
INTERIOR = 0
GAMMA_D = 1
GAMMA_N = 2
GAMMA_0 = 3
INTERFACE = 4

EDGE_TAG_NAMES = {
    INTERIOR: "interior",
    GAMMA_D: "gamma_d",
    GAMMA_N: "gamma_n",
    GAMMA_0: "gamma_0",
    INTERFACE: "interface",
}
EDGE_TAG_CODES = {v: k for k, v in EDGE_TAG_NAMES.items()}
SUBDOMAIN_NAMES = {SOLID: "solid", FLUID: "fluid"}
SUBDOMAIN_CODES = {v: k for k, v in SUBDOMAIN_NAMES.items()}


class MeshError(Exception):
    """Raised for invalid geometry or mesh input."""


@dataclass(frozen=True)
class Mesh:
    """Conforming triangle mesh with subdomain and boundary tags.

    vertices    (nv, 2) float coordinates in meters
    triangles   (nt, 3) vertex indices, positively oriented
    tri_tag     (nt,)   SOLID or FLUID
    tri_refedge (nt,)   local index of the refinement edge; local edge i
                        is the edge opposite local vertex i
    edges       (ne, 2) sorted vertex pairs, lexicographically ordered
    edge_tag    (ne,)   INTERIOR / GAMMA_D / GAMMA_N / GAMMA_0 / INTERFACE
    edge_tris   (ne, 2) adjacent triangle ids, -1 for missing neighbor
    tri_edges   (nt, 3) global edge id of each local edge
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tri_tag: np.ndarray
    tri_refedge: np.ndarray
    edges: np.ndarray = field(init=False)
    edge_tag: np.ndarray = field(init=False)
    edge_tris: np.ndarray = field(init=False)
    tri_edges: np.ndarray = field(init=False)

    def __init__(self, vertices, triangles, tri_tag, tri_refedge=None,
                 edge_tags=None):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        triangles = np.ascontiguousarray(triangles, dtype=np.int32)
        tri_tag = np.ascontiguousarray(tri_tag, dtype=np.int8)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)
        object.__setattr__(self, "tri_tag", tri_tag)
        if tri_refedge is None:
            tri_refedge = _longest_edge_refedges(vertices, triangles)
        object.__setattr__(self, "tri_refedge",
                           np.ascontiguousarray(tri_refedge, dtype=np.int8))
        edges, edge_tris, tri_edges = _build_edge_topology(triangles)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_tris", edge_tris)
        object.__setattr__(self, "tri_edges", tri_edges)
        tag = np.zeros(len(edges), dtype=np.int8)
        if edge_tags:
            keys = {(int(a), int(b)): t for (a, b), t in edge_tags.items()}
            for i, (a, b) in enumerate(edges):
                t = keys.get((int(a), int(b)))
                if t is not None:
                    tag[i] = t
        object.__setattr__(self, "edge_tag", tag)
        for arr in (self.vertices, self.triangles, self.tri_tag,
                    self.tri_refedge, self.edges, self.edge_tag,
                    self.edge_tris, self.tri_edges):
            arr.setflags(write=False)

    # -- basic queries -------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def tri_coords(self, ids=None) -> np.ndarray:
        """(nt, 3, 2) vertex coordinates per triangle."""
        tris = self.triangles if ids is None else self.triangles[ids]
        return self.vertices[tris]

    def areas(self, ids=None) -> np.ndarray:
        p = self.tri_coords(ids)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def tri_diameters(self, ids=None) -> np.ndarray:
        p = self.tri_coords(ids)
        l0 = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        l1 = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        l2 = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        return np.maximum(l0, np.maximum(l1, l2))

    def edge_lengths(self, ids=None) -> np.ndarray:
        e = self.edges if ids is None else self.edges[ids]
        return np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]],
                              axis=1)

    def edge_normals(self, ids=None) -> np.ndarray:
        """Unit normals under the global convention: rotate the tangent
        (low vertex id -> high vertex id) clockwise by 90 degrees."""
        e = self.edges if ids is None else self.edges[ids]
        t = self.vertices[e[:, 1]] - self.vertices[e[:, 0]]
        t = t / np.linalg.norm(t, axis=1)[:, None]
        return np.column_stack([t[:, 1], -t[:, 0]])

    def subdomain_tris(self, tag) -> np.ndarray:
        return np.flatnonzero(self.tri_tag == tag).astype(np.int32)

    def edges_with_tag(self, tag) -> np.ndarray:
        return np.flatnonzero(self.edge_tag == tag).astype(np.int32)

    def h_max(self) -> float:
        return float(self.tri_diameters().max())


def _build_edge_topology(triangles):
    nt = len(triangles)
    loc = np.empty((nt, 3, 2), dtype=np.int64)
    # local edge i is opposite local vertex i
    loc[:, 0] = triangles[:, [1, 2]]
    loc[:, 1] = triangles[:, [2, 0]]
    loc[:, 2] = triangles[:, [0, 1]]
    flat = np.sort(loc.reshape(-1, 2), axis=1)
    edges, inv = np.unique(flat, axis=0, return_inverse=True)
    tri_edges = inv.reshape(nt, 3).astype(np.int32)
    edge_tris = np.full((len(edges), 2), -1, dtype=np.int32)
    order = np.argsort(tri_edges.ravel(), kind="stable")
    tids = (order // 3).astype(np.int32)
    eids = tri_edges.ravel()[order]
    starts = np.searchsorted(eids, np.arange(len(edges)))
    ends = np.searchsorted(eids, np.arange(len(edges)), side="right")
    counts = ends - starts
    if counts.max(initial=0) > 2:
        raise MeshError("an edge is shared by more than two triangles")
    edge_tris[:, 0] = tids[starts]
    two = counts == 2
    edge_tris[two, 1] = tids[ends[two] - 1]
    return edges.astype(np.int32), edge_tris, tri_edges


def _longest_edge_refedges(vertices, triangles):
    p = vertices[triangles]
    lens = np.stack([
        np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
        np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
        np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
    ], axis=1)
    # longest edge; near-ties broken by the smallest opposite (global)
    # vertex index
    lmax = lens.max(axis=1)
    tied = lens >= lmax[:, None] * (1.0 - 1e-12)
    opposite = np.where(tied, triangles, np.iinfo(np.int32).max)
    return np.argmin(opposite, axis=1).astype(np.int8)


# ----------------------------------------------------------------------
# geometry presets
# ----------------------------------------------------------------------

EMPTY = 0


@dataclass(frozen=True)
class GeometrySpec:
    """Block decomposition of a vessel geometry.

    The domain is a union of axis-aligned rectangles on the tensor grid
    given by the breakpoints ``xs`` x ``ys``; ``cells[j][i]`` assigns the
    rectangle [xs[i], xs[i+1]] x [ys[j], ys[j+1]] to EMPTY, SOLID or FLUID.
    ``clamp`` selects which exterior solid edges are Dirichlet:
    ``"sides"`` (outer vertical walls), ``"bottom"`` or ``"outer"`` (all).
    """

    preset: str
    xs: tuple
    ys: tuple
    cells: tuple
    clamp: str = "sides"

    def __post_init__(self):
        xs, ys = np.asarray(self.xs, float), np.asarray(self.ys, float)
        if len(xs) < 2 or len(ys) < 2:
            raise MeshError("need at least one cell in each direction")
        if np.any(np.diff(xs) <= 0) or np.any(np.diff(ys) <= 0):
            raise MeshError("breakpoints must be strictly increasing")
        cells = np.asarray(self.cells, dtype=np.int8)
        if cells.shape != (len(ys) - 1, len(xs) - 1):
            raise MeshError("cell map shape does not match breakpoints")
        if not np.any(cells != EMPTY):
            raise MeshError("geometry has no solid or fluid cells")
        if self.clamp not in ("sides", "bottom", "outer"):
            raise MeshError(f"unknown clamp rule {self.clamp!r}")

    @property
    def cell_array(self) -> np.ndarray:
        return np.asarray(self.cells, dtype=np.int8)

    def shortest_edge(self) -> float:
        """Shortest side length among non-empty cells."""
        cells = self.cell_array
        dx = np.diff(np.asarray(self.xs, float))
        dy = np.diff(np.asarray(self.ys, float))
        best = np.inf
        for j in range(cells.shape[0]):
            for i in range(cells.shape[1]):
                if cells[j, i] != EMPTY:
                    best = min(best, dx[i], dy[j])
        return float(best)


def omega1(fluid_width=1.0, fluid_height=1.0, wall=0.13, wall_height=None,
           clamp="bottom"):
    """Open rectangular vessel: fluid rectangle inside a U-shaped solid.

    The fluid occupies (0, fluid_width) x (0, fluid_height); solid walls
    of the given thickness run along the left, right and bottom sides.
    ``wall_height`` > fluid_height leaves a dry freeboard above the free
    surface.
    """
    if min(fluid_width, fluid_height, wall) <= 0:
        raise MeshError("omega1 dimensions must be positive")
    if wall_height is None or wall_height == fluid_height:
        xs = (-wall, 0.0, fluid_width, fluid_width + wall)
        ys = (-wall, 0.0, fluid_height)
        cells = ((SOLID, SOLID, SOLID),
                 (SOLID, FLUID, SOLID))
        return GeometrySpec("omega1", xs, ys, cells, clamp)
    if wall_height < fluid_height:
        raise MeshError("wall_height must be >= fluid_height")
    xs = (-wall, 0.0, fluid_width, fluid_width + wall)
    ys = (-wall, 0.0, fluid_height, wall_height)
    cells = ((SOLID, SOLID, SOLID),
             (SOLID, FLUID, SOLID),
             (SOLID, EMPTY, SOLID))
    return GeometrySpec("omega1", xs, ys, cells, clamp)


def omega2(fluid_width=1.0, fluid_height=1.0, wall=0.13, step=0.5,
           clamp="bottom"):
    """Vessel with an L-shaped fluid cavity (re-entrant corners).

    Starting from the omega1 layout, the solid additionally fills the
    upper-right block (step, fluid_width) x (step, fluid_height), which
    puts a re-entrant corner in the fluid at (step, step) and leaves the
    free surface on top of the remaining fluid column.
    """
    if not (0 < step < min(fluid_width, fluid_height)):
        raise MeshError("omega2 step must lie strictly inside the cavity")
    xs = (-wall, 0.0, step, fluid_width, fluid_width + wall)
    ys = (-wall, 0.0, step, fluid_height)
    cells = ((SOLID, SOLID, SOLID, SOLID),
             (SOLID, FLUID, FLUID, SOLID),
             (SOLID, FLUID, SOLID, SOLID))
    return GeometrySpec("omega2", xs, ys, cells, clamp)


def unit_square_solid(clamp="outer"):
    """Unit square occupied entirely by solid (no fluid)."""
    return GeometrySpec("unit_square_solid", (0.0, 1.0), (0.0, 1.0),
                        ((SOLID,),), clamp)


def unit_square_fluid():
    """Unit square occupied entirely by fluid; boundary tagged GAMMA_0."""
    return GeometrySpec("unit_square_fluid", (0.0, 1.0), (0.0, 1.0),
                        ((FLUID,),), "outer")


PRESETS = {
    "omega1": omega1,
    "omega2": omega2,
    "unit_square_solid": unit_square_solid,
    "unit_square_fluid": unit_square_fluid,
}


def build_cavity_mesh(spec: GeometrySpec, N: int) -> Mesh:
    """Structured triangulation with N mesh edges along the shortest
    geometry edge.

    Every non-empty cell is split into a grid of rectangles of size close
    to h = shortest_edge / N, each cut along its diagonal.  Cell diagonals
    act as the initial refinement edges, which makes the mesh compatibly
    divisible for newest-vertex bisection.
    """
    if N < 1:
        raise MeshError("refinement level N must be >= 1")
    cells = spec.cell_array
    xs = np.asarray(spec.xs, float)
    ys = np.asarray(spec.ys, float)
    h = spec.shortest_edge() / N
    nx = np.maximum(1, np.rint(np.diff(xs) / h).astype(int))
    ny = np.maximum(1, np.rint(np.diff(ys) / h).astype(int))
    X = np.concatenate([np.linspace(xs[i], xs[i + 1], nx[i] + 1)[:-1]
                        for i in range(len(nx))] + [xs[-1:]])
    Y = np.concatenate([np.linspace(ys[j], ys[j + 1], ny[j] + 1)[:-1]
                        for j in range(len(ny))] + [ys[-1:]])
    ix_off = np.concatenate([[0], np.cumsum(nx)])
    iy_off = np.concatenate([[0], np.cumsum(ny)])
    nX, nY = len(X), len(Y)

    # lattice occupancy per fine cell
    occ = np.zeros((nY - 1, nX - 1), dtype=np.int8)
    for j in range(cells.shape[0]):
        for i in range(cells.shape[1]):
            occ[iy_off[j]:iy_off[j + 1], ix_off[i]:ix_off[i + 1]] = cells[j, i]

    def gid(ix, iy):
        return iy * nX + ix

    tris, tags, refs = [], [], []
    for iy in range(nY - 1):
        for ix in range(nX - 1):
            sub = occ[iy, ix]
            if sub == EMPTY:
                continue
            p00, p10 = gid(ix, iy), gid(ix + 1, iy)
            p01, p11 = gid(ix, iy + 1), gid(ix + 1, iy + 1)
            # diagonal p00-p11 is the longest edge of both triangles
            tris.append((p00, p10, p11))
            refs.append(1)
            tris.append((p00, p11, p01))
            refs.append(2)
            tags.extend((sub, sub))
    tris = np.asarray(tris, dtype=np.int64)
    used = np.unique(tris)
    remap = np.full(nX * nY, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    tris = remap[tris]
    gx, gy = np.meshgrid(X, Y)
    verts = np.column_stack([gx.ravel()[used], gy.ravel()[used]])

    edge_tags = _tag_lattice_edges(spec, occ, X, Y, used, remap)
    mesh = Mesh(verts, tris, np.asarray(tags), np.asarray(refs), edge_tags)
    _check_built_mesh(mesh, spec)
    return mesh


def _tag_lattice_edges(spec, occ, X, Y, used, remap):
    """Tags for axis-aligned lattice edges from cell occupancy."""
    nX, nY = len(X), len(Y)
    xmin, xmax = X[0], X[-1]
    ymin = Y[0]
    tags = {}

    def solid_boundary_tag(axis, coord):
        if spec.clamp == "outer":
            return GAMMA_D
        if spec.clamp == "sides":
            if axis == "v" and (coord == xmin or coord == xmax):
                return GAMMA_D
            return GAMMA_N
        if spec.clamp == "bottom":
            if axis == "h" and coord == ymin:
                return GAMMA_D
            return GAMMA_N
        raise MeshError(f"unknown clamp rule {spec.clamp!r}")

    def classify(a, b, axis, coord):
        if a == b:
            return None if a == EMPTY else INTERIOR
        pair = {a, b}
        if pair == {SOLID, FLUID}:
            return INTERFACE
        sub = a if a != EMPTY else b
        if sub == FLUID:
            return GAMMA_0
        return solid_boundary_tag(axis, coord)

    # horizontal edges: between cell rows iy-1 and iy
    for iy in range(nY):
        for ix in range(nX - 1):
            below = occ[iy - 1, ix] if iy > 0 else EMPTY
            above = occ[iy, ix] if iy < nY - 1 else EMPTY
            tag = classify(below, above, "h", Y[iy])
            if tag not in (None, INTERIOR):
                a, b = remap[iy * nX + ix], remap[iy * nX + ix + 1]
                tags[(min(a, b), max(a, b))] = tag
    # vertical edges: between cell columns ix-1 and ix
    for ix in range(nX):
        for iy in range(nY - 1):
            left = occ[iy, ix - 1] if ix > 0 else EMPTY
            right = occ[iy, ix] if ix < nX - 1 else EMPTY
            tag = classify(left, right, "v", X[ix])
            if tag not in (None, INTERIOR):
                a, b = remap[iy * nX + ix], remap[(iy + 1) * nX + ix]
                tags[(min(a, b), max(a, b))] = tag
    return tags


def _check_built_mesh(mesh, spec):
    if np.any(mesh.areas() <= 0):
        raise MeshError(f"degenerate geometry in preset {spec.preset!r}")
    report = validate(mesh)
    if not report.ok:
        raise MeshError(
            f"generated mesh violates invariants: {report.failures()}")


# ----------------------------------------------------------------------
# validation
# ----------------------------------------------------------------------

@dataclass
class ValidationReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def failures(self):
        return [(name, detail) for name, ok, detail in self.checks if not ok]

    def __str__(self):
        lines = [f"[{'ok' if ok else 'FAIL'}] {name}" + (f": {d}" if d else "")
                 for name, ok, d in self.checks]
        return "\n".join(lines)


def validate(mesh: Mesh) -> ValidationReport:
    """Check every mesh invariant; failures become report entries."""
    checks = []

    areas = mesh.areas()
    bad = int(np.sum(areas <= 0))
    checks.append(("orientation", bad == 0,
                   "" if bad == 0 else f"{bad} non-positive triangles"))

    used = np.unique(mesh.triangles)
    iso = mesh.num_vertices - len(used)
    checks.append(("no isolated vertices", iso == 0,
                   "" if iso == 0 else f"{iso} unused vertices"))

    coords = np.ascontiguousarray(mesh.vertices)
    uniq = np.unique(coords.view([("x", float), ("y", float)]))
    dup = mesh.num_vertices - len(uniq)
    checks.append(("no duplicate vertices", dup == 0,
                   "" if dup == 0 else f"{dup} duplicates"))

    n_adj = (mesh.edge_tris >= 0).sum(axis=1)
    boundary = n_adj == 1
    interior2 = n_adj == 2
    checks.append(("edge adjacency", bool(np.all(n_adj >= 1)), ""))

    tag = mesh.edge_tag
    t0 = mesh.tri_tag[np.clip(mesh.edge_tris[:, 0], 0, None)]
    t1 = np.where(mesh.edge_tris[:, 1] >= 0,
                  mesh.tri_tag[np.clip(mesh.edge_tris[:, 1], 0, None)], -1)

    # one-sided edges must carry a boundary tag (also catches hanging nodes:
    # the unsplit long edge of a nonconforming neighbor stays INTERIOR)
    bad_open = boundary & ~np.isin(tag, (GAMMA_D, GAMMA_N, GAMMA_0))
    checks.append(("boundary edges tagged", not bad_open.any(),
                   f"{int(bad_open.sum())} untagged one-sided edges"
                   if bad_open.any() else ""))

    bad_int = interior2 & (tag == INTERIOR) & (t0 != t1)
    checks.append(("interior edges within one subdomain", not bad_int.any(),
                   f"{int(bad_int.sum())} interior edges cross subdomains"
                   if bad_int.any() else ""))

    ifc = tag == INTERFACE
    good_ifc = interior2 & (((t0 == SOLID) & (t1 == FLUID))
                            | ((t0 == FLUID) & (t1 == SOLID)))
    bad_ifc = ifc & ~good_ifc
    checks.append(("interface edges pair solid and fluid", not bad_ifc.any(),
                   f"{int(bad_ifc.sum())} bad interface edges"
                   if bad_ifc.any() else ""))

    for t, name, sub in ((GAMMA_D, "gamma_d", SOLID),
                         (GAMMA_N, "gamma_n", SOLID),
                         (GAMMA_0, "gamma_0", FLUID)):
        sel = tag == t
        bad_t = sel & ~(boundary & (t0 == sub))
        checks.append((f"{name} edges border one {SUBDOMAIN_NAMES[sub]} "
                       "triangle", not bad_t.any(),
                       f"{int(bad_t.sum())} offending edges"
                       if bad_t.any() else ""))

    bad_sub = ~np.isin(mesh.tri_tag, (SOLID, FLUID))
    checks.append(("triangle subdomain tags", not bad_sub.any(), ""))

    bad_ref = (mesh.tri_refedge < 0) | (mesh.tri_refedge > 2)
    checks.append(("refinement edges in range", not bad_ref.any(), ""))

    return ValidationReport(checks)


# ----------------------------------------------------------------------
# newest-vertex bisection
# ----------------------------------------------------------------------

def bisect(mesh: Mesh, marked) -> Mesh:
    """Bisect every marked triangle across its refinement edge, adding
    closure bisections so the result is conforming.

    Deterministic: marked ids are processed in sorted order and new
    vertices are numbered in creation order.  Subdomain and boundary tags
    are inherited by the children.
    """
    marked = sorted(int(t) for t in set(marked))
    if marked and (marked[0] < 0 or marked[-1] >= mesh.num_triangles):
        raise MeshError("marked ids out of range")

    verts = [tuple(v) for v in mesh.vertices]
    tri_v = [tuple(t) for t in mesh.triangles]
    tri_tag = list(mesh.tri_tag)
    tri_ref = list(mesh.tri_refedge)
    alive = [True] * len(tri_v)
    edge_tag = {}
    for (a, b), t in zip(mesh.edges, mesh.edge_tag):
        if t != INTERIOR:
            edge_tag[(int(a), int(b))] = int(t)

    # map sorted edge key -> list of alive triangle ids containing it
    edge_tris: dict = {}

    def key(a, b):
        return (a, b) if a < b else (b, a)

    def register(tid):
        v = tri_v[tid]
        for i in range(3):
            k = key(v[(i + 1) % 3], v[(i + 2) % 3])
            edge_tris.setdefault(k, []).append(tid)

    def unregister(tid):
        v = tri_v[tid]
        for i in range(3):
            k = key(v[(i + 1) % 3], v[(i + 2) % 3])
            edge_tris[k].remove(tid)

    for tid in range(len(tri_v)):
        register(tid)

    midpoint: dict = {}

    def get_midpoint(k):
        m = midpoint.get(k)
        if m is None:
            a, b = k
            m = len(verts)
            verts.append(((verts[a][0] + verts[b][0]) / 2.0,
                          (verts[a][1] + verts[b][1]) / 2.0))
            midpoint[k] = m
            t = edge_tag.pop(k, None)
            if t is not None:
                edge_tag[key(a, m)] = t
                edge_tag[key(m, b)] = t
        return m

    def refedge_key(tid):
        v = tri_v[tid]
        r = tri_ref[tid]
        return key(v[(r + 1) % 3], v[(r + 2) % 3])

    def split(tid, m):
        """Replace tid by its two children across its refinement edge."""
        v = tri_v[tid]
        r = tri_ref[tid]
        vi, vj, vk = v[r], v[(r + 1) % 3], v[(r + 2) % 3]
        unregister(tid)
        alive[tid] = False
        for child, ref in (((vi, vj, m), 2), ((vi, m, vk), 1)):
            cid = len(tri_v)
            tri_v.append(child)
            tri_tag.append(tri_tag[tid])
            tri_ref.append(ref)
            alive.append(True)
            register(cid)
        return len(tri_v) - 2, len(tri_v) - 1

    def bisect_tri(tid, depth=0):
        if depth > len(tri_v) + mesh.num_triangles:
            raise MeshError("bisection closure does not terminate; "
                            "initial refinement edges are incompatible")
        k = refedge_key(tid)
        others = [t for t in edge_tris.get(k, ()) if t != tid]
        if others:
            nb = others[0]
            if refedge_key(nb) != k:
                bisect_tri(nb, depth + 1)
                others = [t for t in edge_tris.get(k, ()) if t != tid]
                nb = others[0]
            m = get_midpoint(k)
            split(nb, m)
            split(tid, m)
        else:
            split(tid, get_midpoint(k))

    for tid in marked:
        if alive[tid]:
            bisect_tri(tid)

    keep = [i for i, a in enumerate(alive) if a]
    new_tris = np.asarray([tri_v[i] for i in keep], dtype=np.int32)
    new_tags = np.asarray([tri_tag[i] for i in keep], dtype=np.int8)
    new_refs = np.asarray([tri_ref[i] for i in keep], dtype=np.int8)
    return Mesh(np.asarray(verts), new_tris, new_tags, new_refs, edge_tag)


def uniform_refine(mesh: Mesh, times: int = 1) -> Mesh:
    for _ in range(times):
        mesh = bisect(mesh, range(mesh.num_triangles))
    return mesh


# ----------------------------------------------------------------------
# file formats
# ----------------------------------------------------------------------

def write_mesh(mesh: Mesh, path) -> None:
    """Native structured-text format: VERTICES / TRIANGLES / EDGES."""
    with open(path, "w") as f:
        f.write("VERTICES\n")
        for i, (x, y) in enumerate(mesh.vertices):
            f.write(f"{i} {float(x)!r} {float(y)!r}\n")
        f.write("TRIANGLES\n")
        for i, ((a, b, c), tag, ref) in enumerate(
                zip(mesh.triangles, mesh.tri_tag, mesh.tri_refedge)):
            f.write(f"{i} {a} {b} {c} {SUBDOMAIN_NAMES[int(tag)]} {ref}\n")
        f.write("EDGES\n")
        for i, ((a, b), tag) in enumerate(zip(mesh.edges, mesh.edge_tag)):
            f.write(f"{i} {a} {b} {EDGE_TAG_NAMES[int(tag)]}\n")


def read_mesh(path) -> Mesh:
    verts, tris, tags, refs = [], [], [], []
    edge_tags = {}
    section = None
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if line in ("VERTICES", "TRIANGLES", "EDGES"):
                section = line
                continue
            parts = line.split()
            if section == "VERTICES":
                verts.append((float(parts[1]), float(parts[2])))
            elif section == "TRIANGLES":
                tris.append(tuple(int(v) for v in parts[1:4]))
                tags.append(SUBDOMAIN_CODES[parts[4]])
                refs.append(int(parts[5]) if len(parts) > 5 else -1)
            elif section == "EDGES":
                a, b = int(parts[1]), int(parts[2])
                t = EDGE_TAG_CODES[parts[3]]
                if t != INTERIOR:
                    edge_tags[(min(a, b), max(a, b))] = t
            else:
                raise MeshError(f"unexpected line outside section: {line!r}")
    refs = np.asarray(refs)
    if np.any(refs < 0):
        refs = None
    return Mesh(np.asarray(verts), np.asarray(tris), np.asarray(tags),
                refs, edge_tags)


def read_gmsh(path, tri_groups, edge_groups) -> Mesh:
    """Import a Gmsh MSH 2.2 ASCII file (read-only convenience).

    tri_groups maps physical ids to 'solid'/'fluid'; edge_groups maps
    physical ids to edge tag names.  Refinement edges are initialized to
    the longest edge of each triangle.
    """
    nodes = {}
    tris, tags = [], []
    edge_tags = {}
    with open(path) as f:
        lines = iter(f)
        for line in lines:
            token = line.strip()
            if token == "$MeshFormat":
                version = next(lines).split()[0]
                if not version.startswith("2."):
                    raise MeshError(f"unsupported MSH version {version}")
            elif token == "$Nodes":
                n = int(next(lines))
                for _ in range(n):
                    parts = next(lines).split()
                    nodes[int(parts[0])] = (float(parts[1]), float(parts[2]))
            elif token == "$Elements":
                n = int(next(lines))
                for _ in range(n):
                    parts = next(lines).split()
                    etype = int(parts[1])
                    ntags = int(parts[2])
                    phys = int(parts[3]) if ntags else 0
                    conn = [int(v) for v in parts[3 + ntags:]]
                    if etype == 2:
                        name = tri_groups.get(phys)
                        if name is None:
                            raise MeshError(
                                f"unmapped triangle physical group {phys}")
                        tris.append(conn)
                        tags.append(SUBDOMAIN_CODES[name])
                    elif etype == 1:
                        name = edge_groups.get(phys)
                        if name is not None:
                            a, b = sorted(conn)
                            edge_tags[(a, b)] = EDGE_TAG_CODES[name]
    ids = sorted(nodes)
    remap = {nid: i for i, nid in enumerate(ids)}
    verts = np.asarray([nodes[nid] for nid in ids])
    tris = np.asarray([[remap[v] for v in t] for t in tris], dtype=np.int32)
    edge_tags = {(remap[a], remap[b]): t for (a, b), t in edge_tags.items()}
    # enforce positive orientation
    p = verts[tris]
    det = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
           - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = det < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    return Mesh(verts, tris, np.asarray(tags), None, edge_tags)
