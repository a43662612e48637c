"""Sparse assembly of the coupled solid/fluid vibration forms.

Block unknown (u, w, p): solid displacement (MINI or Taylor-Hood vector
element), fluid displacement (BDM1) and solid pressure (continuous P1).
The stiffness form collects

    int 2 mu(x) eps(u):eps(v) - int p div v - int q div u
    - int lam(x)^-1 p q + int c^2 rho_f div w div tau
    + int_{Gamma_0} g rho_f (w.n)(tau.n)

and the mass form int rho_s u.v + int rho_f w.tau.  Dirichlet rows and
columns (u on Gamma_D) are eliminated symmetrically; the interface
constraint couples solid and fluid normal traces through edge moments.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import elements as el
from .meshing import (Mesh, SOLID, FLUID, GAMMA_D, GAMMA_0, INTERFACE)

FAMILIES = ("mini", "taylor-hood")


class AssemblyError(Exception):
    pass


@dataclass(frozen=True)
class MaterialField:
    """Material data; E and nu may be constants or callables of (n, 2)
    point arrays."""

    E: object = 1.44e11        # Young modulus, Pa
    nu: object = 0.35          # Poisson ratio
    rho_s: float = 7700.0      # solid density, kg/m^3
    rho_f: float = 1000.0      # fluid density, kg/m^3
    c: float = 1430.0          # sound speed, m/s
    g: float = 9.8             # gravity, m/s^2

    def __post_init__(self):
        for name in ("rho_s", "rho_f", "c", "g"):
            if getattr(self, name) <= 0:
                raise AssemblyError(f"{name} must be positive")
        if not callable(self.E) and self.E <= 0:
            raise AssemblyError("E must be positive")
        if not callable(self.nu):
            _check_nu(self.nu)

    def young(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if callable(self.E):
            vals = np.asarray(self.E(x.reshape(-1, 2)), float)
            if np.any(vals <= 0):
                raise AssemblyError("E(x) must be positive")
            return vals.reshape(x.shape[:-1])
        return np.full(x.shape[:-1], float(self.E))

    def poisson(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if callable(self.nu):
            vals = np.asarray(self.nu(x.reshape(-1, 2)), float)
            _check_nu(vals)
            return vals.reshape(x.shape[:-1])
        return np.full(x.shape[:-1], float(self.nu))

    def mu(self, x) -> np.ndarray:
        return self.young(x) / (2.0 * (1.0 + self.poisson(x)))

    def inv_lambda(self, x) -> np.ndarray:
        nu = self.poisson(x)
        return (1.0 + nu) * (1.0 - 2.0 * nu) / (self.young(x) * nu)


def _check_nu(nu):
    nu = np.asarray(nu, float)
    if np.any(nu <= 0) or np.any(nu > 0.5):
        raise AssemblyError("Poisson ratio must lie in (0, 1/2]")


def lame_from(materials: MaterialField, x):
    """Pointwise (mu, lambda^-1); lambda^-1 = 0 in the incompressible
    limit nu = 1/2."""
    x = np.atleast_2d(np.asarray(x, float))
    mu = materials.mu(x)
    il = materials.inv_lambda(x)
    if mu.size == 1:
        return float(mu.ravel()[0]), float(il.ravel()[0])
    return mu, il


# ----------------------------------------------------------------------
# spaces and block layout
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class BlockLayout:
    """Dof bookkeeping for the block vector [u | w | p].

    ``free`` maps reduced (post-Dirichlet) indices to full block indices;
    ``pos`` is the inverse (-1 on eliminated dofs).  The reduced vector
    keeps the same block order, so reduced slices are contiguous.
    """

    n_u: int
    n_w: int
    n_p: int
    free: np.ndarray
    pos: np.ndarray

    @property
    def n_full(self) -> int:
        return self.n_u + self.n_w + self.n_p

    @property
    def n_free(self) -> int:
        return len(self.free)

    @property
    def off_w(self) -> int:
        return self.n_u

    @property
    def off_p(self) -> int:
        return self.n_u + self.n_w

    @property
    def nfree_u(self) -> int:
        return self.n_free - self.n_w - self.n_p

    def reduced_slices(self):
        nu = self.nfree_u
        return (slice(0, nu), slice(nu, nu + self.n_w),
                slice(nu + self.n_w, self.n_free))

    def split(self, x_reduced: np.ndarray):
        """Scatter a reduced vector into per-field coefficient vectors
        (Dirichlet entries zero)."""
        full = np.zeros(self.n_full)
        full[self.free] = x_reduced
        return (full[:self.n_u], full[self.off_w:self.off_p],
                full[self.off_p:])

    def gather(self, u, w, p) -> np.ndarray:
        full = np.concatenate([u, w, p])
        return full[self.free]


@dataclass(frozen=True)
class Spaces:
    """Dof maps of one discretization on one mesh."""

    mesh: Mesh
    family: str
    u_map: el.DofMap
    p_map: el.DofMap
    w_map: el.DofMap
    layout: BlockLayout
    u_vertex_dof: dict      # vertex id -> scalar u dof
    u_edge_dof: dict        # edge id -> scalar u dof (Taylor-Hood)

    @property
    def n_free(self) -> int:
        return self.layout.n_free


def build_spaces(mesh: Mesh, family: str) -> Spaces:
    if family not in FAMILIES:
        raise AssemblyError(f"unknown element family {family!r}; "
                            f"choose from {FAMILIES}")
    u_kind = el.P1B if family == "mini" else el.VP2
    u_map = el.build_dofmap(mesh, u_kind, SOLID)
    p_map = el.build_dofmap(mesh, el.P1, SOLID)
    w_map = el.build_dofmap(mesh, el.BDM1, FLUID)

    # Dirichlet u dofs: both components on Gamma_D vertices and edges
    gd_edges = mesh.edges_with_tag(GAMMA_D)
    gd_verts = np.unique(mesh.edges[gd_edges]) if len(gd_edges) else \
        np.empty(0, dtype=np.int64)
    fixed = np.zeros(u_map.ndof, dtype=bool)
    on_vertex = (u_map.entity == 0) & np.isin(u_map.entity_id, gd_verts)
    fixed |= on_vertex
    if len(gd_edges):
        fixed |= (u_map.entity == 1) & np.isin(u_map.entity_id, gd_edges)

    n_u, n_w, n_p = u_map.ndof, w_map.ndof, p_map.ndof
    full_fixed = np.zeros(n_u + n_w + n_p, dtype=bool)
    full_fixed[:n_u] = fixed
    free = np.flatnonzero(~full_fixed)
    pos = np.full(n_u + n_w + n_p, -1, dtype=np.int64)
    pos[free] = np.arange(len(free))
    layout = BlockLayout(n_u, n_w, n_p, free, pos)

    if mesh.subdomain_tris(SOLID).size and not len(gd_edges):
        warnings.warn("no Gamma_D edges: the solid admits rigid motions "
                      "(zero eigenvalues of the stiffness)", stacklevel=2)

    uv = {}
    ue = {}
    sel = (u_map.entity == 0) & (u_map.component == 0)
    for dof, vid in zip(np.flatnonzero(sel), u_map.entity_id[sel]):
        uv[int(vid)] = int(dof) // 2
    sel = (u_map.entity == 1) & (u_map.component == 0)
    for dof, eid in zip(np.flatnonzero(sel), u_map.entity_id[sel]):
        ue[int(eid)] = int(dof) // 2
    return Spaces(mesh, family, u_map, p_map, w_map, layout, uv, ue)


# ----------------------------------------------------------------------
# local matrices
# ----------------------------------------------------------------------

def _symmetrize(K):
    """Exact local symmetry; (K + K^T)/2 is bitwise symmetric."""
    return 0.5 * (K + K.transpose(0, 2, 1))


def _vector_expand(S1, S2):
    """Vector-element matrix K[(a,c),(b,d)] = delta_cd S1[a,b]
    + S2[a,b,d,c] with interleaved components."""
    nt, ns = S1.shape[0], S1.shape[1]
    K = np.empty((nt, 2 * ns, 2 * ns))
    K[:, 0::2, 0::2] = S1 + S2[:, :, :, 0, 0]
    K[:, 0::2, 1::2] = S2[:, :, :, 1, 0]
    K[:, 1::2, 0::2] = S2[:, :, :, 0, 1]
    K[:, 1::2, 1::2] = S1 + S2[:, :, :, 1, 1]
    return K


def _solid_tables(mesh, spaces, degree):
    q = el.quadrature(degree)
    geo = el.tri_geometry(mesh, spaces.u_map.tris)
    val_u, grad_u, _ = el.scalar_tables(spaces.u_map.kind, geo, q.points)
    val_p, grad_p, _ = el.scalar_tables(el.P1, geo, q.points)
    pts = el.physical_points(geo, q.points)
    dv = q.weights[None, :] * geo.det[:, None]
    return q, geo, val_u, grad_u, val_p, pts, dv


def _scatter(rows_list, cols_list, vals_list, Kloc, dofs_r, dofs_c):
    nt, nr, nc = Kloc.shape
    rows_list.append(np.repeat(dofs_r, nc, axis=1).ravel())
    cols_list.append(np.tile(dofs_c, (1, nr)).ravel())
    vals_list.append(Kloc.ravel())


def assemble_stiffness(mesh: Mesh, spaces: Spaces,
                       materials: MaterialField, degree: int = 4):
    """Reduced sparse stiffness matrix (Dirichlet dofs removed)."""
    lay = spaces.layout
    rows, cols, vals = [], [], []

    if len(spaces.u_map.tris):
        q, geo, val_u, grad_u, val_p, pts, dv = _solid_tables(
            mesh, spaces, degree)
        muq = materials.mu(pts)
        ilq = materials.inv_lambda(pts)
        mdv = muq * dv
        S1 = np.einsum("tq,tqad,tqbd->tab", mdv, grad_u, grad_u)
        S2 = np.einsum("tq,tqad,tqbc->tabdc", mdv, grad_u, grad_u)
        Kuu = _symmetrize(_vector_expand(S1, S2))

        # -int p div v: dof (a,c) couples through d_c phi_a
        Bup_s = -np.einsum("tq,qm,tqac->tacm", dv, val_p, grad_u)
        nt, ns = Bup_s.shape[0], Bup_s.shape[1]
        Bup = Bup_s.reshape(nt, 2 * ns, 3)

        App = _symmetrize(-np.einsum("tq,qm,qn->tmn", ilq * dv, val_p, val_p))

        udofs = spaces.u_map.cell2dof
        pdofs = spaces.p_map.cell2dof + lay.off_p
        _scatter(rows, cols, vals, Kuu, udofs, udofs)
        _scatter(rows, cols, vals, Bup, udofs, pdofs)
        _scatter(rows, cols, vals, Bup.transpose(0, 2, 1), pdofs, udofs)
        _scatter(rows, cols, vals, App, pdofs, pdofs)

    if len(spaces.w_map.tris):
        coeff, geo_f = el.bdm_cell_coefficients(mesh, spaces.w_map)
        divs = coeff @ np.array([0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
        c2rf = materials.c ** 2 * materials.rho_f
        Kww = _symmetrize(c2rf * np.einsum("t,ti,tj->tij", geo_f.area, divs, divs))
        wdofs = spaces.w_map.cell2dof + lay.off_w
        _scatter(rows, cols, vals, Kww, wdofs, wdofs)

        g0 = mesh.edges_with_tag(GAMMA_0)
        if len(g0):
            Ke, edofs = _gamma0_edge_matrices(mesh, spaces, coeff, geo_f,
                                              materials)
            _scatter(rows, cols, vals, Ke, edofs + lay.off_w,
                     edofs + lay.off_w)

    A = _to_csr(rows, cols, vals, lay.n_full)
    return _reduce(A, lay)


def _gamma0_edge_matrices(mesh, spaces, coeff, geo_f, materials):
    """g rho_f (w.n)(tau.n) on the free-surface edges, by edge quadrature."""
    g0 = mesh.edges_with_tag(GAMMA_0)
    tid = mesh.edge_tris[g0, 0]
    fpos = _tri_positions(spaces.w_map)
    k = fpos[tid]
    a = mesh.vertices[mesh.edges[g0, 0]]
    b = mesh.vertices[mesh.edges[g0, 1]]
    tang = b - a
    length = np.linalg.norm(tang, axis=1)
    nrm = np.column_stack([tang[:, 1], -tang[:, 0]]) / length[:, None]
    tq, wq = el.edge_gauss(3)
    Ke = np.zeros((len(g0), 6, 6))
    grf = materials.g * materials.rho_f
    for t, w in zip(tq, wq):
        x = (a + t * tang - geo_f.centroid[k])[:, None, :]
        vals, _ = el.bdm_eval(coeff[k], x)
        vn = np.einsum("eqjc,ec->ej", vals, nrm)
        Ke += grf * (w * length)[:, None, None] * \
            np.einsum("ei,ej->eij", vn, vn)
    return _symmetrize(Ke), spaces.w_map.cell2dof[k]


def _tri_positions(dofmap):
    pos = np.full(int(dofmap.tris.max(initial=-1)) + 1, -1, dtype=np.int64)
    pos[dofmap.tris] = np.arange(len(dofmap.tris))
    return pos


def assemble_mass(mesh: Mesh, spaces: Spaces, materials: MaterialField,
                  degree: int = 4):
    """Reduced sparse mass matrix; identically zero on the pressure block."""
    lay = spaces.layout
    rows, cols, vals = [], [], []

    if len(spaces.u_map.tris):
        q, geo, val_u, grad_u, val_p, pts, dv = _solid_tables(
            mesh, spaces, degree)
        Ms = _symmetrize(materials.rho_s * np.einsum("tq,qa,qb->tab", dv, val_u, val_u))
        nt, ns = Ms.shape[0], Ms.shape[1]
        Muu = np.zeros((nt, 2 * ns, 2 * ns))
        Muu[:, 0::2, 0::2] = Ms
        Muu[:, 1::2, 1::2] = Ms
        udofs = spaces.u_map.cell2dof
        _scatter(rows, cols, vals, Muu, udofs, udofs)

    if len(spaces.w_map.tris):
        coeff, geo_f = el.bdm_cell_coefficients(mesh, spaces.w_map)
        q = el.quadrature(degree)
        pts = el.physical_points(geo_f, q.points)
        cpts = pts - geo_f.centroid[:, None, :]
        valw, _ = el.bdm_eval(coeff, cpts)
        dvf = q.weights[None, :] * geo_f.det[:, None]
        Mww = _symmetrize(materials.rho_f * np.einsum("tq,tqic,tqjc->tij",
                                                      dvf, valw, valw))
        wdofs = spaces.w_map.cell2dof + lay.off_w
        _scatter(rows, cols, vals, Mww, wdofs, wdofs)

    B = _to_csr(rows, cols, vals, lay.n_full)
    return _reduce(B, lay)


def _to_csr(rows, cols, vals, n):
    if not rows:
        return sp.csr_matrix((n, n))
    A = sp.coo_matrix(
        (np.concatenate(vals),
         (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    A = A.tocsr()
    # duplicate summation order is not guaranteed stable, so mirror
    # entries can differ by one ulp; (A + A^T)/2 is bitwise symmetric
    return (0.5 * (A + A.T)).tocsr()


def _reduce(A, lay):
    if lay.n_free == lay.n_full:
        return A
    return A[lay.free][:, lay.free].tocsr()


# ----------------------------------------------------------------------
# interface constraint
# ----------------------------------------------------------------------

def _edge_trace_table(order, t):
    """Scalar C0 trace values along an edge at parameters t.

    order 1: endpoint basis; order 2: endpoints + midpoint dof.  The
    parameter runs from the lower to the higher global vertex id.
    """
    t = np.asarray(t, float)
    if order == 1:
        return np.stack([1.0 - t, t], axis=1)
    return np.stack([(1.0 - t) * (1.0 - 2.0 * t),
                     t * (2.0 * t - 1.0),
                     4.0 * t * (1.0 - t)], axis=1)


def assemble_interface(mesh: Mesh, spaces: Spaces):
    """Constraint rows int_E (u.n - w.n) zeta_m dt = 0 per interface edge.

    With the moments normalized by edge length, the coefficient of the
    fluid moment dof (E, m) is exactly -1, so the rows double as an
    explicit elimination map for the interface fluid dofs.  Returns the
    reduced-column matrix and, per row, the reduced index of that dof.
    """
    lay = spaces.layout
    ifc = mesh.edges_with_tag(INTERFACE)
    order = 1 if spaces.family == "mini" else 2
    tq, wq = el.edge_gauss(3)
    zeta = np.stack([np.ones_like(tq), el.SQRT3 * (2.0 * tq - 1.0)])
    trace = _edge_trace_table(order, tq)            # (nq, ntr)
    moments = np.einsum("q,mq,qa->ma", wq, zeta, trace)

    w_epos = {}
    sel = (spaces.w_map.entity == 1) & (spaces.w_map.component == 0)
    for dof, eid in zip(np.flatnonzero(sel), spaces.w_map.entity_id[sel]):
        w_epos[int(eid)] = int(dof)

    rows, cols, vals = [], [], []
    wdof_rows = np.empty(2 * len(ifc), dtype=np.int64)
    for r, e in enumerate(ifc):
        va, vb = (int(v) for v in mesh.edges[e])
        pa, pb = mesh.vertices[va], mesh.vertices[vb]
        tang = pb - pa
        nrm = np.array([tang[1], -tang[0]])
        nrm /= np.linalg.norm(nrm)
        sdofs = [spaces.u_vertex_dof[va], spaces.u_vertex_dof[vb]]
        if order == 2:
            sdofs.append(spaces.u_edge_dof[int(e)])
        wdof = w_epos[int(e)]
        for m in range(2):
            row = 2 * r + m
            for a, s in enumerate(sdofs):
                for c in range(2):
                    rows.append(row)
                    cols.append(2 * s + c)
                    vals.append(moments[m, a] * nrm[c])
            rows.append(row)
            cols.append(lay.off_w + wdof + m)
            vals.append(-1.0)
            wdof_rows[row] = lay.pos[lay.off_w + wdof + m]
    C = sp.coo_matrix((vals, (rows, cols)),
                      shape=(2 * len(ifc), lay.n_full)).tocsr()
    if lay.n_free != lay.n_full:
        C = C[:, lay.free].tocsr()
    return C, wdof_rows


# ----------------------------------------------------------------------
# block system
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class BlockSystem:
    """Reduced matrices of the constrained pencil A x = kappa B x,
    C x = 0."""

    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    layout: BlockLayout = None
    spaces: Spaces = None
    interface_wdofs: np.ndarray = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @classmethod
    def from_matrices(cls, A, B, C=None):
        """Wrap raw (dense or sparse) matrices, e.g. for tests."""
        A = sp.csr_matrix(A)
        B = sp.csr_matrix(B)
        if C is not None and not sp.issparse(C):
            C = sp.csr_matrix(np.atleast_2d(C))
        return cls(A, B, C)

    def export_matrix_market(self, directory, stem="system"):
        import os
        import scipy.io as sio
        os.makedirs(directory, exist_ok=True)
        paths = []
        for name, mat in (("A", self.A), ("B", self.B), ("C", self.C)):
            if mat is None:
                continue
            path = os.path.join(directory, f"{stem}_{name}.mtx")
            sio.mmwrite(path, sp.coo_matrix(mat))
            paths.append(path)
        return paths


def build_block_system(mesh: Mesh, family: str, materials: MaterialField,
                       degree: int = 4) -> BlockSystem:
    spaces = build_spaces(mesh, family)
    A = assemble_stiffness(mesh, spaces, materials, degree)
    B = assemble_mass(mesh, spaces, materials, degree)
    C, wdofs = assemble_interface(mesh, spaces)
    return BlockSystem(A, B, C, spaces.layout, spaces, wdofs)
