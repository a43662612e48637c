"""Residual-based a posteriori error indicators.

For an eigenpair (kappa = omega^2, u, w, p) the estimator collects
coefficient-weighted element residuals, inter-element jumps and interface
contributions:

  solid   R1 = div(2 mu_h eps(u)) - grad p + omega^2 rho_s u,
          R2 = div u + lam^-1 p,
          J  = jump of (2 mu_h eps(u) - p I) n,
  fluid   R1 = c^2 rho_f grad(div w) + omega^2 rho_f w,
          R2 = rot(omega^2 rho_f w),
          J1 = jump of c^2 rho_f (div w) n,   J2 = jump of
          omega^2 rho_f w x n,
  coupling   (2 mu_h eps(u) - p I) n - c^2 rho_f (div w) n and
          omega^2 rho_f w x n on the interface,

with mu_h an elementwise polynomial projection of mu and the data
oscillation Theta measuring (mu - mu_h) eps(u).  On the free surface the
flux residual includes the g rho_f (w.n) sloshing term, mirroring the
boundary condition there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import elements as el
from .assembly import MaterialField, Spaces
from .eigensolve import EigenPair
from .meshing import (Mesh, SOLID, FLUID, INTERIOR, GAMMA_D, GAMMA_N,
                      GAMMA_0, INTERFACE)

DEFAULT_DEGREE = 5
DEFAULT_EDGE_POINTS = 3
DEFAULT_PROJECTION = 1


class EstimatorError(Exception):
    pass


@dataclass(frozen=True)
class Weights:
    """Coefficient weights evaluated pointwise (arrays broadcastable
    against the residual quadrature grids)."""

    rho1_s: object = None    # (2 mu_h)^(-1/2)
    rho2_s: object = None    # [(2 mu_h)^-1 + lam^-1]^-1
    rhoE_s: object = None    # (2 mu_h)^(-1/2) / sqrt(2)
    rho_f: float = None      # (c^2 rho_f)^(-1/2)
    rhoE_f: float = None     # min{rho_f, (omega^2 rho_f)^(-1/2)} / sqrt(2)
    rho_i: object = None     # min{rhoE_f, rhoE_s}

    @staticmethod
    def solid(mu_h, inv_lambda):
        r1 = 1.0 / np.sqrt(2.0 * mu_h)
        r2 = 1.0 / (1.0 / (2.0 * mu_h) + inv_lambda)
        return r1, r2, r1 / np.sqrt(2.0)

    @staticmethod
    def fluid(materials: MaterialField, kappa: float):
        if kappa <= 0:
            raise EstimatorError("fluid weights need omega > 0; kernel "
                                 "modes have no estimator")
        rf = 1.0 / np.sqrt(materials.c ** 2 * materials.rho_f)
        re = min(rf, 1.0 / np.sqrt(kappa * materials.rho_f)) / np.sqrt(2.0)
        return rf, re


@dataclass(frozen=True)
class IndicatorSet:
    """Local estimator contributions and their aggregates."""

    solid_tris: np.ndarray = None
    eta2_K_S: np.ndarray = None
    theta2_K_S: np.ndarray = None
    solid_edges: np.ndarray = None
    eta2_J_S: np.ndarray = None
    fluid_tris: np.ndarray = None
    eta2_K_F: np.ndarray = None
    fluid_edges: np.ndarray = None
    eta2_J_F: np.ndarray = None
    interface_edges: np.ndarray = None
    eta2_E_I: np.ndarray = None
    mode_key: tuple = None

    @property
    def eta2(self) -> float:
        total = 0.0
        for arr in (self.eta2_K_S, self.eta2_J_S, self.eta2_K_F,
                    self.eta2_J_F, self.eta2_E_I):
            if arr is not None:
                total += float(arr.sum())
        return total

    @property
    def theta2(self) -> float:
        return float(self.theta2_K_S.sum()) \
            if self.theta2_K_S is not None else 0.0

    def element_totals(self, mesh: Mesh) -> np.ndarray:
        """Per-triangle totals for marking: edge terms split half/half
        between neighbors, boundary edges in full, interface edges in
        full to both sides."""
        eta = np.zeros(mesh.num_triangles)
        if self.eta2_K_S is not None:
            eta[self.solid_tris] += self.eta2_K_S
        if self.eta2_K_F is not None:
            eta[self.fluid_tris] += self.eta2_K_F
        for edges, vals in ((self.solid_edges, self.eta2_J_S),
                            (self.fluid_edges, self.eta2_J_F)):
            if edges is None:
                continue
            t0 = mesh.edge_tris[edges, 0]
            t1 = mesh.edge_tris[edges, 1]
            interior = t1 >= 0
            np.add.at(eta, t0[interior], 0.5 * vals[interior])
            np.add.at(eta, t1[interior], 0.5 * vals[interior])
            np.add.at(eta, t0[~interior], vals[~interior])
        if self.interface_edges is not None:
            t0 = mesh.edge_tris[self.interface_edges, 0]
            t1 = mesh.edge_tris[self.interface_edges, 1]
            np.add.at(eta, t0, self.eta2_E_I)
            np.add.at(eta, t1, self.eta2_E_I)
        return eta

    def merged_with(self, other: "IndicatorSet") -> "IndicatorSet":
        if other.mode_key != self.mode_key:
            raise EstimatorError("cannot merge indicator parts from "
                                 "different modes")
        data = {}
        for name in self.__dataclass_fields__:
            a = getattr(self, name)
            b = getattr(other, name)
            data[name] = a if b is None else b
        return IndicatorSet(**data)

    def to_csv(self, mesh: Mesh) -> str:
        sub = {int(t): "solid" for t in (self.solid_tris if
                                         self.solid_tris is not None
                                         else ())}
        sub.update({int(t): "fluid" for t in (self.fluid_tris if
                                              self.fluid_tris is not None
                                              else ())})
        volume = np.zeros(mesh.num_triangles)
        if self.eta2_K_S is not None:
            volume[self.solid_tris] = self.eta2_K_S
        if self.eta2_K_F is not None:
            volume[self.fluid_tris] = self.eta2_K_F
        totals = self.element_totals(mesh)
        lines = ["element,subdomain,eta2_volume,eta2_total"]
        for t in range(mesh.num_triangles):
            lines.append(f"{t},{sub.get(t, '?')},{volume[t]:.12e},"
                         f"{totals[t]:.12e}")
        return "\n".join(lines) + "\n"


def _mode_key(mode: EigenPair):
    return (id(mode), mode.kappa)


# ----------------------------------------------------------------------
# elementwise projection of mu
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class MuProjection:
    """Elementwise L2 polynomial projection of mu on the solid triangles.

    degree 0 stores one coefficient per element, degree 1 three
    barycentric coefficients; gradients are elementwise constant.
    """

    degree: int
    coeff: np.ndarray        # (nt, 1) or (nt, 3)
    grad: np.ndarray         # (nt, 2)

    def at(self, bary) -> np.ndarray:
        """(nt, nq) values at shared barycentric points."""
        bary = np.asarray(bary, float)
        if self.degree == 0:
            return np.repeat(self.coeff, len(bary), axis=1)
        return np.einsum("tk,qk->tq", self.coeff, bary)

    def at_per_entity(self, bary) -> np.ndarray:
        """(n, nq) values at per-entity barycentric points (n, nq, 3)."""
        if self.degree == 0:
            return np.broadcast_to(self.coeff, bary.shape[:2]).copy()
        return np.einsum("tk,tqk->tq", self.coeff, bary)


def project_mu(mesh: Mesh, tris, materials: MaterialField,
               degree: int = DEFAULT_PROJECTION,
               quad_degree: int = DEFAULT_DEGREE) -> MuProjection:
    if degree not in (0, 1):
        raise EstimatorError("mu projection degree must be 0 or 1")
    geo = el.tri_geometry(mesh, tris)
    q = el.quadrature(quad_degree)
    pts = el.physical_points(geo, q.points)
    muq = materials.mu(pts)
    dv = q.weights[None, :] * geo.det[:, None]
    if degree == 0:
        coeff = ((muq * dv).sum(axis=1) / geo.area)[:, None]
        return MuProjection(0, coeff, np.zeros((len(tris), 2)))
    # barycentric mass matrix is area/12 * (I + ones)
    rhs = np.einsum("tq,qk->tk", muq * dv, q.points)
    M = (np.eye(3) + np.ones((3, 3))) / 12.0
    coeff = np.linalg.solve(M[None] * geo.area[:, None, None],
                            rhs[:, :, None])[:, :, 0]
    dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grad_ref = coeff @ dl                      # (nt, 2) in ref coords
    grad = np.einsum("td,tdc->tc", grad_ref, geo.inv_jac)
    return MuProjection(1, coeff, grad)


# ----------------------------------------------------------------------
# field evaluation helpers
# ----------------------------------------------------------------------

def _solid_fields_at(mesh, spaces, mode, bary, tris_positions=None,
                     hessians=False):
    """Values/derivatives of (u, p) at shared barycentric points on the
    solid triangles (or a subset given by positions into u_map.tris)."""
    umap, pmap = spaces.u_map, spaces.p_map
    tris = umap.tris if tris_positions is None \
        else umap.tris[tris_positions]
    geo = el.tri_geometry(mesh, tris)
    val, grad, hess = el.scalar_tables(umap.kind, geo, bary,
                                       hessians=hessians)
    c2d = umap.cell2dof if tris_positions is None \
        else umap.cell2dof[tris_positions]
    uc = mode.u[c2d]                           # (nt, 2 ns)
    ux, uy = uc[:, 0::2], uc[:, 1::2]
    u_val = np.stack([np.einsum("qs,ts->tq", val, ux),
                      np.einsum("qs,ts->tq", val, uy)], axis=-1)
    u_grad = np.stack([np.einsum("tqsd,ts->tqd", grad, ux),
                       np.einsum("tqsd,ts->tqd", grad, uy)], axis=-2)
    u_hess = None
    if hessians:
        u_hess = np.stack([np.einsum("tqsab,ts->tqab", hess, ux),
                           np.einsum("tqsab,ts->tqab", hess, uy)], axis=-3)
    pval, pgrad, _ = el.scalar_tables(el.P1, geo, bary)
    p2d = pmap.cell2dof if tris_positions is None \
        else pmap.cell2dof[tris_positions]
    pc = mode.p[p2d]
    p_val = np.einsum("qs,ts->tq", pval, pc)
    p_grad = np.einsum("tqsd,ts->tqd", pgrad, pc)
    return geo, u_val, u_grad, u_hess, p_val, p_grad


def _strain(u_grad):
    return 0.5 * (u_grad + np.swapaxes(u_grad, -1, -2))


# ----------------------------------------------------------------------
# solid indicators
# ----------------------------------------------------------------------

def solid_indicators(mesh: Mesh, spaces: Spaces, mode: EigenPair,
                     materials: MaterialField,
                     quad_degree: int = DEFAULT_DEGREE,
                     projection_degree: int = DEFAULT_PROJECTION,
                     edge_points: int = DEFAULT_EDGE_POINTS) -> IndicatorSet:
    """Element residuals, data oscillation and solid-edge jumps."""
    if spaces.u_map.ndof and len(mode.u) != spaces.u_map.ndof:
        raise EstimatorError("mode does not carry solid fields for these "
                             "spaces")
    tris = spaces.u_map.tris
    if not len(tris):
        return IndicatorSet(mode_key=_mode_key(mode))
    q = el.quadrature(quad_degree)
    geo, u_val, u_grad, u_hess, p_val, p_grad = _solid_fields_at(
        mesh, spaces, mode, q.points, hessians=True)
    pts = el.physical_points(geo, q.points)
    dv = q.weights[None, :] * geo.det[:, None]
    proj = project_mu(mesh, tris, materials, projection_degree, quad_degree)
    mu_h = proj.at(q.points)
    mu_exact = materials.mu(pts)
    il = materials.inv_lambda(pts)
    kappa, rho_s = mode.kappa, materials.rho_s

    eps = _strain(u_grad)                      # (nt, nq, 2, 2)
    # div(2 mu_h eps(u)) = mu_h (lap u + grad div u) + 2 eps(u) grad mu_h
    lap_u = u_hess[..., 0, 0] + u_hess[..., 1, 1]        # (nt, nq, 2)
    div_u = u_grad[..., 0, 0] + u_grad[..., 1, 1]        # (nt, nq)
    grad_div = np.stack([u_hess[..., 0, 0, 0] + u_hess[..., 1, 0, 1],
                         u_hess[..., 0, 1, 0] + u_hess[..., 1, 1, 1]],
                        axis=-1)
    div_stress = mu_h[..., None] * (lap_u + grad_div) \
        + 2.0 * np.einsum("tqij,tj->tqi", eps, proj.grad)
    R1 = div_stress - p_grad + kappa * rho_s * u_val
    R2 = div_u + il * p_val

    rho1, rho2, _ = Weights.solid(mu_h, il)
    hK2 = mesh.tri_diameters(tris) ** 2
    eta_K = hK2 * np.einsum("tq,tq->t", dv, rho1 ** 2 *
                            np.einsum("tqi,tqi->tq", R1, R1)) \
        + np.einsum("tq,tq->t", dv, rho2 * R2 ** 2)
    theta_K = np.einsum("tq,tq->t", dv, rho1 ** 2 * (mu_exact - mu_h) ** 2
                        * np.einsum("tqij,tqij->tq", eps, eps))

    edges, eta_J = _solid_edge_jumps(mesh, spaces, mode, materials,
                                     projection_degree, quad_degree,
                                     edge_points)
    return IndicatorSet(solid_tris=tris, eta2_K_S=eta_K,
                        theta2_K_S=theta_K, solid_edges=edges,
                        eta2_J_S=eta_J, mode_key=_mode_key(mode))


def _edge_frames(mesh, edges):
    a = mesh.vertices[mesh.edges[edges, 0]]
    b = mesh.vertices[mesh.edges[edges, 1]]
    tang = b - a
    length = np.linalg.norm(tang, axis=1)
    nrm = np.column_stack([tang[:, 1], -tang[:, 0]]) / length[:, None]
    return a, tang, nrm, length


def _bary_on_tri(geo: el.TriGeometry, pts):
    """Barycentric coordinates of physical points (n, m, 2) on the
    triangles of geo (row-aligned): xi = B^-1 (x - v0)."""
    rel = pts - geo.coords[:, None, 0, :]
    xi = np.einsum("tdc,tmc->tmd", geo.inv_jac, rel)
    lam0 = 1.0 - xi[..., 0] - xi[..., 1]
    return np.stack([lam0, xi[..., 0], xi[..., 1]], axis=-1)


def _solid_stress_trace(mesh, spaces, mode, materials, proj, edges, side,
                        tq):
    """(2 mu_h eps(u) - p I) n at edge quadrature points, from one side."""
    tri_ids = mesh.edge_tris[edges, side]
    pos = _positions(spaces.u_map.tris)
    k = pos[tri_ids]
    a, tang, nrm, length = _edge_frames(mesh, edges)
    pts = a[:, None, :] + tq[None, :, None] * tang[:, None, :]
    geo = el.tri_geometry(mesh, spaces.u_map.tris[k])
    bary = _bary_on_tri(geo, pts)
    flat = bary.reshape(-1, 3)
    nq = len(tq)
    val, gref, _ = el.scalar_basis_at(spaces.u_map.kind, flat)
    ns = val.shape[1]
    val = val.reshape(len(edges), nq, ns)
    gref = gref.reshape(len(edges), nq, ns, 2)
    grad = np.einsum("eqsd,edc->eqsc", gref, geo.inv_jac)
    uc = mode.u[spaces.u_map.cell2dof[k]]
    ux, uy = uc[:, 0::2], uc[:, 1::2]
    u_grad = np.stack([np.einsum("eqsd,es->eqd", grad, ux),
                       np.einsum("eqsd,es->eqd", grad, uy)], axis=-2)
    eps = _strain(u_grad)
    pval, _, _ = el.scalar_basis_at(el.P1, flat)
    pval = pval.reshape(len(edges), nq, 3)
    pc = mode.p[spaces.p_map.cell2dof[k]]
    p = np.einsum("eqs,es->eq", pval, pc)
    mu_h = _mu_at(proj, k, bary)
    stress = 2.0 * mu_h[..., None, None] * eps
    stress[..., 0, 0] -= p
    stress[..., 1, 1] -= p
    traction = np.einsum("eqij,ej->eqi", stress, nrm)
    return traction, mu_h, length


def _mu_at(proj: MuProjection, positions, bary):
    if proj.degree == 0:
        return np.broadcast_to(proj.coeff[positions],
                               bary.shape[:2]).copy()
    return np.einsum("ek,eqk->eq", proj.coeff[positions], bary)


def _positions(ids):
    pos = np.full(int(ids.max(initial=-1)) + 1, -1, dtype=np.int64)
    pos[ids] = np.arange(len(ids))
    return pos


def _solid_edge_jumps(mesh, spaces, mode, materials, projection_degree,
                      quad_degree, edge_points):
    tag = mesh.edge_tag
    t0, t1 = mesh.edge_tris[:, 0], mesh.edge_tris[:, 1]
    solid0 = mesh.tri_tag[np.clip(t0, 0, None)] == SOLID
    interior = (tag == INTERIOR) & (t1 >= 0) & solid0
    neumann = (tag == GAMMA_N)
    edges = np.flatnonzero(interior | neumann).astype(np.int32)
    if not len(edges):
        return edges, np.zeros(0)
    proj = project_mu(mesh, spaces.u_map.tris, materials,
                      projection_degree, quad_degree)
    tqe, wqe = el.edge_gauss(edge_points)
    tr0, mu0, length = _solid_stress_trace(mesh, spaces, mode, materials,
                                           proj, edges, 0, tqe)
    is_int = interior[edges]
    J = tr0.copy()
    mu_edge = mu0.copy()
    if is_int.any():
        sub = edges[is_int]
        tr1, mu1, _ = _solid_stress_trace(mesh, spaces, mode, materials,
                                          proj, sub, 1, tqe)
        J[is_int] = 0.5 * (tr0[is_int] - tr1)
        mu_edge[is_int] = 0.5 * (mu0[is_int] + mu1)
    rhoE2 = 1.0 / (2.0 * mu_edge) / 2.0        # (rho_E^S)^2 pointwise
    J2 = np.einsum("eqi,eqi->eq", J, J)
    eta = length ** 2 * np.einsum("q,eq->e", wqe, rhoE2 * J2)
    return edges, eta


# ----------------------------------------------------------------------
# fluid indicators
# ----------------------------------------------------------------------

def _fluid_eval(mesh, spaces, mode):
    coeff, geo = el.bdm_cell_coefficients(mesh, spaces.w_map)
    wc = mode.w[spaces.w_map.cell2dof]
    divs = coeff @ np.array([0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
    div_w = np.einsum("tj,tj->t", divs, wc)
    grads = el.bdm_gradients(coeff)
    gw = np.einsum("tjcd,tj->tcd", grads, wc)
    rot_w = gw[:, 1, 0] - gw[:, 0, 1]
    return coeff, geo, wc, div_w, rot_w


def fluid_indicators(mesh: Mesh, spaces: Spaces, mode: EigenPair,
                     materials: MaterialField,
                     quad_degree: int = DEFAULT_DEGREE,
                     edge_points: int = DEFAULT_EDGE_POINTS) -> IndicatorSet:
    """Element residuals and edge jumps on the fluid subdomain.

    The lowest-order fluid element has elementwise-constant divergence,
    so grad(div w) vanishes and the volume residual reduces to the
    omega^2 rho_f terms.
    """
    if mode.kappa <= 0:
        raise EstimatorError("kernel mode (omega = 0) has no fluid "
                             "estimator weights")
    tris = spaces.w_map.tris
    if not len(tris):
        return IndicatorSet(mode_key=_mode_key(mode))
    coeff, geo, wc, div_w, rot_w = _fluid_eval(mesh, spaces, mode)
    q = el.quadrature(quad_degree)
    cpts = el.physical_points(geo, q.points) - geo.centroid[:, None, :]
    vals, _ = el.bdm_eval(coeff, cpts)
    w_val = np.einsum("tqjc,tj->tqc", vals, wc)
    dv = q.weights[None, :] * geo.det[:, None]
    kappa, rho_f = mode.kappa, materials.rho_f
    rf, re = Weights.fluid(materials, kappa)

    # R1 = c^2 rho_f grad(div w) + kappa rho_f w; the first term is zero
    # elementwise for BDM1
    R1sq = (kappa * rho_f) ** 2 * np.einsum("tqc,tqc->tq", w_val, w_val)
    R2sq = (kappa * rho_f * rot_w) ** 2
    hK2 = mesh.tri_diameters(tris) ** 2
    eta_K = hK2 * rf ** 2 * (np.einsum("tq,tq->t", dv, R1sq)
                             + R2sq * geo.area)

    edges, eta_J = _fluid_edge_jumps(mesh, spaces, mode, materials,
                                     coeff, geo, wc, div_w, edge_points)
    return IndicatorSet(fluid_tris=tris, eta2_K_F=eta_K,
                        fluid_edges=edges, eta2_J_F=eta_J,
                        mode_key=_mode_key(mode))


def _fluid_trace(mesh, spaces, coeff, geo, wc, edges, side, tq):
    """w at edge quadrature points from one side, (ne, nq, 2)."""
    pos = _positions(spaces.w_map.tris)
    k = pos[mesh.edge_tris[edges, side]]
    a, tang, nrm, length = _edge_frames(mesh, edges)
    pts = a[:, None, :] + tq[None, :, None] * tang[:, None, :]
    cpts = pts - geo.centroid[k][:, None, :]
    vals, _ = el.bdm_eval(coeff[k], cpts)
    w = np.einsum("eqjc,ej->eqc", vals, wc[k])
    return w, nrm, length, k


def _fluid_edge_jumps(mesh, spaces, mode, materials, coeff, geo, wc,
                      div_w, edge_points):
    tag = mesh.edge_tag
    t0, t1 = mesh.edge_tris[:, 0], mesh.edge_tris[:, 1]
    fluid0 = mesh.tri_tag[np.clip(t0, 0, None)] == FLUID
    interior = (tag == INTERIOR) & (t1 >= 0) & fluid0
    surface = tag == GAMMA_0
    edges = np.flatnonzero(interior | surface).astype(np.int32)
    if not len(edges):
        return edges, np.zeros(0)
    kappa = mode.kappa
    c2rf = materials.c ** 2 * materials.rho_f
    rho_f = materials.rho_f
    rf, re = Weights.fluid(materials, kappa)
    tqe, wqe = el.edge_gauss(edge_points)
    pos = _positions(spaces.w_map.tris)

    w0, nrm, length, k0 = _fluid_trace(mesh, spaces, coeff, geo, wc,
                                       edges, 0, tqe)
    div0 = div_w[k0]
    is_int = interior[edges]
    eta = np.zeros(len(edges))

    if is_int.any():
        sub = edges[is_int]
        w1, _, _, k1 = _fluid_trace(mesh, spaces, coeff, geo, wc, sub, 1,
                                    tqe)
        jump_div = 0.5 * c2rf * (div0[is_int] - div_w[k1])   # along n0
        dw = 0.5 * (w0[is_int] - w1)
        n0 = nrm[is_int]
        jump_cross = kappa * rho_f * (dw[..., 0] * n0[:, None, 1]
                                      - dw[..., 1] * n0[:, None, 0])
        j1 = jump_div[:, None] ** 2 * np.ones_like(jump_cross)
        eta[is_int] = length[is_int] ** 2 * re ** 2 * np.einsum(
            "q,eq->e", wqe, j1 + jump_cross ** 2)

    if (~is_int).any():
        sub = ~is_int
        # the sloshing flux residual needs the outward normal
        mids = mesh.vertices[mesh.edges[edges[sub]]].mean(axis=1)
        cent = geo.centroid[pos[mesh.edge_tris[edges[sub], 0]]]
        flip = np.einsum("ec,ec->e", nrm[sub], mids - cent) < 0
        n0 = np.where(flip[:, None], -nrm[sub], nrm[sub])
        wn = np.einsum("eqc,ec->eq", w0[sub], n0)
        flux = c2rf * div0[sub][:, None] + materials.g * rho_f * wn
        cross = kappa * rho_f * (w0[sub][..., 0] * n0[:, None, 1]
                                 - w0[sub][..., 1] * n0[:, None, 0])
        eta[sub] = length[sub] ** 2 * re ** 2 * np.einsum(
            "q,eq->e", wqe, flux ** 2 + cross ** 2)
    return edges, eta


# ----------------------------------------------------------------------
# interface indicators
# ----------------------------------------------------------------------

def interface_indicators(mesh: Mesh, spaces: Spaces, mode: EigenPair,
                         materials: MaterialField,
                         quad_degree: int = DEFAULT_DEGREE,
                         projection_degree: int = DEFAULT_PROJECTION,
                         edge_points: int = DEFAULT_EDGE_POINTS
                         ) -> IndicatorSet:
    """Stress-balance and tangential-slip contributions on the interface."""
    edges = mesh.edges_with_tag(INTERFACE)
    if not len(edges):
        return IndicatorSet(interface_edges=edges, eta2_E_I=np.zeros(0),
                            mode_key=_mode_key(mode))
    if mode.kappa <= 0:
        raise EstimatorError("kernel mode (omega = 0) has no interface "
                             "estimator weights")
    tqe, wqe = el.edge_gauss(edge_points)
    solid_side = np.where(
        mesh.tri_tag[mesh.edge_tris[edges, 0]] == SOLID, 0, 1)
    fluid_side = 1 - solid_side

    proj = project_mu(mesh, spaces.u_map.tris, materials,
                      projection_degree, quad_degree)
    # one-sided solid traction; evaluate per side grouping
    traction = np.empty((len(edges), len(tqe), 2))
    mu_edge = np.empty((len(edges), len(tqe)))
    length = np.empty(len(edges))
    for side in (0, 1):
        sel = solid_side == side
        if sel.any():
            tr, mu, ln = _solid_stress_trace(mesh, spaces, mode, materials,
                                             proj, edges[sel], side, tqe)
            traction[sel], mu_edge[sel], length[sel] = tr, mu, ln

    coeff, geo_f = el.bdm_cell_coefficients(mesh, spaces.w_map)
    wc = mode.w[spaces.w_map.cell2dof]
    divs = coeff @ np.array([0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
    div_w = np.einsum("tj,tj->t", divs, wc)
    w_tr = np.empty((len(edges), len(tqe), 2))
    div_tr = np.empty(len(edges))
    nrm = np.empty((len(edges), 2))
    for side in (0, 1):
        sel = fluid_side == side
        if sel.any():
            w, n, _, k = _fluid_trace(mesh, spaces, coeff, geo_f, wc,
                                      edges[sel], side, tqe)
            w_tr[sel], nrm[sel], div_tr[sel] = w, n, div_w[k]

    c2rf = materials.c ** 2 * materials.rho_f
    kappa, rho_f = mode.kappa, materials.rho_f
    rf, re = Weights.fluid(materials, kappa)
    rhoE_s = 1.0 / np.sqrt(2.0 * mu_edge) / np.sqrt(2.0)
    rho_i = np.minimum(re, rhoE_s)

    balance = traction - c2rf * div_tr[:, None, None] * nrm[:, None, :]
    bal2 = np.einsum("eqi,eqi->eq", balance, balance)
    cross = kappa * rho_f * (w_tr[..., 0] * nrm[:, None, 1]
                             - w_tr[..., 1] * nrm[:, None, 0])
    eta = length ** 2 * np.einsum("q,eq->e", wqe,
                                  rho_i ** 2 * bal2 + re ** 2 * cross ** 2)
    return IndicatorSet(interface_edges=edges, eta2_E_I=eta,
                        mode_key=_mode_key(mode))


# ----------------------------------------------------------------------
# aggregation
# ----------------------------------------------------------------------

def global_estimate(*parts: IndicatorSet):
    """Sum all element, edge and interface contributions of one mode.

    Returns (eta2, theta2, merged IndicatorSet).
    """
    if not parts:
        raise EstimatorError("no indicator parts given")
    merged = parts[0]
    for part in parts[1:]:
        merged = merged.merged_with(part)
    return merged.eta2, merged.theta2, merged


def estimate_mode(mesh: Mesh, spaces: Spaces, mode: EigenPair,
                  materials: MaterialField,
                  quad_degree: int = DEFAULT_DEGREE,
                  projection_degree: int = DEFAULT_PROJECTION):
    """Convenience wrapper computing all three parts and the aggregate."""
    parts = [solid_indicators(mesh, spaces, mode, materials, quad_degree,
                              projection_degree)]
    if len(spaces.w_map.tris):
        parts.append(fluid_indicators(mesh, spaces, mode, materials,
                                      quad_degree))
        parts.append(interface_indicators(mesh, spaces, mode, materials,
                                          quad_degree, projection_degree))
    return global_estimate(*parts)
