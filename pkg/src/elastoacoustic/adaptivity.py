"""Adaptive solve-estimate-mark-refine loop with mode tracking.

Marking uses the maximum strategy: refine every triangle whose indicator
reaches the fraction theta of the largest one.  Across refinements the
tracked eigenmode is identified by the largest mass-weighted overlap with
the previous eigenvector interpolated onto the new mesh, falling back to
the nearest frequency when overlaps are ambiguous.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import elements as el
from .assembly import build_block_system, build_spaces
from .config import RunConfig
from .eigensolve import EigenPair
from .estimator import estimate_mode
from .meshing import Mesh, FLUID, bisect, build_cavity_mesh, validate
from .study import StudyError, solve_window


class AdaptivityError(Exception):
    pass


def mark(indicators, theta: float):
    """Ids of entries with indicator >= theta * max(indicator)."""
    vals = np.asarray(indicators, float)
    if vals.size == 0:
        raise AdaptivityError("empty indicator array")
    if not 0.0 < theta <= 1.0:
        raise AdaptivityError("theta must lie in (0, 1]")
    cut = theta * vals.max()
    return np.flatnonzero(vals >= cut).astype(np.int64)


def effectivity(err: float, eta2: float) -> float:
    """Quotient err / eta^2 of eigenvalue error and squared estimator."""
    if eta2 <= 0.0:
        if err > 0.0:
            raise AdaptivityError(
                "zero estimator with nonzero error; indicators are "
                "inconsistent with the supplied reference")
        return 0.0
    return err / eta2


@dataclass
class AdaptiveHistory:
    """Append-only per-iteration records of the adaptive loop."""

    geometry: str
    family: str
    nu: float
    mode_index: int
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def append(self, **kwargs):
        if self.records and kwargs["dofs"] <= self.records[-1]["dofs"]:
            raise AdaptivityError("dof counts must increase across "
                                  "iterations")
        self.records.append(kwargs)

    def column(self, key) -> np.ndarray:
        return np.array([rec[key] for rec in self.records])

    def to_csv(self) -> str:
        cols = ("iteration", "dofs", "cells", "omega", "eta2", "theta2",
                "err", "eff", "wall_time")
        lines = [",".join(cols)]
        for rec in self.records:
            vals = []
            for c in cols:
                v = rec[c]
                vals.append(str(v) if isinstance(v, int)
                            else ("" if v is None else f"{v:.12e}"))
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# interpolation between meshes (for mode tracking)
# ----------------------------------------------------------------------

class _PointLocator:
    """Bucket-grid point location with barycentric membership tests."""

    def __init__(self, mesh: Mesh, tris=None):
        self.mesh = mesh
        self.tris = np.arange(mesh.num_triangles, dtype=np.int64) \
            if tris is None else np.asarray(tris, dtype=np.int64)
        coords = mesh.tri_coords(self.tris)
        self.geo = el.tri_geometry(mesh, self.tris)
        lo = coords.min(axis=(0, 1))
        hi = coords.max(axis=(0, 1))
        self.lo = lo
        n = max(1, int(np.sqrt(len(self.tris) / 2)))
        self.nb = n
        self.h = np.maximum((hi - lo) / n, 1e-300)
        self.buckets = {}
        bmin = np.floor((coords.min(axis=1) - lo) / self.h).astype(int)
        bmax = np.floor((coords.max(axis=1) - lo) / self.h).astype(int)
        for k in range(len(self.tris)):
            for bx in range(max(bmin[k, 0], 0),
                            min(bmax[k, 0], n - 1) + 1):
                for by in range(max(bmin[k, 1], 0),
                                min(bmax[k, 1], n - 1) + 1):
                    self.buckets.setdefault((bx, by), []).append(k)

    def locate(self, pts, eps=1e-10):
        """Positions (into self.tris) and barycentric coords per point."""
        pts = np.asarray(pts, float)
        out_k = np.full(len(pts), -1, dtype=np.int64)
        out_b = np.zeros((len(pts), 3))
        cell = np.floor((pts - self.lo) / self.h).astype(int)
        cell = np.clip(cell, 0, self.nb - 1)
        for i, p in enumerate(pts):
            best_k, best_b, best_m = -1, None, -np.inf
            for k in self.buckets.get((cell[i, 0], cell[i, 1]), ()):
                rel = p - self.geo.coords[k, 0]
                xi = self.geo.inv_jac[k] @ rel
                lam = np.array([1.0 - xi[0] - xi[1], xi[0], xi[1]])
                m = lam.min()
                if m > best_m:
                    best_k, best_b, best_m = k, lam, m
                if m >= -eps:
                    break
            if best_k < 0 or best_m < -1e-6:
                raise AdaptivityError("point location failed; meshes are "
                                      "not nested")
            out_k[i] = best_k
            out_b[i] = np.clip(best_b, 0.0, 1.0)
        return out_k, out_b


def _eval_scalar_field(mesh, dofmap, coeffs, locator, pts):
    k, bary = locator.locate(pts)
    val, _, _ = el.scalar_basis_at(dofmap.kind, bary)
    c = coeffs[dofmap.cell2dof[k]]
    if dofmap.kind.vector:
        return np.stack([np.einsum("ns,ns->n", val, c[:, 0::2]),
                         np.einsum("ns,ns->n", val, c[:, 1::2])], axis=-1)
    return np.einsum("ns,ns->n", val, c)


def _eval_fluid_field(mesh, dofmap, coeffs, locator, bdm_coeff, geo, pts):
    k, _ = locator.locate(pts)
    cpts = (pts - geo.centroid[k])[:, None, :]
    vals, _ = el.bdm_eval(bdm_coeff[k], cpts)
    return np.einsum("nqjc,nj->nc", vals, coeffs[dofmap.cell2dof[k]])[:, :]


def interpolate_mode(old_mesh: Mesh, old_spaces, mode: EigenPair,
                     new_mesh: Mesh, new_spaces):
    """Nodal/moment interpolation of an eigenpair onto a refined mesh."""
    solid_loc = _PointLocator(old_mesh, old_spaces.u_map.tris) \
        if len(old_spaces.u_map.tris) else None
    u_new = np.zeros(new_spaces.u_map.ndof)
    p_new = np.zeros(new_spaces.p_map.ndof)
    if solid_loc is not None:
        umap = new_spaces.u_map
        sel = umap.entity == 0
        scalar = (umap.component == 0) & sel
        vids = umap.entity_id[scalar]
        pts = new_mesh.vertices[vids]
        vals = _eval_scalar_field(old_mesh, old_spaces.u_map, mode.u,
                                  solid_loc, pts)
        dofs = np.flatnonzero(scalar)
        u_new[dofs] = vals[:, 0]
        u_new[dofs + 1] = vals[:, 1]
        if new_spaces.family == "taylor-hood":
            emid = (umap.entity == 1) & (umap.component == 0)
            eids = umap.entity_id[emid]
            mids = new_mesh.vertices[new_mesh.edges[eids]].mean(axis=1)
            vals = _eval_scalar_field(old_mesh, old_spaces.u_map, mode.u,
                                      solid_loc, mids)
            dofs = np.flatnonzero(emid)
            u_new[dofs] = vals[:, 0]
            u_new[dofs + 1] = vals[:, 1]
        pmap = new_spaces.p_map
        vids = pmap.entity_id[pmap.entity == 0]
        p_new[:] = _eval_scalar_field(old_mesh, old_spaces.p_map, mode.p,
                                      solid_loc, new_mesh.vertices[vids])
    w_new = np.zeros(new_spaces.w_map.ndof)
    if len(old_spaces.w_map.tris):
        fluid_loc = _PointLocator(old_mesh, old_spaces.w_map.tris)
        bdm_coeff, geo = el.bdm_cell_coefficients(old_mesh,
                                                  old_spaces.w_map)
        wmap = new_spaces.w_map
        eids = np.unique(new_mesh.tri_edges[wmap.tris])
        a = new_mesh.vertices[new_mesh.edges[eids, 0]]
        b = new_mesh.vertices[new_mesh.edges[eids, 1]]
        tang = b - a
        nrm = np.column_stack([tang[:, 1], -tang[:, 0]])
        nrm /= np.linalg.norm(nrm, axis=1)[:, None]
        tq, wq = el.edge_gauss(3)
        zeta = np.stack([np.ones_like(tq), el.SQRT3 * (2.0 * tq - 1.0)])
        for q, (t, wgt) in enumerate(zip(tq, wq)):
            # nudge quadrature points off old edges before location
            pts = a + t * tang
            wv = _eval_fluid_field(old_mesh, old_spaces.w_map, mode.w,
                                   fluid_loc, bdm_coeff, geo, pts)
            wn = np.einsum("ec,ec->e", wv, nrm)
            w_new[0::2] += wgt * zeta[0, q] * wn
            w_new[1::2] += wgt * zeta[1, q] * wn
    x = new_spaces.layout.gather(u_new, w_new, p_new)
    return x


def track_mode(prev_mesh, prev_spaces, prev_mode, mesh, spaces, system,
               candidates, history: AdaptiveHistory, nearest_omega):
    """Pick the candidate maximizing the B-weighted overlap with the
    previous mode; fall back to nearest omega on ambiguity."""
    try:
        x_interp = interpolate_mode(prev_mesh, prev_spaces, prev_mode,
                                    mesh, spaces)
    except AdaptivityError as err:
        history.warnings.append(f"interpolation failed ({err}); using "
                                "nearest-frequency tracking")
        return min(candidates,
                   key=lambda p: abs(p.omega - nearest_omega))
    Bx = system.B @ x_interp
    norm_i = np.sqrt(max(x_interp @ Bx, 1e-300))
    overlaps = np.array([abs(p.x @ Bx) /
                         (norm_i * np.sqrt(max(p.x @ (system.B @ p.x),
                                               1e-300)))
                         for p in candidates])
    order = np.argsort(-overlaps)
    best = order[0]
    if len(order) > 1 and overlaps[order[1]] > 0.95 * overlaps[best]:
        history.warnings.append(
            f"ambiguous mode tracking (overlaps "
            f"{overlaps[best]:.3f} vs {overlaps[order[1]]:.3f}); "
            "using nearest frequency")
        return min(candidates,
                   key=lambda p: abs(p.omega - nearest_omega))
    return candidates[best]


# ----------------------------------------------------------------------
# the adaptive loop
# ----------------------------------------------------------------------

def adaptive_solve(config: RunConfig, mode_index: int = None,
                   theta: float = None, max_dofs: int = None,
                   max_iterations: int = None, nu=None) -> AdaptiveHistory:
    """Iterate solve -> filter -> estimate -> mark -> bisect to a budget.

    err is reported against config.reference_omega when supplied (the
    mesh-independent extrapolated frequency), otherwise left empty.
    """
    mode_index = config.mode_index if mode_index is None else mode_index
    theta = config.theta if theta is None else theta
    max_dofs = config.max_dofs if max_dofs is None else max_dofs
    max_iterations = config.max_iterations if max_iterations is None \
        else max_iterations
    if mode_index < 1:
        raise AdaptivityError("mode_index counts from 1")
    nu_val = config.nu if nu is None else nu
    mats = config.materials(nu_val)
    ref = None
    if len(config.reference_omega) >= mode_index:
        ref = config.reference_omega[mode_index - 1]

    history = AdaptiveHistory(config.geometry, config.family, nu_val,
                              mode_index)
    mesh = build_cavity_mesh(config.geometry_spec(), config.initial_level)
    prev = None
    for iteration in range(max_iterations):
        t0 = time.perf_counter()
        system = build_block_system(mesh, config.family, mats,
                                    config.assembly_degree)
        spaces = system.spaces
        pairs, _ = solve_window(system, config.window,
                                n_modes_hint=4 * max(config.n_modes,
                                                     mode_index),
                                shift=config.shift, seed=config.seed)
        if len(pairs) < mode_index:
            raise StudyError(f"adaptive iteration {iteration}: only "
                             f"{len(pairs)} modes in window")
        if prev is None:
            mode = pairs[mode_index - 1]
        else:
            mode = track_mode(*prev, mesh, spaces, system, pairs, history,
                              nearest_omega=history.records[-1]["omega"])
        eta2, theta2, indicators = estimate_mode(
            mesh, spaces, mode, mats, config.estimator_degree,
            config.projection_degree)
        err = abs(mode.kappa - ref ** 2) if ref is not None else None
        eff = effectivity(err, eta2) if err is not None else None
        history.append(iteration=iteration, dofs=system.n,
                       cells=mesh.num_triangles, omega=mode.omega,
                       eta2=eta2, theta2=theta2, err=err, eff=eff,
                       wall_time=time.perf_counter() - t0,
                       )
        if system.n >= max_dofs or iteration == max_iterations - 1:
            break
        totals = indicators.element_totals(mesh)
        marked = mark(np.sqrt(np.maximum(totals, 0.0)), theta)
        refined = bisect(mesh, marked)
        report = validate(refined)
        if not report.ok:
            raise AdaptivityError(
                f"refined mesh invalid: {report.failures()}")
        prev = (mesh, spaces, mode)
        mesh = refined
    return history
