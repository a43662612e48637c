"""VTK legacy ASCII export of meshes and eigenmodes.

Point data: solid displacement (vectors, zero off the solid) and solid
pressure; cell data: cell-averaged fluid displacement and, optionally,
the per-element indicator totals.  Values are written with 17 significant
digits so a round trip is lossless.
"""

from __future__ import annotations

import numpy as np

from . import elements as el
from .assembly import Spaces
from .eigensolve import EigenPair
from .meshing import Mesh


def _fmt(x) -> str:
    return f"{x:.17g}"


def point_data_from_mode(mesh: Mesh, spaces: Spaces, mode: EigenPair):
    """(u at vertices (nv, 2), p at vertices (nv,)) with zeros off the
    solid."""
    nv = mesh.num_vertices
    u_pts = np.zeros((nv, 2))
    p_pts = np.zeros(nv)
    umap = spaces.u_map
    sel = (umap.entity == 0) & (umap.component == 0)
    vids = umap.entity_id[sel]
    dofs = np.flatnonzero(sel)
    u_pts[vids, 0] = mode.u[dofs]
    u_pts[vids, 1] = mode.u[dofs + 1]
    pmap = spaces.p_map
    vids = pmap.entity_id[pmap.entity == 0]
    p_pts[vids] = mode.p
    return u_pts, p_pts


def cell_data_from_mode(mesh: Mesh, spaces: Spaces, mode: EigenPair):
    """Cell-averaged fluid displacement (nt, 2), zero off the fluid."""
    w_cells = np.zeros((mesh.num_triangles, 2))
    wmap = spaces.w_map
    if len(wmap.tris):
        coeff, geo = el.bdm_cell_coefficients(mesh, wmap)
        q = el.quadrature(2)
        cpts = el.physical_points(geo, q.points) - geo.centroid[:, None, :]
        vals, _ = el.bdm_eval(coeff, cpts)
        wc = mode.w[wmap.cell2dof]
        wq = np.einsum("tqjc,tj->tqc", vals, wc)
        w_cells[wmap.tris] = 2.0 * np.einsum("q,tqc->tc", q.weights, wq)
    return w_cells


def export_fields(mesh: Mesh, mode: EigenPair, path, spaces: Spaces = None,
                  indicators=None) -> str:
    """Write a VTK legacy ASCII unstructured grid with the mode fields."""
    if spaces is None:
        raise ValueError("spaces are required to interpret the mode "
                         "coefficient vectors")
    u_pts, p_pts = point_data_from_mode(mesh, spaces, mode)
    w_cells = cell_data_from_mode(mesh, spaces, mode)
    nv, nt = mesh.num_vertices, mesh.num_triangles
    lines = [
        "# vtk DataFile Version 3.0",
        f"coupled vibration mode omega={mode.omega:.10g}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    for x, y in mesh.vertices:
        lines.append(f"{_fmt(x)} {_fmt(y)} 0")
    lines.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines.extend(["5"] * nt)
    lines.append(f"POINT_DATA {nv}")
    lines.append("VECTORS solid_displacement double")
    for ux, uy in u_pts:
        lines.append(f"{_fmt(ux)} {_fmt(uy)} 0")
    lines.append("SCALARS solid_pressure double 1")
    lines.append("LOOKUP_TABLE default")
    for p in p_pts:
        lines.append(_fmt(p))
    lines.append(f"CELL_DATA {nt}")
    lines.append("VECTORS fluid_displacement double")
    for wx, wy in w_cells:
        lines.append(f"{_fmt(wx)} {_fmt(wy)} 0")
    lines.append("SCALARS subdomain int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(int(t)) for t in mesh.tri_tag)
    if indicators is not None:
        eta = indicators.element_totals(mesh)
        lines.append("SCALARS eta2 double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_fmt(v) for v in eta)
    text = "\n".join(lines) + "\n"
    with open(path, "w") as f:
        f.write(text)
    return path
