"""Uniform convergence studies, rate fitting and eigenvalue extrapolation.

The windowed spectral driver walks the shift-invert solver until the
requested frequency window is certifiably covered: with the shift at the
window center, every eigenvalue inside the window is strictly closer to
the shift than the near-zero kernel/sloshing cluster, so encountering
that cluster (below) and a mode beyond the upper edge certifies that
nothing inside was missed.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .assembly import MaterialField, build_block_system
from .config import RunConfig
from .eigensolve import (SpectrumReport, solve_pencil, filter_modes,
                         EigenSolveError, KERNEL_TOL)
from .meshing import build_cavity_mesh


class StudyError(Exception):
    pass


RESIDUAL_TOL = 1e-7


def solve_window(system, omega_window, n_modes_hint=8, shift=None,
                 tol=1e-12, seed=20260808, kernel_tol=KERNEL_TOL,
                 residual_tol=RESIDUAL_TOL, k_cap=128):
    """Physical eigenpairs with omega inside the window, ascending.

    Returns (pairs_in_window, full_filtered_report).
    """
    w_lo, w_hi = omega_window
    if not 0 <= w_lo < w_hi:
        raise StudyError("invalid frequency window")
    k_lo, k_hi = w_lo ** 2, w_hi ** 2
    collected = {}
    notes, requested = (), 0
    shift_used = shift if shift is not None else 0.5 * (k_lo + k_hi)

    # Interval covering: a solve returning k pairs certifies that no
    # eigenvalue was missed strictly inside (sigma - d, sigma + d) with
    # d the distance of the farthest returned pair.  Rungs target the
    # largest uncovered gap; keeping k minimal per rung avoids dragging
    # the expensive near-zero sloshing cluster into the Krylov space.
    certified = []
    attempts = {}

    def merge_intervals():
        out = []
        for lo, hi in sorted(certified):
            if out and lo <= out[-1][1] * (1 + 1e-12):
                out[-1] = (out[-1][0], max(out[-1][1], hi))
            else:
                out.append((lo, hi))
        return out

    def gaps():
        out = []
        cur = k_lo
        for lo, hi in merge_intervals():
            if hi <= cur:
                continue
            if lo > cur * (1 + 1e-12) and cur < k_hi:
                out.append((cur, min(lo, k_hi)))
            cur = max(cur, hi)
            if cur >= k_hi:
                break
        if cur < k_hi:
            out.append((cur, k_hi))
        return out

    for _ in range(24):
        open_gaps = gaps()
        if not open_gaps:
            break
        gap = max(open_gaps, key=lambda g: g[1] - g[0])
        center = 0.5 * (gap[0] + gap[1]) if shift is None else shift
        shift = None
        key = round(np.log10(max(center, 1e-30)) * 200)
        k = min(2 * 2 ** attempts.get(key, 0),
                min(k_cap, system.n - 2))
        attempts[key] = attempts.get(key, 0) + 1
        report = solve_pencil(system, sigma=center, n_modes=k, tol=tol,
                              seed=seed)
        shift_used, notes = report.shift, notes + report.notes
        requested = max(requested, k)
        for p in report.pairs:
            for kk in list(collected):
                if abs(kk - p.kappa) <= 1e-8 * max(abs(kk), abs(p.kappa)):
                    if p.residual < collected[kk].residual:
                        collected.pop(kk)
                        collected[p.kappa] = p
                    break
            else:
                collected[p.kappa] = p
        if len(report.pairs):
            d_far = max(abs(p.kappa - center) for p in report.pairs)
            if len(report.pairs) == report.requested:
                certified.append((center - d_far, center + d_far))
            else:
                # partial convergence certifies nothing beyond the pairs
                certified.append((center, center))
        if k >= min(k_cap, system.n - 2):
            break
    merged = SpectrumReport(requested,
                            tuple(collected[kk] for kk in
                                  sorted(collected)),
                            shift_used, notes=notes)
    filtered = filter_modes(merged, kernel_tol)
    pairs = [p for p in filtered.pairs
             if k_lo <= p.kappa <= k_hi and p.residual <= residual_tol]
    pairs.sort(key=lambda p: p.kappa)
    return pairs, filtered


def lowest_physical(system, n, sigma0=1.0, tol=1e-12, seed=20260808,
                    kernel_tol=KERNEL_TOL, residual_tol=1e-6,
                    sigma_cap=1e14):
    """The n smallest physical (non-kernel) eigenpairs.

    The shift climbs from sigma0 by factors of 8.  A solve certifies the
    range (0, 2 sigma): once a kernel-cluster member shows up among the
    returned pairs, everything strictly closer to the shift - in
    particular every physical eigenvalue below 2 sigma - has been
    captured.  On kernel-free problems a fully-above-2-sigma return
    certifies instead (the k nearest are then the k lowest).
    """
    k = max(2 * n + 4, 12)
    k = min(k, max(system.n - 2, 1))
    sigma = float(sigma0)
    candidates = {}

    def merge(report):
        for p in filter_modes(report, kernel_tol).pairs:
            if p.residual > 1e-3:
                # smeared kernel copies and unconverged directions
                continue
            match = [kk for kk in candidates
                     if abs(kk - p.kappa) <= 1e-7 * abs(kk)]
            if match:
                if p.residual < candidates[match[0]].residual:
                    candidates.pop(match[0])
                    candidates[p.kappa] = p
            else:
                candidates[p.kappa] = p

    filtered = None
    while sigma < sigma_cap:
        report = solve_pencil(system, sigma=sigma, n_modes=k, tol=tol,
                              seed=seed)
        filtered = filter_modes(report, kernel_tol)
        merge(report)
        bag_contact = filtered.n_kernel >= 1
        kappas = report.kappas
        above = len(kappas) > 0 and kappas.min() >= 2.0 * sigma
        certified = 2.0 * sigma if bag_contact else \
            (np.inf if above else 0.0)
        lowest = [kk for kk in sorted(candidates) if kk <= certified][:n]
        if len(lowest) >= n:
            # polish candidates whose vectors are not yet converged by
            # re-solving with the shift next to them
            for _ in range(6):
                bad = [kk for kk in lowest
                       if candidates[kk].residual > residual_tol]
                if not bad:
                    break
                polish = bad[0] * 1.001 + 1e-6 * abs(sigma0)
                merge(solve_pencil(system, sigma=polish,
                                   n_modes=min(6, k), tol=tol, seed=seed))
                lowest = [kk for kk in sorted(candidates)
                          if kk <= certified][:n]
            pairs = [candidates[kk] for kk in lowest]
            if all(p.residual <= residual_tol for p in pairs):
                return pairs, filtered
        sigma *= 8.0
    raise StudyError(f"could not certify the {n} lowest physical modes "
                     f"below shift {sigma_cap:g}")


# ----------------------------------------------------------------------
# rate fitting and extrapolation
# ----------------------------------------------------------------------

def fit_rate(h_values, errors) -> float:
    """Least-squares slope of log(error) against log(h)."""
    h = np.asarray(h_values, float)
    e = np.asarray(errors, float)
    if len(h) < 3 or len(h) != len(e):
        raise StudyError("need at least 3 (h, error) pairs")
    if np.any(h <= 0) or np.any(e <= 0):
        raise StudyError("rate fit needs positive h and errors")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


def extrapolate(N_values, omegas):
    """Fit omega(N) = omega_extr + C N^(-t), returning
    (omega_extr, t, C).

    Deterministic initialization: t0 = 2, omega0 = last omega, C0 from
    the first point.  Non-convergence returns the best iterate with a
    flag via StudyError only for invalid input.
    """
    N = np.asarray(N_values, float)
    w = np.asarray(omegas, float)
    if len(N) < 3 or len(N) != len(w):
        raise StudyError("need at least 3 (N, omega) pairs")
    if np.any(N <= 0) or np.any(w <= 0):
        raise StudyError("extrapolation needs positive data")
    w0, t0 = w[-1], 2.0
    C0 = (w[0] - w0) * N[0] ** t0

    def resid(params):
        we, C, t = params
        return we + C * N ** (-t) - w

    sol = least_squares(resid, [w0, C0, t0], method="lm", xtol=1e-14,
                        ftol=1e-14, max_nfev=10000)
    we, C, t = sol.x
    return float(we), float(t), float(C)


# ----------------------------------------------------------------------
# uniform study
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class ConvergenceTable:
    """Per-level frequencies with fitted orders and extrapolated limits."""

    levels: tuple                 # N values, ascending
    dofs: tuple
    omegas: tuple                 # tuple per level, one omega per mode
    orders: tuple                 # fitted order per mode
    extrapolated: tuple           # omega_extr per mode
    family: str = ""
    geometry: str = ""

    @property
    def n_modes(self) -> int:
        return len(self.omegas[0]) if self.omegas else 0

    def mode_column(self, mode: int) -> np.ndarray:
        return np.array([row[mode] for row in self.omegas])

    def to_csv(self) -> str:
        header = ["N", "dofs"] + \
            [f"omega_{i + 1}" for i in range(self.n_modes)]
        lines = [",".join(header)]
        for N, d, row in zip(self.levels, self.dofs, self.omegas):
            lines.append(",".join([str(N), str(d)]
                                  + [f"{w:.12e}" for w in row]))
        if self.orders:
            lines.append(",".join(["order", ""]
                                  + [f"{t:.6f}" for t in self.orders]))
            lines.append(",".join(["omega_extr", ""]
                                  + [f"{w:.12e}" for w in
                                     self.extrapolated]))
        return "\n".join(lines) + "\n"


def _solve_level(config: RunConfig, N: int, nu=None):
    mats = config.materials(nu)
    mesh = build_cavity_mesh(config.geometry_spec(), N)
    system = build_block_system(mesh, config.family, mats,
                                config.assembly_degree)
    pairs, _ = solve_window(system, config.window,
                            n_modes_hint=4 * config.n_modes,
                            shift=config.shift, seed=config.seed)
    if len(pairs) < config.n_modes:
        raise StudyError(
            f"level N={N}: only {len(pairs)} physical modes in the window "
            f"{config.window}, requested {config.n_modes}")
    omegas = tuple(p.omega for p in pairs[:config.n_modes])
    return N, system.n, omegas


def run_uniform_study(config: RunConfig, nu=None) -> ConvergenceTable:
    """Build, assemble, solve and filter per mesh level; fit each mode."""
    levels = tuple(sorted(config.levels))
    if not levels:
        return ConvergenceTable((), (), (), (), (),
                                config.family, config.geometry)
    rows = []
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_solve_level, config, N, nu)
                       for N in levels]
            for N, fut in zip(levels, futures):
                try:
                    rows.append(fut.result())
                except (StudyError, EigenSolveError) as err:
                    raise StudyError(f"solve failed at N={N}: {err}") \
                        from err
    else:
        for N in levels:
            try:
                rows.append(_solve_level(config, N, nu))
            except (StudyError, EigenSolveError) as err:
                raise StudyError(f"solve failed at N={N}: {err}") from err
    dofs = tuple(r[1] for r in rows)
    omegas = tuple(r[2] for r in rows)
    orders, extrap = [], []
    if len(levels) >= 3:
        for m in range(config.n_modes):
            col = [row[m] for row in omegas]
            we, t, _ = extrapolate(levels, col)
            orders.append(t)
            extrap.append(we)
    return ConvergenceTable(levels, dofs, omegas, tuple(orders),
                            tuple(extrap), config.family, config.geometry)
