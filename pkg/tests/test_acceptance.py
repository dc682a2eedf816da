"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The long runs (convergence tables, pattern-formation runs) are module-scoped
fixtures so criteria that share a run do not repeat it.
"""

import math
import time

import numpy as np
import pytest
from scipy.special import gamma as gamma_fn

from conftest import random_mesh, record
from oracles import dense_laplacian, dense_newton, quad_l1_coeff
from tfsh.grid import Grid2D
from tfsh.kernels import complementarity_defect, dcc_matrix, dcc_row_on_mesh, l1_matrix, l1_row
from tfsh.mesh import graded_mesh, max_step_bound
from tfsh.mms import MmsConfig, expected_order, run_convergence
from tfsh.nonlinear import NonlinearParams, history_rhs, implicit_step
from tfsh.presets import example2_initial
from tfsh.stepper import AdaptiveSchedule, SimulationSetup, run

pytestmark = pytest.mark.slow

ALPHAS = (0.3, 0.5, 0.8)


def _sweep():
    rng = np.random.default_rng(7001)
    for i in range(50):
        N = int(rng.integers(1, 201))
        yield random_mesh(rng, N, 0.2, 5.0, tau1=float(rng.uniform(0.01, 10.0))), ALPHAS[i % 3]


@pytest.fixture(scope="module")
def kernel_sweep():
    start = time.perf_counter()
    out = []
    for mesh, alpha in _sweep():
        A = l1_matrix(mesh, alpha)
        out.append((mesh, alpha, A, dcc_matrix(A)))
    return out, time.perf_counter() - start


def test_01_complementarity(kernel_sweep):
    sweep, build_time = kernel_sweep
    start = time.perf_counter()
    worst = max(float(complementarity_defect(A, P).max()) for _, _, A, P in sweep)
    elapsed = build_time + time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 10.0
    assert record(1, ok, f"max |sum p a - 1| = {worst:.2e} (<= 1e-12), {elapsed:.1f} s (< 10 s)")


def test_02_monotonicity_positivity(kernel_sweep):
    sweep, _ = kernel_sweep
    bad = 0
    for mesh, _, A, P in sweep:
        for n in range(1, mesh.N + 1):
            a = A[n - 1, :n][::-1]  # a_0, a_1, ..., a_{n-1}
            p = P[n - 1, :n]
            bad += int(np.sum(a <= 0)) + int(np.sum(np.diff(a) >= 0)) + int(np.sum(p <= 0))
    assert record(2, bad == 0, f"{bad} violations of a_0 > a_1 > ... > 0 or p > 0 over {len(sweep)} meshes")


def test_03_closed_form_vs_quadrature():
    rng = np.random.default_rng(7003)
    worst = 0.0
    for i in range(10):
        N = int(rng.integers(2, 201))
        mesh = random_mesh(rng, N, 0.2, 5.0, tau1=float(rng.uniform(0.01, 10.0)))
        alpha = ALPHAS[i % 3]
        t = mesh.nodes
        for n in range(1, N + 1):
            row = l1_row(mesh, n, alpha)
            for k in range(1, n + 1):
                ref = quad_l1_coeff(t, n, k, alpha)
                worst = max(worst, abs(row.a(n - k) - ref) / ref)
    assert record(3, worst <= 1e-10, f"max relative deviation {worst:.2e} (<= 1e-10)")


def test_04_scalar_caputo_order():
    start = time.perf_counter()
    sigma = 0.3
    details, ok = [], True
    for alpha in ALPHAS:
        gam = (2 - alpha) / sigma
        errs, taus = [], []
        for N in (40, 80, 160, 320):
            mesh = graded_mesh(1.0, N, gam)
            t = mesh.nodes
            A = l1_matrix(mesh, alpha)
            xi = np.abs(A @ np.diff(t**sigma) - gamma_fn(1 + sigma) / gamma_fn(1 + sigma - alpha) * t[1:] ** (sigma - alpha))
            # global consistency error: the truncation errors weighted by the complementary kernels
            errs.append(float(np.max(dcc_matrix(A) @ xi)))
            taus.append(mesh.tau_max)
        order = math.log(errs[-2] / errs[-1]) / math.log(taus[-2] / taus[-1])
        ok &= abs(order - (2 - alpha)) <= 0.15
        details.append(f"a={alpha}: {order:.3f} (target {2 - alpha:.1f})")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30.0
    assert record(4, ok, ", ".join(details) + f", {elapsed:.1f} s (< 30 s)")


# -- convergence tables ------------------------------------------------------

CELLS = [(0.5, 4.0), (0.5, 5.0), (0.5, 6.0), (0.8, 3.0), (0.8, 4.0), (0.8, 5.0)]


@pytest.fixture(scope="module")
def tables():
    out = {}
    for alpha, gam in CELLS:
        M_by_N = {160: 256} if (alpha, gam) == (0.5, 6.0) else {}
        cfg = MmsConfig(alpha=alpha, sigma=0.3, gamma=gam, M=128, M_by_N=M_by_N)
        out[(alpha, gam)] = (cfg, run_convergence(cfg))
    return out


def test_05_convergence_tables(tables):
    details, ok = [], True
    for (alpha, gam), (cfg, rows) in tables.items():
        target = expected_order(cfg)
        got = rows[-1]["order_graded"]
        ok &= abs(got - target) <= 0.15
        details.append(f"(a={alpha}, g={gam:g}): {got:.3f} vs {target:.2f} [mesh-max-step order {rows[-1]['order_pairwise']:.3f}]")
    assert record(5, ok, "; ".join(details))


# -- pattern-formation runs ----------------------------------------------------


def example2_run(alpha, g, schedule, **kw):
    grid = Grid2D(32.0, 96)
    setup = SimulationSetup(
        grid=grid,
        params=NonlinearParams(g, 0.85),
        alpha=alpha,
        u0=example2_initial(grid),
        schedule=schedule,
        history="soe",
        **kw,
    )
    return run(setup)


def uniform_after_warmup(T, tau=0.01):
    return AdaptiveSchedule(T, 0.0, tau, tau)


@pytest.fixture(scope="module")
def dissipation_runs():
    return {g: example2_run(0.6, g, uniform_after_warmup(100.0)) for g in (0.0, 1.0)}


def test_06_energy_dissipation(dissipation_runs):
    details, ok = [], True
    for g, res in dissipation_runs.items():
        Em = np.array([r.E_mod for r in res.energy_log])
        E = np.array([r.E for r in res.energy_log])
        rise = np.max(np.diff(Em) / (1.0 + np.abs(Em[:-1])))
        over = np.max(E[1:] - E[0]) / (1.0 + abs(E[0]))
        ok &= rise <= 1e-8 and over <= 1e-8 and not res.violations
        details.append(f"g={g:g}: {res.levels} levels, max rel rise of E_mod {rise:.1e}, max (E - E0)/(1+|E0|) {over:.1e}")
    assert record(6, ok, "; ".join(details))


def test_07_asymptotic_compatibility():
    res = example2_run(0.999, 1.0, uniform_after_warmup(100.0))
    mesh = res.mesh
    tau = mesh.steps
    p = dcc_row_on_mesh(mesh, mesh.N, 0.999).coeffs
    uniform = np.abs(tau - 0.01) <= 1e-12
    dev = float(np.max(np.abs(p[uniform] - tau[uniform]) / tau[uniform]))

    log = res.energy_log[-101:]
    d_mod = sum(a.E_mod - b.E_mod for a, b in zip(log, log[1:]))
    # alpha -> 1 limit of the modified-energy law: E^{n-1} - E^n - tau_n ||mu^n||^2 / 2
    d_be = sum(a.E - b.E - 0.5 * b.tau * b.mu_norm_sq for a, b in zip(log, log[1:]))
    rel = abs(d_mod - d_be) / abs(d_be)
    ok = dev <= 2e-2 and rel <= 0.05
    assert record(7, ok, f"max |p - tau|/tau = {dev:.2e} (<= 2e-2); last 100 steps: "
                  f"sum dE_mod = {d_mod:.4e}, backward-Euler sum = {d_be:.4e}, rel {rel:.3f} (<= 0.05)")


def test_08_adaptive_efficiency():
    adaptive = example2_run(0.8, 1.0, AdaptiveSchedule(50.0, 10.0, 0.1, 1e-3))
    uniform = example2_run(0.8, 1.0, uniform_after_warmup(50.0))
    ratio = adaptive.levels / uniform.levels
    Ea, Eu = adaptive.energy_log[-1].E, uniform.energy_log[-1].E
    rel = abs(Ea - Eu) / abs(Eu)
    ok = ratio < 0.2 and rel <= 0.01
    assert record(8, ok, f"levels {adaptive.levels} vs {uniform.levels} (ratio {ratio:.3f} < 0.2), "
                  f"final E {Ea:.6f} vs {Eu:.6f} (rel {rel:.1e} <= 1e-2)")


def skewness(v):
    d = v.ravel() - v.mean()
    return float(np.mean(d**3) / np.mean(d**2) ** 1.5)


def test_09_pattern_skewness():
    sched = lambda: AdaptiveSchedule(512.0, 10.0, 0.1, 1e-3)  # noqa: E731
    skew = {g: skewness(example2_run(0.6, g, sched()).u) for g in (1.0, 0.0)}
    ok = abs(skew[1.0]) > 0.3 and abs(skew[0.0]) < 0.1
    assert record(9, ok, f"skew at t=512: g=1 {skew[1.0]:+.3f} (|.| > 0.3), g=0 {skew[0.0]:+.3f} (|.| < 0.1)")


def test_10_oracle_equivalences():
    start = time.perf_counter()
    rng = np.random.default_rng(7010)
    g8 = Grid2D(2.0, 8)
    A8 = dense_laplacian(8, g8.h)
    I = np.eye(64)
    S = (I + A8) @ (I + A8)
    v = rng.standard_normal((8, 8))
    sh = float(np.max(np.abs(g8.sh_operator(v) - (S @ v.ravel()).reshape(8, 8))) / np.max(np.abs(S @ v.ravel())))
    a0 = 3.7
    solve = float(np.max(np.abs(g8.spectral_solve(a0, v) - np.linalg.solve(a0 * I + S, v.ravel()).reshape(8, 8))))

    g4 = Grid2D(2 * math.pi, 4)
    params = NonlinearParams(0.1, 0.5)
    mesh = graded_mesh(0.1, 1, 1.0)
    row = l1_row(mesh, 1, 0.5)
    u0 = rng.uniform(-0.5, 0.5, (4, 4))
    rhs = history_rhs(u0, np.zeros((0, 4, 4)), row)
    got = implicit_step(rhs, row.a0, g4, params, u0, n=1).u
    newton = float(np.max(np.abs(got - dense_newton(rhs, row.a0, dense_laplacian(4, g4.h), params))))
    elapsed = time.perf_counter() - start
    ok = solve <= 1e-10 and newton <= 1e-10 and sh <= 1e-12 and elapsed < 5.0
    assert record(10, ok, f"spectral_solve {solve:.1e}, implicit_step {newton:.1e}, sh_operator {sh:.1e} (rel), {elapsed:.2f} s")


def test_11_step_restriction(tables):
    ts = max_step_bound(0.5, 0.1, 0.5)
    worst = 0.0
    for (alpha, gam), (cfg, rows) in tables.items():
        bound = max_step_bound(alpha, cfg.g, cfg.epsilon)
        for N in cfg.N_list:
            worst = max(worst, cfg.time_mesh(N).tau_max / bound)
    # run_convergence raises on fixed-point non-convergence, so reaching here means none occurred
    iters = max(r["max_fp_iters"] for _, rows in tables.values() for r in rows)
    ok = abs(ts - 4.832) <= 1e-3 and worst <= 1.0
    assert record(11, ok, f"tau*(0.5, 0.1, 0.5) = {ts:.4f}, max tau/tau* over the table meshes {worst:.3f}, "
                  f"no non-convergence (max {iters} fixed-point iterations)")
