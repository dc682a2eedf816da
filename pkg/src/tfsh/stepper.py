"""Time loop for the time-fractional Swift-Hohenberg equation with energy monitoring."""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import Grid2D
from .kernels import DccKernelRow, RiemannLiouvilleSum, l1_coefficients
from .mesh import TimeMesh, adaptive_next_step, graded_mesh, max_step_bound, warmup_count
from .nonlinear import NonFiniteError, NonlinearParams, f_bulk, implicit_step
from .soe import SoeHistory, SoeKernel, SoeToleranceError

log = logging.getLogger(__name__)


class MonitorWarning(UserWarning):
    pass


class MonitorViolation(RuntimeError):
    """A runtime invariant (dissipation, energy bound, finiteness) failed in strict mode."""


class MemoryBudgetError(MemoryError):
    pass


# -- energies ---------------------------------------------------------------


def energy(v: np.ndarray, grid: Grid2D, params: NonlinearParams) -> float:
    """Discrete Swift-Hohenberg energy ``E[v]``."""
    w = grid.one_plus_laplacian(v)
    h2 = grid.h * grid.h
    return float(
        0.5 * grid.inner(w, w)
        + 0.25 * h2 * np.sum(v**4)
        - (params.g / 3.0) * h2 * np.sum(v**3)
        - 0.5 * params.epsilon * grid.inner(v, v)
    )


def chemical_potential(v: np.ndarray, grid: Grid2D, params: NonlinearParams) -> np.ndarray:
    """``mu = (I + Delta_h)^2 v + f(v)``, applied directly."""
    return grid.sh_operator(v) + f_bulk(v, params)


def modified_energy(E_n: float, dcc: Optional[DccKernelRow], mu_norm_sq: Sequence[float]) -> float:
    """``E[u^n] + 1/2 sum_j p_{n-j}^{(n)} ||mu^j||^2``; ``dcc=None`` means level 0."""
    if dcc is None:
        return E_n
    if len(mu_norm_sq) < dcc.n:
        raise ValueError(f"need ||mu^j||^2 for j = 1..{dcc.n}, have {len(mu_norm_sq)}")
    return E_n + 0.5 * float(dcc.coeffs @ np.asarray(mu_norm_sq[: dcc.n]))


@dataclass
class EnergyRecord:
    n: int
    t: float
    tau: float
    E: float
    E_mod: float
    mu_norm_sq: float
    fp_iters: int
    u_linf: float

    FIELDS = ("n", "t", "tau", "E", "E_mod", "mu_norm_sq", "fp_iters", "u_linf")

    def as_row(self):
        return [getattr(self, k) for k in self.FIELDS]


# -- schedules --------------------------------------------------------------


@dataclass
class AdaptiveSchedule:
    """Graded warm-up on ``[0, T0]`` followed by the change-rate step controller.

    ``eta = 0`` and ``tau_max = tau_min = tau`` give a uniform mesh after the warm-up.
    """

    T: float
    eta: float
    tau_max: float
    tau_min: float
    warmup_gamma: float = 3.0
    n_warmup: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.tau_min <= self.tau_max:
            raise ValueError("need 0 < tau_min <= tau_max")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")

    @property
    def T0(self) -> float:
        return min(1.0 / self.warmup_gamma, self.T)

    def warmup(self, tau_max: Optional[float] = None) -> TimeMesh:
        """Graded warm-up whose last step does not exceed ``tau_max`` (default: the schedule's)."""
        n0 = self.n_warmup
        if n0 is None:
            n0 = warmup_count(self.T0, self.warmup_gamma, self.tau_max if tau_max is None else tau_max)
        return graded_mesh(self.T0, n0, self.warmup_gamma)


@dataclass
class SimulationSetup:
    grid: Grid2D
    params: NonlinearParams
    alpha: float
    u0: np.ndarray
    schedule: TimeMesh | AdaptiveSchedule
    forcing: Optional[Callable[[float], np.ndarray]] = None
    snapshot_times: Sequence[float] = ()
    history: str = "direct"  # or "soe"
    soe_rel_tol: float = 1e-14
    soe_guard: float = 1e-10
    strict: bool = False
    strict_tau: bool = False
    dissipation_rtol: float = 1e-8
    memory_budget: float = 2.0e9  # bytes of stored differences (direct history)
    keep_fields: bool = False  # keep every u^n (small problems and tests)
    observer: Optional[Callable[[int, float, np.ndarray], None]] = None  # called after each level
    rate_norm: str = "rms"  # norm of (u^n - u^{n-1})/tau_n fed to the step controller: "rms" or "l2"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0,1), got {self.alpha!r}")
        if self.history not in ("direct", "soe"):
            raise ValueError(f"history must be 'direct' or 'soe', got {self.history!r}")
        if self.rate_norm not in ("rms", "l2"):
            raise ValueError(f"rate_norm must be 'rms' or 'l2', got {self.rate_norm!r}")
        self.grid.check(np.asarray(self.u0))


@dataclass
class RunResult:
    u: np.ndarray
    energy_log: list
    snapshots: dict
    mesh: TimeMesh
    tau_star: float
    violations: list = field(default_factory=list)
    soe_max_bound: float = 0.0
    wall_time: float = 0.0
    fields: Optional[list] = None

    @property
    def levels(self) -> int:
        return self.mesh.N


class _DirectHistory:
    """Stored differences, grown by doubling."""

    def __init__(self, shape, budget):
        self.shape = tuple(shape)
        self.budget = budget
        self.size = int(np.prod(shape))
        rows = 64
        if rows * self.size * 8 > budget:
            raise MemoryBudgetError(f"history buffer of {rows} x {self.size} values exceeds the memory budget of {budget:.3g} bytes")
        self.buf = np.empty((rows, self.size))
        self.count = 0

    def push(self, diff, tau):
        if self.count == self.buf.shape[0]:
            new_rows = 2 * self.buf.shape[0]
            if new_rows * self.size * 8 > self.budget:
                raise MemoryBudgetError(
                    f"storing {new_rows} history differences of {self.size} values exceeds the "
                    f"memory budget of {self.budget:.3g} bytes; use the 'soe' history instead"
                )
            grown = np.empty((new_rows, self.size))
            grown[: self.count] = self.buf[: self.count]
            self.buf = grown
        self.buf[self.count] = diff.ravel()
        self.count += 1

    def history(self, coeffs):
        return (coeffs @ self.buf[: self.count]).reshape(self.shape)


class Monitor:
    def __init__(self, strict: bool):
        self.strict = strict
        self.violations = []

    def flag(self, message):
        self.violations.append(message)
        if self.strict:
            raise MonitorViolation(message)
        warnings.warn(message, MonitorWarning, stacklevel=3)


def _snapshot_targets(times, T):
    return sorted(float(t) for t in times if 0 <= t <= T)


def run(setup: SimulationSetup) -> RunResult:
    """Advance the scheme over a fixed mesh or until ``T`` under the adaptive controller."""
    start = time.perf_counter()
    grid, params, alpha = setup.grid, setup.params, setup.alpha
    tau_star = max_step_bound(alpha, params.g, params.epsilon)
    monitor = Monitor(setup.strict)

    sched = setup.schedule
    if isinstance(sched, TimeMesh):
        planned = sched.nodes
        T = sched.T
        sched.check_step_bound(tau_star, strict=setup.strict_tau)
        adaptive = None
    else:
        adaptive = sched
        T = sched.T
        tau_max = sched.tau_max
        if tau_max > tau_star:
            if setup.strict_tau:
                tau_max = tau_star
                log.info("clamping tau_max %.4g to tau* %.4g", sched.tau_max, tau_star)
            else:
                warnings.warn(
                    f"adaptive tau_max {tau_max:.4g} exceeds tau* {tau_star:.4g}", MonitorWarning, stacklevel=2
                )
        tau_min = min(sched.tau_min, tau_max)
        warm = sched.warmup(tau_max)
        planned = warm.nodes
        warm.check_step_bound(tau_star, strict=setup.strict_tau)

    shape = (grid.M, grid.M)
    if setup.history == "soe":
        steps = np.diff(planned)
        delta = float(steps[1:].min()) if steps.size > 1 else float(steps[0])
        if adaptive is not None:
            delta = min(delta, 0.5 * tau_min)
        kernel = SoeKernel(alpha, delta, T * (1.0 + 1e-9), setup.soe_rel_tol)
        hist = SoeHistory(kernel, shape)
        log.info("exponential history with %d terms on [%.3g, %.3g]", kernel.n_terms, delta, T)
    else:
        hist = _DirectHistory(shape, setup.memory_budget)

    u = np.array(setup.u0, dtype=float)
    E0 = energy(u, grid, params)
    energy_log = [EnergyRecord(0, 0.0, 0.0, E0, E0, 0.0, 0, grid.norm_linf(u))]
    fields = [u.copy()] if setup.keep_fields else None
    rl_sum = RiemannLiouvilleSum()
    linf_hist = []
    nodes = [0.0]
    snaps = {}
    targets = _snapshot_targets(setup.snapshot_times, T)
    if targets and targets[0] == 0.0:
        snaps[0.0] = (0.0, u.copy())
    pending = [t for t in targets if t > 0.0]
    soe_max = 0.0
    E_mod_prev = E0
    last_rate = None

    n = 0
    while True:
        t_prev = nodes[-1]
        if n + 1 < planned.size:
            t_next = float(planned[n + 1])
        elif adaptive is None or t_prev >= T:
            break
        else:
            tau = adaptive_next_step(last_rate, adaptive.eta, tau_max, tau_min)
            stop = min([s for s in pending if s > t_prev] + [T])
            remaining = stop - t_prev
            if remaining - tau < tau_min:
                tau = remaining if remaining <= tau_max else 0.5 * remaining
            if tau >= remaining:
                t_next = stop
            else:
                t_next = t_prev + tau
        n += 1
        tau_n = t_next - t_prev
        nodes.append(t_next)
        coeffs = l1_coefficients(np.asarray(nodes), alpha)
        a0 = float(coeffs[-1])

        rhs = a0 * u
        if n > 1:
            if isinstance(hist, SoeHistory):
                rhs -= hist.history(tau_n)
                bound = hist.error_bound(float(coeffs[:-1] @ np.asarray(linf_hist)))
                soe_max = max(soe_max, bound)
                if bound > setup.soe_guard:
                    raise SoeToleranceError(
                        f"level n={n}: history error bound {bound:.3g} exceeds guard {setup.soe_guard:.3g}"
                    )
            else:
                rhs -= hist.history(coeffs[:-1])
        if setup.forcing is not None:
            rhs += setup.forcing(t_next)

        step = implicit_step(rhs, a0, grid, params, u, n=n)
        u_new = step.u
        diff = u_new - u
        hist.push(diff, tau_n)
        linf_hist.append(float(np.max(np.abs(diff))))
        u = u_new
        if fields is not None:
            fields.append(u.copy())
        if setup.observer is not None:
            setup.observer(n, t_next, u)

        mu = chemical_potential(u, grid, params)
        m_n = grid.inner(mu, mu)
        E_n = energy(u, grid, params)
        q_n = rl_sum.push(coeffs, m_n)
        E_mod = E_n + 0.5 * q_n
        u_linf = grid.norm_linf(u)
        if not (math.isfinite(E_n) and math.isfinite(E_mod) and math.isfinite(u_linf)):
            raise NonFiniteError(f"level n={n}: non-finite energy or solution")
        energy_log.append(EnergyRecord(n, t_next, tau_n, E_n, E_mod, m_n, step.iterations, u_linf))

        # forcing injects energy, so the dissipation law only applies to the free equation
        if setup.forcing is None:
            tol = setup.dissipation_rtol * (1.0 + abs(E_mod_prev))
            if tau_n <= tau_star and E_mod > E_mod_prev + tol:
                monitor.flag(f"level n={n}: modified energy rose {E_mod - E_mod_prev:.3e} (t={t_next:.6g})")
            if E_n > E0 + setup.dissipation_rtol * (1.0 + abs(E0)):
                monitor.flag(f"level n={n}: energy {E_n:.10g} exceeds initial energy {E0:.10g}")
        E_mod_prev = E_mod

        while pending and t_next >= pending[0] - 1e-12 * max(1.0, T):
            snaps[pending.pop(0)] = (t_next, u.copy())
        if adaptive is not None:
            last_rate = grid.norm_l2(diff) / tau_n
            if setup.rate_norm == "rms":
                last_rate /= math.sqrt(grid.area)
        if t_next >= T:
            break

    nodes_arr = np.asarray(nodes)
    return RunResult(
        u=u,
        energy_log=energy_log,
        snapshots=snaps,
        mesh=TimeMesh(nodes_arr),
        tau_star=tau_star,
        violations=monitor.violations,
        soe_max_bound=soe_max,
        wall_time=time.perf_counter() - start,
        fields=fields,
    )
