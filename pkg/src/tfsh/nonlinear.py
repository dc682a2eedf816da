"""Per-level nonlinear solve for the implicit L1 scheme.

At level ``n`` the scheme reads ``Pi_n(w) = a0 w - g^{n-1} + (I + Delta_h)^2 w + f(w) = 0``
with ``g^{n-1} = a0 u^{n-1} - sum_{k<n} a_{n-k}^{(n)} (u^k - u^{k-1})`` (plus a
forcing term for manufactured solutions).  It is solved by the fixed-point map

    w <- (a0 I + (I + Delta_h)^2)^{-1} (g^{n-1} - f(w))

where only the bulk force lags and the linear part is inverted exactly in
Fourier space.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .grid import Grid2D
from .kernels import L1KernelRow, caputo_apply

log = logging.getLogger(__name__)

DIVERGENCE_WINDOW = 10


@dataclass(frozen=True)
class NonlinearParams:
    g: float
    epsilon: float
    fp_tol: float = 1e-12
    fp_max_iter: int = 500

    def __post_init__(self):
        if self.g < 0:
            raise ValueError(f"g must be non-negative, got {self.g!r}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")
        if not self.fp_tol > 0:
            raise ValueError(f"fp_tol must be positive, got {self.fp_tol!r}")
        if self.fp_max_iter < 1:
            raise ValueError(f"fp_max_iter must be >= 1, got {self.fp_max_iter!r}")


class NonConvergenceError(RuntimeError):
    """Fixed-point iteration failed; usually the step is too large for the bound tau*."""

    def __init__(self, n, residual, a0, iterations, reason="no convergence"):
        self.n = n
        self.residual = residual
        self.a0 = a0
        self.iterations = iterations
        super().__init__(
            f"level n={n}: {reason} after {iterations} fixed-point iterations "
            f"(last increment {residual:.3e}, a0={a0:.6g}); the step may exceed tau*"
        )


class NonFiniteError(FloatingPointError):
    pass


def f_bulk(v: np.ndarray, params: NonlinearParams) -> np.ndarray:
    """``F'(v) = v^3 - g v^2 - epsilon v``."""
    return v * (v * (v - params.g) - params.epsilon)


def history_rhs(u_prev: np.ndarray, diff_history, row: L1KernelRow, forcing=None) -> np.ndarray:
    """``a0 u^{n-1} - sum_{k=1}^{n-1} a_{n-k}^{(n)} (u^k - u^{k-1})`` (+ forcing at ``t_n``)."""
    n = row.n
    hist = np.asarray(diff_history, dtype=float)
    if hist.shape[0] != n - 1:
        raise ValueError(f"level {n} needs {n - 1} past differences, got {hist.shape[0]}")
    rhs = row.a0 * u_prev
    if n > 1:
        rhs = rhs - np.tensordot(row.coeffs[:-1], hist, axes=(0, 0))
    if forcing is not None:
        rhs = rhs + forcing
    return rhs


def scheme_residual(w, rhs, a0, grid: Grid2D, params: NonlinearParams) -> np.ndarray:
    """``Pi_n(w)``."""
    return a0 * w - rhs + grid.sh_operator(w) + f_bulk(w, params)


def discrete_caputo_residual(u_n, diff_history, row, grid, params, forcing=None) -> np.ndarray:
    """``D_tau^alpha u^n + (I + Delta_h)^2 u^n + f(u^n) - forcing`` with the full history."""
    res = caputo_apply(diff_history, row) + grid.sh_operator(u_n) + f_bulk(u_n, params)
    if forcing is not None:
        res = res - forcing
    return res


@dataclass
class StepResult:
    u: np.ndarray
    iterations: int
    increment: float


def implicit_step(rhs, a0, grid: Grid2D, params: NonlinearParams, guess, n=None) -> StepResult:
    """Solve ``Pi_n(w) = 0`` starting from ``guess`` (normally ``u^{n-1}``).

    Stops once the max-norm increment drops to ``fp_tol``.  Raises
    :class:`NonConvergenceError` after ``fp_max_iter`` iterations or when the
    increment has grown for ``DIVERGENCE_WINDOW`` iterations in a row.
    """
    if not np.all(np.isfinite(rhs)):
        raise NonFiniteError(f"level n={n}: right-hand side is not finite")
    denom = a0 + grid.sh_symbol
    rhs_hat = np.fft.rfft2(rhs)
    w = guess
    prev_inc = np.inf
    growth = 0
    inc = np.inf
    for it in range(1, params.fp_max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            w_new = np.fft.irfft2((rhs_hat - np.fft.rfft2(f_bulk(w, params))) / denom, s=rhs.shape)
            inc = float(np.max(np.abs(w_new - w)))
        if not np.isfinite(inc):
            raise NonFiniteError(f"level n={n}: iterate became non-finite at iteration {it}")
        w = w_new
        if inc <= params.fp_tol:
            return StepResult(w, it, inc)
        growth = growth + 1 if inc > prev_inc else 0
        if growth >= DIVERGENCE_WINDOW:
            raise NonConvergenceError(n, inc, a0, it, reason="diverging increments")
        prev_inc = inc
    raise NonConvergenceError(n, inc, a0, params.fp_max_iter)
