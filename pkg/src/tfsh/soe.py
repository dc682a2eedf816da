"""Sum-of-exponentials compression of the L1 history convolution.

The kernel ``omega_{1-alpha}(t) = t^{-alpha} / Gamma(1-alpha)`` is written as

    t^{-alpha} = 1/Gamma(alpha) * int_R exp(alpha x - t e^x) dx

and the integral is discretized with the trapezoidal rule on a truncated
window.  Step size and window are picked from a priori bounds and then the
relative error is measured on a dense logarithmic sample of ``[delta, t_max]``.
With ``omega ~ sum_l w_l exp(-s_l t)`` the history part of the L1 sum obeys a
two-term recurrence per exponential, so each time level costs O(n_terms)
instead of O(n).
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.linalg.blas import dger as _ger
from scipy.special import gammainccinv, loggamma

from .kernels import L1KernelRow

# Smallest relative kernel error we promise; below this rounding in the
# positive sums dominates.
MIN_REL_TOL = 2e-15
# kernel accuracy targeted when splitting a history between the sum and direct terms
SPLIT_REL_TOL = 1e-13


class SoeToleranceError(RuntimeError):
    """The requested accuracy cannot be guaranteed."""


def _trapezoid_error(alpha: float, h: float) -> float:
    # Poisson summation: relative error <= 2 sum_k |Gamma(alpha + 2 pi i k / h)| / Gamma(alpha)
    k = np.arange(1, 8)
    vals = np.exp(np.real(loggamma(alpha + 2j * np.pi * k / h)) - loggamma(alpha).real)
    return float(2.0 * vals.sum())


class SoeKernel:
    """Exponential sum approximating ``omega_{1-alpha}`` on ``[delta, t_max]``."""

    def __init__(self, alpha: float, delta: float, t_max: float, rel_tol: float = 1e-14):
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0,1), got {alpha!r}")
        if not 0 < delta <= t_max:
            raise ValueError(f"need 0 < delta <= t_max, got {delta!r}, {t_max!r}")
        if rel_tol < MIN_REL_TOL:
            raise SoeToleranceError(f"relative tolerance {rel_tol:.3g} below the floor {MIN_REL_TOL:.1g}")
        self.alpha = alpha
        self.delta = delta
        self.t_max = t_max
        self.rel_tol = rel_tol

        part = rel_tol / 4.0
        h = 1.0
        while _trapezoid_error(alpha, h) > part:
            h *= 0.95
        # lower tail: int_{-inf}^{x_lo} e^{alpha x} dx relative to Gamma(alpha) t_max^{-alpha}
        x_lo = (math.log(part * alpha * gamma_fn(alpha)) - alpha * math.log(t_max)) / alpha
        # upper tail: Gamma(alpha, delta e^{x_hi}) / Gamma(alpha)
        x_hi = math.log(gammainccinv(alpha, part) / delta)
        n_terms = int(math.ceil((x_hi - x_lo) / h)) + 1
        x = x_lo + h * np.arange(n_terms)
        self.exponents = np.exp(x)
        # 1/(Gamma(alpha) Gamma(1-alpha)) rather than sin(pi alpha)/pi: the latter loses digits as alpha -> 1
        self.weights = h * np.exp(alpha * x) / (gamma_fn(alpha) * gamma_fn(1.0 - alpha))

        sample = np.geomspace(delta, t_max, 4001)
        exact = sample ** (-alpha) / gamma_fn(1.0 - alpha)
        self.measured_rel_error = float(np.max(np.abs(self(sample) - exact) / exact))
        if self.measured_rel_error > rel_tol:
            raise SoeToleranceError(
                f"exponential sum reached relative error {self.measured_rel_error:.3g} > {rel_tol:.3g}"
            )

    @property
    def n_terms(self) -> int:
        return self.exponents.size

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return np.exp(-np.multiply.outer(t, self.exponents)) @ self.weights

    def covers(self, t_lo: float, t_hi: float) -> bool:
        return self.delta <= t_lo and t_hi <= self.t_max


def _phi(z: np.ndarray) -> np.ndarray:
    """``(1 - e^{-z}) / z`` with the removable singularity at 0."""
    out = np.ones_like(z)
    nz = z > 1e-300
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    return out


class SoeHistory:
    """Compressed history ``sum_{k<n} a_{n-k}^{(n)} (v^k - v^{k-1})`` for a growing time mesh.

    ``push(diff, tau)`` appends the difference of the level just completed;
    ``history(tau_n)`` returns the history part for the next level, whose step
    is ``tau_n``.  An a priori pointwise error bound is tracked alongside.
    """

    def __init__(self, kernel: SoeKernel, field_shape):
        self.kernel = kernel
        self.field_shape = tuple(field_shape)
        size = int(np.prod(self.field_shape))
        # stored transposed and Fortran-ordered so the rank-one update runs in place
        self._GT = np.zeros((size, kernel.n_terms), order="F")
        self._t_last = 0.0
        self._levels = 0

    def push(self, diff: np.ndarray, tau: float) -> None:
        s = self.kernel.exponents
        self._GT *= np.exp(-s * tau)
        self._GT = _ger(1.0, np.ascontiguousarray(diff, dtype=float).ravel(), _phi(s * tau), a=self._GT, overwrite_a=1)
        self._t_last += tau
        self._levels += 1

    def history(self, tau_n: float) -> np.ndarray:
        if self._levels == 0:
            return np.zeros(self.field_shape)
        if not self.kernel.covers(tau_n, self._t_last + tau_n):
            raise SoeToleranceError(
                f"history distances [{tau_n:.3g}, {self._t_last + tau_n:.3g}] leave the range "
                f"[{self.kernel.delta:.3g}, {self.kernel.t_max:.3g}] of the exponential sum"
            )
        w = self.kernel.weights * np.exp(-self.kernel.exponents * tau_n)
        return (self._GT @ w).reshape(self.field_shape)

    def error_bound(self, weighted_linf: float) -> float:
        """Pointwise bound given ``sum_{k<n} a_{n-k}^{(n)} ||v^k - v^{k-1}||_inf``.

        Kernel error plus worst-case rounding of the recurrence and the final sum.
        """
        return (self.kernel.rel_tol + _rounding_factor(self.kernel.n_terms, self._levels)) * weighted_linf


def _rounding_factor(n_terms: int, levels: int) -> float:
    return (n_terms + 2 * levels + 4) * np.finfo(float).eps


def fast_history_apply(diff_history, row: L1KernelRow, tol: float):
    """Approximate ``caputo_apply(diff_history, row)`` to absolute accuracy ``tol`` per point.

    The oldest differences go through the exponential recurrence, as many as
    the error budget allows; the recent ones (always including the newest) are
    summed directly.  When no split meets ``tol`` the whole sum is direct, so
    the result never degrades silently.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol!r}")
    hist = np.asarray(diff_history, dtype=float)
    n = row.n
    if hist.shape[0] != n:
        raise ValueError(f"history has {hist.shape[0]} differences, level is {n}")
    nodes = row.nodes
    tau = np.diff(nodes)
    linf = np.abs(hist).reshape(n, -1).max(axis=1)
    weights = row.coeffs * linf
    # largest prefix 1..m whose weighted size leaves room for a kernel of accuracy SPLIT_REL_TOL
    room = 0.5 * tol / (SPLIT_REL_TOL + _rounding_factor(2000, n))
    m = int(np.searchsorted(np.cumsum(weights[: n - 1]), room, side="right"))
    direct = np.tensordot(row.coeffs[m:], hist[m:], axes=(0, 0))
    weighted = float(weights[:m].sum())
    if m == 0 or weighted == 0.0:
        return direct
    rel_tol = min(1e-12, 0.5 * tol / weighted - _rounding_factor(2000, n))
    gap = float(nodes[n] - nodes[m])
    # the pushed steps sum to t_m only up to rounding, hence the margin on the far end
    kernel = SoeKernel(row.alpha, gap, float(nodes[n]) * (1.0 + 1e-9), rel_tol)
    acc = SoeHistory(kernel, hist.shape[1:])
    for k in range(m):
        acc.push(hist[k], float(tau[k]))
    bound = acc.error_bound(weighted)
    if bound > tol:
        raise SoeToleranceError(f"error bound {bound:.3g} exceeds tolerance {tol:.3g}")
    return direct + acc.history(gap)
