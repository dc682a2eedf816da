"""Variable-step L1 kernels for the Caputo derivative and their complementary (DCC) kernels.

Index conventions (1-based, as in the formulas):

* ``L1KernelRow.coeffs[k-1] = a_{n-k}^{(n)}`` for k = 1..n, so ``coeffs[-1]``
  is ``a_0^{(n)}``, the weight of the newest difference.
* ``DccKernelRow.coeffs[j-1] = p_{n-j}^{(n)}`` for j = 1..n.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from .mesh import TimeMesh


def omega(beta: float, t):
    """Riemann-Liouville kernel ``t**(beta-1) / Gamma(beta)``."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta!r}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0):
        raise ValueError("omega is only defined for t > 0")
    out = t_arr ** (beta - 1.0) / gamma_fn(beta)
    return float(out) if out.ndim == 0 else out


def l1_coefficients(nodes: np.ndarray, alpha: float) -> np.ndarray:
    """``a_{n-k}^{(n)}`` for k = 1..n where ``n = len(nodes) - 1``.

    Uses the closed form ``(w(t_n - t_{k-1}) - w(t_n - t_k)) / tau_k`` with
    ``w = omega_{2-alpha}``, rearranged as ``-A^b expm1(b log1p(-tau_k/A))`` so that
    long-ago short steps do not lose digits to cancellation.
    """
    nodes = np.asarray(nodes, dtype=float)
    n = nodes.size - 1
    if n < 1:
        raise ValueError("need at least one step")
    beta = 1.0 - alpha
    dist = nodes[n] - nodes[:n]  # t_n - t_{k-1}
    tau = np.diff(nodes)
    with np.errstate(divide="ignore"):
        diff = -(dist**beta) * np.expm1(beta * np.log1p(-tau / dist))
    return diff / (gamma_fn(2.0 - alpha) * tau)


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0,1), got {alpha!r}")


@dataclass(frozen=True)
class L1KernelRow:
    n: int
    coeffs: np.ndarray
    alpha: float
    nodes: np.ndarray = field(repr=False)  # t_0..t_n

    @property
    def a0(self) -> float:
        return float(self.coeffs[-1])

    def a(self, m: int) -> float:
        """``a_m^{(n)}``."""
        if not 0 <= m < self.n:
            raise IndexError(f"a_{m} undefined at level {self.n}")
        return float(self.coeffs[self.n - 1 - m])


def l1_row(mesh: TimeMesh, n: int, alpha: float) -> L1KernelRow:
    _check_alpha(alpha)
    if not 1 <= n <= mesh.N:
        raise IndexError(f"level n={n} outside 1..{mesh.N}")
    nodes = mesh.nodes[: n + 1]
    coeffs = l1_coefficients(nodes, alpha)
    coeffs.setflags(write=False)
    return L1KernelRow(n, coeffs, alpha, nodes)


def l1_matrix(mesh: TimeMesh, alpha: float, n_max: int | None = None) -> np.ndarray:
    """Lower-triangular ``A[j-1, k-1] = a_{j-k}^{(j)}`` for ``1 <= k <= j <= n_max``."""
    _check_alpha(alpha)
    n_max = mesh.N if n_max is None else n_max
    A = np.zeros((n_max, n_max))
    for j in range(1, n_max + 1):
        A[j - 1, :j] = l1_coefficients(mesh.nodes[: j + 1], alpha)
    return A


@dataclass(frozen=True)
class DccKernelRow:
    n: int
    coeffs: np.ndarray

    def p(self, m: int) -> float:
        """``p_m^{(n)}``."""
        if not 0 <= m < self.n:
            raise IndexError(f"p_{m} undefined at level {self.n}")
        return float(self.coeffs[self.n - 1 - m])


def _dcc_from_matrix(A: np.ndarray, n: int) -> np.ndarray:
    P = np.empty(n)
    P[n - 1] = 1.0 / A[n - 1, n - 1]
    for k in range(n - 1, 0, -1):
        # sum_{j=k+1}^{n} (a_{j-k-1}^{(j)} - a_{j-k}^{(j)}) p_{n-j}^{(n)}
        d = A[k:n, k] - A[k:n, k - 1]
        P[k - 1] = (d @ P[k:n]) / A[k - 1, k - 1]
    return P


def dcc_row(l1_rows: Sequence[L1KernelRow]) -> DccKernelRow:
    """DCC row ``p^{(n)}`` from the L1 rows of levels 1..n (in order)."""
    n = len(l1_rows)
    if n == 0:
        raise ValueError("need the L1 rows of levels 1..n")
    A = np.zeros((n, n))
    for j, row in enumerate(l1_rows, start=1):
        if row.n != j:
            raise ValueError(f"missing L1 row for level {j} (got level {row.n})")
        A[j - 1, :j] = row.coeffs
    coeffs = _dcc_from_matrix(A, n)
    coeffs.setflags(write=False)
    return DccKernelRow(n, coeffs)


def dcc_matrix(A: np.ndarray) -> np.ndarray:
    """All DCC rows at once: ``P[n-1, j-1] = p_{n-j}^{(n)}``, built column by column."""
    N = A.shape[0]
    P = np.zeros_like(A)
    P[np.arange(N), np.arange(N)] = 1.0 / np.diag(A)
    for k in range(N - 1, 0, -1):
        d = A[k:, k] - A[k:, k - 1]
        P[k:, k - 1] = (P[k:, k:] @ d) / A[k - 1, k - 1]
    return P


def dcc_row_on_mesh(mesh: TimeMesh, n: int, alpha: float) -> DccKernelRow:
    """Same as :func:`dcc_row` but builds the needed L1 columns on the fly.

    Memory is O(n) instead of O(n^2), which matters for long runs.
    """
    _check_alpha(alpha)
    if not 1 <= n <= mesh.N:
        raise IndexError(f"level n={n} outside 1..{mesh.N}")
    t = mesh.nodes[: n + 1]
    tau = np.diff(t)
    beta = 1.0 - alpha
    g2 = gamma_fn(2.0 - alpha)

    def column(k):
        # a_{j-k}^{(j)} for j = k..n
        dist = t[k:] - t[k - 1]
        with np.errstate(divide="ignore"):
            diff = -(dist**beta) * np.expm1(beta * np.log1p(-tau[k - 1] / dist))
        return diff / (g2 * tau[k - 1])

    P = np.empty(n)
    P[n - 1] = 1.0 / column(n)[0]
    col_next = column(n)
    for k in range(n - 1, 0, -1):
        col = column(k)
        # col_next[i] = a_{j-k-1}^{(j)} for j = k+1+i; col[1+i] = a_{j-k}^{(j)}
        d = col_next - col[1:]
        P[k - 1] = (d @ P[k:n]) / col[0]
        col_next = col
    P.setflags(write=False)
    return DccKernelRow(n, P)


def complementarity_defect(A: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``|sum_{j=k}^n p_{n-j}^{(n)} a_{j-k}^{(j)} - 1|`` on the lower triangle (zeros elsewhere)."""
    S = P @ A  # S[n-1, k-1] = sum_j P[n-1, j-1] A[j-1, k-1]
    return np.abs(np.tril(S - 1.0))


def caputo_apply(diff_history, row: L1KernelRow):
    """``sum_k a_{n-k}^{(n)} (v^k - v^{k-1})`` with the differences stacked along axis 0."""
    hist = np.asarray(diff_history, dtype=float)
    if hist.shape[0] != row.n:
        raise ValueError(f"history has {hist.shape[0]} differences, level is {row.n}")
    return np.tensordot(row.coeffs, hist, axes=(0, 0))


class RiemannLiouvilleSum:
    """Running value of ``sum_j p_{n-j}^{(n)} m_j`` as levels are appended.

    Because ``p^{(n)}`` is the row of ``A_n^{-T} 1`` and the L1 matrix ``A`` is
    lower triangular, the sum equals ``sum_k z_k`` with ``A z = m``; ``z`` can
    be extended one entry per level in O(n), without forming any DCC row.
    """

    def __init__(self, capacity: int = 1024):
        self._z = np.zeros(capacity)
        self._n = 0
        self.value = 0.0

    def push(self, l1_coeffs: np.ndarray, m_n: float) -> float:
        n = self._n + 1
        if l1_coeffs.size != n:
            raise ValueError(f"expected the level-{n} L1 row, got {l1_coeffs.size} coefficients")
        if n > self._z.size:
            self._z = np.concatenate([self._z, np.zeros(self._z.size)])
        z_n = (m_n - l1_coeffs[:-1] @ self._z[: n - 1]) / l1_coeffs[-1]
        self._z[n - 1] = z_n
        self._n = n
        self.value = float(np.sum(self._z[:n]))
        return self.value
