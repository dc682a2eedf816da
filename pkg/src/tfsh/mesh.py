"""Nonuniform time meshes: graded, graded + random (two-part) and adaptive steps."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn


class StepRestrictionWarning(UserWarning):
    """A mesh step exceeds the solvability bound ``max_step_bound``."""


class StepRestrictionError(ValueError):
    pass


@dataclass(frozen=True)
class TimeMesh:
    """Time levels ``0 = t_0 < t_1 < ... < t_N``.

    Only ``nodes`` is stored; steps and ratios are derived from it so they can
    never drift out of sync.
    """

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a time mesh needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError(f"first node must be 0, got {nodes[0]!r}")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("mesh nodes must be finite")
        if np.any(np.diff(nodes) <= 0.0):
            bad = int(np.argmax(np.diff(nodes) <= 0.0)) + 1
            raise ValueError(f"mesh nodes must be strictly increasing (violated at k={bad})")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def N(self) -> int:
        return self.nodes.size - 1

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def steps(self) -> np.ndarray:
        """``tau_k`` for k = 1..N (index 0 holds tau_1)."""
        return np.diff(self.nodes)

    @property
    def ratios(self) -> np.ndarray:
        """``r_k = tau_k / tau_{k-1}`` for k = 2..N."""
        tau = self.steps
        return tau[1:] / tau[:-1]

    @property
    def tau_max(self) -> float:
        return float(self.steps.max())

    @property
    def r_star(self) -> float:
        r = self.ratios
        return 1.0 if r.size == 0 else float(min(1.0, r.min()))

    def tau(self, k: int) -> float:
        return float(self.nodes[k] - self.nodes[k - 1])

    def check_step_bound(self, tau_star: float, strict: bool = False) -> bool:
        """Warn (or raise when ``strict``) if some step exceeds ``tau_star``."""
        if self.tau_max <= tau_star:
            return True
        msg = f"max step {self.tau_max:.6g} exceeds the solvability bound tau*={tau_star:.6g}"
        if strict:
            raise StepRestrictionError(msg)
        warnings.warn(msg, StepRestrictionWarning, stacklevel=2)
        return False

    def to_csv_rows(self):
        """Rows ``(k, t_k, tau_k, r_k)``; tau and r are empty where undefined."""
        tau = self.steps
        for k in range(self.N + 1):
            t_k = float(self.nodes[k])
            tau_k = float(tau[k - 1]) if k >= 1 else None
            r_k = float(tau[k - 1] / tau[k - 2]) if k >= 2 else None
            yield k, t_k, tau_k, r_k


def uniform_mesh(T: float, N: int) -> TimeMesh:
    return graded_mesh(T, N, 1.0)


def graded_mesh(T0: float, N0: int, gamma: float) -> TimeMesh:
    """``t_k = T0 (k/N0)^gamma`` for k = 0..N0."""
    if not T0 > 0:
        raise ValueError(f"T0 must be positive, got {T0!r}")
    if int(N0) != N0 or N0 < 1:
        raise ValueError(f"N0 must be a positive integer, got {N0!r}")
    if not gamma >= 1:
        raise ValueError(f"gamma must be >= 1, got {gamma!r}")
    N0 = int(N0)
    k = np.arange(N0 + 1, dtype=float)
    if gamma == 1:
        nodes = T0 * k / N0
    else:
        nodes = T0 * (k / N0) ** gamma
    nodes[-1] = T0
    return TimeMesh(nodes)


def two_part_split(T: float, N: int, gamma: float) -> tuple[float, int, int]:
    """``(T0, N0, N1)`` for the graded + random mesh."""
    if not T > 0:
        raise ValueError(f"T must be positive, got {T!r}")
    if not gamma >= 1:
        raise ValueError(f"gamma must be >= 1, got {gamma!r}")
    T0 = min(1.0 / gamma, T)
    N0 = math.floor(N / (T + 1.0 - 1.0 / gamma))
    N1 = N - N0
    if N0 < 1:
        raise ValueError(f"N={N} leaves no graded intervals (N0={N0})")
    if N1 < 1:
        raise ValueError(f"N={N} leaves no random intervals (N1={N1})")
    return T0, N0, N1


def two_part_mesh(T: float, N: int, gamma: float, seed: int) -> TimeMesh:
    """Graded mesh on ``[0, T0]`` followed by ``N1`` random steps on ``[T0, T]``.

    The random steps are ``(T - T0) eps_k / sum(eps)`` with ``eps_k`` drawn
    uniformly from (0, 1) by numpy's PCG64 generator seeded with ``seed``.
    """
    T0, N0, N1 = two_part_split(T, N, gamma)
    first = graded_mesh(T0, N0, gamma).nodes
    rng = np.random.default_rng(np.uint64(seed))
    eps = rng.random(N1)
    while np.any(eps == 0.0):
        zero = eps == 0.0
        eps[zero] = rng.random(int(zero.sum()))
    steps = (T - T0) * eps / eps.sum()
    second = T0 + np.cumsum(steps)
    second[-1] = T
    return TimeMesh(np.concatenate([first, second]))


def adaptive_next_step(du_rate_norm: float, eta: float, tau_max: float, tau_min: float) -> float:
    """Step size ``max(tau_min, tau_max / sqrt(1 + eta * du_rate_norm**2))``."""
    if not 0 < tau_min <= tau_max:
        raise ValueError(f"need 0 < tau_min <= tau_max, got {tau_min!r}, {tau_max!r}")
    if eta < 0 or du_rate_norm < 0:
        raise ValueError("eta and du_rate_norm must be non-negative")
    if math.isinf(du_rate_norm):
        return tau_min if eta > 0 else tau_max
    return max(tau_min, tau_max / math.sqrt(1.0 + eta * du_rate_norm * du_rate_norm))


def max_step_bound(alpha: float, g: float, epsilon: float) -> float:
    """Largest step for which the implicit scheme is uniquely solvable and dissipative."""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0,1], got {alpha!r}")
    if g < 0:
        raise ValueError(f"g must be non-negative, got {g!r}")
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon!r}")
    return float((3.0 / (gamma_fn(2.0 - alpha) * (4.0 * g * g + 3.0 * epsilon))) ** (1.0 / alpha))


def warmup_count(T0: float, gamma: float, tau_next: float) -> int:
    """Smallest graded warm-up count whose last step does not exceed ``tau_next``.

    The last step of ``graded_mesh(T0, N0, gamma)`` is at most ``gamma T0 / N0``.
    """
    return max(1, math.ceil(gamma * T0 / tau_next - 1e-12))
