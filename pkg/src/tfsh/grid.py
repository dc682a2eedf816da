"""Doubly periodic uniform grid, finite-difference operators and the modal linear solve.

Fields are plain ``(M, M)`` float arrays, row-major, indexed ``v[i, j] = v(x_i, y_j)``
with ``x_i = i h`` and ``y_j = j h`` for ``i, j = 0..M-1``; index ``M`` wraps to 0.
Snapshot files use the same layout: CSV row ``i`` holds the fixed-``x_i`` line.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Grid2D:
    L: float
    M: int

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L!r}")
        if int(self.M) != self.M or self.M < 2:
            raise ValueError(f"M must be an integer >= 2, got {self.M!r}")

    @property
    def h(self) -> float:
        return self.L / self.M

    @property
    def area(self) -> float:
        """``|Omega_h| = h^2 M^2``."""
        return self.h * self.h * self.M * self.M

    @property
    def coords(self) -> np.ndarray:
        return self.h * np.arange(self.M)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.coords
        return np.meshgrid(x, x, indexing="ij")

    def check(self, v: np.ndarray) -> np.ndarray:
        if v.shape != (self.M, self.M):
            raise ValueError(f"field of shape {v.shape} does not live on a {self.M}x{self.M} grid")
        return v

    # -- operators -----------------------------------------------------------

    def laplacian(self, v: np.ndarray) -> np.ndarray:
        """Five-point periodic Laplacian."""
        self.check(v)
        out = np.roll(v, 1, 0) + np.roll(v, -1, 0) + np.roll(v, 1, 1) + np.roll(v, -1, 1) - 4.0 * v
        return out / (self.h * self.h)

    def sh_operator(self, v: np.ndarray) -> np.ndarray:
        """``(I + Delta_h)^2 v`` via two Laplacian applications."""
        lap = self.laplacian(v)
        return v + 2.0 * lap + self.laplacian(lap)

    def one_plus_laplacian(self, v: np.ndarray) -> np.ndarray:
        return v + self.laplacian(v)

    def grad(self, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Forward differences ``(delta_x v_{i+1/2,j}, delta_y v_{i,j+1/2})``."""
        self.check(v)
        return (np.roll(v, -1, 0) - v) / self.h, (np.roll(v, -1, 1) - v) / self.h

    # -- inner products and norms -------------------------------------------

    def inner(self, v: np.ndarray, w: np.ndarray) -> float:
        self.check(v)
        self.check(w)
        return float(self.h * self.h * np.vdot(v, w))

    def norm_l2(self, v: np.ndarray) -> float:
        return float(np.sqrt(self.inner(v, v)))

    def norm_l4(self, v: np.ndarray) -> float:
        self.check(v)
        return float((self.h * self.h * np.sum(v**4)) ** 0.25)

    def norm_linf(self, v: np.ndarray) -> float:
        self.check(v)
        return float(np.max(np.abs(v)))

    # -- modal solve ---------------------------------------------------------

    @cached_property
    def laplacian_symbol(self) -> np.ndarray:
        """Eigenvalues of ``Delta_h`` on the ``rfft2`` layout."""
        M, h = self.M, self.h
        p = np.arange(M)
        q = np.arange(M // 2 + 1)
        sx = np.sin(np.pi * p / M) ** 2
        sy = np.sin(np.pi * q / M) ** 2
        return -(4.0 / (h * h)) * (sx[:, None] + sy[None, :])

    @cached_property
    def sh_symbol(self) -> np.ndarray:
        """Eigenvalues ``(1 + lambda)^2`` of ``(I + Delta_h)^2``."""
        return (1.0 + self.laplacian_symbol) ** 2

    def spectral_solve(self, a0: float, rhs: np.ndarray) -> np.ndarray:
        """Solve ``(a0 I + (I + Delta_h)^2) w = rhs`` mode by mode."""
        if not a0 > 0:
            raise ValueError(f"shift a0 must be positive, got {a0!r}")
        self.check(rhs)
        w_hat = np.fft.rfft2(rhs) / (a0 + self.sh_symbol)
        return np.fft.irfft2(w_hat, s=rhs.shape)

    def dense_laplacian(self) -> np.ndarray:
        """Laplacian as an ``M^2 x M^2`` matrix acting on ``v.ravel()`` (small grids only)."""
        M = self.M
        n = M * M
        A = np.zeros((n, n))
        idx = np.arange(n).reshape(M, M)
        for shift, axis in ((1, 0), (-1, 0), (1, 1), (-1, 1)):
            nb = np.roll(idx, shift, axis).ravel()
            A[idx.ravel(), nb] += 1.0
        A[np.arange(n), np.arange(n)] -= 4.0
        return A / (self.h * self.h)


def write_csv_matrix(path: Path | str, v: np.ndarray) -> None:
    """``M`` rows of ``M`` values at 17 significant digits."""
    with open(path, "w") as fh:
        for row in v:
            fh.write(",".join(f"{x:.17g}" for x in row))
            fh.write("\n")


def read_csv_matrix(path: Path | str) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_pgm(path: Path | str, v: np.ndarray) -> tuple[float, float]:
    """8-bit binary PGM (P5).

    Gray level ``round(255 (v - vmin) / (vmax - vmin))``; a constant field maps
    to 0.  ``vmin``/``vmax`` are recorded in a header comment and returned.
    Image row ``i`` is CSV row ``i``.
    """
    vmin, vmax = float(v.min()), float(v.max())
    span = vmax - vmin
    if span > 0:
        gray = np.rint(255.0 * (v - vmin) / span)
    else:
        gray = np.zeros_like(v)
    data = np.clip(gray, 0, 255).astype(np.uint8)
    rows, cols = data.shape
    header = f"P5\n# tfsh linear map: gray = round(255*(v-min)/(max-min)) min={vmin:.17g} max={vmax:.17g}\n{cols} {rows}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(data.tobytes())
    return vmin, vmax


def read_pgm(path: Path | str) -> tuple[np.ndarray, float, float]:
    """Inverse of :func:`write_pgm`: gray levels plus the recorded ``(vmin, vmax)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    lines = []
    pos = 0
    vmin = vmax = float("nan")
    while len(lines) < 3:
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            for tok in line.split():
                if tok.startswith("min="):
                    vmin = float(tok[4:])
                elif tok.startswith("max="):
                    vmax = float(tok[4:])
            continue
        lines.append(line)
    if lines[0] != "P5":
        raise ValueError("not a binary PGM file")
    cols, rows = map(int, lines[1].split())
    data = np.frombuffer(raw[pos : pos + rows * cols], dtype=np.uint8).reshape(rows, cols)
    return data, vmin, vmax
