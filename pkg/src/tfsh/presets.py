"""Built-in parameter sets for the two reference experiments."""

from __future__ import annotations

import numpy as np

from .grid import Grid2D


def example2_initial(grid: Grid2D) -> np.ndarray:
    """Perturbed constant state on ``(0, 32)^2`` that seeds the pattern-formation runs."""
    X, Y = grid.mesh()
    p = np.pi / 32.0
    return (
        0.07
        - 0.02 * np.cos(2 * p * (X - 12)) * np.sin(2 * p * (Y - 1))
        + 0.02 * np.cos(p * (X + 10)) ** 2 * np.sin(p * (Y + 3)) ** 2
        - 0.01 * np.sin(4 * p * X) ** 2 * np.sin(4 * p * (Y - 6)) ** 2
    )


INITIAL_DATA = {
    "example2": example2_initial,
    "zero": lambda grid: np.zeros((grid.M, grid.M)),
}


# values are in the same textual form the config file uses
PRESETS = {
    "example1-a05": {
        "alpha": "0.5",
        "sigma": "0.3",
        "gamma": "4,5,6",
        "N": "20,40,80,160",
        "T": "1",
        "M": "128",
        "M_by_N": "160:256",
        "g": "0.1",
        "epsilon": "0.5",
        "mesh": "two-part",
    },
    "example1-a08": {
        "alpha": "0.8",
        "sigma": "0.3",
        "gamma": "3,4,5",
        "N": "20,40,80,160",
        "T": "1",
        "M": "128",
        "g": "0.1",
        "epsilon": "0.5",
        "mesh": "two-part",
    },
    "example2": {
        "alpha": "0.6",
        "g": "1",
        "epsilon": "0.85",
        "L": "32",
        "M": "96",
        "T": "512",
        "mesh": "adaptive",
        "eta": "10",
        "tau_max": "0.1",
        "tau_min": "0.001",
        "init": "example2",
        "snapshot_times": "64,128,256,512",
    },
}
