"""Synthetic closed networks for contraction benchmarks.

Random entries come from splitmix64 so other implementations can regenerate
the exact same inputs:

    state_k = seed + k * 0x9E3779B97F4A7C15          (mod 2**64, k = 1, 2, ...)
    z = state_k
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9       (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB       (mod 2**64)
    z = z ^ (z >> 31)
    u = (z >> 11) * 2**-53                          in [0, 1)
    entry = 2 * u - 1                               in [-1, 1)

Entries fill the sites row-major, each site's data in row-major order over its
legs ``up, down, left, right``.
"""

from __future__ import annotations

import numpy as np

from .lattice import site_legs
from .plan import ClosedNetwork
from .tensor import Tensor

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, n: int, start: int = 0) -> np.ndarray:
    """Outputs ``start+1 .. start+n`` of the splitmix64 stream as uint64."""
    k = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed % 2**64) + k * GOLDEN
        z = (z ^ (z >> np.uint64(30))) * MIX1
        z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


def uniform(seed: int, n: int, start: int = 0) -> np.ndarray:
    return (splitmix64(seed, n, start) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _bond_legs(r: int, c: int, height: int, width: int) -> list:
    return [lab for _, lab in site_legs(r, c, height, width)[:-1]]


def all_ones_network(height: int, width: int, chi: int) -> ClosedNetwork:
    grid = []
    for r in range(height):
        row = []
        for c in range(width):
            labels = _bond_legs(r, c, height, width)
            row.append(Tensor(labels, np.ones((chi,) * len(labels)), check=False))
        grid.append(row)
    return ClosedNetwork(grid)


def random_network(height: int, width: int, chi: int, seed: int) -> ClosedNetwork:
    grid = []
    offset = 0
    for r in range(height):
        row = []
        for c in range(width):
            labels = _bond_legs(r, c, height, width)
            n = chi ** len(labels)
            data = 2.0 * uniform(seed, n, offset) - 1.0
            offset += n
            row.append(Tensor(labels, data.reshape((chi,) * len(labels)), check=False))
        grid.append(row)
    return ClosedNetwork(grid)
