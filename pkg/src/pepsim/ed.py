"""Exact diagonalization of the transverse-field Ising model on small open lattices.

Basis index ``i`` encodes site ``k`` (row-major) in bit ``N-1-k``; bit 0 means
spin up, so the dense vector matches a PEPS contracted with physical legs in
row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .lattice import lattice_edges
from .observables import ObservableReport, report_from_moments

MAX_SITES = 14


class EdError(RuntimeError):
    pass


@dataclass
class DenseState:
    amplitudes: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        n = self.height * self.width
        if n > MAX_SITES:
            raise EdError(f"{n} sites exceeds the dense ceiling of {MAX_SITES}")
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.float64)
        if self.amplitudes.shape != (2**n,):
            raise EdError(f"expected {2**n} amplitudes, got {self.amplitudes.shape}")

    @property
    def n_sites(self) -> int:
        return self.height * self.width


@dataclass
class EdResult:
    ground_energy: float
    ground_state: DenseState
    residual: float
    gap: float | None = None  # E_1 - E_0 when available


def spins(n: int) -> np.ndarray:
    """``(2**n, n)`` array of sigma values, +1 for bit 0."""
    idx = np.arange(2**n)[:, None]
    bits = (idx >> (n - 1 - np.arange(n))[None, :]) & 1
    return 1 - 2 * bits


def _checked(height: int, width: int) -> int:
    n = height * width
    if n > MAX_SITES:
        raise EdError(f"{n} sites exceeds the dense ceiling of {MAX_SITES}")
    return n


def zz_diagonal(height: int, width: int) -> np.ndarray:
    """sum over bonds of sigma_i sigma_j for every basis state."""
    n = _checked(height, width)
    s = spins(n)
    out = np.zeros(2**n)
    for (r1, c1), (r2, c2) in lattice_edges(height, width):
        out += s[:, r1 * width + c1] * s[:, r2 * width + c2]
    return out


def apply_h(state: DenseState, J: float, gamma: float) -> DenseState:
    n = state.n_sites
    psi = state.amplitudes
    out = -J * zz_diagonal(state.height, state.width) * psi
    idx = np.arange(2**n)
    for k in range(n):
        out -= gamma * psi[idx ^ (1 << (n - 1 - k))]
    return DenseState(out, state.height, state.width)


def dense_hamiltonian(height: int, width: int, J: float, gamma: float) -> np.ndarray:
    """Explicit 2^N x 2^N matrix, assembled entry by entry (small N only)."""
    n = _checked(height, width)
    if n > 10:
        raise EdError("dense assembly is limited to N <= 10")
    dim = 2**n
    h = np.zeros((dim, dim))
    s = spins(n)
    edges = [(r1 * width + c1, r2 * width + c2) for (r1, c1), (r2, c2) in lattice_edges(height, width)]
    for i in range(dim):
        h[i, i] = -J * sum(s[i, a] * s[i, b] for a, b in edges)
        for k in range(n):
            h[i ^ (1 << (n - 1 - k)), i] -= gamma
    return h


def ground_state(height: int, width: int, J: float, gamma: float, tol: float = 1e-10) -> EdResult:
    n = _checked(height, width)
    dim = 2**n
    diag = -J * zz_diagonal(height, width)
    idx = np.arange(dim)
    flips = [idx ^ (1 << (n - 1 - k)) for k in range(n)]

    def matvec(v):
        v = np.ravel(v)
        out = diag * v
        for f in flips:
            out -= gamma * v[f]
        return out

    op = LinearOperator((dim, dim), matvec=matvec, dtype=np.float64)
    # uniform start plus a fixed ramp so the Gamma = 0 degeneracy is split deterministically
    v0 = np.ones(dim) + 1e-3 * np.linspace(-1.0, 1.0, dim)
    k = 2 if dim > 3 else 1
    try:
        vals, vecs = eigsh(op, k=k, which="SA", v0=v0, tol=tol * 1e-2, maxiter=50 * dim)
    except ArpackNoConvergence as exc:
        raise EdError(f"eigensolver did not converge for {height}x{width}, J={J}, gamma={gamma}: {exc}") from exc
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    e0, psi = float(vals[0]), vecs[:, 0]
    psi = psi / np.linalg.norm(psi)
    resid = float(np.linalg.norm(matvec(psi) - e0 * psi))
    scale = max(1.0, abs(e0))
    if resid > 1e-8 * scale:
        raise EdError(f"ground state residual {resid:.3e} too large")
    gap = float(vals[1] - vals[0]) if k > 1 else None
    return EdResult(e0, DenseState(psi, height, width), resid, gap)


def symmetrized(state: DenseState) -> np.ndarray:
    """Even component under global spin flip (index reversal), unit norm.

    For Gamma > 0 the ground state is already even; at Gamma = 0 this picks
    the GHZ-like combination of the two aligned states.
    """
    psi = state.amplitudes
    even = 0.5 * (psi + psi[::-1])
    nrm = np.linalg.norm(even)
    if nrm < 1e-8 * np.linalg.norm(psi):
        return psi / np.linalg.norm(psi)
    return even / nrm


def dense_observables(psi: np.ndarray, height: int, width: int, J: float, gamma: float) -> ObservableReport:
    n = _checked(height, width)
    psi = np.asarray(psi, dtype=np.float64)
    s = spins(n)
    p = psi**2
    nrm = float(np.sum(p))
    idx = np.arange(2**n)
    mx = [float(psi @ psi[idx ^ (1 << (n - 1 - k))]) / nrm for k in range(n)]
    mz = [float(p @ s[:, k]) / nrm for k in range(n)]
    zz = [
        float(p @ (s[:, r1 * width + c1] * s[:, r2 * width + c2])) / nrm
        for (r1, c1), (r2, c2) in lattice_edges(height, width)
    ]
    return report_from_moments(height, width, nrm, mx, mz, zz, J, gamma)


def ed_observables(res: EdResult, J: float, gamma: float) -> ObservableReport:
    st = res.ground_state
    return dense_observables(symmetrized(st), st.height, st.width, J, gamma)
