"""PEPS on an open rectangular lattice.

Every site tensor keeps its legs in canonical order ``up, down, left, right,
physical`` (absent boundary legs skipped). Physical index 0 is spin up
(sigma = +1), index 1 is spin down (sigma = -1).

Bond labels are ``("h", r, c)`` for the edge (r, c)-(r, c+1) and ``("v", r, c)``
for (r, c)-(r+1, c); the physical leg of (r, c) is ``("p", r, c)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .plan import ClosedNetwork, contract_network
from .tensor import Tensor, TensorError

SX = np.array([[0.0, 1.0], [1.0, 0.0]])
SZ = np.array([[1.0, 0.0], [0.0, -1.0]])
ID2 = np.eye(2)

UP, DOWN, LEFT, RIGHT, PHYS = range(5)

Coord = tuple[int, int]


def phys_label(r: int, c: int) -> tuple:
    return ("p", r, c)


def edge_label(s1: Coord, s2: Coord) -> tuple:
    (r1, c1), (r2, c2) = sorted((s1, s2))
    if r1 == r2 and c2 == c1 + 1:
        return ("h", r1, c1)
    if c1 == c2 and r2 == r1 + 1:
        return ("v", r1, c1)
    raise ValueError(f"sites {s1} and {s2} are not adjacent")


def site_legs(r: int, c: int, height: int, width: int) -> list[tuple[int, tuple]]:
    """Canonical ``(direction, label)`` list for site (r, c)."""
    legs = []
    if r > 0:
        legs.append((UP, ("v", r - 1, c)))
    if r < height - 1:
        legs.append((DOWN, ("v", r, c)))
    if c > 0:
        legs.append((LEFT, ("h", r, c - 1)))
    if c < width - 1:
        legs.append((RIGHT, ("h", r, c)))
    legs.append((PHYS, phys_label(r, c)))
    return legs


def lattice_edges(height: int, width: int) -> list[tuple[Coord, Coord]]:
    """Horizontal bonds row-major, then vertical bonds row-major."""
    horiz = [((r, c), (r, c + 1)) for r in range(height) for c in range(width - 1)]
    vert = [((r, c), (r + 1, c)) for r in range(height - 1) for c in range(width)]
    return horiz + vert


@dataclass
class OperatorInsertion:
    site: Coord
    op: np.ndarray

    def __post_init__(self):
        self.op = np.asarray(self.op, dtype=np.float64)
        if not any(np.array_equal(self.op, m) for m in (ID2, SX, SZ)):
            raise ValueError("insertion operator must be identity, S^x or S^z")


class PepsLattice:
    def __init__(self, sites: Sequence[Sequence[Tensor]]):
        self.sites = [list(row) for row in sites]
        self.height = len(self.sites)
        self.width = len(self.sites[0])
        for r, c in self.coords():
            expected = [lab for _, lab in site_legs(r, c, self.height, self.width)]
            t = self.sites[r][c]
            if list(t.labels) != expected:
                raise TensorError(f"site {(r, c)} has labels {t.labels}, expected {expected}")
            if t.dim(phys_label(r, c)) != 2:
                raise TensorError(f"site {(r, c)} physical leg must have dim 2")
        for s1, s2 in lattice_edges(self.height, self.width):
            lab = edge_label(s1, s2)
            if self[s1].dim(lab) != self[s2].dim(lab):
                raise TensorError(f"bond {lab} has mismatched dims")

    @property
    def n_sites(self) -> int:
        return self.height * self.width

    def coords(self) -> Iterator[Coord]:
        for r in range(self.height):
            for c in range(self.width):
                yield r, c

    def __getitem__(self, site: Coord) -> Tensor:
        return self.sites[site[0]][site[1]]

    def replace(self, updates: dict[Coord, Tensor]) -> PepsLattice:
        sites = [list(row) for row in self.sites]
        for (r, c), t in updates.items():
            sites[r][c] = t
        return PepsLattice(sites)

    def copy(self) -> PepsLattice:
        return PepsLattice(self.sites)

    @property
    def bonds(self) -> dict[tuple[Coord, Coord], tuple[tuple, int]]:
        """Bond registry: edge -> (label, dim)."""
        out = {}
        for s1, s2 in lattice_edges(self.height, self.width):
            lab = edge_label(s1, s2)
            out[(s1, s2)] = (lab, self[s1].dim(lab))
        return out

    def bond_dim(self, s1: Coord, s2: Coord) -> int:
        return self[s1].dim(edge_label(s1, s2))

    def max_bond_dim(self) -> int:
        return max(d for _, d in self.bonds.values())


def product_state(height: int, width: int, local: Sequence[float]) -> PepsLattice:
    """Every site in the same single-spin state ``local``; all bonds of dim 1."""
    local = np.asarray(local, dtype=np.float64)
    sites = []
    for r in range(height):
        row = []
        for c in range(width):
            legs = site_legs(r, c, height, width)
            shape = [1] * (len(legs) - 1) + [2]
            row.append(Tensor([lab for _, lab in legs], local.reshape(shape)))
        sites.append(row)
    return PepsLattice(sites)


def init_uniform(height: int, width: int) -> PepsLattice:
    if height < 2 or width < 2:
        raise ValueError("lattice must be at least 2x2")
    return product_state(height, width, [2**-0.5, 2**-0.5])


def random_lattice(height: int, width: int, chi: int, rng: np.random.Generator) -> PepsLattice:
    """Gaussian site tensors with uniform bond dimension ``chi``."""
    sites = []
    for r in range(height):
        row = []
        for c in range(width):
            legs = site_legs(r, c, height, width)
            shape = [chi] * (len(legs) - 1) + [2]
            row.append(Tensor([lab for _, lab in legs], rng.standard_normal(shape)))
        sites.append(row)
    return PepsLattice(sites)


def snake_order(height: int, width: int) -> list[Coord]:
    order = []
    for r in range(height):
        cols = range(width) if r % 2 == 0 else range(width - 1, -1, -1)
        order.extend((r, c) for c in cols)
    return order


def from_dense(psi: np.ndarray, height: int, width: int) -> PepsLattice:
    """Exact PEPS for a dense state vector via an MPS along a snake path.

    Dense index bits are site-ordered row-major with site 0 most significant;
    bonds off the snake keep dim 1.
    """
    n = height * width
    psi = np.asarray(psi, dtype=np.float64).reshape((2,) * n)
    path = snake_order(height, width)
    flat = [r * width + c for r, c in path]
    rest = psi.transpose(flat).reshape(1, -1)
    cores = []
    for _ in range(n - 1):
        chi_l = rest.shape[0]
        u, s, vt = np.linalg.svd(rest.reshape(chi_l * 2, -1), full_matrices=False)
        k = max(1, int(np.count_nonzero(s > 1e-14 * s[0])))
        cores.append(u[:, :k].reshape(chi_l, 2, k))
        rest = s[:k, None] * vt[:k]
    cores.append(rest.reshape(rest.shape[0], 2, 1))

    sites: list[list[Tensor | None]] = [[None] * width for _ in range(height)]
    for i, (r, c) in enumerate(path):
        core = cores[i]
        prev_lab = edge_label(path[i - 1], (r, c)) if i > 0 else None
        next_lab = edge_label((r, c), path[i + 1]) if i < n - 1 else None
        legs = site_legs(r, c, height, width)
        shape, src = [], []
        for _, lab in legs:
            if lab == prev_lab:
                shape.append(core.shape[0])
                src.append(0)
            elif lab == next_lab:
                shape.append(core.shape[2])
                src.append(2)
            elif lab == phys_label(r, c):
                shape.append(2)
                src.append(1)
            else:
                shape.append(1)
        keep = sorted(src)
        data = core.reshape([core.shape[ax] for ax in keep])
        data = data.transpose([keep.index(ax) for ax in src]).reshape(shape)
        sites[r][c] = Tensor([lab for _, lab in legs], data)
    return PepsLattice(sites)


def _fix_config(lat: PepsLattice, config: Sequence[int]) -> ClosedNetwork:
    if len(config) != lat.n_sites:
        raise ValueError(f"config needs {lat.n_sites} spins, got {len(config)}")
    grid = []
    for r in range(lat.height):
        row = []
        for c in range(lat.width):
            sigma = config[r * lat.width + c]
            if sigma not in (1, -1):
                raise ValueError(f"spin values must be +1 or -1, got {sigma}")
            t = lat[(r, c)]
            row.append(Tensor(t.labels[:-1], t.data[..., 0 if sigma == 1 else 1], check=False))
        grid.append(row)
    return ClosedNetwork(grid)


def amplitude(lat: PepsLattice, config: Sequence[int], max_elements: int | None = None) -> float:
    """A(sigma_1..sigma_N) for spins listed row-major."""
    return contract_network(_fix_config(lat, config), "quadrant", max_elements)


def site_double_layer(t: Tensor, op: np.ndarray | None = None) -> Tensor:
    """Contract a site tensor with its (real) bra copy over the physical leg.

    Each bond pair is fused into one leg of dim chi^2 with the ket index fastest.
    """
    bonds = t.labels[:-1]
    ket = t.data.reshape(-1, 2)
    bra_in = ket if op is None else ket @ np.asarray(op).T
    m = bra_in @ ket.T  # (bra multi-index, ket multi-index)
    dims = t.shape[:-1]
    nb = len(dims)
    m = m.reshape(dims + dims)
    order = [ax for i in range(nb) for ax in (i, nb + i)]
    fused = tuple(d * d for d in dims)
    return Tensor(bonds, m.transpose(order).reshape(fused), check=False)


def build_double_layer(
    lat: PepsLattice,
    insertions: Sequence[OperatorInsertion] = (),
    cache: dict[Coord, Tensor] | None = None,
) -> ClosedNetwork:
    """Closed network for <Psi| O_1 O_2 ... |Psi>.

    ``cache`` may hold precomputed identity double-layer tensors per site.
    """
    ops: dict[Coord, np.ndarray] = {}
    for ins in insertions:
        if ins.site in ops:
            raise ValueError(f"two insertions on site {ins.site}")
        ops[tuple(ins.site)] = ins.op
    grid = []
    for r in range(lat.height):
        row = []
        for c in range(lat.width):
            op = ops.get((r, c))
            if op is None and cache is not None and (r, c) in cache:
                row.append(cache[(r, c)])
            else:
                row.append(site_double_layer(lat[(r, c)], op))
        grid.append(row)
    return ClosedNetwork(grid)


def double_layer_cache(lat: PepsLattice) -> dict[Coord, Tensor]:
    return {s: site_double_layer(lat[s]) for s in lat.coords()}


# -- checkpoints -----------------------------------------------------------

MAGIC = b"PEPS"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    """Bad magic bytes or inconsistent structure."""


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def save_checkpoint(lat: PepsLattice, path: str | Path) -> None:
    parts = [MAGIC, struct.pack("<III", FORMAT_VERSION, lat.height, lat.width)]
    for r, c in lat.coords():
        t = lat[(r, c)]
        legs = site_legs(r, c, lat.height, lat.width)
        parts.append(struct.pack("<B", len(legs)))
        for (direction, _), d in zip(legs, t.shape):
            parts.append(struct.pack("<BI", direction, d))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(f"need {n} bytes at offset {self.pos}, file has {len(self.buf)}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> PepsLattice:
    rd = _Reader(Path(path).read_bytes())
    if rd.take(4) != MAGIC:
        raise CheckpointFormatError("not a PEPS checkpoint (bad magic)")
    (version,) = rd.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}")
    height, width = rd.unpack("<II")
    if height < 1 or width < 1:
        raise CheckpointFormatError(f"bad lattice size {height}x{width}")
    sites = []
    for r in range(height):
        row = []
        for c in range(width):
            legs = site_legs(r, c, height, width)
            (n_legs,) = rd.unpack("<B")
            if n_legs != len(legs):
                raise CheckpointFormatError(f"site {(r, c)}: {n_legs} legs, expected {len(legs)}")
            dims = []
            for direction, _ in legs:
                code, d = rd.unpack("<BI")
                if code != direction or d < 1:
                    raise CheckpointFormatError(f"site {(r, c)}: bad leg record ({code}, {d})")
                dims.append(d)
            n = int(np.prod(dims))
            data = np.frombuffer(rd.take(8 * n), dtype="<f8").astype(np.float64).reshape(dims)
            row.append(Tensor([lab for _, lab in legs], data))
        sites.append(row)
    if rd.pos != len(rd.buf):
        raise CheckpointFormatError(f"{len(rd.buf) - rd.pos} trailing bytes")
    try:
        return PepsLattice(sites)
    except TensorError as exc:
        raise CheckpointFormatError(str(exc)) from exc
