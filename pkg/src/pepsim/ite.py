"""Imaginary-time evolution of a PEPS with a symmetric Trotter split.

One step applies the half-step field gate to every site, the coupling gate to
every bond, and the half-step field gate again, renormalizing after each sweep.
Two-body updates are simple updates: contract the pair, apply the gate, split
by truncated SVD with the square root of the spectrum absorbed on both sides.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .lattice import Coord, PepsLattice, edge_label, init_uniform, lattice_edges, phys_label
from .observables import DEFAULT, ContractOptions, energy, norm
from .tensor import Tensor, TensorError, permute, svd_truncate


class IteError(RuntimeError):
    pass


@dataclass
class IteConfig:
    J: float = 1.0
    gamma: float = 1.0
    tau: float = 3.0
    steps: int = 100
    epsilon: float = 0.01
    chi_max: int = 2
    energy_eval_period: int = 2
    early_stop_tol: float | None = None  # stop when |dE/E| between evaluations falls below this
    contract: ContractOptions = field(default_factory=ContractOptions)

    def __post_init__(self):
        errors = []
        if self.steps < 1:
            errors.append("steps must be >= 1")
        if not 0.0 <= self.epsilon < 1.0:
            errors.append("epsilon must lie in [0, 1)")
        if self.chi_max < 1:
            errors.append("chi_max must be >= 1")
        if self.energy_eval_period < 1:
            errors.append("energy_eval_period must be >= 1")
        if self.tau < 0:
            errors.append("tau must be nonnegative")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def dtau(self) -> float:
        return self.tau / self.steps


@dataclass
class GateSet:
    one_body: np.ndarray  # exp(+Gamma dtau/2 Sx)
    two_body: np.ndarray  # exp(+J dtau Sz Sz), product basis s1*2 + s2


def build_gates(cfg: IteConfig) -> GateSet:
    a = cfg.gamma * cfg.dtau / 2
    one = np.array([[math.cosh(a), math.sinh(a)], [math.sinh(a), math.cosh(a)]])
    b = cfg.J * cfg.dtau
    two = np.diag([math.exp(b), math.exp(-b), math.exp(-b), math.exp(b)])
    return GateSet(one, two)


def apply_one_body(lat: PepsLattice, site: Coord, gate: np.ndarray) -> PepsLattice:
    t = lat[site]
    data = np.tensordot(t.data, np.asarray(gate), axes=([t.data.ndim - 1], [1]))
    return lat.replace({site: Tensor(t.labels, data, check=False)})


def one_body_sweep(lat: PepsLattice, gate: np.ndarray) -> PepsLattice:
    updates = {}
    for s in lat.coords():
        t = lat[s]
        updates[s] = Tensor(t.labels, t.data @ np.asarray(gate).T, check=False)
    return lat.replace(updates)


def apply_two_body(
    lat: PepsLattice, s1: Coord, s2: Coord, gate: np.ndarray, epsilon: float, chi_max: int
) -> tuple[PepsLattice, float]:
    """Returns the updated lattice and the discarded spectral weight."""
    bond = edge_label(s1, s2)
    a, b = lat[s1], lat[s2]
    p1, p2 = phys_label(*s1), phys_label(*s2)
    rows = [lab for lab in a.labels if lab not in (bond, p1)]
    cols = [lab for lab in b.labels if lab not in (bond, p2)]
    a_m = permute(a, rows + [p1, bond]).data
    b_m = permute(b, [bond] + cols + [p2]).data
    r_dims, c_dims = a_m.shape[:-2], b_m.shape[1:-1]
    chi = a_m.shape[-1]
    theta = a_m.reshape(-1, chi) @ b_m.reshape(chi, -1)
    theta = theta.reshape(-1, 2, int(np.prod(c_dims, dtype=int)), 2)
    g = np.asarray(gate).reshape(2, 2, 2, 2)
    theta = np.einsum("klij,aibj->akbl", g, theta)
    m = theta.reshape(theta.shape[0] * 2, -1)
    try:
        res = svd_truncate(m, epsilon, chi_max)
    except TensorError as exc:
        raise IteError(f"two-body update on {s1}-{s2} failed: {exc}") from exc
    k = res.kept_rank
    left = Tensor(rows + [p1, bond], res.left_factor.reshape(r_dims + (2, k)), check=False)
    right = Tensor([bond] + cols + [p2], res.right_factor.reshape((k,) + c_dims + (2,)), check=False)
    new = lat.replace({s1: permute(left, a.labels), s2: permute(right, b.labels)})
    return new, res.discarded_weight


def two_body_sweep(lat: PepsLattice, gate: np.ndarray, epsilon: float, chi_max: int) -> tuple[PepsLattice, float]:
    worst = 0.0
    for s1, s2 in lattice_edges(lat.height, lat.width):
        lat, w = apply_two_body(lat, s1, s2, gate, epsilon, chi_max)
        worst = max(worst, w)
    return lat, worst


def normalize(lat: PepsLattice, opts: ContractOptions = DEFAULT) -> tuple[PepsLattice, float]:
    """Scale every site by norm^(-1/2N); returns the new lattice and the norm before scaling."""
    nrm = norm(lat, opts)
    if not math.isfinite(nrm) or nrm <= 0:
        raise IteError(f"cannot normalize: norm = {nrm}")
    scale = nrm ** (-1.0 / (2 * lat.n_sites))
    return lat.replace({s: lat[s] * scale for s in lat.coords()}), nrm


@dataclass
class TraceEntry:
    step: int
    energy: float
    norm: float
    max_chi: int
    elapsed_s: float


@dataclass
class PhaseTimes:
    one_body: float = 0.0
    two_body: float = 0.0
    normalize: float = 0.0
    expectation: float = 0.0
    total: float = 0.0

    @property
    def operator_application(self) -> float:
        return self.one_body + self.two_body


@dataclass
class IteResult:
    lattice: PepsLattice
    trace: list[TraceEntry]
    times: PhaseTimes
    steps_done: int
    norms: list[float] = field(default_factory=list)  # every pre-normalization norm
    max_discarded: float = 0.0


def ite_run(cfg: IteConfig, lat: PepsLattice | None = None, height: int = 2, width: int = 2, on_trace=None) -> IteResult:
    if lat is None:
        lat = init_uniform(height, width)
    gates = build_gates(cfg)
    opts = cfg.contract
    times = PhaseTimes()
    trace: list[TraceEntry] = []
    norms: list[float] = []
    worst = 0.0
    t_start = time.perf_counter()
    last_e = None
    step = 0

    def timed(attr, fn, *args):
        t0 = time.perf_counter()
        out = fn(*args)
        setattr(times, attr, getattr(times, attr) + time.perf_counter() - t0)
        return out

    for step in range(1, cfg.steps + 1):
        lat = timed("one_body", one_body_sweep, lat, gates.one_body)
        lat, n = timed("normalize", normalize, lat, opts)
        norms.append(n)
        lat, w = timed("two_body", two_body_sweep, lat, gates.two_body, cfg.epsilon, cfg.chi_max)
        worst = max(worst, w)
        lat, n = timed("normalize", normalize, lat, opts)
        norms.append(n)
        lat = timed("one_body", one_body_sweep, lat, gates.one_body)
        lat, n = timed("normalize", normalize, lat, opts)
        norms.append(n)

        if step % cfg.energy_eval_period == 0 or step == cfg.steps:
            e = timed("expectation", energy, lat, cfg.J, cfg.gamma, opts)
            entry = TraceEntry(step, e, n, lat.max_bond_dim(), time.perf_counter() - t_start)
            trace.append(entry)
            if on_trace is not None:
                on_trace(entry)
            if cfg.early_stop_tol is not None and last_e is not None and e != 0:
                if abs((e - last_e) / e) < cfg.early_stop_tol:
                    break
            last_e = e
    if not trace or trace[-1].step != step:
        e = timed("expectation", energy, lat, cfg.J, cfg.gamma, opts)
        trace.append(TraceEntry(step, e, norms[-1], lat.max_bond_dim(), time.perf_counter() - t_start))
    times.total = time.perf_counter() - t_start
    return IteResult(lat, trace, times, step, norms, worst)


TRACE_COLUMNS = ["step", "energy", "norm", "max_chi", "elapsed_s"]


def trace_csv(trace: list[TraceEntry]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for e in trace:
        w.writerow([e.step, repr(e.energy), repr(e.norm), e.max_chi, f"{e.elapsed_s:.6f}"])
    return buf.getvalue()
