"""Pairwise contraction schedules for closed rectangular networks.

Input tensors are numbered row-major, ``id = row * width + col``. Step ``k``
produces tensor ``n_inputs + k``. Every step names the worker that performs it;
sequential execution ignores the worker.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from math import ceil, prod
from typing import Sequence

import numpy as np

from .tensor import Label, MemoryCeilingError, Tensor, contract_pair, default_mem_ceiling


class PlanError(ValueError):
    pass


class ClosedNetwork:
    """Grid of tensors in which every label is shared by exactly two tensors."""

    def __init__(self, grid: Sequence[Sequence[Tensor]]):
        self.grid = [list(row) for row in grid]
        if not self.grid or not self.grid[0]:
            raise PlanError("empty network")
        if any(len(row) != len(self.grid[0]) for row in self.grid):
            raise PlanError("network grid is not rectangular")
        counts: Counter = Counter()
        dims: dict[Label, int] = {}
        for t in self.tensors():
            for lab, d in zip(t.labels, t.shape):
                counts[lab] += 1
                if dims.setdefault(lab, d) != d:
                    raise PlanError(f"label {lab!r} has inconsistent dims")
        bad = [lab for lab, n in counts.items() if n != 2]
        if bad:
            raise PlanError(f"labels not shared by exactly two tensors: {bad[:5]}")

    @property
    def height(self) -> int:
        return len(self.grid)

    @property
    def width(self) -> int:
        return len(self.grid[0])

    def tensors(self) -> list[Tensor]:
        return [t for row in self.grid for t in row]

    def shape(self) -> list[dict[Label, int]]:
        return [t.dims() for t in self.tensors()]


@dataclass(frozen=True)
class Step:
    a: int
    b: int
    out: int
    worker: int = 0


@dataclass(frozen=True)
class Plan:
    n_inputs: int
    steps: tuple[Step, ...]
    kind: str = "custom"
    home: tuple[int, ...] | None = None  # owning worker of each input tensor

    def __post_init__(self):
        if self.home is not None and len(self.home) != self.n_inputs:
            raise PlanError("home must list one worker per input tensor")
        if len(self.steps) != self.n_inputs - 1:
            raise PlanError(f"{self.n_inputs} tensors need {self.n_inputs - 1} steps, got {len(self.steps)}")
        live = set(range(self.n_inputs))
        for k, s in enumerate(self.steps):
            if s.out != self.n_inputs + k:
                raise PlanError(f"step {k} must produce id {self.n_inputs + k}")
            if s.a == s.b or s.a not in live or s.b not in live:
                raise PlanError(f"step {k} references a dead tensor ({s.a}, {s.b})")
            live -= {s.a, s.b}
            live.add(s.out)

    @property
    def workers(self) -> set[int]:
        return {s.worker for s in self.steps}

    def home_worker(self, tid: int) -> int | None:
        return None if self.home is None else self.home[tid]

    def dumps(self) -> str:
        return "".join(
            f"step {k}: contract {s.a} {s.b} -> {s.out} on worker {s.worker}\n"
            for k, s in enumerate(self.steps)
        )

    @classmethod
    def loads(cls, text: str, kind: str = "custom") -> Plan:
        steps = []
        pat = re.compile(r"step (\d+): contract (\d+) (\d+) -> (\d+) on worker (\d+)$")
        for line in text.splitlines():
            if not line.strip():
                continue
            m = pat.match(line.strip())
            if m is None or int(m.group(1)) != len(steps):
                raise PlanError(f"malformed plan line: {line!r}")
            _, a, b, out, w = map(int, m.groups())
            steps.append(Step(a, b, out, w))
        return cls(len(steps) + 1, tuple(steps), kind)


class _Builder:
    def __init__(self, n_inputs: int):
        self.n_inputs = n_inputs
        self.steps: list[Step] = []

    def __call__(self, a: int, b: int, worker: int) -> int:
        out = self.n_inputs + len(self.steps)
        self.steps.append(Step(a, b, out, worker))
        return out


def _sweep(
    build: _Builder, width: int, rows: Sequence[int], cols: Sequence[int], worker: int
) -> dict[int, int]:
    """Absorb ``rows`` one by one into a boundary chain over ``cols``; returns col -> id."""
    chain = {c: rows[0] * width + c for c in cols}
    for r in rows[1:]:
        for c in cols:
            chain[c] = build(chain[c], r * width + c, worker)
    return chain


def _collapse(build: _Builder, chain: dict[int, int], cols: Sequence[int], worker: int) -> int:
    acc = chain[cols[0]]
    for c in cols[1:]:
        acc = build(acc, chain[c], worker)
    return acc


def band_bounds(height: int, bands: int) -> list[range]:
    if not 1 <= bands <= min(height, 4):
        raise PlanError(f"bands must lie in 1..{min(height, 4)}, got {bands}")
    return [range(int(p[0]), int(p[-1]) + 1) for p in np.array_split(np.arange(height), bands)]


@lru_cache(maxsize=64)
def row_plan(height: int, width: int, bands: int = 1) -> Plan:
    build = _Builder(height * width)
    cols = list(range(width))
    home = [0] * (height * width)
    chains = []
    for k, rows in enumerate(band_bounds(height, bands)):
        for r in rows:
            home[r * width : (r + 1) * width] = [k] * width
        chains.append(_sweep(build, width, list(rows), cols, k))
    merged = chains[0]
    for k in range(1, bands):
        merged = {c: build(merged[c], chains[k][c], k) for c in cols}
    _collapse(build, merged, cols, bands - 1)
    kind = "row" if bands == 1 else f"row{bands}"
    return Plan(height * width, tuple(build.steps), kind, tuple(home))


def quadrant_split(height: int, width: int) -> tuple[int, int]:
    return ceil(height / 2), ceil(width / 2)


@lru_cache(maxsize=64)
def quadrant_plan(height: int, width: int) -> Plan:
    if height < 2 or width < 2:
        raise PlanError("quadrant plan needs both dims >= 2")
    h1, w1 = quadrant_split(height, width)
    top, bottom = list(range(h1)), list(range(height - 1, h1 - 1, -1))
    left, right = list(range(w1)), list(range(width - 1, w1 - 1, -1))
    build = _Builder(height * width)
    home = [0] * (height * width)
    corner = {}
    for worker, (rows, cols) in enumerate([(top, left), (top, right), (bottom, left), (bottom, right)]):
        for r in rows:
            for c in cols:
                home[r * width + c] = worker
        chain = _sweep(build, width, rows, cols, worker)
        corner[worker] = _collapse(build, chain, cols, worker)
    upper = build(corner[0], corner[1], 0)
    lower = build(corner[2], corner[3], 2)
    build(upper, lower, 0)
    return Plan(height * width, tuple(build.steps), "quadrant", tuple(home))


def plan_row(net: ClosedNetwork, bands: int = 1) -> Plan:
    """Row sweep top to bottom; ``bands > 1`` splits rows into contiguous bands, one per worker."""
    return row_plan(net.height, net.width, bands)


def plan_quadrant(net: ClosedNetwork) -> Plan:
    """Four corner quadrants swept toward the center, merged (TL+TR), (BL+BR), then together."""
    return quadrant_plan(net.height, net.width)


def make_plan(net: ClosedNetwork, kind: str) -> Plan:
    if kind == "row":
        return plan_row(net)
    if kind == "quadrant":
        return plan_quadrant(net)
    m = re.fullmatch(r"row(\d)", kind)
    if m:
        return plan_row(net, int(m.group(1)))
    raise PlanError(f"unknown plan kind {kind!r}")


@dataclass
class CostReport:
    peak_elements: int
    total_flops: int
    bottleneck_step: int | None  # None when an input tensor is the largest
    step_elements: list[int] = field(default_factory=list)


def _shape_of(net) -> list[dict[Label, int]]:
    return net.shape() if isinstance(net, ClosedNetwork) else [dict(d) for d in net]


def estimate_cost(net, plan: Plan) -> CostReport:
    """Replay ``plan`` on label/dim bookkeeping only.

    ``net`` is a ClosedNetwork or a list of ``{label: dim}`` dicts, one per input.
    """
    live: dict[int, dict[Label, int]] = dict(enumerate(_shape_of(net)))
    if len(live) != plan.n_inputs:
        raise PlanError(f"plan expects {plan.n_inputs} inputs, network has {len(live)}")
    peak = max(prod(d.values()) for d in live.values())
    bottleneck = None
    flops = 0
    sizes = []
    for k, s in enumerate(plan.steps):
        if s.a not in live or s.b not in live:
            raise PlanError(f"step {k} references a dead tensor")
        da, db = live.pop(s.a), live.pop(s.b)
        shared = prod(d for lab, d in da.items() if lab in db)
        out = {lab: d for lab, d in da.items() if lab not in db}
        out.update((lab, d) for lab, d in db.items() if lab not in da)
        n = prod(out.values())
        live[s.out] = out
        flops += n * shared
        sizes.append(n)
        if n > peak:
            peak, bottleneck = n, k
    return CostReport(peak, flops, bottleneck, sizes)


def contract_step(a: Tensor, b: Tensor, k: int, max_elements: int | None) -> Tensor:
    try:
        return contract_pair(a, b, max_elements)
    except MemoryCeilingError as exc:
        raise MemoryCeilingError(exc.elements, exc.ceiling, step=k) from None


def execute_plan_sequential(
    net: ClosedNetwork, plan: Plan, max_elements: int | None = None
) -> tuple[float, CostReport]:
    if max_elements is None:
        max_elements = default_mem_ceiling()
    live = dict(enumerate(net.tensors()))
    if len(live) != plan.n_inputs:
        raise PlanError(f"plan expects {plan.n_inputs} inputs, network has {len(live)}")
    peak = max(t.size for t in live.values())
    bottleneck = None
    flops = 0
    sizes = []
    for k, s in enumerate(plan.steps):
        a, b = live.pop(s.a), live.pop(s.b)
        shared = prod(d for lab, d in zip(a.labels, a.shape) if lab in b.labels)
        out = contract_step(a, b, k, max_elements)
        live[s.out] = out
        flops += out.size * shared
        sizes.append(out.size)
        if out.size > peak:
            peak, bottleneck = out.size, k
    (final,) = live.values()
    return final.scalar(), CostReport(peak, flops, bottleneck, sizes)


def contract_network(net: ClosedNetwork, kind: str = "quadrant", max_elements: int | None = None) -> float:
    if kind == "quadrant" and (net.height < 2 or net.width < 2):
        kind = "row"
    value, _ = execute_plan_sequential(net, make_plan(net, kind), max_elements)
    return value
