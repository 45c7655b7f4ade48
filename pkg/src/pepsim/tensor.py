"""Dense labeled tensors: permutation, matricization, pairwise contraction, truncated SVD.

Labels are arbitrary hashable ids. A label's extent is the size of the
corresponding axis of ``data``; two tensors sharing a label must agree on it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from math import prod
from typing import Hashable, Sequence

import numpy as np
import scipy.linalg

Label = Hashable

DEFAULT_MEM_CEILING = 2**30


class TensorError(ValueError):
    pass


class MemoryCeilingError(MemoryError):
    """A single tensor would exceed the configured element ceiling."""

    def __init__(self, elements: int, ceiling: int, step: int | None = None):
        self.elements = elements
        self.ceiling = ceiling
        self.step = step
        where = "" if step is None else f" at step {step}"
        super().__init__(f"result of {elements} elements exceeds ceiling {ceiling}{where}")


def default_mem_ceiling() -> int:
    env = os.environ.get("PEPS_MEM_CEILING")
    if env:
        return int(float(env))
    return DEFAULT_MEM_CEILING


class Tensor:
    """Real float64 array whose axes are named by unique labels."""

    __slots__ = ("labels", "data")

    def __init__(self, labels: Sequence[Label], data, check: bool = True):
        labels = tuple(labels)
        data = np.asarray(data, dtype=np.float64)
        if check:
            if len(set(labels)) != len(labels):
                raise TensorError(f"duplicate labels in {labels}")
            if data.ndim != len(labels):
                raise TensorError(f"{len(labels)} labels for array of order {data.ndim}")
            if not np.all(np.isfinite(data)):
                raise TensorError("tensor data must be finite")
        self.labels = labels
        self.data = data

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def dim(self, label: Label) -> int:
        return self.data.shape[self.labels.index(label)]

    def dims(self) -> dict[Label, int]:
        return dict(zip(self.labels, self.data.shape))

    def scalar(self) -> float:
        if self.labels:
            raise TensorError(f"tensor still has open labels {self.labels}")
        return float(self.data)

    def __mul__(self, alpha: float) -> Tensor:
        return Tensor(self.labels, self.data * alpha, check=False)

    __rmul__ = __mul__

    def __repr__(self) -> str:
        body = ", ".join(f"{lab!r}:{d}" for lab, d in zip(self.labels, self.shape))
        return f"Tensor({body})"


def permute(t: Tensor, new_order: Sequence[Label]) -> Tensor:
    new_order = tuple(new_order)
    if len(new_order) != len(t.labels) or set(new_order) != set(t.labels):
        raise TensorError(f"{new_order} is not a permutation of {t.labels}")
    axes = [t.labels.index(lab) for lab in new_order]
    return Tensor(new_order, np.ascontiguousarray(t.data.transpose(axes)), check=False)


def matricize(t: Tensor, row_labels: Sequence[Label]) -> tuple[np.ndarray, tuple[Label, ...], tuple[Label, ...]]:
    """Return ``(matrix, row_labels, col_labels)``; columns keep the tensor's own order."""
    row_labels = tuple(row_labels)
    missing = [lab for lab in row_labels if lab not in t.labels]
    if missing or len(set(row_labels)) != len(row_labels):
        raise TensorError(f"row labels {row_labels} not a subset of {t.labels}")
    col_labels = tuple(lab for lab in t.labels if lab not in row_labels)
    p = permute(t, row_labels + col_labels)
    nrows = prod(p.shape[: len(row_labels)])
    return p.data.reshape(nrows, -1), row_labels, col_labels


def unmatricize(m: np.ndarray, labels: Sequence[Label], dims: Sequence[int]) -> Tensor:
    """Inverse of :func:`matricize` given the concatenated row+column labels and their dims."""
    return Tensor(labels, np.asarray(m).reshape(tuple(dims)), check=False)


def result_size(a: Tensor, b: Tensor) -> int:
    shared = prod(a.dim(lab) for lab in a.labels if lab in b.labels)
    return a.size * b.size // (shared * shared)


def contract_pair(a: Tensor, b: Tensor, max_elements: int | None = None) -> Tensor:
    """Sum over every label the two tensors share.

    Result labels are a's survivors followed by b's survivors. Both operands are
    permuted so the shared block is contiguous, folded into matrices and multiplied.
    """
    b_set = set(b.labels)
    shared = [lab for lab in a.labels if lab in b_set]
    for lab in shared:
        if a.dim(lab) != b.dim(lab):
            raise TensorError(f"label {lab!r}: dim {a.dim(lab)} vs {b.dim(lab)}")
    shared_set = set(shared)
    free_a = [lab for lab in a.labels if lab not in shared_set]
    free_b = [lab for lab in b.labels if lab not in shared_set]
    k = prod(a.dim(lab) for lab in shared)
    out_shape = tuple(a.dim(lab) for lab in free_a) + tuple(b.dim(lab) for lab in free_b)
    n_out = prod(out_shape)
    if max_elements is not None and n_out > max_elements:
        raise MemoryCeilingError(n_out, max_elements)

    ax_a = [a.labels.index(lab) for lab in free_a + shared]
    ax_b = [b.labels.index(lab) for lab in shared + free_b]
    ma = a.data.transpose(ax_a).reshape(-1, k)
    mb = b.data.transpose(ax_b).reshape(k, -1)
    return Tensor(free_a + free_b, (ma @ mb).reshape(out_shape), check=False)


@dataclass
class SvdResult:
    left_factor: np.ndarray  # U * sqrt(s), rows x kept_rank
    right_factor: np.ndarray  # sqrt(s) * Vt, kept_rank x cols
    kept_rank: int
    discarded_weight: float
    singular_values: np.ndarray  # full spectrum, descending


def kept_rank(s: np.ndarray, epsilon: float, chi_max: int) -> int:
    # s is sorted descending; ratio ties at the epsilon boundary are kept
    n_ratio = int(np.count_nonzero(s >= epsilon * s[0]))
    return max(1, min(chi_max, n_ratio))


def svd_truncate(m: np.ndarray, epsilon: float, chi_max: int) -> SvdResult:
    """Truncated SVD keeping ``lambda_k / lambda_1 >= epsilon`` and at most ``chi_max`` values.

    The square root of the kept singular values is absorbed into both factors.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise TensorError("svd_truncate expects a matrix")
    if not 0.0 <= epsilon <= 1.0:
        raise TensorError(f"epsilon must lie in [0, 1], got {epsilon}")
    if chi_max < 1:
        raise TensorError(f"chi_max must be positive, got {chi_max}")
    if not np.all(np.isfinite(m)):
        raise TensorError("matrix has non-finite entries")
    if not np.any(m):
        raise TensorError("cannot decompose an all-zero matrix")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError:
        try:
            u, s, vt = scipy.linalg.svd(m, full_matrices=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            raise TensorError(f"SVD did not converge for {m.shape} matrix") from exc

    k = kept_rank(s, epsilon, chi_max)
    total = float(np.sum(s**2))
    discarded = float(np.sum(s[k:] ** 2)) / total
    root = np.sqrt(s[:k])
    return SvdResult(
        left_factor=u[:, :k] * root,
        right_factor=root[:, None] * vt[:k],
        kept_rank=k,
        discarded_weight=min(max(discarded, 0.0), 1.0),
        singular_values=s,
    )
