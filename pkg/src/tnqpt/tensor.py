"""Dense complex tensors with named indices.

A :class:`Tensor` pairs a ``complex128`` numpy array with an ordered list of
:class:`IndexLabel` objects, one per axis.  Index identity is the label *name*:
two tensors may be contracted over every label name they share, provided the
extents agree.  Relabeling is a pure metadata operation, so the same physical
array can play different roles in different networks (e.g. the conjugate layer
of a purified operator reuses the site arrays under primed labels).

All operations here are pure: they never mutate their inputs, and tensors are
treated as immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "IndexLabel",
    "Tensor",
    "ContractionError",
    "contract_pair",
    "conjugate",
    "partial_trace",
]


class ContractionError(ValueError):
    """Raised when labels of the operands are inconsistent with the operation."""


@dataclass(frozen=True)
class IndexLabel:
    """A named tensor index with a fixed extent.

    Two indices are contractible iff their names match and their extents are
    equal; a name match with mismatched extents is an error, never a silent
    broadcast.
    """

    name: str
    dim: int

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"index {self.name!r} must have dim >= 1, got {self.dim}")

    def primed(self, suffix: str = "'") -> "IndexLabel":
        return IndexLabel(self.name + suffix, self.dim)


@dataclass(frozen=True)
class Tensor:
    """A dense complex tensor whose axes are identified by unique labels."""

    labels: tuple[IndexLabel, ...]
    data: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        arr = np.asarray(self.data, dtype=np.complex128)
        object.__setattr__(self, "data", arr)
        names = [l.name for l in labels]
        if len(set(names)) != len(names):
            raise ContractionError(f"duplicate label names within one tensor: {names}")
        if arr.shape != tuple(l.dim for l in labels):
            raise ContractionError(
                f"data shape {arr.shape} does not match label dims "
                f"{tuple(l.dim for l in labels)}"
            )

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(l.name for l in self.labels)

    @property
    def size(self) -> int:
        return self.data.size

    def axis_of(self, name: str) -> int:
        for i, l in enumerate(self.labels):
            if l.name == name:
                return i
        raise ContractionError(f"label {name!r} not present in tensor {self.names}")

    def label(self, name: str) -> IndexLabel:
        return self.labels[self.axis_of(name)]

    def relabeled(self, mapping: Mapping[str, str]) -> "Tensor":
        """Rename labels according to ``mapping`` (O(1), no data copy)."""
        new = tuple(
            IndexLabel(mapping.get(l.name, l.name), l.dim) for l in self.labels
        )
        return Tensor(new, self.data)

    def transposed(self, order: Sequence[str]) -> "Tensor":
        """Permute axes into the given label-name order."""
        if sorted(order) != sorted(self.names):
            raise ContractionError(f"order {order} is not a permutation of {self.names}")
        perm = [self.axis_of(n) for n in order]
        return Tensor(tuple(self.labels[p] for p in perm), np.transpose(self.data, perm))

    @staticmethod
    def scalar(value: complex) -> "Tensor":
        return Tensor((), np.asarray(value, dtype=np.complex128))

    def item(self) -> complex:
        if self.data.ndim != 0:
            raise ContractionError(f"tensor with open labels {self.names} is not a scalar")
        return complex(self.data)


def _check_shared(a: Tensor, b: Tensor) -> list[str]:
    shared = [n for n in a.names if n in set(b.names)]
    for n in shared:
        da, db = a.label(n).dim, b.label(n).dim
        if da != db:
            raise ContractionError(
                f"shared label {n!r} has mismatched extents {da} vs {db}"
            )
    return shared


def contract_pair(a: Tensor, b: Tensor) -> Tensor:
    """Contract two tensors over every label they share.

    The result carries the symmetric difference of the label sets, with a's
    free labels first.  Sharing no labels yields the outer product.
    """
    shared = _check_shared(a, b)
    ax_a = [a.axis_of(n) for n in shared]
    ax_b = [b.axis_of(n) for n in shared]
    out = np.tensordot(a.data, b.data, axes=(ax_a, ax_b))
    keep_a = [l for l in a.labels if l.name not in shared]
    keep_b = [l for l in b.labels if l.name not in shared]
    return Tensor(tuple(keep_a + keep_b), out)


def conjugate(a: Tensor, relabel: Mapping[str, str] | None = None) -> Tensor:
    """Elementwise complex conjugate, optionally renaming labels.

    The relabel map is the usual way to move a tensor into the conjugate
    layer of a network (e.g. bond ``b0.1`` -> ``b0.1'``).
    """
    t = Tensor(a.labels, np.conj(a.data))
    return t.relabeled(relabel) if relabel else t


def partial_trace(a: Tensor, pairs: Iterable[tuple[str, str]]) -> Tensor:
    """Sum the joint diagonal over each ``(name, name)`` pair of labels.

    Every named label must be present and each pair must have equal extents;
    the remaining labels keep their relative order.
    """
    t = a
    for n1, n2 in pairs:
        ax1 = t.axis_of(n1)
        ax2 = t.axis_of(n2)
        if ax1 == ax2:
            raise ContractionError(f"cannot trace label {n1!r} with itself")
        if t.labels[ax1].dim != t.labels[ax2].dim:
            raise ContractionError(
                f"trace pair ({n1!r}, {n2!r}) has mismatched extents "
                f"{t.labels[ax1].dim} vs {t.labels[ax2].dim}"
            )
        data = np.trace(t.data, axis1=ax1, axis2=ax2)
        labels = tuple(l for i, l in enumerate(t.labels) if i not in (ax1, ax2))
        t = Tensor(labels, data)
    return t
