"""Attribute domains, categorical tables and their marginals."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

AttrSet = tuple[int, ...]

# Largest data universe we agree to describe; beyond this int64 flat indices overflow.
MAX_UNIVERSE = 2**62


@dataclass(frozen=True)
class Domain:
    """Ordered categorical attributes with cardinalities ``sizes[i] >= 2``."""

    attrs: tuple[str, ...]
    sizes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "attrs", tuple(str(a) for a in self.attrs))
        object.__setattr__(self, "sizes", tuple(int(n) for n in self.sizes))
        if len(self.attrs) != len(self.sizes):
            raise ValueError("attrs and sizes differ in length")
        if len(set(self.attrs)) != len(self.attrs):
            raise ValueError(f"duplicate attribute names in {self.attrs}")
        for a, n in zip(self.attrs, self.sizes):
            if n < 2:
                raise ValueError(f"attribute {a!r} has cardinality {n} < 2")
        if math.prod(self.sizes) > MAX_UNIVERSE:
            raise OverflowError("total domain size does not fit in 64-bit indices")

    @classmethod
    def from_dict(cls, sizes: dict[str, int]) -> Domain:
        return cls(tuple(sizes), tuple(sizes.values()))

    def to_dict(self) -> dict[str, int]:
        return dict(zip(self.attrs, self.sizes))

    def __len__(self) -> int:
        return len(self.attrs)

    @property
    def size(self) -> int:
        return math.prod(self.sizes)

    def shape(self, attrs: AttrSet) -> tuple[int, ...]:
        """Marginal shape over ``attrs``."""
        return tuple(self.sizes[i] for i in attrs)

    def residual_shape(self, attrs: AttrSet) -> tuple[int, ...]:
        return tuple(self.sizes[i] - 1 for i in attrs)

    def cells(self, attrs: AttrSet) -> int:
        return math.prod(self.shape(attrs))

    def index(self, names: Iterable[str | int]) -> AttrSet:
        """Convert attribute names (or indices) to a validated sorted AttrSet."""
        out = set()
        for a in names:
            if isinstance(a, (int, np.integer)):
                if not 0 <= a < len(self.attrs):
                    raise KeyError(f"attribute index {a} out of range")
                out.add(int(a))
            else:
                try:
                    out.add(self.attrs.index(a))
                except ValueError:
                    raise KeyError(f"unknown attribute {a!r}") from None
        return tuple(sorted(out))

    def names(self, attrs: AttrSet) -> list[str]:
        return [self.attrs[i] for i in attrs]


def attrset(attrs: Iterable[int]) -> AttrSet:
    return tuple(sorted(set(int(a) for a in attrs)))


def is_subset(tau: AttrSet, gamma: AttrSet) -> bool:
    return set(tau) <= set(gamma)


def subsets(gamma: AttrSet) -> list[AttrSet]:
    """All subsets of ``gamma``, smallest first."""
    return [
        tuple(c) for k in range(len(gamma) + 1) for c in itertools.combinations(gamma, k)
    ]


def downward_closure(workload: Iterable[AttrSet]) -> list[AttrSet]:
    """Every subset of every workload set (including the empty set), ordered by size."""
    closure = set()
    for gamma in workload:
        closure.update(subsets(attrset(gamma)))
    return sorted(closure, key=lambda s: (len(s), s))


@dataclass(frozen=True)
class Marginal:
    """Counts over ``attrs``; one axis per attribute, ascending attribute order."""

    attrs: AttrSet
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "attrs", tuple(self.attrs))
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.float64))
        if self.data.ndim != len(self.attrs):
            raise ValueError(f"array has {self.data.ndim} axes for {len(self.attrs)} attributes")


@dataclass(frozen=True)
class Residual:
    """Residual over ``attrs``; axis ``k`` has length ``n_k - 1``. Empty attrs give a 0-d array."""

    attrs: AttrSet
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "attrs", tuple(self.attrs))
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.float64))
        if self.data.ndim != len(self.attrs):
            raise ValueError(f"array has {self.data.ndim} axes for {len(self.attrs)} attributes")


@dataclass(frozen=True)
class DataTable:
    """Records as an ``(N, d)`` integer array of 0-based category codes."""

    domain: Domain
    records: np.ndarray = field(repr=False)

    def __post_init__(self):
        recs = np.asarray(self.records, dtype=np.int64)
        if recs.size == 0:
            recs = recs.reshape(0, len(self.domain))
        if recs.ndim != 2 or recs.shape[1] != len(self.domain):
            raise ValueError(f"records must have shape (N, {len(self.domain)})")
        sizes = np.asarray(self.domain.sizes)
        if recs.size and ((recs < 0).any() or (recs >= sizes).any()):
            raise ValueError("record value outside the declared domain")
        recs.setflags(write=False)
        object.__setattr__(self, "records", recs)

    def __len__(self) -> int:
        return self.records.shape[0]


def compute_marginal(table: DataTable, attrs: Sequence[int]) -> Marginal:
    """Contingency table of ``table`` over ``attrs``."""
    gamma = attrset(attrs)
    d = len(table.domain)
    for i in gamma:
        if not 0 <= i < d:
            raise KeyError(f"unknown attribute index {i}")
    shape = table.domain.shape(gamma)
    if not gamma:
        return Marginal((), np.array(float(len(table))))
    cols = table.records[:, list(gamma)]
    flat = np.ravel_multi_index(cols.T, shape)
    counts = np.bincount(flat, minlength=math.prod(shape)).astype(np.float64)
    return Marginal(gamma, counts.reshape(shape))
