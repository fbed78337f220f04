"""Shared domain types, validation and seeding.

Everything here is immutable after construction. Arrays held by the
containers are flagged read-only so accidental in-place edits raise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    DuplicateUnit,
    MissingScore,
    MissingUnit,
    NegativeProbability,
    RowNotSimplex,
    ShapeMismatch,
)

ROW_SUM_TOL = 1e-6
SOFT_LABEL_TOL = 1e-9


class UnitRef(NamedTuple):
    """A scoring unit: a whole sample (``element_id == 0``) or one pixel of it."""

    sample_id: str
    element_id: int = 0


def as_unit(value) -> UnitRef:
    if isinstance(value, UnitRef):
        return value
    if isinstance(value, tuple):
        return UnitRef(str(value[0]), int(value[1]))
    return UnitRef(str(value), 0)


def _as_units(unit_ids: Iterable, n: int) -> tuple[UnitRef, ...]:
    units = tuple(as_unit(u) for u in unit_ids)
    if len(units) != n:
        raise ShapeMismatch(f"{len(units)} unit ids for {n} rows", n_ids=len(units), n_rows=n)
    if len(set(units)) != len(units):
        raise DuplicateUnit("unit ids must be unique")
    return units


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


def _snap_rows(values: np.ndarray) -> np.ndarray:
    """Renormalize rows whose sum is not already 1 to within rounding."""
    sums = values.sum(axis=-1, keepdims=True)
    tight = 8 * values.shape[-1] * np.finfo(np.float64).eps
    off = np.abs(sums - 1.0) > tight
    if np.any(off):
        values = np.where(off, values / sums, values)
    return values


def default_unit_ids(n: int) -> tuple[UnitRef, ...]:
    return tuple(UnitRef(str(i), 0) for i in range(n))


@dataclass(frozen=True, eq=False)
class PredictionTensor:
    """Class-probability predictions indexed (unit, member, class).

    Construct through :func:`validate_predictions`; the constructor assumes
    validated input.
    """

    units: tuple[UnitRef, ...]
    values: np.ndarray

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    @property
    def n_members(self) -> int:
        return self.values.shape[1]

    @property
    def n_classes(self) -> int:
        return self.values.shape[2]

    def mean(self) -> np.ndarray:
        """Ensemble-mean prediction, shape (units, classes)."""
        return self.values.mean(axis=1)

    def predicted_class(self) -> np.ndarray:
        return np.argmax(self.mean(), axis=1)

    def member(self, i: int) -> "PredictionTensor":
        return PredictionTensor(self.units, _frozen(self.values[:, i : i + 1, :]))

    def subset(self, idx: Sequence[int]) -> "PredictionTensor":
        idx = np.asarray(idx, dtype=int)
        return PredictionTensor(tuple(self.units[i] for i in idx), _frozen(self.values[idx]))

    def index_of(self) -> dict[UnitRef, int]:
        return {u: i for i, u in enumerate(self.units)}


def validate_predictions(
    raw,
    n_classes: int,
    n_members: int,
    unit_ids: Iterable | None = None,
) -> PredictionTensor:
    """Validate a probability table and wrap it as a :class:`PredictionTensor`.

    ``raw`` is either ``(units, members, C)`` or a flat ``(units * members, C)``
    table in unit-major order, where ``C`` is ``n_classes`` or, for binary
    tasks, 1 (probability of class 1, expanded to ``(1 - p, p)``).
    """
    if n_classes < 2:
        raise ShapeMismatch("n_classes must be >= 2", n_classes=n_classes)
    if n_members < 1:
        raise ShapeMismatch("n_members must be >= 1", n_members=n_members)
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim == 2:
        if arr.shape[0] % n_members:
            raise ShapeMismatch(
                f"{arr.shape[0]} rows not divisible by {n_members} members",
                rows=arr.shape[0],
                n_members=n_members,
            )
        arr = arr.reshape(arr.shape[0] // n_members, n_members, arr.shape[1])
    if arr.ndim != 3 or arr.shape[1] != n_members:
        raise ShapeMismatch(f"cannot read table of shape {np.shape(raw)} as (units, {n_members}, classes)")
    if arr.shape[2] == 1 and n_classes == 2:
        p = arr[..., 0]
        arr = np.stack([1.0 - p, p], axis=-1)
    elif arr.shape[2] != n_classes:
        raise ShapeMismatch(
            f"table has {arr.shape[2]} probability columns, expected {n_classes}",
            columns=arr.shape[2],
            n_classes=n_classes,
        )
    if not np.all(np.isfinite(arr)):
        raise RowNotSimplex("non-finite probability")
    if np.any(arr < 0):
        where = tuple(int(i) for i in np.argwhere(arr < 0)[0])
        raise NegativeProbability("negative probability", index=list(where))
    sums = arr.sum(axis=-1)
    bad = np.abs(sums - 1.0) > ROW_SUM_TOL
    if np.any(bad):
        where = tuple(int(i) for i in np.argwhere(bad)[0])
        raise RowNotSimplex(
            f"row sums to {sums[where]!r}", index=list(where), row_sum=float(sums[where])
        )
    units = (
        default_unit_ids(arr.shape[0]) if unit_ids is None else _as_units(unit_ids, arr.shape[0])
    )
    return PredictionTensor(units, _frozen(_snap_rows(arr)))


@dataclass(frozen=True, eq=False)
class HardLabelSet:
    """Ground-truth class index per unit."""

    units: tuple[UnitRef, ...]
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "units", _as_units(self.units, labels.shape[0]))

    @classmethod
    def from_mapping(cls, mapping) -> "HardLabelSet":
        units = list(mapping)
        return cls(tuple(units), np.array([mapping[u] for u in units], dtype=np.int64))

    def __len__(self) -> int:
        return len(self.units)

    def as_dict(self) -> dict[UnitRef, int]:
        return dict(zip(self.units, self.labels.tolist()))

    def aligned(self, units: Sequence[UnitRef]) -> np.ndarray:
        """Labels reordered to ``units``; every unit must be present."""
        lookup = {u: i for i, u in enumerate(self.units)}
        try:
            idx = [lookup[u] for u in units]
        except KeyError as exc:
            raise MissingUnit(f"no hard label for unit {exc.args[0]}", unit=list(exc.args[0])) from None
        return self.labels[idx]

    def subset(self, idx: Sequence[int]) -> "HardLabelSet":
        idx = np.asarray(idx, dtype=int)
        return HardLabelSet(tuple(self.units[i] for i in idx), self.labels[idx])


@dataclass(frozen=True, eq=False)
class SoftLabelSet:
    """Per-unit probability targets aggregated from expert votes."""

    units: tuple[UnitRef, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 2 or probs.shape[1] < 2:
            raise ShapeMismatch("soft labels must have shape (units, classes>=2)")
        if np.any(probs < 0) or np.any(probs > 1):
            raise RowNotSimplex("soft label entries must lie in [0, 1]")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > SOFT_LABEL_TOL):
            raise RowNotSimplex("soft label rows must sum to 1")
        object.__setattr__(self, "probs", _frozen(probs))
        object.__setattr__(self, "units", _as_units(self.units, probs.shape[0]))

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    def __len__(self) -> int:
        return len(self.units)

    def aligned(self, units: Sequence[UnitRef]) -> np.ndarray:
        lookup = {u: i for i, u in enumerate(self.units)}
        try:
            idx = [lookup[u] for u in units]
        except KeyError as exc:
            raise MissingUnit(f"no soft label for unit {exc.args[0]}", unit=list(exc.args[0])) from None
        return self.probs[idx]

    def subset(self, idx: Sequence[int]) -> "SoftLabelSet":
        idx = np.asarray(idx, dtype=int)
        return SoftLabelSet(tuple(self.units[i] for i in idx), self.probs[idx])


@dataclass(frozen=True)
class UncertaintyRecord:
    unit: UnitRef
    tu: float
    eu: float | None
    au: float | None
    method_tag: str
    per_class: tuple[tuple[float, float], ...] | None = None


@dataclass(frozen=True, eq=False)
class UncertaintyTable:
    """Columnar uncertainty scores for a dataset.

    Iterating yields :class:`UncertaintyRecord` objects in unit order.
    ``eu``/``au`` are NaN where no decomposition exists (single-model scores).
    ``per_class_eu``/``per_class_au`` are optional (units, classes) arrays.
    """

    units: tuple[UnitRef, ...]
    tu: np.ndarray
    eu: np.ndarray
    au: np.ndarray
    method_tag: str
    per_class_eu: np.ndarray | None = field(default=None)
    per_class_au: np.ndarray | None = field(default=None)

    def __post_init__(self):
        for name in ("tu", "eu", "au", "per_class_eu", "per_class_au"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _frozen(value))
        n = self.tu.shape[0]
        if self.eu.shape != (n,) or self.au.shape != (n,):
            raise ShapeMismatch("eu/au/tu must have equal length")
        object.__setattr__(self, "units", _as_units(self.units, n))

    def __len__(self) -> int:
        return len(self.units)

    def __getitem__(self, i: int) -> UncertaintyRecord:
        eu = float(self.eu[i])
        au = float(self.au[i])
        per_class = None
        if self.per_class_eu is not None and self.per_class_au is not None:
            per_class = tuple(
                (float(e), float(a)) for e, a in zip(self.per_class_eu[i], self.per_class_au[i])
            )
        return UncertaintyRecord(
            unit=self.units[i],
            tu=float(self.tu[i]),
            eu=None if np.isnan(eu) else eu,
            au=None if np.isnan(au) else au,
            method_tag=self.method_tag,
            per_class=per_class,
        )

    def __iter__(self) -> Iterator[UncertaintyRecord]:
        for i in range(len(self)):
            yield self[i]

    def aligned(self, units: Sequence[UnitRef]) -> np.ndarray:
        """Total-uncertainty scores reordered to ``units``."""
        lookup = {u: i for i, u in enumerate(self.units)}
        try:
            idx = [lookup[u] for u in units]
        except KeyError as exc:
            raise MissingScore(f"no score for unit {exc.args[0]}", unit=list(exc.args[0])) from None
        return self.tu[idx]


def derive_seed(seed: int, *keys: int) -> int:
    """Derive an independent 64-bit seed from ``seed`` and integer ``keys``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng(seed: int, *keys: int) -> np.random.Generator:
    if keys:
        seed = derive_seed(seed, *keys)
    return np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
