"""Rejection curves, the oracle curve, AAC, AUROC error detection and Dice.

A rejection curve discards the ``ceil(r * n)`` most uncertain units at each
rejection rate ``r`` and evaluates a metric on what is left. In pixel mode
the discarding happens inside each image and per-image metrics are averaged
(or pooled, on request). Ties in uncertainty keep input order: among equal
scores the earlier unit is discarded first.

The oracle assigns 0 to every correct unit and 1 to every error. AAC is the
trapezoidal area between oracle and method curves on ``[0, r_max]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .core import HardLabelSet, PredictionTensor, UncertaintyTable
from .errors import (
    EmptyRetainedSet,
    GridMismatch,
    InvalidGrid,
    MaskShapeMismatch,
    MissingScore,
    OracleViolation,
    RMaxNotOnGrid,
    SingleClass,
    UnknownMethod,
)

R_MAX = 0.8
GRID_TOL = 1e-12
# r * n is computed in floating point; 0.7 * 10 must discard 7, not 8
_CEIL_SLACK = 1e-9

SAMPLE_LEVEL = "sample_level"
PIXEL_LEVEL = "pixel_level"
METRICS = ("accuracy", "dice")


@dataclass(frozen=True, eq=False)
class RejectionCurve:
    r: np.ndarray
    m: np.ndarray
    mode: str = SAMPLE_LEVEL
    metric_name: str = "accuracy"

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        m = np.asarray(self.m, dtype=np.float64)
        if r.ndim != 1 or r.shape != m.shape or r.size < 2:
            raise InvalidGrid("a curve needs >= 2 matching (r, m) points")
        if r[0] != 0.0 or np.any(np.diff(r) <= 0) or r[-1] > 1.0:
            raise InvalidGrid("curve grid must start at 0 and increase strictly within [0, 1]")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "m", m)

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.r.tolist(), self.m.tolist()))


@dataclass(frozen=True, eq=False)
class CurvePair:
    method: RejectionCurve
    oracle: RejectionCurve

    def __post_init__(self):
        if self.method.r.shape != self.oracle.r.shape or np.any(self.method.r != self.oracle.r):
            raise GridMismatch("method and oracle curves use different grids")
        gap = self.method.m - self.oracle.m
        if np.any(gap > 1e-9):
            i = int(np.argmax(gap))
            raise OracleViolation(
                f"method exceeds oracle at r={self.method.r[i]!r}", r=float(self.method.r[i])
            )

    @property
    def r(self) -> np.ndarray:
        return self.method.r


def default_grid(n: int, r_max: float = R_MAX) -> np.ndarray:
    """Every achievable rejection step ``k / n`` below ``r_max``, then ``r_max``."""
    if n < 1:
        raise InvalidGrid("need at least one unit")
    steps = np.arange(n + 1) / n
    steps = steps[steps < r_max - GRID_TOL]
    return np.append(steps, r_max)


def uniform_grid(points: int, r_max: float = R_MAX) -> np.ndarray:
    """``0`` plus ``points`` evenly spaced rates ending at ``r_max``."""
    if points < 1:
        raise InvalidGrid("uniform grid needs >= 1 point")
    return np.linspace(0.0, r_max, points + 1)


def parse_grid(spec: str | Sequence[float] | None, n: int, r_max: float = R_MAX) -> np.ndarray:
    """Grid from ``None``/``"steps"``, ``"uniform:M"`` or explicit rates."""
    if spec is None or (isinstance(spec, str) and spec == "steps"):
        return default_grid(n, r_max)
    if isinstance(spec, str):
        if spec.startswith("uniform:"):
            try:
                points = int(spec.split(":", 1)[1])
            except ValueError:
                raise InvalidGrid(f"bad grid {spec!r}") from None
            return uniform_grid(points, r_max)
        try:
            spec = [float(x) for x in spec.split(",")]
        except ValueError:
            raise InvalidGrid(f"bad grid {spec!r}") from None
    grid = np.asarray(spec, dtype=np.float64)
    if grid.ndim != 1 or grid.size < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0) or grid[-1] > 1.0:
        raise InvalidGrid("grid must be sorted, start at 0 and stay within [0, 1]")
    return grid


def n_discard(r: float, n: int) -> int:
    return min(n, max(0, math.ceil(r * n - _CEIL_SLACK)))


def _suffix(x: np.ndarray) -> np.ndarray:
    """``out[k] = x[k:].sum()`` for ``k`` in ``0..len(x)``."""
    out = np.zeros(x.shape[0] + 1, dtype=np.float64)
    out[:-1] = np.cumsum(x[::-1])[::-1]
    return out


def _foreground(n_classes: int) -> range:
    return range(1, n_classes)


def _dice_from_counts(inter, p_sum, g_sum):
    denom = p_sum + g_sum
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2.0 * inter / np.where(denom > 0, denom, 1.0), 1.0)


def _group_counts(scores, predicted, truth, idx, ks_fn, metric, n_classes):
    """Per-grid-point retained counts for one group of units."""
    s = scores[idx]
    order = np.argsort(-s, kind="stable")
    pred = predicted[idx][order]
    true = truth[idx][order]
    n = idx.shape[0]
    ks = ks_fn(n)
    retained = n - ks
    if metric == "accuracy":
        correct = _suffix((pred == true).astype(np.float64))[ks]
        return retained, correct[None, :]
    rows = []
    for c in _foreground(n_classes):
        p = (pred == c).astype(np.float64)
        g = (true == c).astype(np.float64)
        rows.append((_suffix(p * g)[ks], _suffix(p)[ks], _suffix(g)[ks]))
    return retained, np.array(rows)


def _metric_from_counts(counts, retained, metric):
    if metric == "accuracy":
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(retained > 0, counts[0] / np.where(retained > 0, retained, 1), np.nan)
    dice = _dice_from_counts(counts[:, 0], counts[:, 1], counts[:, 2])
    return np.where(retained > 0, dice.mean(axis=0), np.nan)


def _carry_forward(values: np.ndarray) -> np.ndarray:
    out = values.copy()
    for i in range(1, out.shape[0]):
        if np.isnan(out[i]):
            out[i] = out[i - 1]
    return out


def rejection_curve(
    scores,
    predicted,
    truth,
    metric: str = "accuracy",
    mode: str = SAMPLE_LEVEL,
    grid=None,
    groups=None,
    n_classes: int | None = None,
    pooled: bool = False,
    r_max: float = R_MAX,
) -> RejectionCurve:
    """Metric on retained units as a function of the rejection rate.

    Args:
        scores: uncertainty per unit (higher is rejected first).
        predicted, truth: class per unit; accuracy compares them, Dice treats
            classes ``1..C-1`` as foreground masks.
        mode: ``sample_level`` ranks all units together; ``pixel_level``
            ranks within each ``groups`` value (one image per group).
        grid: rejection rates; defaults to every achievable step up to
            ``r_max`` (sample level) or ``uniform:100`` (pixel level).
        pooled: pixel level only, sum retained counts over images before
            computing the metric instead of averaging per-image metrics.
    """
    scores = np.asarray(scores, dtype=np.float64)
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if scores.shape != predicted.shape or predicted.shape != truth.shape or scores.ndim != 1:
        raise MaskShapeMismatch("scores, predictions and truth must be equally long 1-d arrays")
    if scores.size == 0:
        raise EmptyRetainedSet("no units to evaluate")
    if np.any(np.isnan(scores)):
        raise MissingScore("uncertainty scores contain NaN", index=int(np.argmax(np.isnan(scores))))
    if metric not in METRICS:
        raise UnknownMethod(f"unknown metric {metric!r}")
    if metric == "dice" and n_classes is None:
        n_classes = int(max(predicted.max(), truth.max(), 1)) + 1
    if mode == SAMPLE_LEVEL:
        group_idx = [np.arange(scores.size)]
        default = lambda: default_grid(scores.size, r_max)  # noqa: E731
    elif mode == PIXEL_LEVEL:
        if groups is None:
            raise MaskShapeMismatch("pixel_level mode needs a group (sample id) per unit")
        groups = np.asarray(groups)
        if groups.shape != scores.shape:
            raise MaskShapeMismatch("groups must align with scores")
        _, inverse = np.unique(groups, return_inverse=True)
        first = {}
        for i, g in enumerate(inverse):
            first.setdefault(g, []).append(i)
        group_idx = [np.asarray(v) for v in first.values()]
        default = lambda: uniform_grid(100, r_max)  # noqa: E731
    else:
        raise UnknownMethod(f"unknown mode {mode!r}")
    r = default() if grid is None else parse_grid(grid, scores.size, r_max)
    ks_fn = lambda n: np.array([n_discard(x, n) for x in r])  # noqa: E731

    per_group = [_group_counts(scores, predicted, truth, idx, ks_fn, metric, n_classes) for idx in group_idx]
    if mode == SAMPLE_LEVEL or pooled:
        retained = sum(g[0] for g in per_group)
        counts = sum(g[1] for g in per_group)
        m = _metric_from_counts(counts, retained, metric)
        empty = np.isnan(m)
        if mode == SAMPLE_LEVEL and np.any(empty & (r < 1.0)):
            i = int(np.argmax(empty & (r < 1.0)))
            raise EmptyRetainedSet(f"rejection rate {float(r[i])!r} retains no units", r=float(r[i]))
        m = _carry_forward(m)
    else:
        m = np.mean([_carry_forward(_metric_from_counts(c, ret, metric)) for ret, c in per_group], axis=0)
    return RejectionCurve(r, m, mode, metric)


def oracle_scores(predicted, truth) -> np.ndarray:
    return (np.asarray(predicted) != np.asarray(truth)).astype(np.float64)


def oracle_curve(predicted, truth, **kwargs) -> RejectionCurve:
    """Rejection curve of the oracle that knows exactly which units are wrong."""
    return rejection_curve(oracle_scores(predicted, truth), predicted, truth, **kwargs)


def curve_pair(scores, predicted, truth, **kwargs) -> CurvePair:
    return CurvePair(
        rejection_curve(scores, predicted, truth, **kwargs),
        oracle_curve(predicted, truth, **kwargs),
    )


def aac(pair: CurvePair, r_max: float = R_MAX) -> float:
    """Area between oracle and method curves on ``[0, r_max]`` (trapezoid rule)."""
    r = pair.method.r
    if pair.oracle.r.shape != r.shape or np.any(pair.oracle.r != r):
        raise GridMismatch("method and oracle curves use different grids")
    on_grid = np.abs(r - r_max) <= GRID_TOL
    if not np.any(on_grid):
        raise RMaxNotOnGrid(f"r_max={r_max!r} is not a grid point", r_max=r_max)
    end = int(np.argmax(on_grid)) + 1
    diff = pair.oracle.m[:end] - pair.method.m[:end]
    diff = np.where(np.abs(diff) < 1e-12, 0.0, diff)
    x = r[:end]
    return float(np.sum((x[1:] - x[:-1]) * (diff[1:] + diff[:-1]) / 2.0))


def percent_improvement(value: float, baseline: float) -> float:
    """Relative change of ``value`` against ``baseline`` in percent (negative is better for AAC)."""
    return 100.0 * (value - baseline) / baseline


def auroc_error_detection(scores, correct) -> float:
    """Probability that an error outranks a correct unit; ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    correct = np.asarray(correct, dtype=bool)
    if scores.shape != correct.shape:
        raise MaskShapeMismatch("scores and correctness must align")
    n_err = int((~correct).sum())
    n_ok = int(correct.sum())
    if n_err == 0 or n_ok == 0:
        raise SingleClass("AUROC needs at least one error and one correct unit", n_errors=n_err, n_correct=n_ok)
    ranks = rankdata(scores, method="average")
    r_err = ranks[~correct].sum()
    return float((r_err - n_err * (n_err + 1) / 2.0) / (n_err * n_ok))


def dice_metric(predicted, truth, retained=None, n_classes: int | None = None) -> float:
    """Dice over retained pixels; mean over foreground classes when multi-class.

    A class absent from both masks scores 1.
    """
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise MaskShapeMismatch(f"mask shapes differ: {predicted.shape} vs {truth.shape}")
    if retained is not None:
        retained = np.asarray(retained)
        if retained.dtype == bool:
            if retained.shape != predicted.shape:
                raise MaskShapeMismatch("retained mask shape differs from masks")
        predicted = predicted[retained]
        truth = truth[retained]
    predicted = predicted.ravel().astype(np.int64)
    truth = truth.ravel().astype(np.int64)
    if n_classes is None:
        n_classes = int(max(predicted.max(initial=0), truth.max(initial=0), 1)) + 1
    scores = []
    for c in _foreground(n_classes):
        p = predicted == c
        g = truth == c
        scores.append(float(_dice_from_counts(float((p & g).sum()), float(p.sum()), float(g.sum()))))
    return float(np.mean(scores))


@dataclass(frozen=True, eq=False)
class Outcomes:
    """Predicted and true class per unit, aligned to a prediction tensor."""

    predicted: np.ndarray
    truth: np.ndarray
    groups: np.ndarray

    @property
    def correct(self) -> np.ndarray:
        return self.predicted == self.truth


def outcomes(tensor: PredictionTensor, hard: HardLabelSet, member: int | None = None) -> Outcomes:
    """Argmax predictions (ensemble mean, or one member) against hard labels."""
    if member is None:
        predicted = tensor.predicted_class()
    else:
        predicted = np.argmax(tensor.values[:, member, :], axis=1)
    truth = hard.aligned(tensor.units)
    groups = np.array([u.sample_id for u in tensor.units])
    return Outcomes(predicted, truth, groups)


def evaluate_table(
    table: UncertaintyTable,
    result: Outcomes,
    units,
    metric: str = "accuracy",
    mode: str = SAMPLE_LEVEL,
    grid=None,
    r_max: float = R_MAX,
    pooled: bool = False,
    with_auroc: bool = True,
) -> tuple[CurvePair, float, float | None]:
    """Curve pair, AAC and (classification only) AUROC for one uncertainty table."""
    scores = table.aligned(units)
    kwargs = dict(metric=metric, mode=mode, grid=grid, r_max=r_max, pooled=pooled)
    if mode == PIXEL_LEVEL:
        kwargs["groups"] = result.groups
    pair = curve_pair(scores, result.predicted, result.truth, **kwargs)
    area = aac(pair, r_max)
    roc = None
    if with_auroc and mode == SAMPLE_LEVEL and metric == "accuracy":
        correct = result.correct
        if 0 < correct.sum() < correct.size:
            roc = auroc_error_detection(scores, correct)
    return pair, area, roc
