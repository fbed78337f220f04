"""Variance-based uncertainty estimators over ensemble predictions.

For an ensemble of ``K`` members predicting class probabilities ``p_ij``
(member ``i``, class ``j``) the law of total variance splits the predictive
variance of each one-vs-all indicator ``y_j`` into

    EU_j = 1/K * sum_i (p_ij - mean_i p_ij) ** 2      (between-member spread)
    AU_j = 1/K * sum_i p_ij * (1 - p_ij)               (mean within-member variance)

and totals are sums over classes, which coincide with the traces of the
covariance-matrix estimators. Normalization is by ``K``, not ``K - 1``.

Aleatoric and epistemic parts may come from different sources: a base
ensemble for EU and a confidence-aware ensemble (or expert soft labels)
for AU.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import PredictionTensor, SoftLabelSet, UncertaintyRecord, UncertaintyTable, as_unit
from .errors import (
    AlphaOutOfRange,
    EmptyEnsemble,
    MethodMemberMismatch,
    NegativeMutualInformation,
    NonSquare,
    ShapeMismatch,
    UnknownMethod,
)

MI_CLAMP_TOL = 1e-12

METHODS = ("total_variance", "prediction_variance", "entropy_mi", "single_model")


@dataclass(frozen=True)
class WeightSpec:
    """Weight of the epistemic part in ``2 * (alpha * EU + (1 - alpha) * AU)``."""

    alpha: float = 0.5

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0) or np.isnan(self.alpha):
            raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {self.alpha}", alpha=self.alpha)


@dataclass(frozen=True, eq=False)
class CovarianceComponents:
    eu_matrix: np.ndarray
    au_matrix: np.ndarray


def _as_members(preds) -> np.ndarray:
    p = np.asarray(preds, dtype=np.float64)
    if p.ndim == 1:
        p = p[None, :]
    if p.ndim != 2:
        raise ShapeMismatch("expected a (members, classes) array")
    if p.shape[0] == 0:
        raise EmptyEnsemble("ensemble has no members")
    return p


def _centered(values: np.ndarray, axis: int) -> np.ndarray:
    """Deviations from the member mean, computed about the first member.

    Shifting first keeps identical members at exactly zero deviation, which
    a plain ``values - values.mean()`` does not guarantee.
    """
    first = np.take(values, [0], axis=axis)
    shifted = values - first
    return shifted - shifted.mean(axis=axis, keepdims=True)


def per_class_components(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class EU and AU for a ``(..., members, classes)`` array.

    Returns two arrays of shape ``(..., classes)``.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-2] == 0:
        raise EmptyEnsemble("ensemble has no members")
    eu = _centered(values, axis=-2) ** 2
    eu = eu.mean(axis=-2)
    au = (values * (1.0 - values)).mean(axis=-2)
    return eu, au


def decompose_unit(preds, method_tag: str = "total_variance", unit=("0", 0)) -> UncertaintyRecord:
    """Decompose one unit's ``(members, classes)`` predictions."""
    p = _as_members(preds)
    eu_j, au_j = per_class_components(p)
    eu = float(eu_j.sum())
    au = float(au_j.sum())
    return UncertaintyRecord(
        unit=as_unit(unit),
        tu=eu + au,
        eu=eu,
        au=au,
        method_tag=method_tag,
        per_class=tuple((float(e), float(a)) for e, a in zip(eu_j, au_j)),
    )


def covariance_components(preds) -> CovarianceComponents:
    """Matrix-valued EU and AU estimators for one unit.

    ``eu_matrix`` is the population covariance of the member probability
    vectors; ``au_matrix`` averages the categorical covariance
    ``diag(p) - p p^T`` over members.
    """
    p = _as_members(preds)
    k = p.shape[0]
    d = _centered(p, axis=0)
    eu = np.einsum("ia,ib->ab", d, d) / k
    au = (np.diag(p.sum(axis=0)) - np.einsum("ia,ib->ab", p, p)) / k
    return CovarianceComponents(eu, au)


def reduce_covariance(matrix, mode: Literal["trace", "det"] = "trace") -> float:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {m.shape}")
    if mode == "trace":
        return float(np.trace(m))
    if mode == "det":
        if m.shape[0] == 0 or np.linalg.matrix_rank(m) < m.shape[0]:
            return 0.0
        return float(np.linalg.det(m))
    raise UnknownMethod(f"unknown reduction {mode!r}")


def weighted_total(eu, au, spec: WeightSpec | float = WeightSpec()):
    """``2 * (alpha * eu + (1 - alpha) * au)``; equals ``eu + au`` at alpha 0.5."""
    if not isinstance(spec, WeightSpec):
        spec = WeightSpec(float(spec))
    a = spec.alpha
    out = 2.0 * (a * np.asarray(eu, dtype=np.float64) + (1.0 - a) * np.asarray(au, dtype=np.float64))
    return float(out) if out.ndim == 0 else out


def _entropy(p: np.ndarray) -> np.ndarray:
    # 0 * log 0 := 0
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=-1)


def entropy_components(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entropy-based split for ``(..., members, classes)`` arrays, in nats.

    Returns ``(total, aleatoric, mutual_information)`` with the predictive
    entropy as total and expected member entropy as aleatoric part.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-2] == 0:
        raise EmptyEnsemble("ensemble has no members")
    tu = _entropy(values.mean(axis=-2))
    au = _entropy(values).mean(axis=-1)
    mi = tu - au
    if np.any(mi < -MI_CLAMP_TOL):
        raise NegativeMutualInformation(f"mutual information {float(mi.min())!r} < 0")
    mi = np.where(mi < 0, 0.0, mi)
    return tu, au, mi


def entropy_mi(preds) -> tuple[float, float, float]:
    tu, au, mi = entropy_components(_as_members(preds))
    return float(tu), float(au), float(mi)


def _table(tensor, tu, eu, au, tag, pc_eu=None, pc_au=None) -> UncertaintyTable:
    return UncertaintyTable(tensor.units, tu, eu, au, tag, pc_eu, pc_au)


def _weighted_tag(tag: str, weight: WeightSpec | None) -> str:
    if weight is None or weight.alpha == 0.5:
        return tag
    return f"{tag}@alpha={weight.alpha!r}"


def decompose_dataset(
    tensor: PredictionTensor,
    method: str = "total_variance",
    weight: WeightSpec | None = None,
    member: int | None = None,
) -> UncertaintyTable:
    """Score every unit of ``tensor`` with one of :data:`METHODS`.

    ``single_model`` scores ``1 - max_j p_j`` and needs a one-member tensor
    unless ``member`` selects one explicitly. ``prediction_variance`` reports
    EU alone. ``weight`` applies to ``total_variance``.
    """
    values = tensor.values
    n = tensor.n_units
    if method == "single_model":
        if member is None:
            if tensor.n_members != 1:
                raise MethodMemberMismatch(
                    f"single_model needs one member, tensor has {tensor.n_members}; pass member",
                    n_members=tensor.n_members,
                )
            member = 0
        if not 0 <= member < tensor.n_members:
            raise MethodMemberMismatch(f"member {member} out of range", member=member)
        tu = 1.0 - values[:, member, :].max(axis=1)
        nan = np.full(n, np.nan)
        return _table(tensor, tu, nan, nan, "single_model")
    if method == "entropy_mi":
        tu, au, mi = entropy_components(values)
        return _table(tensor, tu, mi, au, "entropy_mi")
    if method not in ("total_variance", "prediction_variance"):
        raise UnknownMethod(f"unknown method {method!r}", method=method)
    pc_eu, pc_au = per_class_components(values)
    eu = pc_eu.sum(axis=1)
    if method == "prediction_variance":
        zeros = np.zeros(n)
        return _table(tensor, eu, eu, zeros, "prediction_variance", pc_eu, np.zeros_like(pc_au))
    au = pc_au.sum(axis=1)
    tu = eu + au if weight is None else weighted_total(eu, au, weight)
    return _table(tensor, tu, eu, au, _weighted_tag("total_variance", weight), pc_eu, pc_au)


def decompose_two_ensembles(
    base: PredictionTensor,
    aleatoric: PredictionTensor,
    weight: WeightSpec | None = None,
    method_tag: str = "total_variance_cae",
) -> UncertaintyTable:
    """EU from ``base`` and AU from a second ensemble over the same units."""
    if aleatoric.n_classes != base.n_classes:
        raise ShapeMismatch("ensembles disagree on the number of classes")
    idx = aleatoric.index_of()
    try:
        order = [idx[u] for u in base.units]
    except KeyError as exc:
        raise ShapeMismatch(f"unit {exc.args[0]} missing from aleatoric ensemble") from None
    pc_eu, _ = per_class_components(base.values)
    _, pc_au = per_class_components(aleatoric.values[order])
    eu = pc_eu.sum(axis=1)
    au = pc_au.sum(axis=1)
    tu = eu + au if weight is None else weighted_total(eu, au, weight)
    return _table(base, tu, eu, au, _weighted_tag(method_tag, weight), pc_eu, pc_au)


def decompose_with_soft_labels(
    base: PredictionTensor,
    soft: SoftLabelSet,
    weight: WeightSpec | None = None,
    method_tag: str = "total_variance_experts",
) -> UncertaintyTable:
    """EU from ``base``; AU from expert soft labels treated as a one-member ensemble."""
    if soft.n_classes != base.n_classes:
        raise ShapeMismatch("soft labels disagree with predictions on the number of classes")
    s = soft.aligned(base.units)
    pc_eu, _ = per_class_components(base.values)
    pc_au = s * (1.0 - s)
    eu = pc_eu.sum(axis=1)
    au = pc_au.sum(axis=1)
    tu = eu + au if weight is None else weighted_total(eu, au, weight)
    return _table(base, tu, eu, au, _weighted_tag(method_tag, weight), pc_eu, pc_au)
