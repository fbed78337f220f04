"""Desk-scale ensemble members: softmax classifiers trained by full-batch gradient descent.

A member is a linear softmax model, or a softmax layer over one tanh hidden
layer when ``EnsembleSpec.hidden > 0``. Members differ through their random
initialization (uniform in [-0.1, 0.1], seeded with ``seed + member index``)
and their training subsample.

Three training routes mirror the ensembles being compared:

* :func:`train_base_ensemble` -- cross-entropy on hard labels from scratch;
* :func:`finetune_cae` -- member ``i`` starts from base member ``i`` and is
  trained on soft labels (a confidence-aware ensemble);
* :func:`train_mixed` -- one ensemble, each unit assigned to the hard or soft
  objective by a fair coin, losses mixed as
  ``alpha * loss_hard + (1 - alpha) * loss_soft``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .core import (
    HardLabelSet,
    PredictionTensor,
    SoftLabelSet,
    _as_units,
    _frozen,
    _snap_rows,
    default_unit_ids,
    derive_seed,
)
from .errors import AlphaOutOfRange, DimMismatch, InvalidSpec, NonFiniteLoss, SizeMismatch

INIT_SCALE = 0.1
_MIXED_KEY = 0x6D6978  # seed-derivation key for the hard/soft coin


@dataclass(frozen=True, eq=False)
class ToyModel:
    """Softmax classifier; ``weights`` is (classes, inputs + 1) with the bias last.

    With a hidden layer, ``hidden`` is (hidden_units, feature_dim + 1) and
    ``weights`` acts on the tanh activations.
    """

    weights: np.ndarray
    hidden: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        if self.hidden is not None:
            object.__setattr__(self, "hidden", _frozen(self.hidden))
            if self.weights.shape[1] != self.hidden.shape[0] + 1:
                raise DimMismatch("output weights do not match hidden layer width")
        if not (np.all(np.isfinite(self.weights)) and (self.hidden is None or np.all(np.isfinite(self.hidden)))):
            raise NonFiniteLoss("model weights must be finite")

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        layer = self.weights if self.hidden is None else self.hidden
        return layer.shape[1] - 1

    def predict_proba(self, features) -> np.ndarray:
        x = _check_features(features, self.feature_dim)
        return _softmax(_forward(self.weights, self.hidden, x)[0])

    def to_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "n_classes": self.n_classes,
            "feature_dim": self.feature_dim,
            "weights": self.weights.ravel().tolist(),
        }
        if self.hidden is not None:
            doc["hidden_units"] = self.hidden.shape[0]
            doc["hidden"] = self.hidden.ravel().tolist()
        return doc

    @classmethod
    def from_dict(cls, doc) -> "ToyModel":
        n, d = int(doc["n_classes"]), int(doc["feature_dim"])
        if "hidden" in doc:
            h = int(doc["hidden_units"])
            hidden = np.asarray(doc["hidden"], dtype=np.float64).reshape(h, d + 1)
            return cls(np.asarray(doc["weights"], dtype=np.float64).reshape(n, h + 1), hidden)
        return cls(np.asarray(doc["weights"], dtype=np.float64).reshape(n, d + 1))


@dataclass(frozen=True)
class EnsembleSpec:
    n_members: int = 10
    epochs: int = 300
    learning_rate: float = 0.5
    l2: float = 1e-4
    subsample_fraction: float = 0.9
    seed: int = 0
    hidden: int = 0
    resample_mixed: bool = False

    def __post_init__(self):
        if self.n_members < 1:
            raise InvalidSpec("n_members must be >= 1")
        if self.epochs < 0:
            raise InvalidSpec("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise InvalidSpec("learning_rate must be > 0")
        if self.l2 < 0:
            raise InvalidSpec("l2 must be >= 0")
        if not 0 < self.subsample_fraction <= 1:
            raise InvalidSpec("subsample_fraction must lie in (0, 1]")
        if self.hidden < 0:
            raise InvalidSpec("hidden must be >= 0")


def _check_features(features, d: int | None = None) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise DimMismatch("features must be a (units, dims) matrix")
    if d is not None and x.shape[1] != d:
        raise DimMismatch(f"model expects {d} features, got {x.shape[1]}", expected=d, got=x.shape[1])
    if not np.all(np.isfinite(x)):
        raise DimMismatch("features must be finite")
    return x


def _augment(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _forward(weights, hidden, x):
    if hidden is None:
        inputs = _augment(x)
        return inputs @ weights.T, inputs, None
    act = np.tanh(_augment(x) @ hidden.T)
    inputs = _augment(act)
    return inputs @ weights.T, inputs, act


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-unit cross-entropy of softmax(logits) against probability targets."""
    return -(targets * _log_softmax(logits)).sum(axis=1)


def loss_and_grad(
    weights: np.ndarray,
    hidden: np.ndarray | None,
    x: np.ndarray,
    targets: np.ndarray,
    unit_weights: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Weighted cross-entropy plus ``l2 / 2 * ||non-bias weights||^2`` and its gradient.

    ``unit_weights`` multiplies each unit's loss; uniform ``1 / n`` gives the
    mean cross-entropy.
    """
    logits, inputs, act = _forward(weights, hidden, x)
    ce = cross_entropy(logits, targets)
    loss = float(unit_weights @ ce)
    g = (_softmax(logits) - targets) * unit_weights[:, None]
    grad_w = g.T @ inputs
    loss += 0.5 * l2 * float((weights[:, :-1] ** 2).sum())
    grad_w[:, :-1] += l2 * weights[:, :-1]
    grad_h = None
    if hidden is not None:
        loss += 0.5 * l2 * float((hidden[:, :-1] ** 2).sum())
        back = (g @ weights[:, :-1]) * (1.0 - act**2)
        grad_h = back.T @ _augment(x)
        grad_h[:, :-1] += l2 * hidden[:, :-1]
    return loss, grad_w, grad_h


def init_model(seed: int, feature_dim: int, n_classes: int, hidden: int = 0) -> ToyModel:
    gen = np.random.default_rng(seed)
    if hidden:
        h = gen.uniform(-INIT_SCALE, INIT_SCALE, size=(hidden, feature_dim + 1))
        w = gen.uniform(-INIT_SCALE, INIT_SCALE, size=(n_classes, hidden + 1))
        return ToyModel(w, h)
    return ToyModel(gen.uniform(-INIT_SCALE, INIT_SCALE, size=(n_classes, feature_dim + 1)))


def _subsample(seed: int, n: int, fraction: float) -> np.ndarray:
    if fraction >= 1.0:
        return np.arange(n)
    gen = np.random.default_rng(derive_seed(seed, 1))
    size = max(1, int(round(fraction * n)))
    return np.sort(gen.choice(n, size=size, replace=False))


def _descend(model: ToyModel, x, targets, unit_weights, spec: EnsembleSpec, member: int, batch=None):
    """Run ``spec.epochs`` of full-batch gradient descent; returns (model, loss history).

    ``batch(epoch)``, when given, supplies fresh ``(targets, unit_weights)``
    every epoch.
    """
    w = np.array(model.weights)
    h = None if model.hidden is None else np.array(model.hidden)
    history = []
    for epoch in range(spec.epochs + 1):
        if batch is not None:
            targets, unit_weights = batch(epoch)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, gw, gh = loss_and_grad(w, h, x, targets, unit_weights, spec.l2)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss diverged for member {member} at epoch {epoch}", member=member, epoch=epoch)
        history.append(loss)
        if epoch == spec.epochs:
            break
        w -= spec.learning_rate * gw
        if h is not None:
            h -= spec.learning_rate * gh
    return ToyModel(w, h), history


def _labels_array(hard) -> np.ndarray:
    return np.asarray(hard.labels if isinstance(hard, HardLabelSet) else hard, dtype=np.int64)


def _soft_array(soft) -> np.ndarray:
    return np.asarray(soft.probs if isinstance(soft, SoftLabelSet) else soft, dtype=np.float64)


def one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def train_base_ensemble(
    features,
    hard,
    spec: EnsembleSpec,
    n_classes: int | None = None,
    histories: list | None = None,
) -> list[ToyModel]:
    """Train ``spec.n_members`` models on hard labels (rows aligned with ``features``)."""
    x = _check_features(features)
    y = _labels_array(hard)
    if y.shape[0] != x.shape[0]:
        raise SizeMismatch("labels and features differ in length")
    if n_classes is None:
        n_classes = max(2, int(y.max()) + 1)
    if y.min() < 0 or y.max() >= n_classes:
        raise SizeMismatch("label outside [0, n_classes)")
    targets = one_hot(y, n_classes)
    models = []
    for i in range(spec.n_members):
        seed = spec.seed + i
        idx = _subsample(seed, x.shape[0], spec.subsample_fraction)
        model = init_model(seed, x.shape[1], n_classes, spec.hidden)
        weights = np.full(idx.shape[0], 1.0 / idx.shape[0])
        model, hist = _descend(model, x[idx], targets[idx], weights, spec, i)
        if histories is not None:
            histories.append(hist)
        models.append(model)
    return models


def finetune_cae(
    base: Sequence[ToyModel],
    features,
    soft,
    spec: EnsembleSpec,
    histories: list | None = None,
) -> list[ToyModel]:
    """Fine-tune a copy of each base member on soft labels; ``base`` is not modified."""
    if len(base) != spec.n_members:
        raise SizeMismatch(f"spec expects {spec.n_members} members, base has {len(base)}")
    x = _check_features(features, base[0].feature_dim)
    targets = _soft_array(soft)
    if targets.shape != (x.shape[0], base[0].n_classes):
        raise SizeMismatch("soft labels must be (units, classes) aligned with features")
    models = []
    for i, start in enumerate(base):
        idx = _subsample(spec.seed + i, x.shape[0], spec.subsample_fraction)
        weights = np.full(idx.shape[0], 1.0 / idx.shape[0])
        model, hist = _descend(start, x[idx], targets[idx], weights, spec, i)
        if histories is not None:
            histories.append(hist)
        models.append(model)
    return models


def mixed_loss(loss_hard: float, loss_soft: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha}", alpha=alpha)
    return alpha * loss_hard + (1.0 - alpha) * loss_soft


def hard_soft_assignment(n: int, seed: int, epoch: int | None = None) -> np.ndarray:
    """Fair-coin assignment per unit; ``True`` means the unit uses its hard label."""
    keys = (_MIXED_KEY,) if epoch is None else (_MIXED_KEY, epoch)
    return np.random.default_rng(derive_seed(seed, *keys)).random(n) < 0.5


def _mixed_weights(is_hard: np.ndarray, alpha: float) -> np.ndarray:
    n_hard = int(is_hard.sum())
    n_soft = is_hard.shape[0] - n_hard
    w = np.zeros(is_hard.shape[0])
    if n_hard:
        w[is_hard] = alpha / n_hard
    if n_soft:
        w[~is_hard] = (1.0 - alpha) / n_soft
    return w


def train_mixed(
    features,
    hard,
    soft,
    alpha: float,
    spec: EnsembleSpec,
    histories: list | None = None,
) -> list[ToyModel]:
    """One ensemble trained on ``alpha * mean CE(hard units) + (1 - alpha) * mean CE(soft units)``.

    The hard/soft split is drawn once from ``spec.seed`` unless
    ``spec.resample_mixed`` redraws it every epoch.
    """
    if not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha}", alpha=alpha)
    x = _check_features(features)
    y = _labels_array(hard)
    s = _soft_array(soft)
    if y.shape[0] != x.shape[0] or s.shape[0] != x.shape[0]:
        raise SizeMismatch("labels and features differ in length")
    n_classes = s.shape[1]
    targets_hard = one_hot(y, n_classes)
    assignment = hard_soft_assignment(x.shape[0], spec.seed)
    targets = np.where(assignment[:, None], targets_hard, s)
    models = []
    for i in range(spec.n_members):
        seed = spec.seed + i
        idx = _subsample(seed, x.shape[0], spec.subsample_fraction)
        model = init_model(seed, x.shape[1], n_classes, spec.hidden)
        if spec.resample_mixed:
            def batch(epoch, idx=idx):
                a = hard_soft_assignment(x.shape[0], spec.seed, epoch)[idx]
                return np.where(a[:, None], targets_hard[idx], s[idx]), _mixed_weights(a, alpha)

            model, hist = _descend(model, x[idx], None, None, spec, i, batch)
        else:
            weights = _mixed_weights(assignment[idx], alpha)
            model, hist = _descend(model, x[idx], targets[idx], weights, spec, i)
        if histories is not None:
            histories.append(hist)
        models.append(model)
    return models


def predict(ensemble: Sequence[ToyModel], features, unit_ids=None) -> PredictionTensor:
    """Softmax outputs of every member, as a (units, members, classes) tensor."""
    if not ensemble:
        raise SizeMismatch("empty ensemble")
    x = _check_features(features, ensemble[0].feature_dim)
    values = np.stack([m.predict_proba(x) for m in ensemble], axis=1)
    units = default_unit_ids(x.shape[0]) if unit_ids is None else _as_units(unit_ids, x.shape[0])
    return PredictionTensor(units, _frozen(_snap_rows(values)))


def ensemble_to_dict(ensemble: Sequence[ToyModel]) -> dict[str, Any]:
    return {"models": [m.to_dict() for m in ensemble]}


def ensemble_from_dict(doc) -> list[ToyModel]:
    return [ToyModel.from_dict(m) for m in doc["models"]]

