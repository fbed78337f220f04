"""Synthetic classification scenarios with known label probabilities.

Features are standard normal, the true class probabilities are
``softmax(W x / temperature)`` for a seeded random ``W`` and hard labels are
drawn from them. Because the generating probabilities are known, the
aleatoric variance ``sum_j p_j (1 - p_j)`` of every unit is available as a
reference, and simulated experts can be given a controlled skill level.

Simulated expert ``j`` sees the true probability perturbed in logit space by
``N(0, noise_sd_j)`` noise and reports the nearest vote on the panel scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import HardLabelSet, UnitRef, derive_seed
from .errors import InvalidShape, ScaleIncompatible
from .labels import CategoricalScale, PercentScale, RatingScale, VotePanel, VoteScale

_FEATURES, _WEIGHTS, _LABELS = 0, 1, 2


@dataclass(frozen=True, eq=False)
class SynthScenario:
    units: tuple[UnitRef, ...]
    features: np.ndarray
    true_p: np.ndarray
    hard: HardLabelSet
    seed: int
    temperature: float

    @property
    def n_classes(self) -> int:
        return self.true_p.shape[1]

    def subset(self, idx) -> "SynthScenario":
        idx = np.asarray(idx, dtype=int)
        return SynthScenario(
            tuple(self.units[i] for i in idx),
            self.features[idx],
            self.true_p[idx],
            self.hard.subset(idx),
            self.seed,
            self.temperature,
        )


@dataclass(frozen=True)
class ExpertSimConfig:
    noise_sd: tuple[float, ...]
    scale: VoteScale
    abstain_rate: tuple[float, ...] | None = None

    def __post_init__(self):
        noise = tuple(float(s) for s in self.noise_sd)
        if not noise:
            raise InvalidShape("need at least one simulated expert")
        if any(s < 0 for s in noise):
            raise InvalidShape("noise_sd must be >= 0")
        rates = (0.0,) * len(noise) if self.abstain_rate is None else tuple(float(a) for a in self.abstain_rate)
        if len(rates) != len(noise) or any(not 0 <= a < 1 for a in rates):
            raise InvalidShape("abstain_rate must give one value in [0, 1) per expert")
        object.__setattr__(self, "noise_sd", noise)
        object.__setattr__(self, "abstain_rate", rates)

    @property
    def n_experts(self) -> int:
        return len(self.noise_sd)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _draws(n: int, d: int, n_classes: int, seed: int):
    x = np.random.default_rng(derive_seed(seed, _FEATURES)).standard_normal((n, d))
    w = np.random.default_rng(derive_seed(seed, _WEIGHTS)).standard_normal((n_classes, d))
    u = np.random.default_rng(derive_seed(seed, _LABELS)).random(n)
    return x, w, u


def _sample_labels(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(p, axis=1)
    labels = (u[:, None] >= cdf).sum(axis=1)
    return np.minimum(labels, p.shape[1] - 1)


def generate_scenario(n: int, d: int, n_classes: int = 2, temperature: float = 1.0, seed: int = 0) -> SynthScenario:
    if n < 1 or d < 1 or n_classes < 2:
        raise InvalidShape("need n >= 1, d >= 1 and n_classes >= 2", n=n, d=d, n_classes=n_classes)
    if not temperature > 0:
        raise InvalidShape("temperature must be > 0", temperature=temperature)
    x, w, u = _draws(n, d, n_classes, seed)
    p = _softmax(x @ w.T / temperature)
    units = tuple(UnitRef(f"u{i:06d}", 0) for i in range(n))
    hard = HardLabelSet(units, _sample_labels(p, u))
    return SynthScenario(units, x, p, hard, seed, float(temperature))


def bayes_accuracy(n: int, d: int, n_classes: int, temperature: float, seed: int) -> float:
    """Mean ``max_j p_j`` of a scenario: the accuracy of the true-probability classifier."""
    x, w, _ = _draws(n, d, n_classes, seed)
    return float(_softmax(x @ w.T / temperature).max(axis=1).mean())


def temperature_for_accuracy(
    target: float, n: int, d: int, n_classes: int = 2, seed: int = 0, tol: float = 1e-6
) -> float:
    """Temperature at which the scenario's Bayes accuracy equals ``target`` (bisection)."""
    chance = 1.0 / n_classes
    if not chance < target < 1.0:
        raise InvalidShape(f"target accuracy must lie in ({chance}, 1)")
    lo, hi = 1e-3, 1e3
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if bayes_accuracy(n, d, n_classes, mid, seed) > target:
            lo = mid
        else:
            hi = mid
        if hi / lo < 1 + tol:
            break
    return float(np.sqrt(lo * hi))


def _perturb(p: np.ndarray, sd: float, gen: np.random.Generator) -> np.ndarray:
    if sd == 0:
        return p
    if p.shape[1] == 2:
        q = np.clip(p[:, 1], 1e-300, 1.0)
        logit = np.log(q) - np.log(np.clip(p[:, 0], 1e-300, 1.0))
        q = 1.0 / (1.0 + np.exp(-(logit + gen.normal(0.0, sd, size=logit.shape))))
        return np.stack([1.0 - q, q], axis=1)
    return _softmax(np.log(np.clip(p, 1e-300, 1.0)) + gen.normal(0.0, sd, size=p.shape))


def _to_votes(p: np.ndarray, scale: VoteScale) -> list:
    if isinstance(scale, RatingScale):
        return [scale.quantize(float(q)) for q in p[:, 1]]
    if isinstance(scale, CategoricalScale):
        labels = list(scale.mapping)
        vectors = np.array([scale.mapping[k] for k in labels])
        dist = ((p[:, None, :] - vectors[None, :, :]) ** 2).sum(axis=2)
        return [labels[i] for i in np.argmin(dist, axis=1)]
    guess = np.argmax(p, axis=1)
    conf = np.round(100.0 * p.max(axis=1))
    return [(scale.labels[g], float(c)) for g, c in zip(guess, conf)]


def simulate_experts(
    scenario: SynthScenario,
    config: ExpertSimConfig,
    seed: int,
    experts: Sequence[str] | None = None,
) -> VotePanel:
    """Vote panel of simulated experts over every scenario unit."""
    scale = config.scale
    n_classes = scenario.n_classes
    if isinstance(scale, RatingScale) and n_classes != 2:
        raise ScaleIncompatible("rating scales describe binary tasks only", n_classes=n_classes)
    if not isinstance(scale, RatingScale) and scale.n_classes != n_classes:
        raise ScaleIncompatible(
            f"scale covers {scale.n_classes} classes, scenario has {n_classes}", n_classes=n_classes
        )
    ids = [str(j) for j in range(config.n_experts)] if experts is None else [str(e) for e in experts]
    columns = []
    for j, (sd, rate) in enumerate(zip(config.noise_sd, config.abstain_rate)):
        gen = np.random.default_rng(derive_seed(seed, j))
        votes = _to_votes(_perturb(scenario.true_p, sd, gen), scale)
        abstain = gen.random(len(votes)) < rate
        columns.append([None if a else v for v, a in zip(votes, abstain)])
    table = tuple(zip(*columns))
    return VotePanel(scale, scenario.units, tuple(ids), table)


def analytic_reference(scenario: SynthScenario) -> np.ndarray:
    """True aleatoric variance ``sum_j p_j (1 - p_j)`` per unit."""
    p = scenario.true_p
    return (p * (1.0 - p)).sum(axis=1)
