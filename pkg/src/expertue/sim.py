"""Second-opinion triage: accuracy when rejected cases go to an expert.

The classifier answers the retained ``1 - r`` share with accuracy ``a_cl``.
Each pass over the rejected share, the expert settles a fraction ``a_exp``
of what is still open (and is right on those); after ``n - 1`` passes the
rejected share contributes ``r * (1 - (1 - a_exp) ** (n - 1))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParamOutOfRange
from .evaluation import R_MAX, RejectionCurve, rejection_curve

EXPERT_ACCURACY = 0.956


@dataclass(frozen=True)
class TriageParams:
    r: float
    a_cl: float
    a_exp: float = EXPERT_ACCURACY
    n: int = 2

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ParamOutOfRange(f"r={self.r} outside [0, 1]", r=self.r)
        if not 0.0 <= self.a_cl <= 1.0:
            raise ParamOutOfRange(f"a_cl={self.a_cl} outside [0, 1]", a_cl=self.a_cl)
        if not 0.0 < self.a_exp <= 1.0:
            raise ParamOutOfRange(f"a_exp={self.a_exp} outside (0, 1]", a_exp=self.a_exp)
        if int(self.n) != self.n or self.n < 1:
            raise ParamOutOfRange(f"n={self.n} must be an integer >= 1", n=self.n)


def expert_resolved_share(a_exp: float, n: int) -> float:
    return 1.0 - (1.0 - a_exp) ** (n - 1)


def triage_accuracy(params: TriageParams) -> float:
    return (1.0 - params.r) * params.a_cl + params.r * expert_resolved_share(params.a_exp, params.n)


def monte_carlo_triage(params: TriageParams, trials: int, seed: int) -> tuple[float, float]:
    """Simulate ``trials`` independent cases; returns (mean accuracy, standard error).

    A case is rejected with probability ``r``. Retained cases are right with
    probability ``a_cl``; a rejected case is right if the expert settles it
    in one of the ``n - 1`` passes, each succeeding with probability ``a_exp``.
    """
    if trials < 1:
        raise ParamOutOfRange("trials must be >= 1", trials=trials)
    gen = np.random.default_rng(seed)
    rejected = gen.random(trials) < params.r
    classifier_right = gen.random(trials) < params.a_cl
    passes_needed = gen.geometric(params.a_exp, size=trials)
    expert_right = passes_needed <= params.n - 1
    correct = np.where(rejected, expert_right, classifier_right).astype(np.float64)
    mean = float(correct.mean())
    se = float(correct.std(ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
    return mean, se


@dataclass(frozen=True, eq=False)
class TriageSweep:
    r: np.ndarray
    accuracy: np.ndarray
    retained_metric: np.ndarray
    a_exp: float
    n: int
    mode: str


def triage_sweep(
    scores,
    correct,
    a_exp: float = EXPERT_ACCURACY,
    n: int = 2,
    grid=None,
    r_max: float = R_MAX,
    constant_accuracy: bool = False,
) -> TriageSweep:
    """Achieved accuracy vs rejection rate for one uncertainty method.

    By default the classifier term uses the method's retained accuracy
    ``M(r)`` from its rejection curve; ``constant_accuracy`` instead holds it
    at the overall accuracy ``M(0)``.
    """
    TriageParams(0.0, 0.0, a_exp, n)
    correct = np.asarray(correct, dtype=bool)
    curve: RejectionCurve = rejection_curve(
        scores, correct.astype(np.int64), np.ones(correct.shape[0], dtype=np.int64), grid=grid, r_max=r_max
    )
    m = np.full_like(curve.m, curve.m[0]) if constant_accuracy else curve.m
    acc = (1.0 - curve.r) * m + curve.r * expert_resolved_share(a_exp, n)
    return TriageSweep(curve.r, acc, m, a_exp, n, "constant" if constant_accuracy else "curve")
