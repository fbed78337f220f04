"""Expert vote panels: scales, soft-label aggregation and annotator analytics.

Three vote scales are supported:

* ``RatingScale`` -- integer ratings on ``[min, max]`` for binary tasks; a
  rating ``r`` means ``p(class 1) = (r - min) / (max - min)``.
* ``CategoricalScale`` -- named answers mapped to probability vectors
  (the default is yes/no/maybe on a binary task).
* ``PercentScale`` -- a class guess with a 0-100 confidence, as produced by
  repeatedly querying a language model.

Soft labels are arithmetic means of the mapped vote vectors over experts
who did not abstain. Expert accuracy uses certainty bands: a certain correct
vote scores 1, an uncertain correct vote 0.75, a vote in the abstention band
is discarded and an incorrect vote scores 0.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Hashable, Mapping, Sequence

import numpy as np

from .core import HardLabelSet, SoftLabelSet, UnitRef, as_unit
from .errors import (
    AllAbstained,
    InvalidScale,
    KOutOfRange,
    NoOverlap,
    ScaleWithoutCertaintyBands,
    UnknownCategoricalLabel,
    VoteOutOfScale,
)

UNCERTAIN_WEIGHT = 0.75

CERTAIN = "certain"
UNCERTAIN = "uncertain"
ABSTAIN = "abstain"
_BANDS = (CERTAIN, UNCERTAIN, ABSTAIN)


class _Scale:
    kind: str
    n_classes: int

    def parse(self, text: str):
        raise NotImplementedError

    def format(self, vote) -> str:
        raise NotImplementedError

    def validate(self, vote) -> None:
        raise NotImplementedError

    def is_abstention(self, vote) -> bool:
        return vote is None

    def to_probability(self, vote) -> np.ndarray:
        raise NotImplementedError

    def band(self, vote) -> tuple[str, int]:
        """Certainty band and implied class of a non-abstained vote."""
        raise NotImplementedError

    def category(self, vote) -> Hashable:
        return vote

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class RatingScale(_Scale):
    """Integer rating scale for binary tasks.

    Without explicit bands, the extremes are certain, the exact midpoint (if
    it is a grid value) is the abstention band and everything else is
    uncertain. ``abstain_value`` marks a raw vote that is an abstention
    everywhere, including aggregation; the midpoint by contrast still
    contributes 0.5 to soft labels and is only dropped when scoring experts.
    """

    min: int = 0
    max: int = 4
    abstain_value: int | None = None
    certain: tuple[int, ...] | None = None
    uncertain: tuple[int, ...] | None = None
    abstain_band: tuple[int, ...] | None = None
    kind: str = field(default="rating", init=False)
    n_classes: int = field(default=2, init=False)

    def __post_init__(self):
        if int(self.min) != self.min or int(self.max) != self.max:
            raise InvalidScale("rating bounds must be integers")
        if not self.min < self.max:
            raise InvalidScale(f"rating min {self.min} must be below max {self.max}")
        explicit = [b for b in (self.certain, self.uncertain, self.abstain_band) if b is not None]
        if explicit:
            covered = set(itertools.chain.from_iterable(explicit))
            grid = set(range(self.min, self.max + 1))
            if self.abstain_value is not None:
                grid.discard(self.abstain_value)
            if covered != grid:
                raise InvalidScale("explicit certainty bands must cover every rating exactly once")

    @property
    def midpoint(self) -> float:
        return (self.min + self.max) / 2

    def parse(self, text: str):
        text = text.strip()
        if text == "":
            return None
        try:
            value = float(text)
        except ValueError:
            raise VoteOutOfScale(f"rating {text!r} is not a number", vote=text) from None
        if value != int(value):
            raise VoteOutOfScale(f"rating {text!r} is not an integer", vote=text)
        vote = int(value)
        self.validate(vote)
        return vote

    def format(self, vote) -> str:
        return "" if vote is None else str(int(vote))

    def validate(self, vote) -> None:
        if vote is None or vote == self.abstain_value:
            return
        if isinstance(vote, bool) or int(vote) != vote or not self.min <= vote <= self.max:
            raise VoteOutOfScale(
                f"rating {vote!r} outside [{self.min}, {self.max}]", vote=vote, min=self.min, max=self.max
            )

    def is_abstention(self, vote) -> bool:
        return vote is None or (self.abstain_value is not None and vote == self.abstain_value)

    def to_probability(self, vote) -> np.ndarray:
        p = (vote - self.min) / (self.max - self.min)
        return np.array([1.0 - p, p])

    def band(self, vote) -> tuple[str, int]:
        side = 1 if vote > self.midpoint else 0
        if self.certain is not None or self.uncertain is not None or self.abstain_band is not None:
            if vote in (self.certain or ()):
                return CERTAIN, side
            if vote in (self.abstain_band or ()):
                return ABSTAIN, side
            return UNCERTAIN, side
        if vote == self.midpoint:
            return ABSTAIN, side
        if vote in (self.min, self.max):
            return CERTAIN, side
        return UNCERTAIN, side

    def quantize(self, p: float) -> int:
        """Nearest grid rating to probability ``p``; exact ties go toward the midpoint."""
        x = self.min + p * (self.max - self.min)
        lo = int(np.floor(x))
        hi = lo + 1
        if x - lo < hi - x:
            r = lo
        elif hi - x < x - lo:
            r = hi
        else:
            r = hi if abs(hi - self.midpoint) < abs(lo - self.midpoint) else lo
        return int(min(max(r, self.min), self.max))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": "rating", "min": self.min, "max": self.max}
        if self.abstain_value is not None:
            out["abstain_value"] = self.abstain_value
        for key, value in (("certain", self.certain), ("uncertain", self.uncertain), ("abstain", self.abstain_band)):
            if value is not None:
                out[key] = list(value)
        return out


def _check_bands(bands, labels) -> None:
    for label, band in bands.items():
        if label not in labels:
            raise InvalidScale(f"band declared for unknown label {label!r}")
        if band not in _BANDS:
            raise InvalidScale(f"unknown certainty band {band!r}")


@dataclass(frozen=True)
class CategoricalScale(_Scale):
    """Named answers mapped to probability vectors over the task's classes."""

    mapping: Mapping[str, tuple[float, ...]]
    bands: Mapping[str, str] | None = None
    kind: str = field(default="categorical", init=False)

    def __post_init__(self):
        if not self.mapping:
            raise InvalidScale("categorical scale needs at least one label")
        vectors = {k: tuple(float(x) for x in v) for k, v in self.mapping.items()}
        sizes = {len(v) for v in vectors.values()}
        if len(sizes) != 1 or sizes.pop() < 2:
            raise InvalidScale("categorical vectors must share one length >= 2")
        for label, v in vectors.items():
            a = np.asarray(v)
            if np.any(a < 0) or np.any(a > 1) or abs(a.sum() - 1.0) > 1e-9:
                raise InvalidScale(f"vector for {label!r} is not in the simplex")
        object.__setattr__(self, "mapping", vectors)
        if self.bands is not None:
            _check_bands(self.bands, vectors)
            object.__setattr__(self, "bands", dict(self.bands))

    @classmethod
    def yes_no_maybe(cls) -> "CategoricalScale":
        """Binary positive/negative answers with ``maybe`` split evenly."""
        return cls(
            {"no": (1.0, 0.0), "yes": (0.0, 1.0), "maybe": (0.5, 0.5)},
            bands={"no": CERTAIN, "yes": CERTAIN, "maybe": ABSTAIN},
        )

    @property
    def n_classes(self) -> int:
        return len(next(iter(self.mapping.values())))

    def parse(self, text: str):
        text = text.strip()
        if text == "":
            return None
        self.validate(text)
        return text

    def format(self, vote) -> str:
        return "" if vote is None else str(vote)

    def validate(self, vote) -> None:
        if vote is not None and vote not in self.mapping:
            raise UnknownCategoricalLabel(f"label {vote!r} not declared by the scale", vote=vote)

    def to_probability(self, vote) -> np.ndarray:
        return np.array(self.mapping[vote])

    def band(self, vote) -> tuple[str, int]:
        if self.bands is None:
            raise ScaleWithoutCertaintyBands("categorical scale declares no certainty bands")
        return self.bands.get(vote, UNCERTAIN), int(np.argmax(self.mapping[vote]))

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": "categorical", "mapping": {k: list(v) for k, v in self.mapping.items()}}
        if self.bands is not None:
            out["bands"] = dict(self.bands)
        return out


@dataclass(frozen=True)
class PercentScale(_Scale):
    """A guessed class plus a 0-100 confidence in it.

    Vote text is ``label:confidence``. The confidence goes to the guessed
    class and the remaining mass is spread evenly over the other classes.
    Optional bands: confidence >= ``certain_at_least`` is certain, below
    ``abstain_below`` is an abstention.
    """

    labels: tuple[str, ...]
    certain_at_least: float | None = None
    abstain_below: float | None = None
    kind: str = field(default="percent", init=False)

    def __post_init__(self):
        labels = tuple(str(x) for x in self.labels)
        if len(labels) < 2 or len(set(labels)) != len(labels):
            raise InvalidScale("percent scale needs >= 2 distinct class labels")
        object.__setattr__(self, "labels", labels)

    @property
    def n_classes(self) -> int:
        return len(self.labels)

    def parse(self, text: str):
        text = text.strip()
        if text == "":
            return None
        label, sep, conf = text.rpartition(":")
        if not sep:
            raise VoteOutOfScale(f"percent vote {text!r} must look like label:confidence", vote=text)
        try:
            vote = (label, float(conf))
        except ValueError:
            raise VoteOutOfScale(f"confidence in {text!r} is not a number", vote=text) from None
        self.validate(vote)
        return vote

    def format(self, vote) -> str:
        return "" if vote is None else f"{vote[0]}:{vote[1]!r}"

    def validate(self, vote) -> None:
        if vote is None:
            return
        label, conf = vote
        if label not in self.labels:
            raise UnknownCategoricalLabel(f"class guess {label!r} not declared by the scale", vote=label)
        if not 0.0 <= conf <= 100.0:
            raise VoteOutOfScale(f"confidence {conf!r} outside [0, 100]", vote=conf)

    def to_probability(self, vote) -> np.ndarray:
        label, conf = vote
        c = conf / 100.0
        n = self.n_classes
        p = np.full(n, (1.0 - c) / (n - 1))
        p[self.labels.index(label)] = c
        return p

    def band(self, vote) -> tuple[str, int]:
        if self.certain_at_least is None and self.abstain_below is None:
            raise ScaleWithoutCertaintyBands("percent scale declares no certainty bands")
        label, conf = vote
        cls = self.labels.index(label)
        if self.abstain_below is not None and conf < self.abstain_below:
            return ABSTAIN, cls
        if self.certain_at_least is not None and conf >= self.certain_at_least:
            return CERTAIN, cls
        return UNCERTAIN, cls

    def category(self, vote) -> Hashable:
        return vote[0]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": "percent", "labels": list(self.labels)}
        if self.certain_at_least is not None:
            out["certain_at_least"] = self.certain_at_least
        if self.abstain_below is not None:
            out["abstain_below"] = self.abstain_below
        return out


VoteScale = RatingScale | CategoricalScale | PercentScale


def scale_from_dict(doc: Mapping[str, Any]) -> VoteScale:
    """Build a scale from its JSON descriptor."""
    kind = doc.get("kind")
    if kind == "rating":
        def band(key):
            return None if doc.get(key) is None else tuple(int(v) for v in doc[key])

        return RatingScale(
            min=int(doc.get("min", 0)),
            max=int(doc.get("max", 4)),
            abstain_value=doc.get("abstain_value"),
            certain=band("certain"),
            uncertain=band("uncertain"),
            abstain_band=band("abstain"),
        )
    if kind == "categorical":
        if doc.get("preset") == "yes_no_maybe":
            return CategoricalScale.yes_no_maybe()
        return CategoricalScale(
            {str(k): tuple(v) for k, v in doc["mapping"].items()}, bands=doc.get("bands")
        )
    if kind == "percent":
        return PercentScale(
            tuple(doc["labels"]),
            certain_at_least=doc.get("certain_at_least"),
            abstain_below=doc.get("abstain_below"),
        )
    raise InvalidScale(f"unknown scale kind {kind!r}")


@dataclass(frozen=True, eq=False)
class VotePanel:
    """Raw votes indexed ``[unit][expert]``; ``None`` is an abstention."""

    scale: VoteScale
    units: tuple[UnitRef, ...]
    experts: tuple[str, ...]
    votes: tuple[tuple[Any, ...], ...]

    def __post_init__(self):
        if not self.experts:
            raise InvalidScale("a vote panel needs at least one expert")
        if len(self.votes) != len(self.units) or any(len(row) != len(self.experts) for row in self.votes):
            raise InvalidScale("votes must be a units x experts table")
        for row in self.votes:
            for v in row:
                self.scale.validate(v)

    @classmethod
    def from_mapping(
        cls,
        scale: VoteScale,
        votes: Mapping[tuple[Any, str], Any],
        units: Sequence | None = None,
        experts: Sequence[str] | None = None,
    ) -> "VotePanel":
        """Build from ``{(unit, expert_id): vote}``; missing entries are abstentions."""
        norm = {(as_unit(u), str(e)): v for (u, e), v in votes.items()}
        if units is None:
            units = list(dict.fromkeys(u for u, _ in norm))
        if experts is None:
            experts = list(dict.fromkeys(e for _, e in norm))
        units = tuple(as_unit(u) for u in units)
        experts = tuple(str(e) for e in experts)
        table = tuple(tuple(norm.get((u, e)) for e in experts) for u in units)
        return cls(scale, units, experts, table)

    @classmethod
    def from_arrays(cls, scale: VoteScale, units: Sequence, experts: Sequence[str], votes) -> "VotePanel":
        return cls(
            scale,
            tuple(as_unit(u) for u in units),
            tuple(str(e) for e in experts),
            tuple(tuple(row) for row in votes),
        )

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    def column(self, expert: str) -> list:
        j = self.experts.index(expert)
        return [row[j] for row in self.votes]

    def restrict(self, experts: Sequence[str]) -> "VotePanel":
        cols = [self.experts.index(e) for e in experts]
        return VotePanel(self.scale, self.units, tuple(experts), tuple(tuple(row[j] for j in cols) for row in self.votes))


@dataclass(frozen=True)
class ExpertReport:
    expert_id: str
    accuracy: float
    n_scored: int


@dataclass(frozen=True, eq=False)
class KappaMatrix:
    """Pairwise Cohen's kappa; the diagonal holds expert accuracies or NaN."""

    experts: tuple[str, ...]
    matrix: np.ndarray


def aggregate_votes(panel: VotePanel, experts: Sequence[str] | None = None) -> SoftLabelSet:
    """Average each unit's mapped votes over the non-abstaining experts."""
    if experts is not None:
        experts = list(experts)
        if not experts:
            raise KOutOfRange("expert subset is empty")
        panel = panel.restrict(experts)
    scale = panel.scale
    cache: dict[Any, np.ndarray] = {}
    out = np.zeros((len(panel.units), scale.n_classes))
    for i, row in enumerate(panel.votes):
        acc = np.zeros(scale.n_classes)
        used = 0
        for v in row:
            if scale.is_abstention(v):
                continue
            key = v
            if key not in cache:
                cache[key] = scale.to_probability(v)
            acc += cache[key]
            used += 1
        if used == 0:
            raise AllAbstained(f"unit {panel.units[i]} has no usable votes", unit=list(panel.units[i]))
        mean = acc / used
        out[i] = mean / mean.sum()
    return SoftLabelSet(panel.units, out)


def expert_accuracy(panel: VotePanel, hard: HardLabelSet, scale: VoteScale | None = None) -> list[ExpertReport]:
    """Per-expert accuracy against hard labels with the 0.75 rule for uncertain votes."""
    scale = scale or panel.scale
    truth = hard.aligned(panel.units)
    reports = []
    for j, expert in enumerate(panel.experts):
        score = 0.0
        n_scored = 0
        for i, row in enumerate(panel.votes):
            v = row[j]
            if scale.is_abstention(v):
                continue
            band, cls = scale.band(v)
            if band == ABSTAIN:
                continue
            n_scored += 1
            if cls == truth[i]:
                score += 1.0 if band == CERTAIN else UNCERTAIN_WEIGHT
        if n_scored == 0:
            raise AllAbstained(f"expert {expert!r} abstained on every unit", expert=expert)
        reports.append(ExpertReport(expert, score / n_scored, n_scored))
    return reports


def cohen_kappa(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """Cohen's kappa of two equally long label sequences.

    When chance agreement is 1 (both raters constant and identical) kappa
    is defined as 1.
    """
    if len(a) != len(b):
        raise NoOverlap("rater sequences differ in length")
    n = len(a)
    if n == 0:
        raise NoOverlap("raters share no units")
    cats = sorted(set(a) | set(b), key=repr)
    index = {c: k for k, c in enumerate(cats)}
    table = np.zeros((len(cats), len(cats)))
    for x, y in zip(a, b):
        table[index[x], index[y]] += 1
    table /= n
    p_o = float(np.trace(table))
    p_e = float(table.sum(axis=1) @ table.sum(axis=0))
    if p_e >= 1.0 - 1e-15:
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


def _rating_category(scale: VoteScale, vote, binarize: bool):
    if not binarize:
        return scale.category(vote)
    band, cls = scale.band(vote)
    return None if band == ABSTAIN else cls


def kappa_matrix(panel: VotePanel, hard: HardLabelSet | None = None, binarize: bool = False) -> KappaMatrix:
    """Pairwise kappa over units both experts voted on.

    Votes are compared as raw categories (five for a 0-4 rating) unless
    ``binarize`` reduces them to implied classes, dropping the abstention band.
    """
    scale = panel.scale
    e = panel.n_experts
    if e < 2:
        raise KOutOfRange("kappa needs at least two experts")
    cats = [
        [None if scale.is_abstention(row[j]) else _rating_category(scale, row[j], binarize) for row in panel.votes]
        for j in range(e)
    ]
    m = np.full((e, e), np.nan)
    for j, k in itertools.combinations(range(e), 2):
        pairs = [(x, y) for x, y in zip(cats[j], cats[k]) if x is not None and y is not None]
        if not pairs:
            raise NoOverlap(
                f"experts {panel.experts[j]!r} and {panel.experts[k]!r} share no voted units",
                experts=[panel.experts[j], panel.experts[k]],
            )
        a, b = zip(*pairs)
        m[j, k] = m[k, j] = cohen_kappa(a, b)
    if hard is not None:
        for j, report in enumerate(expert_accuracy(panel, hard)):
            m[j, j] = report.accuracy
    return KappaMatrix(panel.experts, m)


def select_best_experts(reports: Sequence[ExpertReport], k: int) -> list[str]:
    """Top-``k`` experts by accuracy, ties broken by expert id."""
    if not 1 <= k <= len(reports):
        raise KOutOfRange(f"k={k} outside [1, {len(reports)}]", k=k, n_experts=len(reports))
    ranked = sorted(reports, key=lambda r: (-r.accuracy, r.expert_id))
    return [r.expert_id for r in ranked[:k]]


def expert_subsets(experts: Sequence[str], k: int) -> list[tuple[str, ...]]:
    """All size-``k`` groups of experts, for averaging quality over groups."""
    if not 1 <= k <= len(experts):
        raise KOutOfRange(f"k={k} outside [1, {len(experts)}]", k=k)
    return list(itertools.combinations(experts, k))
