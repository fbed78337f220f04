"""End-to-end synthetic benchmark: train ensembles, score uncertainty, compare AAC.

One run builds a scenario with known label probabilities, lets a panel of
simulated experts rate every unit, trains a hard-label base ensemble, a
copy fine-tuned on the expert soft labels (CAE) and a mixed-loss ensemble,
then evaluates every uncertainty method on the held-out units.

The default configuration trains on a small share of the units (10%) with
a one-hidden-layer model and no weight decay, so hard-label members fit
their labels closely and end up overconfident, which is the regime in
which soft labels carry information the models cannot recover on their
own. The scenario temperature is tuned so that the base ensemble's
held-out accuracy is close to ``target_accuracy``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import io
from .core import PredictionTensor, SoftLabelSet, UncertaintyTable, derive_seed
from .decompose import (
    WeightSpec,
    decompose_dataset,
    decompose_two_ensembles,
    decompose_with_soft_labels,
)
from .errors import InvalidSpec
from .evaluation import R_MAX, CurvePair, Outcomes, evaluate_table, outcomes, parse_grid
from .labels import RatingScale, VotePanel, VoteScale, aggregate_votes, expert_accuracy, scale_from_dict
from .models import EnsembleSpec, ToyModel, ensemble_to_dict, finetune_cae, predict, train_base_ensemble, train_mixed
from .synth import (
    ExpertSimConfig,
    SynthScenario,
    generate_scenario,
    simulate_experts,
    temperature_for_accuracy,
)

_SPLIT_KEY, _EXPERT_KEY = 11, 12

SINGLE = "single_model"
PV = "prediction_variance"
TV_BASE = "total_variance"
ENTROPY = "entropy_mi"
TV_CAE = "total_variance_cae"
TV_EXPERTS = "total_variance_experts"
TV_MIXED = "total_variance_mixed"
METHOD_ORDER = (SINGLE, PV, TV_BASE, ENTROPY, TV_CAE, TV_EXPERTS, TV_MIXED)
SWEEP_METHODS = (TV_CAE, TV_EXPERTS)


@dataclass(frozen=True)
class SynthExperimentConfig:
    n_units: int = 2000
    feature_dim: int = 8
    n_classes: int = 2
    seed: int = 7
    target_accuracy: float = 0.85
    accuracy_tol: float = 0.005
    tune_steps: int = 12
    temperature: float | None = None
    train_fraction: float = 0.1
    n_members: int = 10
    epochs: int = 1000
    learning_rate: float = 0.5
    l2: float = 0.0
    hidden: int = 16
    subsample_fraction: float = 0.9
    noise_sd: tuple[float, ...] = (0.15, 0.15, 0.15)
    scale: VoteScale = field(default_factory=RatingScale)
    mixed_alpha: float = 0.9
    grid: str | None = None
    r_max: float = R_MAX
    alpha_sweep: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_units < 10 or self.feature_dim < 1 or self.n_classes < 2:
            raise InvalidSpec("need n_units >= 10, feature_dim >= 1 and n_classes >= 2")
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidSpec("train_fraction must lie in (0, 1)", train_fraction=self.train_fraction)
        if not 0.0 < self.r_max <= 1.0:
            raise InvalidSpec("r_max must lie in (0, 1]", r_max=self.r_max)
        if self.temperature is not None and not self.temperature > 0:
            raise InvalidSpec("temperature must be > 0", temperature=self.temperature)
        if not 0.0 <= self.mixed_alpha <= 1.0:
            raise InvalidSpec("mixed_alpha must lie in [0, 1]", mixed_alpha=self.mixed_alpha)
        object.__setattr__(self, "noise_sd", tuple(float(s) for s in self.noise_sd))
        if self.alpha_sweep is not None:
            alphas = tuple(float(a) for a in self.alpha_sweep)
            if any(not 0.0 <= a <= 1.0 for a in alphas):
                raise InvalidSpec("alpha sweep values must lie in [0, 1]")
            object.__setattr__(self, "alpha_sweep", alphas)

    def ensemble_spec(self) -> EnsembleSpec:
        return EnsembleSpec(
            n_members=self.n_members,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            l2=self.l2,
            subsample_fraction=self.subsample_fraction,
            seed=self.seed,
            hidden=self.hidden,
        )

    def to_dict(self) -> dict[str, Any]:
        doc = dataclasses.asdict(self)
        doc["scale"] = self.scale.to_dict()
        doc["noise_sd"] = list(self.noise_sd)
        if self.alpha_sweep is not None:
            doc["alpha_sweep"] = list(self.alpha_sweep)
        return doc

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "SynthExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise InvalidSpec(f"unknown experiment option {unknown[0]!r}", option=unknown[0])
        kwargs = dict(doc)
        if isinstance(kwargs.get("scale"), Mapping):
            kwargs["scale"] = scale_from_dict(kwargs["scale"])
        for key in ("noise_sd", "alpha_sweep"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True, eq=False)
class MethodResult:
    table: UncertaintyTable
    pair: CurvePair
    aac: float
    auroc: float | None
    accuracy: float


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    config: SynthExperimentConfig
    temperature: float
    tuning: tuple[tuple[float, float], ...]
    scenario: SynthScenario
    train_idx: np.ndarray
    test_idx: np.ndarray
    panel: VotePanel
    soft: SoftLabelSet
    ensembles: dict[str, list[ToyModel]]
    predictions: dict[str, PredictionTensor]
    methods: dict[str, MethodResult]
    alpha_sweep: dict[str, dict[float, float]] | None

    @property
    def aac(self) -> dict[str, float]:
        return {tag: m.aac for tag, m in self.methods.items()}

    @property
    def base_accuracy(self) -> float:
        return self.methods[TV_BASE].accuracy

    def ranking(self) -> list[dict[str, Any]]:
        ordered = sorted(self.methods.items(), key=lambda kv: (kv[1].aac, kv[0]))
        return [{"rank": i + 1, "method_tag": tag, "aac": m.aac} for i, (tag, m) in enumerate(ordered)]


def split_units(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded random train/test split, each side returned in unit order."""
    perm = np.random.default_rng(derive_seed(seed, _SPLIT_KEY)).permutation(n)
    n_train = min(n - 1, max(1, int(round(train_fraction * n))))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def _base_accuracy(config: SynthExperimentConfig, temperature: float, train, test) -> float:
    sc = generate_scenario(config.n_units, config.feature_dim, config.n_classes, temperature, config.seed)
    base = train_base_ensemble(sc.features[train], sc.hard.labels[train], config.ensemble_spec(), config.n_classes)
    pred = predict(base, sc.features[test]).predicted_class()
    return float(np.mean(pred == sc.hard.labels[test]))


def tune_temperature(config: SynthExperimentConfig) -> tuple[float, tuple[tuple[float, float], ...]]:
    """Temperature giving base-ensemble test accuracy near ``config.target_accuracy``.

    Geometric bisection between the temperature at which the true
    probabilities themselves reach the target (a trained ensemble can only
    do worse there) and a colder one. Features, weights and label draws do
    not depend on the temperature, so accuracy moves smoothly with it.
    Returns the closest temperature tried and the ``(temperature, accuracy)``
    trace.
    """
    n, d, c, seed = config.n_units, config.feature_dim, config.n_classes, config.seed
    target = config.target_accuracy
    train, test = split_units(n, config.train_fraction, seed)
    hot = temperature_for_accuracy(target, n, d, c, seed)
    cold = temperature_for_accuracy(min(0.995, target + 0.5 * (1.0 - target)), n, d, c, seed)
    trace = []

    def probe(t: float) -> float:
        acc = _base_accuracy(config, t, train, test)
        trace.append((t, acc))
        return acc

    lo, hi = cold, hot
    acc_hi = probe(hi)
    if acc_hi < target - config.accuracy_tol:
        for _ in range(config.tune_steps):
            mid = math.sqrt(lo * hi)
            acc = probe(mid)
            if abs(acc - target) <= config.accuracy_tol:
                break
            if acc > target:
                lo = mid
            else:
                hi = mid
    best = min(trace, key=lambda ta: (abs(ta[1] - target), ta[0]))
    return best[0], tuple(trace)


def _relabel(table: UncertaintyTable, tag: str) -> UncertaintyTable:
    return dataclasses.replace(table, method_tag=tag)


def _evaluate(table: UncertaintyTable, res: Outcomes, config: SynthExperimentConfig) -> MethodResult:
    grid = None if config.grid is None else parse_grid(config.grid, res.predicted.size, config.r_max)
    pair, area, roc = evaluate_table(table, res, table.units, grid=grid, r_max=config.r_max)
    return MethodResult(table, pair, area, roc, float(res.correct.mean()))


def run_synth_experiment(config: SynthExperimentConfig | None = None) -> ExperimentResult:
    config = config or SynthExperimentConfig()
    if config.temperature is None:
        temperature, tuning = tune_temperature(config)
    else:
        temperature, tuning = float(config.temperature), ()
    sc = generate_scenario(config.n_units, config.feature_dim, config.n_classes, temperature, config.seed)
    train, test = split_units(config.n_units, config.train_fraction, config.seed)
    expert_cfg = ExpertSimConfig(config.noise_sd, config.scale)
    panel = simulate_experts(sc, expert_cfg, derive_seed(config.seed, _EXPERT_KEY))
    soft = aggregate_votes(panel)

    spec = config.ensemble_spec()
    x, y, s = sc.features, sc.hard.labels, soft.probs
    base = train_base_ensemble(x[train], y[train], spec, config.n_classes)
    cae = finetune_cae(base, x[train], s[train], spec)
    mixed = train_mixed(x[train], y[train], s[train], config.mixed_alpha, spec)

    units = [sc.units[i] for i in test]
    preds = {name: predict(ens, x[test], units) for name, ens in (("base", base), ("cae", cae), ("mixed", mixed))}
    pb, pc, pm = preds["base"], preds["cae"], preds["mixed"]
    soft_test = soft.subset(test)
    ob, om, o0 = outcomes(pb, sc.hard), outcomes(pm, sc.hard), outcomes(pb, sc.hard, member=0)

    tables = {
        SINGLE: (decompose_dataset(pb, SINGLE, member=0), o0),
        PV: (decompose_dataset(pb, PV), ob),
        TV_BASE: (decompose_dataset(pb, TV_BASE), ob),
        ENTROPY: (decompose_dataset(pb, ENTROPY), ob),
        TV_CAE: (decompose_two_ensembles(pb, pc, method_tag=TV_CAE), ob),
        TV_EXPERTS: (decompose_with_soft_labels(pb, soft_test, method_tag=TV_EXPERTS), ob),
        TV_MIXED: (_relabel(decompose_dataset(pm, TV_BASE), TV_MIXED), om),
    }
    methods = {tag: _evaluate(t, o, config) for tag, (t, o) in tables.items()}

    sweep = None
    if config.alpha_sweep is not None:
        sweep = {}
        for tag in SWEEP_METHODS:
            row = {}
            for alpha in config.alpha_sweep:
                w = WeightSpec(alpha)
                if tag == TV_CAE:
                    t = decompose_two_ensembles(pb, pc, w, method_tag=tag)
                else:
                    t = decompose_with_soft_labels(pb, soft_test, w, method_tag=tag)
                row[alpha] = _evaluate(t, ob, config).aac
            sweep[tag] = row

    return ExperimentResult(
        config=config,
        temperature=temperature,
        tuning=tuning,
        scenario=sc,
        train_idx=train,
        test_idx=test,
        panel=panel,
        soft=soft,
        ensembles={"base": base, "cae": cae, "mixed": mixed},
        predictions=preds,
        methods=methods,
        alpha_sweep=sweep,
    )


def _safe_tag(tag: str) -> str:
    return tag.replace("@", "_at_").replace("=", "").replace("/", "_")


def write_report(result: ExperimentResult, out_dir) -> list[Path]:
    """Write every artifact of a run under ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    sc = result.scenario
    written: list[Path] = []

    def emit(fn, rel, *args):
        path = out / rel
        fn(*args, path)
        written.append(path)

    emit(io.emit_features, "scenario/features.csv", sc.units, sc.features)
    emit(io.emit_soft_labels, "scenario/true_p.csv", SoftLabelSet(sc.units, sc.true_p))
    emit(io.emit_hard_labels, "scenario/hard_labels.csv", sc.hard)
    emit(io.emit_votes, "scenario/votes.csv", result.panel)
    emit(io.emit_scale, "scenario/scale.json", result.panel.scale)
    emit(io.emit_soft_labels, "scenario/soft_labels.csv", result.soft)
    split = {
        "train": [sc.units[i].sample_id for i in result.train_idx],
        "test": [sc.units[i].sample_id for i in result.test_idx],
    }
    emit(io.emit_json, "scenario/split.json", split)
    for name, ens in result.ensembles.items():
        emit(io.emit_json, f"models/{name}.json", ensemble_to_dict(ens))
        emit(io.emit_predictions, f"predictions/{name}.csv", result.predictions[name])

    summary = []
    for tag, m in result.methods.items():
        emit(io.emit_uncertainty, f"uncertainty/{_safe_tag(tag)}.csv", m.table)
        emit(io.emit_curve, f"curves/{_safe_tag(tag)}.csv", m.pair)
        summary.append(io.summary_row(tag, m.aac, m.auroc, len(m.table), result.config.r_max, m.pair.r.size))
    emit(io.emit_summary, "summary.json", summary)
    emit(io.emit_json, "ranking.json", result.ranking())

    if result.alpha_sweep is not None:
        alphas = list(result.config.alpha_sweep)
        rows = [[tag, *[result.alpha_sweep[tag][a] for a in alphas]] for tag in SWEEP_METHODS]
        header = ["method", *[io.format_number(a) for a in alphas]]
        io.write_table(out / "alpha_sweep.csv", header, rows)
        written.append(out / "alpha_sweep.csv")

    reports = expert_accuracy(result.panel, sc.hard)
    meta = {
        "config": result.config.to_dict(),
        "temperature": result.temperature,
        "temperature_tuning": [{"temperature": t, "base_accuracy": a} for t, a in result.tuning],
        "base_accuracy": result.base_accuracy,
        "n_train": int(result.train_idx.size),
        "n_test": int(result.test_idx.size),
        "expert_accuracy": {r.expert_id: r.accuracy for r in reports},
    }
    emit(io.emit_json, "meta.json", meta)
    return written


def alpha_grid(text: str | Sequence[float]) -> tuple[float, ...]:
    """Parse ``"0,0.1,...,1.0"`` style lists (``...`` extends an arithmetic step)."""
    if not isinstance(text, str):
        return tuple(float(a) for a in text)
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if "..." in parts:
        i = parts.index("...")
        if i < 2 or i != len(parts) - 2:
            raise InvalidSpec(f"bad alpha list {text!r}: '...' needs two leading values and one end value")
        a0, a1, end = float(parts[i - 2]), float(parts[i - 1]), float(parts[-1])
        step = a1 - a0
        if not step > 0:
            raise InvalidSpec(f"bad alpha list {text!r}: step must be positive")
        count = int(round((end - a0) / step))
        head = [float(p) for p in parts[: i - 2]]
        return tuple(head + [round(a0 + k * step, 12) for k in range(count + 1)])
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise InvalidSpec(f"bad alpha list {text!r}") from None
