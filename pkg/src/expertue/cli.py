"""Command-line front end.

Each subcommand reads the delimited files described in :mod:`expertue.io`
and writes tables or JSON documents. A JSON file passed with ``--config``
supplies defaults for any flag (keys use the flag's name with underscores);
flags given on the command line win. Failures print an error document
``{"code", "message", "context"}`` on stderr and exit with status 1, or 2
for usage errors.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io
from .core import PredictionTensor
from .decompose import (
    WeightSpec,
    decompose_dataset,
    decompose_two_ensembles,
    decompose_with_soft_labels,
)
from .errors import ExpertUEError, InvalidSpec, UsageError
from .evaluation import R_MAX, auroc_error_detection, curve_pair, aac, parse_grid, uniform_grid
from .experiment import SynthExperimentConfig, alpha_grid, run_synth_experiment, write_report
from .labels import aggregate_votes, expert_accuracy, kappa_matrix, select_best_experts
from .models import (
    EnsembleSpec,
    ensemble_from_dict,
    ensemble_to_dict,
    finetune_cae,
    predict,
    train_base_ensemble,
    train_mixed,
)
from .sim import EXPERT_ACCURACY, TriageParams, expert_resolved_share, monte_carlo_triage, triage_accuracy, triage_sweep

DECOMPOSE_METHODS = (
    "single_model",
    "prediction_variance",
    "total_variance",
    "entropy_mi",
    "total_variance_cae",
    "total_variance_experts",
)


def _r_max(text) -> float:
    value = float(text)
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError(f"r_max must lie in (0, 1], got {text}")
    return value


def _alpha(text) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in [0, 1], got {text}")
    return value


def _write_or_print(doc, out) -> None:
    if out:
        io.emit_json(doc, out)
    else:
        sys.stdout.write(io.dumps_json(doc))


def _outcome_arrays(tensor: PredictionTensor, labels_path, member):
    hard = io.load_hard_labels(labels_path)
    if member is None:
        predicted = tensor.predicted_class()
    else:
        if not 0 <= member < tensor.n_members:
            raise InvalidSpec(f"member {member} out of range", member=member, n_members=tensor.n_members)
        predicted = np.argmax(tensor.values[:, member, :], axis=1)
    truth = hard.aligned(tensor.units)
    groups = np.array([u.sample_id for u in tensor.units])
    return predicted, truth, groups


# -- subcommands ------------------------------------------------------------


def cmd_decompose(args) -> int:
    tensor = io.load_predictions(args.predictions)
    weight = None if args.alpha is None else WeightSpec(args.alpha)
    method = args.method
    if method == "total_variance_experts":
        if not args.votes:
            raise UsageError("total_variance_experts needs --votes (and --scale)", method=method)
        panel = io.load_votes(args.votes, args.scale)
        table = decompose_with_soft_labels(tensor, aggregate_votes(panel), weight)
    elif method == "total_variance_cae":
        if not args.aleatoric_predictions:
            raise UsageError("total_variance_cae needs --aleatoric-predictions", method=method)
        table = decompose_two_ensembles(tensor, io.load_predictions(args.aleatoric_predictions), weight)
    else:
        table = decompose_dataset(tensor, method, weight=weight, member=args.member)
    io.emit_uncertainty(table, args.out)
    return 0


def cmd_curve(args) -> int:
    table = io.load_uncertainty(args.uncertainty, args.method_tag)
    tensor = io.load_predictions(args.predictions)
    predicted, truth, groups = _outcome_arrays(tensor, args.labels, args.member)
    scores = table.aligned(tensor.units)
    kwargs = dict(metric=args.metric, mode=args.mode, grid=args.grid, r_max=args.r_max, pooled=args.pooled)
    if args.mode == "pixel_level":
        kwargs["groups"] = groups
    if args.metric == "dice":
        kwargs["n_classes"] = tensor.n_classes
    pair = curve_pair(scores, predicted, truth, **kwargs)
    area = aac(pair, args.r_max)
    roc = None
    correct = predicted == truth
    if args.mode == "sample_level" and args.metric == "accuracy" and 0 < correct.sum() < correct.size:
        roc = auroc_error_detection(scores, correct)
    io.emit_curve(pair, args.out_curve)
    summary = [io.summary_row(table.method_tag, area, roc, len(scores), args.r_max, pair.r.size)]
    if args.out_summary:
        io.emit_summary(summary, args.out_summary)
    else:
        sys.stdout.write(io.dumps_json(summary))
    return 0


def cmd_auroc(args) -> int:
    table = io.load_uncertainty(args.uncertainty, args.method_tag)
    tensor = io.load_predictions(args.predictions)
    predicted, truth, _ = _outcome_arrays(tensor, args.labels, args.member)
    roc = auroc_error_detection(table.aligned(tensor.units), predicted == truth)
    _write_or_print({"method_tag": table.method_tag, "auroc": roc, "n_units": int(truth.size)}, args.out)
    return 0


def cmd_kappa(args) -> int:
    panel = io.load_votes(args.votes, args.scale)
    hard = io.load_hard_labels(args.labels) if args.labels else None
    km = kappa_matrix(panel, hard, binarize=args.binarize)
    io.emit_matrix_csv(km.experts, km.matrix, args.out)
    return 0


def cmd_aggregate_votes(args) -> int:
    panel = io.load_votes(args.votes, args.scale)
    experts = None
    if args.experts:
        experts = [e.strip() for e in args.experts.split(",") if e.strip()]
    if args.best_k is not None:
        if not args.labels:
            raise UsageError("--best-k ranks experts by accuracy and needs --labels")
        reports = expert_accuracy(panel, io.load_hard_labels(args.labels))
        if experts is not None:
            reports = [r for r in reports if r.expert_id in experts]
        experts = select_best_experts(reports, args.best_k)
    io.emit_soft_labels(aggregate_votes(panel, experts), args.out)
    return 0


def cmd_expert_report(args) -> int:
    panel = io.load_votes(args.votes, args.scale)
    reports = expert_accuracy(panel, io.load_hard_labels(args.labels))
    io.write_table(args.out, ["expert_id", "accuracy", "n_scored"], [[r.expert_id, r.accuracy, r.n_scored] for r in reports])
    return 0


def cmd_train(args) -> int:
    units, x = io.load_features(args.features)
    spec = EnsembleSpec(
        n_members=args.members,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        l2=args.l2,
        subsample_fraction=args.subsample_fraction,
        seed=args.seed,
        hidden=args.hidden,
        resample_mixed=args.resample_mixed,
    )

    def soft_targets():
        if not args.soft_labels:
            raise UsageError(f"--kind {args.kind} needs --soft-labels")
        return io.load_soft_labels(args.soft_labels).aligned(units)

    if args.kind == "base":
        if not args.labels:
            raise UsageError("--kind base needs --labels")
        y = io.load_hard_labels(args.labels).aligned(units)
        ensemble = train_base_ensemble(x, y, spec, args.n_classes)
    elif args.kind == "cae":
        if not args.base_models:
            raise UsageError("--kind cae fine-tunes --base-models")
        base = ensemble_from_dict(io.load_json(args.base_models))
        ensemble = finetune_cae(base, x, soft_targets(), spec)
    else:
        if not args.labels:
            raise UsageError("--kind mixed needs --labels")
        y = io.load_hard_labels(args.labels).aligned(units)
        ensemble = train_mixed(x, y, soft_targets(), args.alpha, spec)
    io.emit_json(ensemble_to_dict(ensemble), args.out)
    if args.predict:
        if not args.predictions_out:
            raise UsageError("--predict needs --predictions-out")
        p_units, p_x = io.load_features(args.predict)
        io.emit_predictions(predict(ensemble, p_x, p_units), args.predictions_out)
    return 0


def cmd_experiment_synth(args) -> int:
    doc = {}
    for key in (
        "seed",
        "n_units",
        "feature_dim",
        "target_accuracy",
        "temperature",
        "train_fraction",
        "n_members",
        "epochs",
        "learning_rate",
        "l2",
        "hidden",
        "mixed_alpha",
        "grid",
        "r_max",
    ):
        value = getattr(args, key)
        if value is not None:
            doc[key] = value
    if args.noise_sd:
        doc["noise_sd"] = [float(s) for s in args.noise_sd.split(",")]
    if args.alpha_sweep:
        doc["alpha_sweep"] = list(alpha_grid(args.alpha_sweep))
    result = run_synth_experiment(SynthExperimentConfig.from_dict(doc))
    write_report(result, args.out)
    for row in result.ranking():
        sys.stdout.write(f"{row['rank']}\t{row['method_tag']}\t{row['aac']!r}\n")
    return 0


def cmd_triage(args) -> int:
    if args.uncertainty:
        if not (args.predictions and args.labels):
            raise UsageError("triage on scores needs --predictions and --labels")
        table = io.load_uncertainty(args.uncertainty, args.method_tag)
        tensor = io.load_predictions(args.predictions)
        predicted, truth, _ = _outcome_arrays(tensor, args.labels, args.member)
        sweep = triage_sweep(
            table.aligned(tensor.units),
            predicted == truth,
            a_exp=args.a_exp,
            n=args.n,
            grid=args.grid,
            r_max=args.r_max,
            constant_accuracy=args.constant_accuracy,
        )
        r, acc, m, mode = sweep.r, sweep.accuracy, sweep.retained_metric, sweep.mode
        source = table.method_tag
    elif args.a_cl is not None:
        grid = uniform_grid(100, args.r_max) if args.grid is None else parse_grid(args.grid, 1, args.r_max)
        r = grid
        acc = np.array([triage_accuracy(TriageParams(float(x), args.a_cl, args.a_exp, args.n)) for x in grid])
        m = np.full_like(r, args.a_cl)
        mode, source = "constant", None
    else:
        raise UsageError("triage needs either --uncertainty (with predictions and labels) or --a-cl")
    io.write_table(args.out, ["r", "accuracy", "classifier_accuracy"], zip(r.tolist(), acc.tolist(), m.tolist()))
    meta = {
        "a_exp": args.a_exp,
        "n": args.n,
        "mode": mode,
        "method_tag": source,
        "r_max": args.r_max,
        "expert_resolved_share": expert_resolved_share(args.a_exp, args.n),
    }
    meta_path = args.out_meta or str(Path(args.out).with_suffix(".meta.json"))
    io.emit_json(meta, meta_path)
    return 0


def cmd_simulate_mc(args) -> int:
    params = TriageParams(args.r, args.a_cl, args.a_exp, args.n)
    mean, se = monte_carlo_triage(params, args.trials, args.seed)
    closed = triage_accuracy(params)
    z = 0.0 if se == 0 else (mean - closed) / se
    doc = {
        "r": params.r,
        "a_cl": params.a_cl,
        "a_exp": params.a_exp,
        "n": params.n,
        "trials": args.trials,
        "seed": args.seed,
        "closed_form": closed,
        "mc_mean": mean,
        "mc_se": se,
        "z": z if math.isfinite(z) else None,
    }
    _write_or_print(doc, args.out)
    return 0


# -- parser -----------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Argument errors become :class:`UsageError` so they share the JSON error surface."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_eval_inputs(p, need_labels=True):
    p.add_argument("--uncertainty", required=True, help="uncertainty file")
    p.add_argument("--method-tag", help="method to read when the file holds several")
    p.add_argument("--predictions", required=True, help="predictions the scores belong to")
    p.add_argument("--labels", required=need_labels, help="hard labels file")
    p.add_argument("--member", type=int, help="use one member's argmax instead of the ensemble mean")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="expertue", description="Uncertainty decomposition with expert soft labels.")
    parser.add_argument("--config", help="JSON file with default values for the subcommand flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="per-unit EU/AU/TU from ensemble predictions")
    p.add_argument("--predictions", required=True)
    p.add_argument("--method", choices=DECOMPOSE_METHODS, default="total_variance")
    p.add_argument("--member", type=int)
    p.add_argument("--alpha", type=_alpha, help="weight of EU in TU = 2(alpha EU + (1 - alpha) AU)")
    p.add_argument("--aleatoric-predictions", help="second ensemble supplying AU (total_variance_cae)")
    p.add_argument("--votes", help="expert votes supplying AU (total_variance_experts)")
    p.add_argument("--scale", help="scale descriptor JSON for --votes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("curve", help="rejection curve, oracle curve and AAC")
    _add_eval_inputs(p)
    p.add_argument("--metric", choices=("accuracy", "dice"), default="accuracy")
    p.add_argument("--mode", choices=("sample_level", "pixel_level"), default="sample_level")
    p.add_argument("--grid", help="'steps', 'uniform:M' or a comma list of rates")
    p.add_argument("--r-max", type=_r_max, default=R_MAX)
    p.add_argument("--pooled", action="store_true", help="pixel level: pool counts over images")
    p.add_argument("--out-curve", required=True)
    p.add_argument("--out-summary")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("auroc", help="AUROC of uncertainty as a misclassification detector")
    _add_eval_inputs(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_auroc)

    p = sub.add_parser("kappa", help="pairwise Cohen's kappa between experts")
    p.add_argument("--votes", required=True)
    p.add_argument("--scale", required=True)
    p.add_argument("--labels", help="hard labels; fills the diagonal with expert accuracy")
    p.add_argument("--binarize", action="store_true", help="compare implied classes instead of raw votes")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_kappa)

    p = sub.add_parser("aggregate-votes", help="soft labels from expert votes")
    p.add_argument("--votes", required=True)
    p.add_argument("--scale", required=True)
    p.add_argument("--experts", help="comma-separated expert ids to use")
    p.add_argument("--best-k", type=int, help="keep the k most accurate experts (needs --labels)")
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_aggregate_votes)

    p = sub.add_parser("expert-report", help="per-expert accuracy against hard labels")
    p.add_argument("--votes", required=True)
    p.add_argument("--scale", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_expert_report)

    p = sub.add_parser("train", help="train a toy ensemble (base, CAE fine-tune or mixed loss)")
    p.add_argument("--features", required=True)
    p.add_argument("--kind", choices=("base", "cae", "mixed"), default="base")
    p.add_argument("--labels")
    p.add_argument("--soft-labels")
    p.add_argument("--base-models", help="models JSON to fine-tune (--kind cae)")
    p.add_argument("--alpha", type=_alpha, default=0.9, help="hard-label weight of the mixed loss")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--members", type=int, default=10)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--learning-rate", type=float, default=0.5)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--subsample-fraction", type=float, default=0.9)
    p.add_argument("--hidden", type=int, default=0)
    p.add_argument("--resample-mixed", action="store_true", help="redraw the hard/soft split every epoch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="models JSON")
    p.add_argument("--predict", help="features file to predict after training")
    p.add_argument("--predictions-out", help="where to write those predictions")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("experiment-synth", help="full synthetic benchmark into a report directory")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-units", type=int)
    p.add_argument("--feature-dim", type=int)
    p.add_argument("--target-accuracy", type=float)
    p.add_argument("--temperature", type=float, help="skip tuning and use this temperature")
    p.add_argument("--train-fraction", type=float)
    p.add_argument("--n-members", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--l2", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--mixed-alpha", type=_alpha)
    p.add_argument("--noise-sd", help="comma-separated logit noise per simulated expert")
    p.add_argument("--grid")
    p.add_argument("--r-max", type=_r_max)
    p.add_argument("--alpha-sweep", help="e.g. 0,0.1,...,1.0")
    p.set_defaults(func=cmd_experiment_synth)

    p = sub.add_parser("triage", help="accuracy when rejected units go to an expert")
    p.add_argument("--uncertainty")
    p.add_argument("--method-tag")
    p.add_argument("--predictions")
    p.add_argument("--labels")
    p.add_argument("--member", type=int)
    p.add_argument("--a-cl", type=float, help="constant classifier accuracy (no score files)")
    p.add_argument("--a-exp", type=float, default=EXPERT_ACCURACY)
    p.add_argument("--n", type=int, default=2, help="n - 1 expert passes over rejected units")
    p.add_argument("--grid")
    p.add_argument("--r-max", type=_r_max, default=R_MAX)
    p.add_argument("--constant-accuracy", action="store_true", help="hold classifier accuracy at M(0)")
    p.add_argument("--out", required=True)
    p.add_argument("--out-meta")
    p.set_defaults(func=cmd_triage)

    p = sub.add_parser("simulate-mc", help="Monte Carlo check of the triage formula")
    p.add_argument("--r", type=float, required=True)
    p.add_argument("--a-cl", type=float, required=True)
    p.add_argument("--a-exp", type=float, default=EXPERT_ACCURACY)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate_mc)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]):
    """Parse ``argv`` with defaults taken from the ``--config`` JSON file, if any."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return parser.parse_args(argv)
    doc = io.load_json(known.config)
    if not isinstance(doc, dict):
        raise InvalidSpec("config file must hold a JSON object", path=known.config)
    choices = parser._subparsers._group_actions[0].choices  # type: ignore[union-attr]
    command = next((a for a in argv if a in choices), None)
    if command is None:
        return parser.parse_args(argv)
    sub = choices[command]
    dests = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in dests or dest in ("help", "func"):
            raise InvalidSpec(f"unknown config key {key!r} for {command}", key=key)
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif value is not None and not isinstance(value, bool):
            value = str(value)  # string defaults go through the flag's type check
        defaults[dest] = value
    sub.set_defaults(**defaults)
    for action in sub._actions:
        if action.dest in defaults:
            action.required = False
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return int(args.func(args) or 0)
    except UsageError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), default=str) + "\n")
        return 2
    except ExpertUEError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), default=str) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
