"""File formats: delimited tables and JSON documents.

Every table has a fixed header per kind. CSV is the default; a path ending
in ``.ndjson`` or ``.jsonl`` is read and written as one JSON object per line
with the same keys. Floats are written with ``repr`` so they round-trip
exactly, and every writer goes through a temporary file in the target
directory followed by ``os.replace`` so readers never see partial output.
"""

from __future__ import annotations

import csv
import io as _stdio
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .core import (
    HardLabelSet,
    PredictionTensor,
    SoftLabelSet,
    UncertaintyTable,
    UnitRef,
    validate_predictions,
)
from .errors import (
    DuplicateUnit,
    InvalidSpec,
    IoFailure,
    MissingScaleDescriptor,
    RaggedEnsemble,
    ShapeMismatch,
    UnknownHeader,
)
from .evaluation import CurvePair, RejectionCurve
from .labels import VotePanel, VoteScale, scale_from_dict

UNIT_COLUMNS = ("sample_id", "element_id")
NDJSON_SUFFIXES = (".ndjson", ".jsonl")


def is_ndjson(path) -> bool:
    return Path(path).suffix.lower() in NDJSON_SUFFIXES


def format_number(x) -> str:
    """Shortest text that parses back to the same float (or int)."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _parse_float(text: str, column: str, line: int) -> float:
    try:
        return float(text)
    except (TypeError, ValueError):
        raise InvalidSpec(f"line {line}: column {column!r} holds {text!r}, not a number", column=column, line=line) from None


def _parse_int(text: str, column: str, line: int) -> int:
    value = _parse_float(text, column, line)
    if not math.isfinite(value) or value != int(value):
        raise InvalidSpec(f"line {line}: column {column!r} holds {text!r}, not an integer", column=column, line=line)
    return int(value)


# -- raw table access -------------------------------------------------------


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary sibling and rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}", path=str(path)) from None


def write_table(path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Write rows under ``header`` as CSV or NDJSON (chosen by suffix)."""
    header = list(header)
    if is_ndjson(path):
        lines = []
        for row in rows:
            obj = {}
            for key, value in zip(header, row):
                if isinstance(value, (float, np.floating)):
                    value = float(value)
                elif isinstance(value, np.integer):
                    value = int(value)
                obj[key] = value
            lines.append(json.dumps(obj, allow_nan=False))
        atomic_write_text(path, "".join(line + "\n" for line in lines))
        return
    buf = _stdio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else format_number(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Header and rows of a table; every cell comes back as text."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}", path=str(path)) from None
    if is_ndjson(path):
        header: list[str] | None = None
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                raise InvalidSpec(f"{path}: line {lineno} is not JSON", path=str(path), line=lineno) from None
            if header is None:
                header = list(obj)
            elif list(obj) != header:
                extra = [k for k in obj if k not in header]
                raise UnknownHeader(
                    f"{path}: line {lineno} has keys {list(obj)} instead of {header}",
                    column=extra[0] if extra else None,
                    path=str(path),
                )
            rows.append(["" if obj[k] is None else (obj[k] if isinstance(obj[k], str) else format_number(obj[k])) for k in header])
        return header or [], rows
    reader = csv.reader(_stdio.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise InvalidSpec(f"{path} is empty", path=str(path)) from None
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ShapeMismatch(
                f"{path}: line {lineno} has {len(row)} fields, header has {len(header)}",
                path=str(path),
                line=lineno,
            )
        rows.append(row)
    return header, rows


def check_header(header: Sequence[str], expected: Sequence[str], path) -> None:
    header = list(header)
    for got, want in zip(header, expected):
        if got != want:
            raise UnknownHeader(f"{path}: unexpected column {got!r} (expected {want!r})", column=got, path=str(path))
    if len(header) > len(expected):
        col = header[len(expected)]
        raise UnknownHeader(f"{path}: unexpected column {col!r}", column=col, path=str(path))
    if len(header) < len(expected):
        raise UnknownHeader(
            f"{path}: missing column {expected[len(header)]!r}", column=expected[len(header)], path=str(path)
        )


def _indexed_columns(header: Sequence[str], start: int, prefix: str, path, allow_single: str | None = None) -> int:
    """Count ``prefix0, prefix1, ...`` columns after ``start``; validates names."""
    tail = list(header[start:])
    if allow_single is not None and tail == [allow_single]:
        return 0
    if not tail:
        raise UnknownHeader(f"{path}: no {prefix}* columns", column=None, path=str(path))
    check_header(tail, [f"{prefix}{j}" for j in range(len(tail))], path)
    return len(tail)


def _unit(row: Sequence[str], line: int) -> UnitRef:
    return UnitRef(row[0], _parse_int(row[1], "element_id", line))


def _unit_cells(u: UnitRef) -> list:
    return [u.sample_id, int(u.element_id)]


# -- predictions ------------------------------------------------------------


def load_predictions(path) -> PredictionTensor:
    """Read ``sample_id,element_id,model_id,p_0..p_{C-1}`` (or a single ``p``).

    Units keep first-appearance order and members are ordered by first
    appearance of their ``model_id``.
    """
    header, rows = read_table(path)
    check_header(header[:3], ("sample_id", "element_id", "model_id"), path)
    n_prob = _indexed_columns(header, 3, "p_", path, allow_single="p")
    units: dict[UnitRef, dict[str, list[float]]] = {}
    models: dict[str, None] = {}
    for lineno, row in enumerate(rows, start=2):
        unit = _unit(row, lineno)
        model = row[2]
        models.setdefault(model)
        probs = [_parse_float(v, header[3 + j], lineno) for j, v in enumerate(row[3:])]
        per_unit = units.setdefault(unit, {})
        if model in per_unit:
            raise DuplicateUnit(f"{path}: unit {tuple(unit)} has two rows for model {model!r}", unit=list(unit), model_id=model)
        per_unit[model] = probs
    if not units:
        raise ShapeMismatch(f"{path} holds no prediction rows", path=str(path))
    order = list(models)
    for unit, per_unit in units.items():
        if len(per_unit) != len(order):
            missing = [m for m in order if m not in per_unit]
            raise RaggedEnsemble(
                f"unit {tuple(unit)} lacks rows for models {missing}", unit=list(unit), missing=missing
            )
    raw = np.array([[per_unit[m] for m in order] for per_unit in units.values()], dtype=np.float64)
    n_classes = 2 if n_prob == 0 else n_prob
    return validate_predictions(raw, n_classes, len(order), list(units))


def emit_predictions(tensor: PredictionTensor, path, model_ids: Sequence[str] | None = None, shorthand: bool = False) -> None:
    """Write a tensor in the predictions schema; ``shorthand`` writes binary ``p``."""
    k, c = tensor.n_members, tensor.n_classes
    ids = [str(i) for i in range(k)] if model_ids is None else [str(m) for m in model_ids]
    if len(ids) != k:
        raise ShapeMismatch(f"{len(ids)} model ids for {k} members")
    if shorthand and c != 2:
        raise ShapeMismatch("binary shorthand needs exactly two classes", n_classes=c)
    cols = ["p"] if shorthand else [f"p_{j}" for j in range(c)]
    rows = []
    for unit, block in zip(tensor.units, tensor.values):
        for model, p in zip(ids, block):
            rows.append(_unit_cells(unit) + [model] + ([p[1]] if shorthand else list(p)))
    write_table(path, ["sample_id", "element_id", "model_id", *cols], rows)


# -- labels and features ----------------------------------------------------


def load_hard_labels(path) -> HardLabelSet:
    header, rows = read_table(path)
    check_header(header, ("sample_id", "element_id", "label"), path)
    units, labels = [], []
    for lineno, row in enumerate(rows, start=2):
        units.append(_unit(row, lineno))
        labels.append(_parse_int(row[2], "label", lineno))
    return HardLabelSet(tuple(units), np.array(labels, dtype=np.int64))


def emit_hard_labels(hard: HardLabelSet, path) -> None:
    write_table(
        path, ["sample_id", "element_id", "label"], [_unit_cells(u) + [int(y)] for u, y in zip(hard.units, hard.labels)]
    )


def _load_matrix(path, prefix: str) -> tuple[list[UnitRef], np.ndarray]:
    header, rows = read_table(path)
    check_header(header[:2], UNIT_COLUMNS, path)
    n_cols = _indexed_columns(header, 2, prefix, path)
    units, values = [], []
    for lineno, row in enumerate(rows, start=2):
        units.append(_unit(row, lineno))
        values.append([_parse_float(v, header[2 + j], lineno) for j, v in enumerate(row[2:])])
    return units, np.array(values, dtype=np.float64).reshape(len(rows), n_cols)


def _emit_matrix(units, values, path, prefix: str) -> None:
    values = np.asarray(values)
    header = [*UNIT_COLUMNS, *[f"{prefix}{j}" for j in range(values.shape[1])]]
    write_table(path, header, [_unit_cells(u) + list(v) for u, v in zip(units, values)])


def load_soft_labels(path) -> SoftLabelSet:
    units, probs = _load_matrix(path, "p_")
    return SoftLabelSet(tuple(units), probs)


def emit_soft_labels(soft: SoftLabelSet, path) -> None:
    _emit_matrix(soft.units, soft.probs, path, "p_")


def load_features(path) -> tuple[tuple[UnitRef, ...], np.ndarray]:
    units, x = _load_matrix(path, "x_")
    if len(set(units)) != len(units):
        raise DuplicateUnit(f"{path}: duplicate unit rows")
    return tuple(units), x


def emit_features(units, features, path) -> None:
    _emit_matrix(units, features, path, "x_")


# -- votes ------------------------------------------------------------------


def load_scale(path) -> VoteScale:
    """Scale descriptor JSON, e.g. ``{"kind": "rating", "min": 0, "max": 4}``."""
    if path is None:
        raise MissingScaleDescriptor("a vote file needs a scale descriptor")
    path = Path(path)
    if not path.is_file():
        raise MissingScaleDescriptor(f"scale descriptor {path} not found", path=str(path))
    return scale_from_dict(load_json(path))


def emit_scale(scale: VoteScale, path) -> None:
    emit_json(scale.to_dict(), path)


def load_votes(path, scale: VoteScale | str | os.PathLike | None) -> VotePanel:
    """Read ``sample_id,element_id,expert_id,vote``; an empty vote abstains."""
    if scale is None or isinstance(scale, (str, os.PathLike)):
        scale = load_scale(scale)
    header, rows = read_table(path)
    check_header(header, ("sample_id", "element_id", "expert_id", "vote"), path)
    votes: dict[tuple[UnitRef, str], Any] = {}
    units: dict[UnitRef, None] = {}
    experts: dict[str, None] = {}
    for lineno, row in enumerate(rows, start=2):
        unit = _unit(row, lineno)
        expert = row[2]
        if (unit, expert) in votes:
            raise DuplicateUnit(
                f"{path}: expert {expert!r} voted twice on unit {tuple(unit)}", unit=list(unit), expert_id=expert
            )
        try:
            votes[(unit, expert)] = scale.parse(row[3])
        except Exception as exc:
            if hasattr(exc, "context"):
                exc.context.setdefault("line", lineno)
            raise
        units.setdefault(unit)
        experts.setdefault(expert)
    return VotePanel.from_mapping(scale, votes, list(units), list(experts))


def emit_votes(panel: VotePanel, path) -> None:
    rows = []
    for unit, row in zip(panel.units, panel.votes):
        for expert, vote in zip(panel.experts, row):
            rows.append(_unit_cells(unit) + [expert, panel.scale.format(vote)])
    write_table(path, ["sample_id", "element_id", "expert_id", "vote"], rows)


# -- uncertainty ------------------------------------------------------------

UNCERTAINTY_HEADER = ("sample_id", "element_id", "method_tag", "eu", "au", "tu")


def emit_uncertainty(table: UncertaintyTable, path) -> None:
    """One row per unit; ``eu``/``au`` are empty for scores without a split."""
    rows = []
    for u, tu, eu, au in zip(table.units, table.tu, table.eu, table.au):
        rows.append(
            _unit_cells(u) + [table.method_tag, None if np.isnan(eu) else eu, None if np.isnan(au) else au, tu]
        )
    write_table(path, UNCERTAINTY_HEADER, rows)


def load_uncertainty(path, method_tag: str | None = None) -> UncertaintyTable:
    """Read an uncertainty file; a file with several tags needs ``method_tag``."""
    header, rows = read_table(path)
    check_header(header, UNCERTAINTY_HEADER, path)
    tags = list(dict.fromkeys(row[2] for row in rows))
    if method_tag is None:
        if len(tags) > 1:
            raise InvalidSpec(f"{path} holds several methods {tags}; choose one", methods=tags)
        method_tag = tags[0] if tags else ""
    elif method_tag not in tags:
        raise InvalidSpec(f"{path} has no rows for method {method_tag!r}", method=method_tag, methods=tags)
    units, eu, au, tu = [], [], [], []
    for lineno, row in enumerate(rows, start=2):
        if row[2] != method_tag:
            continue
        units.append(_unit(row, lineno))
        eu.append(math.nan if row[3] == "" else _parse_float(row[3], "eu", lineno))
        au.append(math.nan if row[4] == "" else _parse_float(row[4], "au", lineno))
        tu.append(_parse_float(row[5], "tu", lineno))
    return UncertaintyTable(tuple(units), np.array(tu), np.array(eu), np.array(au), method_tag)


# -- curves and summaries ---------------------------------------------------


def emit_curve(pair: CurvePair, path) -> None:
    rows = list(zip(pair.r.tolist(), pair.method.m.tolist(), pair.oracle.m.tolist()))
    write_table(path, ["r", "method", "oracle"], rows)


def load_curve(path, mode: str = "sample_level", metric_name: str = "accuracy") -> CurvePair:
    header, rows = read_table(path)
    check_header(header, ("r", "method", "oracle"), path)
    data = np.array(
        [[_parse_float(v, header[j], lineno) for j, v in enumerate(row)] for lineno, row in enumerate(rows, start=2)],
        dtype=np.float64,
    ).reshape(len(rows), 3)
    return CurvePair(
        RejectionCurve(data[:, 0], data[:, 1], mode, metric_name),
        RejectionCurve(data[:, 0], data[:, 2], mode, metric_name),
    )


SUMMARY_FIELDS = ("method_tag", "aac", "auroc", "n_units", "r_max", "grid_size")


def summary_row(method_tag: str, aac: float, auroc: float | None, n_units: int, r_max: float, grid_size: int) -> dict:
    return {
        "method_tag": str(method_tag),
        "aac": float(aac),
        "auroc": None if auroc is None else float(auroc),
        "n_units": int(n_units),
        "r_max": float(r_max),
        "grid_size": int(grid_size),
    }


def emit_summary(rows: Sequence[Mapping[str, Any]], path) -> None:
    out = []
    for row in rows:
        missing = [k for k in SUMMARY_FIELDS if k not in row and k != "auroc"]
        if missing:
            raise InvalidSpec(f"summary row lacks {missing}", missing=missing)
        out.append(summary_row(**{k: row.get(k) for k in SUMMARY_FIELDS}))
    emit_json(out, path)


def load_summary(path) -> list[dict[str, Any]]:
    doc = load_json(path)
    if not isinstance(doc, list):
        raise InvalidSpec(f"{path}: summary must be a JSON array", path=str(path))
    for row in doc:
        unknown = [k for k in row if k not in SUMMARY_FIELDS]
        if unknown:
            raise UnknownHeader(f"{path}: unexpected summary field {unknown[0]!r}", column=unknown[0], path=str(path))
    return doc


# -- JSON -------------------------------------------------------------------


def dumps_json(doc: Any) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def emit_json(doc: Any, path) -> None:
    atomic_write_text(path, dumps_json(doc))


def load_json(path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}", path=str(path)) from None
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{path} is not valid JSON: {exc.msg}", path=str(path)) from None


def emit_matrix_csv(labels: Sequence[str], matrix, path, corner: str = "expert_id") -> None:
    """Square labelled matrix (kappa, for instance); NaN cells are left empty."""
    matrix = np.asarray(matrix, dtype=np.float64)
    rows = []
    for label, row in zip(labels, matrix):
        rows.append([str(label)] + [None if np.isnan(v) else float(v) for v in row])
    write_table(path, [corner, *[str(x) for x in labels]], rows)


def load_matrix_csv(path) -> tuple[list[str], np.ndarray]:
    header, rows = read_table(path)
    labels = header[1:]
    m = np.array([[math.nan if v == "" else float(v) for v in row[1:]] for row in rows], dtype=np.float64)
    return labels, m.reshape(len(rows), len(labels))
