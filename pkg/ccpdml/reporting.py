"""
reporting.py — Run artifacts written by ccpdml

Three files describe a run:

``trace.csv``
    One row per validation evaluation (``event = eval``) and one per finished
    projection (``event = projection``), with the columns of
    :data:`TRACE_COLUMNS` in that order. Empty cells are missing values.

``summary.json``
    Mode, seed, dataset description, best validation and final test metrics,
    number of projections and steps, wall time and the configuration echo.

``embeddings.csv``
    Final embeddings ``e0, e1, ...`` with their ``label`` and ``split``.

All files are written to a temporary name and renamed into place.
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np
import pandas as pd

from ._internal import _atomic_write_text

log = logging.getLogger(__name__)

TRACE_FILE = "trace.csv"
SUMMARY_FILE = "summary.json"
EMBEDDINGS_FILE = "embeddings.csv"

COMPARED_METRICS = ("p_at_1", "p_at_r", "map_at_r")


@dataclass
class TraceRecord:
    event: str
    step: int
    projection: int
    train_loss: float = math.nan
    val_p_at_1: float = math.nan
    val_p_at_r: float = math.nan
    val_map_at_r: float = math.nan
    violation_rate: float = math.nan
    induced_epsilon: float = math.nan
    avg_covering_radius: float = math.nan
    min_proxy_distance: float = math.nan

    @classmethod
    def from_report(cls, event, step, projection, report, train_loss=math.nan):
        def value(x):
            return math.nan if x is None else float(x)

        return cls(event, int(step), int(projection), value(train_loss),
                   report.p_at_1, report.p_at_r, report.map_at_r,
                   value(report.violation_rate), value(report.induced_epsilon),
                   value(report.avg_covering_radius), value(report.min_proxy_distance))


TRACE_COLUMNS = [f.name for f in fields(TraceRecord)]


def _to_csv(frame, path):
    _atomic_write_text(path, frame.to_csv(index=False, na_rep="", lineterminator="\n"))


def write_trace(records, path):
    frame = pd.DataFrame([asdict(r) for r in records], columns=TRACE_COLUMNS)
    _to_csv(frame, path)
    log.info("trace with %d rows written to %s", len(frame), path)


def read_trace(path):
    """Parse ``trace.csv`` back into :class:`TraceRecord` objects."""
    frame = pd.read_csv(path)
    if list(frame.columns) != TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected trace header {list(frame.columns)}.")
    records = []
    for row in frame.itertuples(index=False):
        values = row._asdict()
        values["step"] = int(values["step"])
        values["projection"] = int(values["projection"])
        records.append(TraceRecord(**{k: (float(v) if k not in ("event", "step", "projection") else v)
                                      for k, v in values.items()}))
    return records


# ================================================================
# Summary
# ================================================================

def _json_ready(value):
    if isinstance(value, dict):
        return {k: _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return None if not math.isfinite(value) else value
    return value


def write_summary(summary, path):
    _atomic_write_text(path, json.dumps(_json_ready(summary), indent=2) + "\n")
    log.info("summary written to %s", path)


def read_summary(path):
    """Load ``summary.json`` from a file path or a run directory."""
    path = os.fspath(path)
    if os.path.isdir(path):
        path = os.path.join(path, SUMMARY_FILE)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def compare_summaries(a, b):
    """
    Metric deltas between two run summaries.

    Returns
    -------
    dict
        ``metrics`` maps ``"<section>.<metric>"`` to ``a``, ``b``,
        ``delta`` (b - a) and ``winner`` (``"a"``, ``"b"`` or ``"tie"``);
        ``dataset_mismatch`` is set when the runs used different data.
    """
    metrics = {}
    for section in ("best_val", "test"):
        left, right = a.get(section) or {}, b.get(section) or {}
        for name in COMPARED_METRICS:
            if left.get(name) is None or right.get(name) is None:
                continue
            delta = right[name] - left[name]
            winner = "tie" if delta == 0 else ("b" if delta > 0 else "a")
            metrics[f"{section}.{name}"] = {"a": left[name], "b": right[name], "delta": delta, "winner": winner}

    def data_keys(summary):
        config = summary.get("config") or {}
        return {k: v for k, v in config.items() if k.startswith("data.")}, summary.get("dataset")

    mismatch = data_keys(a) != data_keys(b)
    if mismatch:
        log.warning("the compared runs used different datasets")
    return {"metrics": metrics, "dataset_mismatch": mismatch}


# ================================================================
# Embeddings
# ================================================================

def write_embeddings(embeddings, labels, path, split=None):
    embeddings = np.asarray(embeddings, dtype=float)
    frame = pd.DataFrame(embeddings, columns=[f"e{j}" for j in range(embeddings.shape[1])])
    frame["label"] = np.asarray(labels, dtype=np.int64)
    if split is not None:
        frame["split"] = list(split)
    _to_csv(frame, path)
    log.info("%d embeddings written to %s", len(frame), path)


def read_embeddings(path):
    """Embeddings and labels of an ``embeddings.csv`` dump."""
    frame = pd.read_csv(path)
    columns = [c for c in frame.columns if c.startswith("e") and c[1:].isdigit()]
    if not columns or "label" not in frame.columns:
        raise ValueError(f"{path}: expected columns e0, e1, ... and label.")
    columns.sort(key=lambda c: int(c[1:]))
    return frame[columns].to_numpy(dtype=float), frame["label"].to_numpy()
