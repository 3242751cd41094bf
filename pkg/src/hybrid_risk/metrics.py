"""Confusion counts, ACC / precision / recall, and report files.

Report JSON (``schema`` = ``hybrid-risk-report``, ``version`` = 1)::

    {
      "schema": "hybrid-risk-report",
      "version": 1,
      "rows": [
        {
          "model": "full",                 # variant label
          "accuracy": 0.85, "precision": 0.84, "recall": 0.86,   # null = undefined (0/0)
          "counts": {"tp": .., "fp": .., "tn": .., "fn": ..},    # summed over seeds
          "config_fingerprint": "3f2a9c...",
          "seeds": [0, 1, 2],
          "threshold": 0.5,
          "per_seed": [ {same keys as a row, single seed}, ... ],   # ablation rows only
          "failed": false,                 # optional; true when a run raised
          "error": "..."                   # optional; message of the failure
        }
      ]
    }

The text rendering is a Model / ACC / Precision / Recall table with
undefined values printed as ``n/a``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import UsageError

SCHEMA = "hybrid-risk-report"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise UsageError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}

    @classmethod
    def from_predictions(cls, predicted, actual) -> "ConfusionCounts":
        predicted = np.asarray(predicted).astype(bool)
        actual = np.asarray(actual).astype(bool)
        if predicted.shape != actual.shape:
            raise UsageError("prediction and label arrays differ in shape")
        return cls(
            tp=int(np.sum(predicted & actual)),
            fp=int(np.sum(predicted & ~actual)),
            tn=int(np.sum(~predicted & ~actual)),
            fn=int(np.sum(~predicted & actual)),
        )


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass
class MetricsReport:
    """ACC / precision / recall; ``None`` marks a metric whose denominator is zero."""

    counts: ConfusionCounts
    variant: str = ""
    config_fingerprint: str = ""
    seeds: tuple = ()
    threshold: float = 0.5
    accuracy: float | None = field(init=False)
    precision: float | None = field(init=False)
    recall: float | None = field(init=False)

    def __post_init__(self):
        c = self.counts
        self.accuracy = _ratio(c.tp + c.tn, c.total)
        self.precision = _ratio(c.tp, c.tp + c.fp)
        self.recall = _ratio(c.tp, c.tp + c.fn)

    def to_dict(self) -> dict:
        return {
            "model": self.variant,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "counts": self.counts.to_dict(),
            "config_fingerprint": self.config_fingerprint,
            "seeds": list(self.seeds),
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(ConfusionCounts(**d["counts"]), d.get("model", ""),
                   d.get("config_fingerprint", ""), tuple(d.get("seeds", ())),
                   d.get("threshold", 0.5))


def evaluate(model, dataset, threshold: float = 0.5, variant: str | None = None,
             seeds: tuple = ()) -> MetricsReport:
    """Threshold ``model.predict_proba`` on an already-standardized dataset."""
    probs = model.predict_proba(dataset.X)
    counts = ConfusionCounts.from_predictions(probs >= threshold, dataset.y == 1)
    config = getattr(model, "config", None)
    return MetricsReport(
        counts,
        variant=variant if variant is not None else getattr(config, "variant", ""),
        config_fingerprint=config.fingerprint() if config is not None else "",
        seeds=tuple(seeds),
        threshold=threshold,
    )


# ---------------------------------------------------------------- files

def _fmt(value) -> str:
    return "n/a" if value is None else f"{value:.4f}"


def format_table(rows: list[dict]) -> str:
    width = max([len("Model")] + [len(r["model"]) for r in rows]) + 2
    lines = [f"{'Model':<{width}}{'ACC':>8}{'Precision':>11}{'Recall':>9}"]
    for r in rows:
        line = (f"{r['model']:<{width}}{_fmt(r['accuracy']):>8}"
                f"{_fmt(r['precision']):>11}{_fmt(r['recall']):>9}")
        if r.get("failed"):
            line += "  FAILED"
        lines.append(line)
    return "\n".join(lines) + "\n"


def _rows(reports) -> list[dict]:
    rows = []
    for r in reports:
        rows.append(r.to_dict() if hasattr(r, "to_dict") else dict(r))
    return rows


def emit_report(reports, path) -> str:
    """Write ``<path>`` (JSON) and ``<path>`` with a ``.txt`` suffix; return the table text."""
    rows = _rows(reports)
    if not rows:
        raise UsageError("no reports to emit")
    path = Path(path)
    doc = {"schema": SCHEMA, "version": SCHEMA_VERSION, "rows": rows}
    text = format_table(rows)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    path.with_suffix(".txt").write_text(text, encoding="utf-8")
    return text


def read_report(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema") != SCHEMA:
        raise UsageError(f"{path} is not a {SCHEMA} document")
    if doc.get("version") != SCHEMA_VERSION:
        raise UsageError(f"unsupported report version {doc.get('version')}")
    return doc
