"""Train and score the full model and its two single-stage ablations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset, SplitSpec, split, standardize
from .exceptions import UsageError
from .metrics import ConfusionCounts, MetricsReport, evaluate
from .model import ModelConfig
from .training import TrainConfig, fit

logger = logging.getLogger(__name__)

# Row order of the published ablation table: CNN only, transformer only, both.
ABLATION_ORDER = ("without_transformer", "without_cnn", "full")


def _mean(values):
    if not values or any(v is None for v in values):
        return None
    return float(np.mean(values))


@dataclass
class AblationRow:
    variant: str
    config_fingerprint: str
    threshold: float = 0.5
    reports: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (seed, message)

    @property
    def seeds(self) -> list:
        return [r.seeds[0] for r in self.reports]

    @property
    def accuracy(self):
        return _mean([r.accuracy for r in self.reports])

    @property
    def precision(self):
        return _mean([r.precision for r in self.reports])

    @property
    def recall(self):
        return _mean([r.recall for r in self.reports])

    @property
    def counts(self) -> ConfusionCounts:
        total = ConfusionCounts()
        for r in self.reports:
            total = total + r.counts
        return total

    def to_dict(self) -> dict:
        d = {
            "model": self.variant,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "counts": self.counts.to_dict(),
            "config_fingerprint": self.config_fingerprint,
            "seeds": self.seeds,
            "threshold": self.threshold,
            "per_seed": [r.to_dict() for r in self.reports],
        }
        if self.failures:
            d["failed"] = True
            d["error"] = "; ".join(f"seed {s}: {msg}" for s, msg in self.failures)
        return d


@dataclass
class AblationTable:
    rows: list

    @property
    def failed(self) -> bool:
        return any(r.failures for r in self.rows)

    def row(self, variant: str) -> AblationRow:
        for r in self.rows:
            if r.variant == variant:
                return r
        raise KeyError(variant)


def prepare_splits(dataset: Dataset, split_spec: SplitSpec):
    train, val, test = split(dataset, split_spec)
    train = standardize(train)
    stats = train.standardization
    return train, standardize(val, stats), standardize(test, stats)


def run_ablation(base_config: ModelConfig, train_config: TrainConfig, dataset: Dataset,
                 seeds, split_spec: SplitSpec | None = None, threshold: float = 0.5,
                 keep_going: bool = False, progress=None) -> AblationTable:
    """Fit every variant once per seed on one shared split; score on the test part.

    ``dataset`` is raw; it is split once and standardized with training
    statistics. Each seed sets both the initialization and the batch-order
    seed. With ``keep_going`` a failing run is recorded on its row instead
    of aborting the whole table.
    """
    seeds = list(seeds)
    if not seeds:
        raise UsageError("run_ablation needs at least one seed")
    train, val, test = prepare_splits(dataset, split_spec or SplitSpec())
    emit = progress or logger.info
    rows = []
    for variant in ABLATION_ORDER:
        cfg = base_config.with_variant(variant)
        rows.append(AblationRow(variant, cfg.fingerprint(), threshold))
    for seed in seeds:
        for row in rows:
            mcfg = replace(base_config, variant=row.variant, seed=seed)
            tcfg = replace(train_config, seed=seed)
            try:
                state = fit(tcfg, mcfg, train, val, progress=lambda _line: None)
            except Exception as exc:
                if not keep_going:
                    raise
                row.failures.append((seed, f"{type(exc).__name__}: {exc}"))
                emit(f"{row.variant} seed {seed}: FAILED ({exc})")
                continue
            report = evaluate(state.to_model(), test, threshold, variant=row.variant,
                              seeds=(seed,))
            row.reports.append(report)
            emit(f"{row.variant} seed {seed}: acc {report.accuracy:.4f} "
                 f"(best epoch {state.best_epoch})")
    return AblationTable(rows)
