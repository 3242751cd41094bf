import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybrid_risk.ablation import ABLATION_ORDER, AblationRow, run_ablation
from hybrid_risk.data import Dataset, SplitSpec, gen_synthetic
from hybrid_risk.exceptions import UsageError
from hybrid_risk.metrics import (ConfusionCounts, MetricsReport, emit_report, evaluate,
                                 format_table, read_report)
from hybrid_risk.model import ModelConfig
from hybrid_risk.training import TrainConfig


class FixedModel:
    """Stand-in returning preset probabilities."""

    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=float)

    def predict_proba(self, X):
        return self.probs[: len(X)]


def dataset(labels):
    labels = np.asarray(labels)
    return Dataset(np.zeros((len(labels), 1, 1)), labels, ("a",))


def counts_to_pairs(tp, fp, tn, fn):
    pred = [1] * tp + [1] * fp + [0] * tn + [0] * fn
    true = [1] * tp + [0] * fp + [0] * tn + [1] * fn
    return np.array(pred), np.array(true)


class TestReport:
    def test_hand_example(self):
        r = MetricsReport(ConfusionCounts(tp=3, fp=1, tn=4, fn=2))
        assert (r.accuracy, r.precision, r.recall) == (0.7, 0.75, 0.6)

    def test_perfect(self):
        y = np.array([0, 1, 0, 1])
        r = evaluate(FixedModel(y * 0.9 + 0.05), dataset(y))
        assert (r.accuracy, r.precision, r.recall) == (1.0, 1.0, 1.0)

    def test_never_positive(self):
        r = evaluate(FixedModel([0.1] * 4), dataset([0, 1, 0, 1]))
        assert r.precision is None and r.recall == 0.0
        assert r.to_dict()["precision"] is None

    def test_threshold_inclusive(self):
        r = evaluate(FixedModel([0.5, 0.4999]), dataset([1, 1]))
        assert r.counts == ConfusionCounts(tp=1, fn=1)

    def test_empty_everything_undefined(self):
        r = MetricsReport(ConfusionCounts())
        assert (r.accuracy, r.precision, r.recall) == (None, None, None)

    def test_negative_counts(self):
        with pytest.raises(UsageError):
            ConfusionCounts(tp=-1)

    @given(st.integers(0, 30), st.integers(0, 30), st.integers(0, 30), st.integers(0, 30))
    def test_matches_pairwise_recount(self, tp, fp, tn, fn):
        pred, true = counts_to_pairs(tp, fp, tn, fn)
        c = ConfusionCounts.from_predictions(pred, true)
        assert c == ConfusionCounts(tp, fp, tn, fn)

    def test_pure(self):
        rng = np.random.default_rng(0)
        model, ds = FixedModel(rng.random(50)), dataset(rng.integers(0, 2, 50))
        assert evaluate(model, ds).to_dict() == evaluate(model, ds).to_dict()

    def test_recall_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        model, ds = FixedModel(rng.random(200)), dataset(rng.integers(0, 2, 200))
        recalls = [evaluate(model, ds, t).recall for t in np.linspace(0, 1, 101)]
        assert all(a >= b for a, b in zip(recalls, recalls[1:]))

    def test_dict_round_trip(self):
        r = MetricsReport(ConfusionCounts(1, 2, 3, 4), "full", "abc", (1, 2), 0.3)
        back = MetricsReport.from_dict(r.to_dict())
        assert back.to_dict() == r.to_dict()


class TestFiles:
    def test_json_and_text(self, tmp_path):
        r = MetricsReport(ConfusionCounts(tp=0, fp=0, tn=3, fn=2), "full")
        text = emit_report([r], tmp_path / "report.json")
        doc = read_report(tmp_path / "report.json")
        assert doc["rows"][0]["precision"] is None
        assert '"precision": null' in (tmp_path / "report.json").read_text()
        assert (tmp_path / "report.txt").read_text() == text
        assert "n/a" in text.splitlines()[1]

    def test_column_order(self):
        header = format_table([MetricsReport(ConfusionCounts(1, 1, 1, 1), "x").to_dict()])
        cols = header.splitlines()[0].split()
        assert cols == ["Model", "ACC", "Precision", "Recall"]

    def test_failed_marker(self):
        text = format_table([{"model": "full", "accuracy": None, "precision": None,
                              "recall": None, "failed": True}])
        assert text.splitlines()[1].endswith("FAILED")

    def test_empty_refused(self, tmp_path):
        with pytest.raises(UsageError):
            emit_report([], tmp_path / "r.json")

    def test_foreign_document(self, tmp_path):
        (tmp_path / "x.json").write_text(json.dumps({"schema": "other"}))
        with pytest.raises(UsageError):
            read_report(tmp_path / "x.json")


class TestAblationRow:
    def test_mean_undefined_if_any_seed_undefined(self):
        row = AblationRow("full", "fp", reports=[
            MetricsReport(ConfusionCounts(tp=1, tn=1), seeds=(0,)),
            MetricsReport(ConfusionCounts(tn=2), seeds=(1,)),
        ])
        assert row.accuracy == 1.0
        assert row.precision is None
        assert row.counts == ConfusionCounts(tp=1, tn=3)
        assert row.seeds == [0, 1]

    def test_mean(self):
        row = AblationRow("full", "fp", reports=[
            MetricsReport(ConfusionCounts(tp=1, fp=1), seeds=(0,)),
            MetricsReport(ConfusionCounts(tp=1), seeds=(1,)),
        ])
        assert row.precision == 0.75


TINY_ABLATE = ModelConfig(seq_len=6, n_features=3, conv_layers=((4, 3, 1),), d_model=4,
                          n_heads=2, d_k=2, d_v=2, ffn_dim=8)


@pytest.fixture(scope="module")
def table():
    ds = gen_synthetic(60, 6, 3, seed=0, noise=0.1)
    return run_ablation(TINY_ABLATE, TrainConfig(epochs=2), ds, [0, 1],
                        SplitSpec(0.6, 0.2, 0.2), progress=lambda s: None)


class TestRunAblation:
    def test_row_order(self, table):
        assert [r.variant for r in table.rows] == list(ABLATION_ORDER)
        assert ABLATION_ORDER == ("without_transformer", "without_cnn", "full")

    def test_runs_per_seed(self, table):
        assert all(r.seeds == [0, 1] for r in table.rows)
        assert not table.failed

    def test_deterministic(self, table):
        ds = gen_synthetic(60, 6, 3, seed=0, noise=0.1)
        again = run_ablation(TINY_ABLATE, TrainConfig(epochs=2), ds, [0, 1],
                             SplitSpec(0.6, 0.2, 0.2), progress=lambda s: None)
        assert [r.to_dict() for r in again.rows] == [r.to_dict() for r in table.rows]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_failure_recorded(self):
        ds = gen_synthetic(60, 6, 3, seed=0)
        bad = TrainConfig(epochs=1, learning_rate=1e300, optimizer="sgd")
        table = run_ablation(TINY_ABLATE, bad, ds, [0], SplitSpec(0.6, 0.2, 0.2),
                             keep_going=True, progress=lambda s: None)
        assert table.failed
        assert any(r.to_dict().get("failed") for r in table.rows)

    def test_no_seeds(self):
        with pytest.raises(UsageError):
            run_ablation(TINY_ABLATE, TrainConfig(), gen_synthetic(60, 6, 3), [])

