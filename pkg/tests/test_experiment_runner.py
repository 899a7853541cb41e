import json

import numpy as np
import pytest

from backend import experiment_runner as runner
from backend.experiment_runner import (
    RunSummary, Table1Report, Table1Row, format_table1, ordering_checks, random_encoding, reproduce_table1,
    run_experiment, run_seed, select_rows,
)
from config import settings as settings_module
from config.settings import Settings
from services.cpc_core import read_metrics
from services.data_pipeline import build_subset
from utils.exceptions import MissingArtifactError

@pytest.fixture
def tiny_settings(tmp_path, monkeypatch):
    """Ten images per class and a two-epoch CPC head"""
    monkeypatch.setitem(settings_module.DATASETS, "MNIST-2500", 10)
    monkeypatch.setitem(settings_module.DATASETS, "MNIST-5000", 20)

    def make(**experiment):
        values = {"encoding": "random", "seeds": (1, 2), "random_dim": 8, "precision": "float64"}
        values.update(experiment)
        return Settings({
            "experiment": values,
            "paths": {"out_dir": tmp_path / "runs"},
            "data": {"validation_fraction": 0.2, "train_batches_per_epoch": 2, "validation_batches": 2},
            "cpc": {"hidden_size": 8, "max_epochs": 2, "learning_rate": 1e-3, "train_positives": 4,
                    "train_negatives": 4, "val_positives": 2, "val_negatives": 2},
            "autoencoder": {"channels": (2, 2), "t_steps": 2, "epochs": 1, "batch_size": 50},
        })
    return make

def summary_of(encoding, accuracies, dataset="MNIST-2500"):
    return RunSummary(dataset, encoding, list(range(1, len(accuracies) + 1)), list(accuracies),
                      [10] * len(accuracies))

def test_run_summary_statistics():
    summary = RunSummary("MNIST-2500", "random", [1, 2, 3], [0.9, 0.8, 0.7], [10, 20, 30])
    assert summary.mean_accuracy == pytest.approx(0.8)
    assert summary.std_accuracy == pytest.approx(0.1)
    assert summary.mean_epoch == pytest.approx(20.0)
    assert summary.std_epoch == pytest.approx(10.0)
    single = summary_of("random", [0.6])
    assert single.std_accuracy == 0.0 and single.std_epoch == 0.0
    assert set(summary.to_dict()) >= {"mean_max_val_accuracy", "std_max_val_accuracy", "mean_stopping_epoch"}

def test_select_rows():
    assert len(select_rows()) == 5
    assert select_rows(dataset="MNIST-5000") == [("MNIST-5000", "snn_autoencoder"),
                                                 ("MNIST-5000", "snn_classifier")]
    assert select_rows(encoding="random") == [("MNIST-2500", "random")]
    assert select_rows(dataset="MNIST-5000", encoding="random") == []
    with pytest.raises(ValueError):
        select_rows(dataset="MNIST-9999")

def test_ordering_checks():
    rows = [Table1Row("MNIST-2500", "snn_autoencoder", summary_of("snn_autoencoder", [0.95])),
            Table1Row("MNIST-2500", "snn_classifier", summary_of("snn_classifier", [0.80])),
            Table1Row("MNIST-2500", "random", summary_of("random", [0.55])),
            Table1Row("MNIST-5000", "snn_autoencoder", summary_of("snn_autoencoder", [0.95], "MNIST-5000"))]
    assert ordering_checks(rows) == {"MNIST-2500": True, "MNIST-5000": None}
    rows[1] = Table1Row("MNIST-2500", "snn_classifier", summary_of("snn_classifier", [0.92]))
    assert ordering_checks(rows)["MNIST-2500"] is False

def test_table1_text_and_verdict():
    rows = [Table1Row("MNIST-2500", "snn_classifier", summary_of("snn_classifier", [0.81, 0.79])),
            Table1Row("MNIST-2500", "random", summary_of("random", [0.70]))]
    ordering = ordering_checks(rows)
    text = format_table1(rows, ordering)
    lines = text.splitlines()
    assert lines[0].split("  ")[0] == "Dataset"
    assert "Max Validation Accuracy" in lines[0]
    assert set(lines[1]) <= {"-", " "}
    assert "SNN-Classifier" in lines[2] and "0.8000 ± 0.0141" in lines[2] and "PASS" in lines[2]
    assert "0.8033 / 57.33" in lines[2]
    assert "Random" in lines[3] and "FAIL [0.45, 0.65]" in lines[3]
    assert lines[-1].startswith("Ordering MNIST-2500") and lines[-1].endswith("PASS")
    assert not Table1Report(rows, ordering, text).passed
    assert Table1Report(rows[:1], {"MNIST-2500": None}).passed

def test_random_encoding_ignores_pixels(images):
    subset = build_subset(images, 3, seed=1)
    a = random_encoding(subset, 16, seed=4)
    assert a.dim == 16 and len(a) == 30
    np.testing.assert_array_equal(a.vectors, random_encoding(subset, 16, seed=4).vectors)
    assert not np.array_equal(a.vectors, random_encoding(subset, 16, seed=5).vectors)

def test_missing_encoder_checkpoint(tiny_settings, images):
    settings = tiny_settings(encoding="snn_classifier", seeds=(2,))
    with pytest.raises(MissingArtifactError) as info:
        run_seed(settings, 2, images)
    details = info.value.details
    assert details["stage"] == "encoder"
    assert info.value.error_code == "missing_checkpoint"
    assert details["artifact_path"].endswith("snn_classifier_MNIST-2500_seed2.ckpt")
    assert "train-stdp --seed 2 --dataset 2500" in details["hint"]

def test_random_run_writes_every_artifact(tiny_settings, images):
    settings = tiny_settings()
    summary = run_experiment(settings, images)
    out = settings.paths.out_dir / "MNIST-2500_random"
    assert summary.seeds == [1, 2]
    assert summary.stopping_epochs == [2, 2]
    assert all(0.0 <= a <= 1.0 for a in summary.max_val_accuracy)
    for seed in (1, 2):
        assert len(read_metrics(out / f"seed{seed}_metrics.csv")) == 2
        assert (out / f"seed{seed}_cpc.ckpt").exists()
    payload = json.loads((out / "summary.json").read_text())
    assert payload["summary"]["seeds"] == [1, 2]
    assert payload["config"]["experiment"]["encoding"] == "random"
    assert "timestamp" in payload["provenance"]
    assert (out / "curves.svg").read_text().startswith("<svg")
    assert "Seed 1" in (out / "MNIST-2500_random.log").read_text()

def test_rerun_is_byte_identical(tiny_settings, images):
    settings = tiny_settings(seeds=(3,))
    run_experiment(settings, images)
    path = settings.paths.out_dir / "MNIST-2500_random" / "seed3_metrics.csv"
    first = path.read_bytes()
    run_experiment(settings, images)
    assert path.read_bytes() == first

def test_autoencoder_is_trained_once_then_reused(tiny_settings, images):
    trained = run_experiment(tiny_settings(encoding="snn_autoencoder", seeds=(1,), train_encoders=True), images)
    checkpoint = runner.encoder_checkpoint(tiny_settings(), "snn_autoencoder", "MNIST-2500", 1)
    assert checkpoint.exists()
    stamp = checkpoint.stat().st_mtime_ns
    reused = run_experiment(tiny_settings(encoding="snn_autoencoder", seeds=(1,)), images)
    assert checkpoint.stat().st_mtime_ns == stamp
    assert reused.max_val_accuracy == trained.max_val_accuracy

def test_reproduce_a_single_row(tiny_settings, images):
    settings = tiny_settings(seeds=(1,), encoding="snn_autoencoder")
    report = reproduce_table1(settings, encoding="random", images=images)
    assert [(r.dataset, r.encoding) for r in report.rows] == [("MNIST-2500", "random")]
    assert report.ordering == {"MNIST-2500": None, "MNIST-5000": None}
    assert (settings.paths.out_dir / "table1.txt").read_text() == report.text
    assert settings.experiment.encoding == "snn_autoencoder"
