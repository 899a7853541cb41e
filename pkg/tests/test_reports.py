import numpy as np
import pytest
from PIL import Image

from backend.curves import aggregate_runs, curves_svg, write_curves
from backend.previews import encoding_grid, save_previews
from backend.system_status import local_now, run_provenance

def test_curves_mean_over_surviving_runs():
    series = aggregate_runs([[0.5, 0.6, 0.7], [0.7, 0.8]])
    assert series.epochs == [1, 2, 3]
    np.testing.assert_allclose(series.mean, [0.6, 0.7, 0.7])
    assert series.band_epochs == [1, 2]
    np.testing.assert_allclose(series.band_high[0] - series.band_low[0], 2 * np.std([0.5, 0.7], ddof=1))

def test_single_run_has_no_band():
    series = aggregate_runs([[0.5, 0.6]])
    assert series.band_epochs == []
    assert aggregate_runs([]).epochs == []

def test_svg_document(tmp_path):
    series = {"SNN <classifier>": aggregate_runs([[0.5, 0.6], [0.55, 0.65]]), "Random": aggregate_runs([[0.5]])}
    text = curves_svg(series, "MNIST-2500")
    assert text.startswith("<svg") and text.rstrip().endswith("</svg>")
    assert "SNN &lt;classifier&gt;" in text
    assert text.count("<polyline") == 2
    assert text.count("<polygon") == 1
    assert write_curves(series, tmp_path / "c" / "curves.svg", "t").exists()

def test_encoding_grid_folds_and_scales():
    grid = encoding_grid(np.arange(5.0))
    assert grid.shape == (3, 3)
    assert grid[0, 0] == 0 and grid[1, 1] == 255
    assert encoding_grid(np.full(4, 3.0)).max() == 0

def test_previews_are_written(images, tmp_path):
    paths = save_previews(images[:2], [np.arange(400.0), np.ones(392)], tmp_path, prefix="snn_classifier")
    assert [p.name for p in paths] == [f"snn_classifier_digit{im.label}_img{im.index}.png" for im in images[:2]]
    with Image.open(paths[0]) as png:
        assert png.size == (2 * 28 * 8 + 8, 28 * 8)

def test_provenance(tmp_path):
    record = run_provenance("Europe/Berlin", tmp_path)
    assert record["timezone"] == "Europe/Berlin"
    assert record["host"]["cpu"]["logical_cores"] >= 1
    assert "numpy" in record["host"]["packages"]
    assert local_now("Not/AZone").tzinfo is not None
    assert local_now("UTC").utcoffset().total_seconds() == pytest.approx(0.0)
