import pytest

from config.settings import Settings, load_settings, parse_config_file
from utils.exceptions import ConfigurationError

def write_config(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path

def test_defaults_are_valid():
    s = Settings()
    assert s.experiment.dataset == "MNIST-2500"
    assert s.experiment.per_class_count == 250
    assert s.experiment.seeds == (1, 2, 3)
    assert s.experiment.random_dim == 400
    assert s.cpc.hidden_size == 256
    assert s.cpc.learning_rate == 1e-4
    assert s.stdp.column_sum == pytest.approx(78.4)
    assert s.autoencoder.channels == (8, 8)

def test_config_file_values_are_typed(tmp_path):
    path = write_config(tmp_path, "\n".join([
        "# experiment selection",
        "experiment.dataset = MNIST-5000",
        "experiment.seeds = 4,5",
        "experiment.train_encoders = yes",
        "cpc.learning_rate = 0.001",
        "data.wrap = false",
        "autoencoder.channels = 4,6",
        "paths.encoders_dir = ckpts",
    ]) + "\n")
    s = load_settings(path)
    assert s.experiment.dataset == "MNIST-5000"
    assert s.experiment.per_class_count == 500
    assert s.experiment.seeds == (4, 5)
    assert s.experiment.train_encoders is True
    assert s.cpc.learning_rate == pytest.approx(0.001)
    assert s.data.wrap is False
    assert s.autoencoder.channels == (4, 6)
    assert str(s.paths.encoders_path) == "ckpts"

def test_explicit_overrides_win_over_file(tmp_path):
    path = write_config(tmp_path, "cpc.max_epochs = 7\n")
    s = load_settings(path, {"cpc": {"max_epochs": "9"}})
    assert s.cpc.max_epochs == 9

def test_unknown_key_is_fatal(tmp_path):
    path = write_config(tmp_path, "cpc.learning_rat = 0.1\n")
    with pytest.raises(ConfigurationError) as info:
        load_settings(path)
    assert info.value.error_code == "unknown_key"
    assert info.value.details["key"] == "cpc.learning_rat"

def test_unknown_section_is_fatal():
    with pytest.raises(ConfigurationError) as info:
        Settings({"optimizer": {"lr": 1}})
    assert info.value.details["key"] == "optimizer.lr"

def test_undotted_key_is_fatal(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config_file(write_config(tmp_path, "seeds = 1\n"))

def test_malformed_value_is_fatal(tmp_path):
    with pytest.raises(ConfigurationError) as info:
        load_settings(write_config(tmp_path, "data.wrap = maybe\n"))
    assert info.value.error_code == "bad_value"

def test_invalid_section_values_are_rejected():
    with pytest.raises(ConfigurationError) as info:
        Settings({"cpc": {"lr_factor": "1.5"}})
    assert info.value.details["section"] == "cpc"
    with pytest.raises(ConfigurationError):
        Settings({"experiment": {"dataset": "MNIST-100"}})

def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError) as info:
        load_settings(tmp_path / "absent.cfg")
    assert info.value.error_code == "missing_config"

def test_to_dict_is_plain(tmp_path):
    s = Settings({"paths": {"out_dir": str(tmp_path)}})
    d = s.to_dict()
    assert d["paths"]["out_dir"] == str(tmp_path)
    assert d["experiment"]["seeds"] == [1, 2, 3]
    assert set(d) == {"data", "codec", "stdp", "autoencoder", "cpc", "experiment", "paths", "logging"}

def test_paths_are_created_on_demand(tmp_path):
    s = Settings({"paths": {"out_dir": str(tmp_path / "runs")}})
    assert not (tmp_path / "runs").exists()
    s.paths.ensure()
    assert (tmp_path / "runs" / "encoders").is_dir()
