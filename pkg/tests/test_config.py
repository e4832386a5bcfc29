import pytest

from ipl.config import REGISTRY, load_experiment_config, parse_config_file
from ipl.errors import ConfigError


def test_defaults_cover_every_registry_key():
    cfg = load_experiment_config()
    assert set(cfg.values) == set(REGISTRY)
    assert cfg["seed"] == 12345
    assert cfg["trials"] == 5
    assert cfg["base_classes"] == 12
    assert cfg["ways"] == 2
    assert cfg["shots"] == 5
    assert cfg["increment_sessions"] == 4


def test_file_parsing_with_comments_and_blanks(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(
        """
# experiment settings
seed = 99           # inline comment
epochs=7

hidden_dims = 16,8
episodic = false
"""
    )
    values = parse_config_file(path)
    assert values == {"seed": 99, "epochs": 7, "hidden_dims": (16, 8), "episodic": False}


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("sedd = 99\n")
    with pytest.raises(ConfigError, match="sedd"):
        parse_config_file(path)


def test_bad_value_rejected(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("epochs = soon\n")
    with pytest.raises(ConfigError, match="epochs"):
        parse_config_file(path)


def test_missing_equals_rejected(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("epochs 7\n")
    with pytest.raises(ConfigError):
        parse_config_file(path)


def test_missing_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        parse_config_file(tmp_path / "nope.cfg")


def test_override_precedence(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("seed = 1\nepochs = 5\n")
    cfg = load_experiment_config(path, [("seed", "2"), ("seed", "3")])
    assert cfg["seed"] == 3  # last override wins
    assert cfg["epochs"] == 5  # file beats default
    assert cfg["batch_size"] == 128  # default preserved


def test_override_unknown_key_rejected():
    with pytest.raises(ConfigError):
        load_experiment_config(None, [("nope", "1")])


def test_bool_parsing_variants(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("episodic = YES\nrefine = 0\nfinetune = on\n")
    values = parse_config_file(path)
    assert values == {"episodic": True, "refine": False, "finetune": True}
    with pytest.raises(ConfigError):
        load_experiment_config(None, [("episodic", "maybe")])


def test_builders_produce_valid_configs():
    cfg = load_experiment_config()
    tc = cfg.train_config()
    assert tc.episodic_enabled and tc.refine_enabled and not tc.finetune_enabled
    assert tc.episode_cfg.n_way == 2 and tc.episode_cfg.k_shot == 5
    assert tc.refinement_cfg.mode == "softmax"
    mc = cfg.model_config(base_class_ids=(3, 1, 2, 0, 4, 5, 6, 7, 8, 9, 10, 11))
    assert mc.num_base_classes == 12
    assert mc.resolved_class_ids()[0] == 3


def test_dataset_source_validation():
    with pytest.raises(ConfigError):
        load_experiment_config(None, [("dataset_source", "csv")]).load_dataset()
    with pytest.raises(ConfigError):
        load_experiment_config(None, [("dataset_source", "http")]).load_dataset()


def test_csv_dataset_round_trip(tmp_path):
    from ipl.data import generate_gaussian_mixture, save_csv
    from ipl.rng import RngState

    ds = generate_gaussian_mixture(4, 6, 8, 5.0, 1.0, RngState(1))
    path = tmp_path / "feat.csv"
    save_csv(ds, path)
    cfg = load_experiment_config(
        None,
        [("dataset_source", "csv"), ("csv_path", str(path)), ("input_dim", "6")],
    )
    loaded = cfg.load_dataset()
    assert loaded.features.tobytes() == ds.features.tobytes()


def test_echo_is_sorted_and_json_ready():
    cfg = load_experiment_config()
    echo = cfg.echo()
    assert list(echo) == sorted(echo)
    assert echo["hidden_dims"] == [64, 64]
