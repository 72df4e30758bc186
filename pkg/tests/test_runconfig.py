import pytest

from jasper.runconfig import ConfigError, RunConfig, load_run_config, parse_run_config, with_overrides


def test_defaults_and_types(tmp_path):
    cfg = parse_run_config("[optim]\nlr = 0.05\n[train]\nepochs = 3\n", tmp_path)
    assert cfg.optim.lr == 0.05 and cfg.train.epochs == 3
    assert cfg.model == RunConfig().model
    assert cfg.model_config().n_features == cfg.data.n_mels


def test_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "run.ini").write_text("[data]\ntrain_manifest = d/train.jsonl\n[train]\ncheckpoint_dir = /abs/ck\n")
    cfg = load_run_config(tmp_path / "run.ini")
    assert cfg.data.train_manifest == str(tmp_path / "d/train.jsonl")
    assert cfg.train.checkpoint_dir == "/abs/ck"


@pytest.mark.parametrize(
    "text, message",
    [
        ("[optim]\nlearning_rate = 1\n", "unknown key 'learning_rate'"),
        ("[optim]\nbeta_1 = 0.9\n", "did you mean 'beta1'"),
        ("[trian]\nepochs = 1\n", "did you mean 'train'"),
        ("[train]\nepochs = many\n", "not a valid int"),
        ("[optim]\nkind = adam\n", "must be one of"),
        ("[model]\npreset = mini2x3\n", "did you mean 'mini2x2'"),
        ("[train]\nbatch_size = 0\n", "batch_size"),
        ("[model]\nnorm = group\n", "unknown norm"),
        ("no section header\n", "malformed"),
    ],
)
def test_config_errors(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message):
        parse_run_config(text, tmp_path)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="run.ini"):
        load_run_config(tmp_path / "run.ini")


def test_overrides_are_validated():
    cfg = with_overrides(RunConfig(), train={"epochs": 0})
    assert cfg.train.epochs == 0
    with pytest.raises(ConfigError):
        with_overrides(cfg, optim={"lr": -1.0})


def test_custom_graphemes_set_vocab():
    cfg = parse_run_config("[data]\ngraphemes = abc\n", ".")
    assert cfg.alphabet().graphemes == ("a", "b", "c")
    assert cfg.model_config().vocab == ("a", "b", "c")
