import pytest

from regstrain.config import RunConfig, dumps_config, load_config, loads_config, save_config
from regstrain.exceptions import ConfigurationError


def test_defaults_round_trip():
    cfg = RunConfig()
    again = loads_config(dumps_config(cfg))
    assert again.to_dict() == cfg.to_dict()


def test_file_round_trip(tmp_path):
    cfg = loads_config("[registration]\nspacing = 15, 20\npyramid_levels = 2, 1, 0\n"
                       "[asgd]\na = 3.5\nclip = off\n[dic]\nsearch_radius = 40\n")
    path = tmp_path / "run.ini"
    save_config(cfg, path)
    again = load_config(path)
    assert again.registration.spacing == (15.0, 20.0)
    assert again.registration.pyramid_levels == (2, 1, 0)
    assert again.registration.asgd.a == 3.5
    assert again.registration.asgd.clip is False
    assert again.dic.search_radius == 40


def test_partial_file_keeps_defaults():
    cfg = loads_config("[asgd]\nmax_iterations = 50\n")
    assert cfg.registration.asgd.max_iterations == 50
    assert cfg.registration.metric == "MI"
    assert cfg.registration.asgd.a is None


@pytest.mark.parametrize("text,key", [
    ("[registration]\nspacing = 0, 30\n", "registration.spacing"),
    ("[registration]\nn_samples = 10\n", "registration.n_samples"),
    ("[registration]\nmetric = L1\n", "registration.metric"),
    ("[registration]\npyramid_levels = 0, 1\n", "registration.pyramid_levels"),
    ("[asgd]\nalpha = 2\n", "asgd.alpha"),
    ("[asgd]\nmax_iterations = 2.5\n", "asgd.max_iterations"),
    ("[asgd]\nclip = maybe\n", "asgd.clip"),
    ("[dic]\nsubset_radius = 3\n", "dic.subset_radius"),
    ("[dic]\nwindow = 3\n", "dic.window"),
    ("[optimizer]\nfoo = 1\n", "optimizer"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigurationError, match=rf"^{key}"):
        loads_config(text)


def test_malformed_ini():
    with pytest.raises(ConfigurationError):
        loads_config("spacing = 30\n")


def test_seed_and_workers_overrides():
    cfg = RunConfig().with_seed(9).with_workers(4)
    assert cfg.registration.asgd.seed == 9
    assert cfg.registration.workers == 4
    assert RunConfig().registration.asgd.seed == 0


def test_from_dict_unknown_section():
    with pytest.raises(ConfigurationError, match="extra"):
        RunConfig.from_dict({"extra": {}})
