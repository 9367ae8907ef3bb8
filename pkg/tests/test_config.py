import pytest
import yaml
from hypothesis import given, strategies as st

from pica.config import ConfigError, RunConfig, apply_overrides, load_config


def test_defaults_round_trip(tmp_path):
    cfg = RunConfig()
    (tmp_path / "c.yaml").write_text(cfg.dump())
    back = load_config(tmp_path / "c.yaml")
    assert back.to_dict() == cfg.to_dict()


def test_overrides_typed(tmp_path):
    (tmp_path / "c.yaml").write_text("schedule: {iterations: 5}\n")
    cfg = load_config(tmp_path / "c.yaml", [("schedule.iterations", "7"), ("render.channel", "label"),
                                            ("sim.pinned", "[0, 1, 2]"), ("weights.seg", "0.5")])
    assert cfg.schedule.iterations == 7 and cfg.render.channel == "label"
    assert cfg.sim.pinned == [0, 1, 2] and cfg.weights.seg == 0.5


def test_relative_paths_resolve_against_file(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    (sub / "c.yaml").write_text("paths: {output: result, body_mesh: /abs/body.obj}\n")
    cfg = load_config(sub / "c.yaml")
    assert cfg.output == sub / "result"
    assert str(cfg.path(cfg.paths.body_mesh)) == "/abs/body.obj"
    assert cfg.avatar_dir == cfg.output


@pytest.mark.parametrize("seed", [-1, 2 ** 32, 1.5, "x", True])
def test_bad_seed(seed):
    with pytest.raises(ConfigError, match="seed"):
        RunConfig.from_dict({"seed": seed})


@given(st.integers(0, 2 ** 32 - 1))
def test_valid_seeds(seed):
    assert RunConfig.from_dict({"seed": seed}).seed == seed


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"paths": {"nope": 1}},
    {"render": {"channel": "depth"}},
    {"render": {"format": "jpg"}},
    {"physics": {"mode": "guess"}},
    {"physics": {"mass_density": -1.0}},
    {"schedule": {"lr": {"magic": 1.0}}},
    {"sim": {"dt": 0}},
    {"fit": {"per_face": 0}},
    {"weights": {"color": -1}},
    {"threads": 0},
    {"paths": [1, 2]},
])
def test_invalid_configs(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        load_config(tmp_path / "none.yaml")
    (tmp_path / "bad.yaml").write_text("a: [1,\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")
    (tmp_path / "list.yaml").write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config(tmp_path / "list.yaml")


def test_override_into_scalar_fails():
    with pytest.raises(ConfigError):
        apply_overrides({"seed": 3}, [("seed.x", "1")])


def test_require(tmp_path):
    (tmp_path / "body.obj").write_text("")
    cfg = RunConfig.from_dict({"paths": {"body_mesh": "body.obj", "rig": "rig.txt"}}, tmp_path)
    cfg.require("body_mesh")
    with pytest.raises(ConfigError, match="rig.txt"):
        cfg.require("body_mesh", "rig")
    with pytest.raises(ConfigError, match="paths.dataset"):
        cfg.require("dataset")


def test_dump_is_yaml():
    d = yaml.safe_load(RunConfig().dump())
    assert set(d) == {"paths", "weights", "schedule", "fit", "physics", "render", "sim", "seed", "threads"}
