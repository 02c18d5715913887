import pytest
from hypothesis import given, strategies as st

from cognisnn.config import RunConfig, parse_float_list, parse_int_list, parse_str_list
from cognisnn.errors import ConfigError


def test_defaults_resolve_generator_probability():
    assert RunConfig().resolved().p == 0.6
    assert RunConfig(gen="ws").resolved().p == 0.75
    assert RunConfig(epochs=7).resolved().t_max == 7
    with pytest.raises(ConfigError):
        RunConfig(gen="ba").resolved()


def test_text_round_trip():
    cfg = RunConfig(n=12, lr=0.01, scenario="dissimilar", max_old_drop=0.05).resolved()
    again = RunConfig.from_text(cfg.to_text())
    assert again == cfg


def test_comments_blank_lines_and_types():
    cfg = RunConfig.from_text("# header\n\nn = 9   # nodes\nlr=0.5\ngen = ws\n")
    assert (cfg.n, cfg.lr, cfg.gen) == (9, 0.5, "ws")
    assert isinstance(cfg.n, int) and isinstance(cfg.lr, float)


@pytest.mark.parametrize("text", ["bogus = 1", "n 7", "n = seven", "lr = fast"])
def test_bad_text_is_a_config_error(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_overrides_and_optional_fields():
    cfg = RunConfig().with_overrides({"epochs": "3", "max_old_drop": ""})
    assert cfg.epochs == 3 and cfg.max_old_drop is None
    with pytest.raises(ConfigError):
        RunConfig().with_overrides({"nope": 1})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "absent.txt")


def test_builders_carry_values():
    cfg = RunConfig(channels=5, pool_depths="1,2", classes=3, new_classes=2, new_family="rotation", epochs=4)
    assert cfg.model_config().pool_depths == (1, 2)
    assert cfg.model_config(num_classes=2).num_classes == 2
    assert cfg.task_spec(new_task=True).family == "rotation"
    assert cfg.task_spec().class_count == 3
    assert cfg.train_config().t_max == 4
    assert cfg.graph_spec().er_edge_prob == 0.6


def test_list_parsers():
    assert parse_int_list("1, 2,3") == (1, 2, 3)
    assert parse_int_list("") == ()
    assert parse_float_list("0,2.5") == (0.0, 2.5)
    assert parse_str_list(" a ,b,,") == ("a", "b")
    with pytest.raises(ConfigError):
        parse_int_list("1,x")


@given(st.integers(1, 500), st.floats(1e-6, 10, allow_nan=False), st.sampled_from(["er", "ws"]))
def test_round_trip_property(n, lr, gen):
    cfg = RunConfig(n=n, lr=lr, gen=gen)
    assert RunConfig.from_text(cfg.to_text()) == cfg
