import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moen.config import load_config, parse_text
from moen.csvio import read_csv, read_rows, write_csv
from moen.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_defaults_depend_on_model():
    h = parse_text("[model]\nname = harmonic\n")
    d = parse_text("[model]\nname = duffing\n")
    assert h["scenario", "T"] == 10.0 and h["scenario", "grid_steps"] == 1000
    assert d["scenario", "T"] == 15.0 and d["scenario", "grid_steps"] == 1500
    assert h["training", "d"] == 20 and d["training", "d"] == 5
    assert d["scenario", "w_kind"] == "zero"
    assert h["training", "shift_at"] == 20 and h["training", "iters"] == 50


@pytest.mark.parametrize("text,word", [
    ("[scenario]\nalhpa = 2\n", "alhpa"),
    ("[nonsense]\nx = 1\n", "nonsense"),
    ("[scenario]\nalpha = nan\n", "alpha"),
    ("[scenario]\nalpha = 0x10\n", "alpha"),
    ("[scenario]\nalpha = -1\n", "alpha"),
    ("[training]\nbb_rule = newton\n", "bb_rule"),
    ("[training]\ngradient = exact\n", "gradient"),
    ("[observer]\nalpha_in_gain = maybe\n", "alpha_in_gain"),
    ("[model]\nname = lorenz\n", "name"),
])
def test_rejections_name_the_key(text, word):
    with pytest.raises(ConfigError, match=word):
        parse_text(text)


def test_overrides_and_unknown_override():
    cfg = parse_text("", {"alpha": 10.0, "samples": 3, "iters": 7, "seed": 5, "out_dir": "x"})
    assert cfg["scenario", "alpha"] == 10.0 and cfg["training", "d"] == 3
    assert cfg["training", "iters"] == 7 and cfg["training", "ensemble_seed"] == 5
    assert str(cfg.out_dir) == "x"
    with pytest.raises(ConfigError):
        parse_text("", {"bogus": 1})


def test_resolved_config_round_trip(tmp_path):
    cfg = load_config(CONFIGS / "duffing_test.ini", {"out_dir": str(tmp_path)})
    path = cfg.write_resolved(tmp_path)
    again = load_config(path)
    assert again.values == cfg.values
    assert again["scenario", "w_frequency"] == math.pi


@pytest.mark.parametrize("name", ["harmonic.ini", "report.ini", "duffing_train.ini", "duffing_test.ini"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIGS / name)
    sc = cfg.scenario()
    assert sc.grid.h == pytest.approx(0.01)
    assert cfg.network_shape().dims == (2, 2, 2)


def test_scenario_dimension_checked():
    cfg = parse_text("[scenario]\nx0_prior = 0, 0, 0\n")
    with pytest.raises(ConfigError):
        cfg.scenario()


def test_csv_round_trip_and_format(tmp_path):
    rows = [(0, 0.1, None, True), (1, 1 / 3, 2.5e-300, False)]
    path = write_csv(tmp_path / "a.csv", ["i", "x", "y", "flag"], rows)
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.decode().splitlines()[1] == "0,0.10000000000000001,,1"
    header, data = read_csv(path)
    assert header == ["i", "x", "y", "flag"]
    assert data[1, 1] == 1 / 3 and data[1, 2] == 2.5e-300 and np.isnan(data[0, 2])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_csv_floats_bit_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "v.csv"
    write_csv(path, ["v"], [(v,) for v in values])
    _, data = read_csv(path)
    assert np.array_equal(data[:, 0], np.array(values))


def test_csv_rejects_ragged(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1\n")
    with pytest.raises(ConfigError):
        read_rows(p)
    with pytest.raises(ValueError):
        write_csv(tmp_path / "c.csv", ["a", "b"], [(1,)])
