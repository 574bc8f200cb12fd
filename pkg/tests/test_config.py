import json

import pytest

from evogrid.config import RunConfig, load_config, parse_config
from evogrid.errors import ConfigError
from evogrid.grid import DESK_SPEC, GridSpec


def test_empty_document_gives_defaults():
    cfg = parse_config({})
    assert cfg == RunConfig()
    assert cfg.model.grid == DESK_SPEC


def test_round_trip_through_json():
    cfg = parse_config({
        "grid": {"rows": 32, "cols": 16, "cell_m": 0.5},
        "model": {"conv_channels": [8, 8, 4], "seed": 3},
        "hd_lidar": {"channels": 64, "vertical_fov": [-20, 5]},
        "train": {"epochs": 4, "augment": False},
        "truth": {"true_evidence": 10},
        "paths": {"out": "x"},
        "seed": 9,
    })
    assert cfg.model.grid == GridSpec(32, 16, 0.5)
    assert cfg.model.conv_channels == (8, 8, 4)
    assert cfg.hd_lidar.vertical_fov == (-20.0, 5.0)
    assert cfg.truth.true_evidence == 10.0
    assert parse_config(json.loads(json.dumps(cfg.as_dict()))) == cfg


def test_grid_propagates_to_model_section():
    cfg = parse_config({"model": {"seed": 1}, "grid": {"rows": 8, "cols": 8, "cell_m": 1.0}})
    assert cfg.model.grid == GridSpec(8, 8, 1.0)


@pytest.mark.parametrize(
    "doc, path",
    [
        ({"modle": {}}, "modle"),
        ({"model": {"conv_chanels": [1]}}, "model.conv_chanels"),
        ({"model": {"grid": {}}}, "model.grid"),
        ({"model": {"conv_channels": [8, "x"]}}, "model.conv_channels[1]"),
        ({"train": {"epochs": 1.5}}, "train.epochs"),
        ({"train": {"augment": 1}}, "train.augment"),
        ({"sparse_lidar": {"vertical_fov": [1]}}, "sparse_lidar.vertical_fov"),
        ({"grid": {"rows": 0, "cols": 4, "cell_m": 1}}, "grid"),
        ({"loss": {"occupied_weight": 0.5}}, "loss"),
        ({"paths": {"outt": "x"}}, "paths.outt"),
        ({"seed": -1}, "seed"),
        ({"scene": []}, "scene"),
        ([], "config"),
    ],
)
def test_bad_documents_name_the_key(doc, path):
    with pytest.raises(ConfigError) as info:
        parse_config(doc)
    assert str(info.value).startswith(path + ":")


def test_load_config_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
    with pytest.raises(OSError):
        load_config(tmp_path / "missing.json")
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"n_samples": 3}))
    assert load_config(good).n_samples == 3
