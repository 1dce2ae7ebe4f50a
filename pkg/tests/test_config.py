import json

import pytest
import yaml

from rtf_forge.config import config_from_dict, dump_config, load_config
from rtf_forge.errors import ConfigError


def test_defaults_are_the_desk_experiment():
    cfg = config_from_dict({})
    assert cfg.room.dims == [4.0, 6.0, 3.0] and cfg.room.rt60 == 0.2
    assert cfg.grid.extent == [1.0, 1.0, 0.5] and cfg.grid.spacing == 0.05
    assert cfg.eval.n_eval_poses == 1000
    assert cfg.sweep.factors == [1, 2, 4] and cfg.sweep.snrs == [30.0, 20.0, 10.0]


@pytest.mark.parametrize(
    "data, key",
    [
        ({"grid": {"spacing": 0}}, "grid.spacing"),
        ({"room": {"rt60": -1}}, "room.rt60"),
        ({"model": {"kind": "svm"}}, "model.kind"),
        ({"grid": {"bogus": 1}}, "grid.bogus"),
        ({"measurement": {"mode": "x"}}, "measurement.mode"),
        ({"room": 3}, "room"),
    ],
)
def test_errors_name_the_key(data, key):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(data)
    assert exc.value.key == key and key in str(exc.value)


def test_yaml_json_and_manifest_round_trip(tmp_path, toy_config_dict):
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(toy_config_dict))
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.grid.spacing == 0.1 and cfg.model.dnn.hidden == [16, 16]
    (tmp_path / "c.json").write_text(dump_config(cfg))
    assert load_config(tmp_path / "c.json") == cfg
    (tmp_path / "m.json").write_text(json.dumps({"files": {}, "config": cfg.to_dict()}))
    assert load_config(tmp_path / "m.json") == cfg


def test_unparseable_file(tmp_path):
    (tmp_path / "bad.yaml").write_text("room: [unclosed")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.yaml")


def test_scalar_coercion(tmp_path):
    (tmp_path / "c.yaml").write_text("model:\n  dnn:\n    lr_floor: 1e-5\n    max_epochs: 7.0\nroom:\n  rt60: 1\n")
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.model.dnn.lr_floor == 1e-5 and isinstance(cfg.model.dnn.max_epochs, int)
    assert isinstance(cfg.room.rt60, float)
    for bad, key in [({"model": {"dnn": {"max_epochs": 2.5}}}, "model.dnn.max_epochs"),
                     ({"room": {"rt60": "slow"}}, "room.rt60"),
                     ({"measurement": {"normalize_direct": 1}}, "measurement.normalize_direct")]:
        with pytest.raises(ConfigError, match=key):
            config_from_dict(bad)


def test_optional_scalars_coerced(tmp_path):
    (tmp_path / "c.yaml").write_text("measurement:\n  snr_db: 1e1\nroom:\n  air_length: 2048\n")
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.measurement.snr_db == 10.0 and cfg.room.air_length == 2048
    assert config_from_dict({"measurement": {"snr_db": None}}).measurement.snr_db is None
