"""
Tests for the command-line surface.
"""

import json
import sys
import os

import pytest

# Add src to path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.cli.commands import read_user_ids, run
from src.config import save_config
from src.lib.errors import DatasetFormatError


def _write_config(cfg, tmp_path):
    cfg.output_dir = str(tmp_path / "runs")
    path = str(tmp_path / "config.json")
    save_config(cfg, path)
    return path


def test_unknown_flag_exits_with_usage_error():
    with pytest.raises(SystemExit) as info:
        run(["train", "--no-such-flag"])
    assert info.value.code == 2


def test_missing_config_prints_one_error_line(tmp_path, capsys):
    assert run(["gen-data", "--config", str(tmp_path / "nope.json")]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert err[0].startswith("error code=config_error message=")


@pytest.mark.parametrize("section, key, value", [
    ("index", "layer_sizes", [500]),
    ("train", "lr", "fast"),
    ("world", "num_users", "many"),
    ("serving", "beam", [2.5]),
    ("model", "share_user_tower", 1),
])
def test_bad_config_values_print_one_error_line(tiny_config, tmp_path, capsys, section, key, value):
    data = tiny_config().to_dict()
    data["output_dir"] = str(tmp_path / "runs")
    data[section][key] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    assert run(["train", "--config", str(path)]) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    assert err[0].startswith(f'error code=config_error message="{section}.{key}')


def test_layer_size_override_larger_than_the_catalog_is_a_config_error(tiny_config, tmp_path, capsys):
    path = _write_config(tiny_config(), tmp_path)
    assert run(["train", "--config", path, "--layer-sizes", "500"]) == 1
    assert "error code=config_error" in capsys.readouterr().err


def test_gen_data_refuses_a_dataset_from_another_config(tiny_config, tmp_path, capsys):
    path = _write_config(tiny_config(), tmp_path)
    assert run(["gen-data", "--config", path]) == 0
    assert os.path.exists(tmp_path / "runs" / "seed_3" / "dataset.jsonl")
    assert os.path.exists(tmp_path / "runs" / "seed_3" / "world.json")

    changed = tiny_config()
    changed.world.num_users = 41
    path = _write_config(changed, tmp_path)
    capsys.readouterr()
    assert run(["gen-data", "--config", path]) == 1
    assert "error code=config_error" in capsys.readouterr().err
    assert run(["gen-data", "--config", path, "--refresh-data"]) == 0


def test_user_file_parsing(tmp_path):
    path = tmp_path / "users.txt"
    path.write_text("# eval users\n3\n\n7\n")
    assert read_user_ids(str(path), 10) == [3, 7]
    path.write_text("3\n12\n")
    with pytest.raises(DatasetFormatError) as info:
        read_user_ids(str(path), 10)
    assert info.value.line_number == 2


@pytest.mark.slow
def test_train_then_retrieve(tiny_config, tmp_path):
    path = _write_config(tiny_config(), tmp_path)
    assert run(["train", "--config", path]) == 0
    assert run(["build-index", "--config", path]) == 0
    users = tmp_path / "users.txt"
    users.write_text("0\n5\n")
    out = tmp_path / "top.tsv"
    assert run(["retrieve", "--config", path, "--users", str(users), "--out", str(out), "--top-k", "4"]) == 0
    lines = [line.split("\t") for line in out.read_text().splitlines()]
    assert len(lines) == 8
    assert [int(line[0]) for line in lines] == [0] * 4 + [5] * 4
    assert [int(line[1]) for line in lines[:4]] == [1, 2, 3, 4]
