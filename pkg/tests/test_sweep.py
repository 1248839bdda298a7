import json

import pytest

from conftest import tiny_model_config
from layoutkit.sweep import (DEFAULT_GRIDS, STRATEGY_ROWS, SweepData, ablation_sweep, point_config, run_point)
from layoutkit.train import FinetuneConfig, PretrainConfig, derive_label_set

BASE = PretrainConfig(steps=2, batch_size=4)
FT = FinetuneConfig(steps=2, batch_size=4, eval_every=1)


@pytest.fixture(scope="module")
def data(small_corpus):
    train, dev, test, vocab, spec = small_corpus
    return SweepData(train, dev, test, vocab, derive_label_set("entities", spec.entity_tags))


def test_point_configs():
    assert point_config("p_mlm", 0.3, BASE).p_mlm == 0.3
    pm = point_config("p_mpm", 0.1, PretrainConfig(enable_mpm=False))
    assert pm.p_mpm == 0.1 and pm.enable_mpm
    pos = point_config("position", "global/word", BASE)
    assert (pos.one_d_mode, pos.two_d_mode) == ("global", "word")
    full = point_config("strategy", "wwm+lam+mpm", BASE)
    assert (full.strategy, full.enable_mpm) == ("wwm_lam", True)
    plain = point_config("strategy", "wwm", BASE)
    assert (plain.strategy, plain.enable_mpm) == ("wwm", False)
    assert point_config("strategy", "none", BASE) is None
    for bad in [("depth", 2), ("position", "local"), ("strategy", "span"), ("position", "local/pixel")]:
        with pytest.raises(ValueError):
            point_config(bad[0], bad[1], BASE)


def test_default_grids_cover_table_shapes():
    assert len(DEFAULT_GRIDS["position"]) == 4
    assert DEFAULT_GRIDS["strategy"] == ["naive", "wwm", "wwm+lam", "wwm+mpm", "wwm+lam+mpm"]
    assert set(DEFAULT_GRIDS["strategy"]) <= set(STRATEGY_ROWS)


def test_single_point_equals_direct_run(data):
    table = ablation_sweep("p_mlm", [0.25], BASE, FT, tiny_model_config(), data, seeds=[7])
    assert len(table.rows) == 1
    direct = run_point(point_config("p_mlm", 0.25, BASE), FT, tiny_model_config(), data, seed=7)
    assert table.rows[0]["runs"] == [direct]
    assert table.rows[0]["entity_f1_mean"] == direct["entity_f1"]
    assert table.rows[0]["entity_f1_std"] == 0.0


def test_position_axis_four_rows(data):
    table = ablation_sweep("position", DEFAULT_GRIDS["position"], BASE, FT, tiny_model_config(), data, seeds=[0])
    assert [r["point"] for r in table.rows] == DEFAULT_GRIDS["position"]
    assert len(table.to_csv().splitlines()) == 5
    assert len(table.table().splitlines()) == 5


def test_strategy_axis_five_rows(data):
    table = ablation_sweep("strategy", DEFAULT_GRIDS["strategy"], BASE, FT, tiny_model_config(), data,
                           seeds=[0, 1])
    assert [r["point"] for r in table.rows] == DEFAULT_GRIDS["strategy"]
    assert all(len(r["runs"]) == 2 for r in table.rows)
    back = json.loads(table.to_json())
    assert back["axis"] == "strategy" and len(back["rows"]) == 5
    for r in table.rows:
        f1s = [x["entity_f1"] for x in r["runs"]]
        assert r["entity_f1_mean"] == pytest.approx(sum(f1s) / 2)
        assert r["entity_f1_std"] == pytest.approx(abs(f1s[0] - f1s[1]) / 2)


def test_none_row_uses_random_init(data):
    table = ablation_sweep("strategy", ["none"], BASE, FT, tiny_model_config(), data, seeds=[0])
    assert table.rows[0]["runs"][0]["seed"] == 0


def test_parallel_matches_serial(data):
    args = ("p_mpm", [0.1, 0.2], BASE, FT, tiny_model_config(), data)
    serial = ablation_sweep(*args, seeds=[0, 1], jobs=1)
    parallel = ablation_sweep(*args, seeds=[0, 1], jobs=2)
    assert serial.to_json() == parallel.to_json()


def test_sweep_errors(data):
    with pytest.raises(ValueError):
        ablation_sweep("p_mlm", [], BASE, FT, tiny_model_config(), data)
    with pytest.raises(ValueError):
        ablation_sweep("p_mlm", [0.2], BASE, FT, tiny_model_config(), data, seeds=[])
