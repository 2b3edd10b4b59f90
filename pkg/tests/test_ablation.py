import csv

import pytest

from capforge.toyclip import SyntheticCorpusConfig, TrainConfig, ViewPolicy
from capforge.toyclip.ablation import Axis, ablation_sweep, mean_by_setting, write_ablation_csv

SEEDS = range(10)


def test_num_views_grid_yields_one_report_per_setting():
    rows = ablation_sweep(Axis.NUM_VIEWS, [1, 2, 3, 4], TrainConfig(epochs=1),
                          corpus_config=SyntheticCorpusConfig(n_items=200, n_eval=60), directions=("i2t",))
    assert [r.setting for r in rows] == [1, 2, 3, 4]
    for r in rows:
        assert r.report.r1 <= r.report.r5 <= r.report.r10


def test_num_views_beyond_corpus_extends_corpus():
    rows = ablation_sweep("num-views", [6], TrainConfig(epochs=1),
                          corpus_config=SyntheticCorpusConfig(n_items=100, n_eval=40), directions=("t2i",))
    assert rows[0].report.direction == "t2i"


@pytest.mark.slow
def test_batch_size_trend_raw_only():
    rows = ablation_sweep(Axis.BATCH_SIZE, [8, 32, 128], seeds=SEEDS, policy=ViewPolicy(0), directions=("i2t",))
    m = mean_by_setting(rows)
    assert m[8] < m[32] < m[128]


@pytest.mark.slow
def test_epochs_trend_raw_only():
    rows = ablation_sweep(Axis.EPOCHS, [1, 2, 4, 8], seeds=SEEDS, policy=ViewPolicy(0), directions=("i2t",))
    m = mean_by_setting(rows)
    assert m[1] < m[2] < m[4] < m[8]


def test_ablation_csv_format(tmp_path):
    rows = ablation_sweep(Axis.EPOCHS, [1, 2], TrainConfig(), corpus_config=SyntheticCorpusConfig(n_items=100, n_eval=40),
                          seeds=(0, 1))
    path = write_ablation_csv(rows, tmp_path / "abl" / "out.csv")
    with path.open() as fh:
        recs = list(csv.DictReader(fh))
    assert list(recs[0]) == ["axis", "setting", "seed", "direction", "r1", "r5", "r10", "mdr"]
    assert len(recs) == 2 * 2 * 2
    assert {r["axis"] for r in recs} == {"epochs"}
    assert {(r["setting"], r["seed"], r["direction"]) for r in recs} == {
        (s, d, x) for s in ("1", "2") for d in ("0", "1") for x in ("i2t", "t2i")
    }


def test_sweep_is_deterministic():
    kw = dict(corpus_config=SyntheticCorpusConfig(n_items=100, n_eval=40), seeds=(3,))
    a = ablation_sweep(Axis.CAPTION_NOISE_LENGTH, [5, 15], TrainConfig(epochs=1), **kw)
    b = ablation_sweep(Axis.CAPTION_NOISE_LENGTH, [5, 15], TrainConfig(epochs=1), **kw)
    assert a == b


def test_empty_grid_rejected():
    with pytest.raises(ValueError):
        ablation_sweep(Axis.EPOCHS, [])
