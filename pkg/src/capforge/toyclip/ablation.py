"""Grid sweeps over one training or data axis with paired seeds."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

from .retrieval import Direction, RetrievalReport
from .synthetic import SyntheticCorpusConfig, make_corpus
from .train import TrainConfig, ViewPolicy, eval_retrieval, train

CSV_FIELDS = ("axis", "setting", "seed", "direction", "r1", "r5", "r10", "mdr")


class Axis(str, enum.Enum):
    CAPTION_NOISE_LENGTH = "caption-noise-length"
    BATCH_SIZE = "batch-size"
    NUM_VIEWS = "num-views"
    EPOCHS = "epochs"


@dataclass(frozen=True)
class AblationRow:
    axis: str
    setting: int
    seed: int
    report: RetrievalReport

    def as_csv_row(self) -> dict:
        r = self.report
        return {"axis": self.axis, "setting": self.setting, "seed": self.seed, "direction": r.direction,
                "r1": r.r1, "r5": r.r5, "r10": r.r10, "mdr": r.mdr}


def configure(axis: Axis, setting: int, corpus: SyntheticCorpusConfig, config: TrainConfig, policy: ViewPolicy):
    """Apply one grid setting to the base configuration."""
    if axis is Axis.CAPTION_NOISE_LENGTH:
        return corpus.with_(caption_length=int(setting)), config, policy
    if axis is Axis.BATCH_SIZE:
        return corpus, replace(config, batch_size=int(setting)), policy
    if axis is Axis.NUM_VIEWS:
        return corpus.with_(k_views=max(corpus.k_views, int(setting))), config, ViewPolicy(int(setting))
    if axis is Axis.EPOCHS:
        return corpus, replace(config, epochs=int(setting)), policy
    raise ValueError(axis)


def ablation_sweep(
    axis: Axis | str,
    grid: Sequence[int],
    base_config: TrainConfig = TrainConfig(),
    *,
    corpus_config: SyntheticCorpusConfig = SyntheticCorpusConfig(),
    policy: ViewPolicy = ViewPolicy(),
    seeds: Iterable[int] = (0,),
    directions: Sequence[Direction | str] = (Direction.I2T, Direction.T2I),
) -> list[AblationRow]:
    """Train and evaluate once per (grid point, seed).

    Seed s drives both the corpus and the trainer, so every grid point of a
    seed sees the same data draw.
    """
    axis = Axis(axis)
    grid = list(grid)
    if not grid:
        raise ValueError("grid must be non-empty")
    rows = []
    for setting in grid:
        for seed in seeds:
            ccfg, tcfg, pol = configure(axis, setting, corpus_config.with_(seed=seed), replace(base_config, seed=seed), policy)
            corpus = make_corpus(ccfg)
            params = train(corpus.train, tcfg, pol).params
            for d in directions:
                rows.append(AblationRow(axis.value, setting, seed, eval_retrieval(params, corpus.eval, d)))
    return rows


def write_ablation_csv(rows: Iterable[AblationRow], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_csv_row())
    return path


def mean_by_setting(rows: Iterable[AblationRow], direction: str = "i2t", metric: str = "r1") -> dict[int, float]:
    acc: dict[int, list[float]] = {}
    for row in rows:
        if row.report.direction == direction:
            acc.setdefault(row.setting, []).append(getattr(row.report, metric))
    return {k: sum(v) / len(v) for k, v in acc.items()}
