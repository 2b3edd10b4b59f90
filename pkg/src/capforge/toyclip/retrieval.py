"""Recall@K and median rank for paired retrieval."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import EmptyEvalSet


class Direction(str, enum.Enum):
    I2T = "i2t"
    T2I = "t2i"


@dataclass(frozen=True)
class RetrievalReport:
    direction: str
    r1: float
    r5: float
    r10: float
    mdr: float
    n_queries: int

    def to_dict(self) -> dict:
        return asdict(self)


def ground_truth_ranks(sim: np.ndarray) -> np.ndarray:
    """1-based rank of item i for query i (row i of ``sim``).

    Ties are resolved by index: an equal score at a lower index ranks ahead,
    which is the position a stable descending sort would give.
    """
    sim = np.asarray(sim, dtype=float)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"similarity must be square, got {sim.shape}")
    m = sim.shape[0]
    gt = np.diag(sim)[:, None]
    higher = (sim > gt).sum(axis=1)
    lower_idx = np.tril(np.ones((m, m), dtype=bool), k=-1)
    ties_before = ((sim == gt) & lower_idx).sum(axis=1)
    return higher + ties_before + 1


def report_from_similarity(sim: np.ndarray, direction: Direction | str = Direction.I2T) -> RetrievalReport:
    """``sim[i, j]`` scores image i against text j; the pair (i, i) is correct."""
    direction = Direction(direction)
    sim = np.asarray(sim, dtype=float)
    if sim.size == 0:
        raise EmptyEvalSet("no evaluation pairs")
    ranks = ground_truth_ranks(sim if direction is Direction.I2T else sim.T)
    m = len(ranks)

    def recall(k):
        return 100.0 * np.count_nonzero(ranks <= k) / m

    return RetrievalReport(direction.value, recall(1), recall(5), recall(10), float(np.median(ranks)), m)
