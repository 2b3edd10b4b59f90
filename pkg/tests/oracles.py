"""Independent reference implementations used as test oracles.

These are written as plain character scans and sorts, deliberately not
sharing code with the package.
"""

from __future__ import annotations

import math
import statistics


def _is_word(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def hand_tokens(text: str) -> list[str]:
    """Words (with inner apostrophes) and single punctuation characters."""
    out = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
        elif _is_word(ch):
            j = i
            while True:
                while j < n and _is_word(text[j]):
                    j += 1
                if j + 1 < n and text[j] in "'’" and _is_word(text[j + 1]):
                    j += 1
                    continue
                break
            out.append(text[i:j])
            i = j
        else:
            out.append(ch)
            i += 1
    return out


def shortest_clause(text: str, min_chars: int, terminators: set[str]) -> str | None:
    for end in range(1, len(text) + 1):
        prefix = text[:end]
        if prefix[-1] in terminators and len(prefix.strip()) > min_chars:
            return prefix.strip()
    return None


def mean_tokens(captions: list[str]) -> float:
    total = 0
    for c in captions:
        total += len(hand_tokens(c))
    return total / len(captions)


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def brute_force_ranks(sim) -> list[int]:
    """Rank of item i for query i after a stable full sort, descending."""
    m = len(sim)
    ranks = []
    for i in range(m):
        order = sorted(range(m), key=lambda j: (-float(sim[i][j]), j))
        ranks.append(order.index(i) + 1)
    return ranks


def brute_force_report(sim) -> dict:
    ranks = brute_force_ranks(sim)
    m = len(ranks)
    return {
        "r1": 100.0 * sum(r <= 1 for r in ranks) / m,
        "r5": 100.0 * sum(r <= 5 for r in ranks) / m,
        "r10": 100.0 * sum(r <= 10 for r in ranks) / m,
        "mdr": float(statistics.median(ranks)),
    }


def brute_force_cosine(a, b) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0 or nb == 0:
        return 0.0
    return dot / (na * nb)


def softmax_ce_loss(sim, tau: float) -> float:
    """Symmetric InfoNCE from an explicit similarity matrix, with plain loops."""
    n = len(sim)
    li = 0.0
    lt = 0.0
    for i in range(n):
        row = [sim[i][j] / tau for j in range(n)]
        li -= row[i] - math.log(sum(math.exp(v) for v in row))
        col = [sim[j][i] / tau for j in range(n)]
        lt -= col[i] - math.log(sum(math.exp(v) for v in col))
    return (li / n + lt / n) / 2
