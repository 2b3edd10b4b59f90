"""Line-delimited feature files: ``{"id", "image_vec", "text_vecs"}``.

``text_vecs[0]`` is the raw (or, for evaluation files, ground-truth) caption;
any further vectors are generated views in pool order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import MalformedLine, MissingField
from .synthetic import PairCorpus


def write_features(corpus: PairCorpus, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for i, ident in enumerate(corpus.ids):
            rec = {"id": ident, "image_vec": corpus.images[i].tolist(), "text_vecs": corpus.texts[i].tolist()}
            fh.write(json.dumps(rec) + "\n")


def read_features(path: str | Path) -> PairCorpus:
    ids, images, texts = [], [], []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(line_no, exc.msg) from None
            for key in ("id", "image_vec", "text_vecs"):
                if key not in rec:
                    raise MissingField(line_no, key)
            ids.append(str(rec["id"]))
            images.append(rec["image_vec"])
            texts.append(rec["text_vecs"])
    if not ids:
        return PairCorpus([], np.zeros((0, 0)), np.zeros((0, 1, 0)))
    try:
        return PairCorpus(ids, np.asarray(images, dtype=float), np.asarray(texts, dtype=float))
    except ValueError as exc:
        raise MalformedLine(0, f"ragged vectors: {exc}") from None
