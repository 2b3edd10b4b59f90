"""Corpus diagnostics for raw and enhanced caption datasets.

Length and word statistics are built from mergeable accumulators, so they can
be computed per partition and combined without changing the result. Caption
sources are ``"raw"`` for the original caption and the model id for each
generated caption.
"""

from __future__ import annotations

import base64
import csv
import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import httpx
import numpy as np

from .dataset import AnnotationEntry, EnhancedEntry
from .errors import DimensionMismatch, EmptyCorpus, IoFailure, ProviderUnavailable
from .shear import DEFAULT_TOKENIZER, TokenizerSpec, count_tokens

RAW = "raw"

LENGTH_BUCKET = 5
LENGTH_RANGE = 200
SIM_BUCKET = 0.02

# English stopword list as distributed with NLTK.
STOPWORDS = frozenset(
    """
    i me my myself we our ours ourselves you you're you've you'll you'd your yours yourself yourselves
    he him his himself she she's her hers herself it it's its itself they them their theirs themselves
    what which who whom this that that'll these those am is are was were be been being have has had
    having do does did doing a an the and but if or because as until while of at by for with about
    against between into through during before after above below to from up down in out on off over
    under again further then once here there when where why how all any both each few more most other
    some such no nor not only own same so than too very s t can will just don don't should should've
    now d ll m o re ve y ain aren aren't couldn couldn't didn didn't doesn doesn't hadn hadn't hasn
    hasn't haven haven't isn isn't ma mightn mightn't mustn mustn't needn needn't shan shan't shouldn
    shouldn't wasn wasn't weren weren't won won't wouldn wouldn't
    """.split()
)

_WORD_RE = re.compile(r"\w+(?:['’]\w+)*")


def source_captions(entry: AnnotationEntry | EnhancedEntry) -> list[tuple[str, str, int | None]]:
    """(source, text, pre-shear token count) for every caption of an entry."""
    out = [(RAW, entry.caption, None)]
    for g in getattr(entry, "generated", ()):
        if g.error is None:
            out.append((g.model_id, g.text, g.raw_token_count))
    return out


# ---------------------------------------------------------------------------
# lengths


@dataclass
class SourceLengths:
    count: int = 0
    total: int = 0
    min: int | None = None
    max: int | None = None
    histogram: list[int] = field(default_factory=lambda: [0] * (LENGTH_RANGE // LENGTH_BUCKET))

    def add(self, n: int) -> None:
        self.count += 1
        self.total += n
        self.min = n if self.min is None else min(self.min, n)
        self.max = n if self.max is None else max(self.max, n)
        # lengths beyond the range land in the last bucket
        self.histogram[min(n // LENGTH_BUCKET, len(self.histogram) - 1)] += 1

    def merge(self, other: "SourceLengths") -> None:
        self.count += other.count
        self.total += other.total
        for attr, fn in (("min", min), ("max", max)):
            a, b = getattr(self, attr), getattr(other, attr)
            setattr(self, attr, b if a is None else a if b is None else fn(a, b))
        self.histogram = [a + b for a, b in zip(self.histogram, other.histogram)]

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.mean,
            "min": self.min,
            "max": self.max,
            "bucket_width": LENGTH_BUCKET,
            "histogram": list(self.histogram),
        }


@dataclass
class LengthStats:
    """Per-source token lengths after shearing and, for models, before it."""

    sources: dict[str, SourceLengths] = field(default_factory=dict)
    pre_shear: dict[str, SourceLengths] = field(default_factory=dict)

    def update(self, entries: Iterable[AnnotationEntry | EnhancedEntry], spec: TokenizerSpec = DEFAULT_TOKENIZER) -> "LengthStats":
        for entry in entries:
            for source, text, raw_count in source_captions(entry):
                self.sources.setdefault(source, SourceLengths()).add(count_tokens(text, spec))
                if raw_count is not None:
                    self.pre_shear.setdefault(source, SourceLengths()).add(raw_count)
        return self

    def merge(self, other: "LengthStats") -> "LengthStats":
        for mine, theirs in ((self.sources, other.sources), (self.pre_shear, other.pre_shear)):
            for key, acc in theirs.items():
                mine.setdefault(key, SourceLengths()).merge(acc)
        return self

    def means(self) -> dict[str, float]:
        return {k: v.mean for k, v in sorted(self.sources.items())}

    def to_dict(self) -> dict:
        return {
            "sources": {k: v.to_dict() for k, v in sorted(self.sources.items())},
            "pre_shear": {k: v.to_dict() for k, v in sorted(self.pre_shear.items())},
        }


def length_stats(entries: Iterable[AnnotationEntry | EnhancedEntry], spec: TokenizerSpec = DEFAULT_TOKENIZER) -> LengthStats:
    stats = LengthStats().update(entries, spec)
    if not stats.sources:
        raise EmptyCorpus("no captions to measure")
    return stats


# ---------------------------------------------------------------------------
# word frequency


@dataclass
class WordCounts:
    counts: dict[str, Counter] = field(default_factory=dict)

    def update(
        self,
        entries: Iterable[AnnotationEntry | EnhancedEntry],
        stopwords: Iterable[str] = STOPWORDS,
        lexicon: Iterable[str] | None = None,
    ) -> "WordCounts":
        stop = frozenset(w.lower() for w in stopwords)
        keep = frozenset(w.lower() for w in lexicon) if lexicon is not None else None
        for entry in entries:
            for source, text, _ in source_captions(entry):
                words = [w for w in _WORD_RE.findall(text.lower()) if w not in stop]
                if keep is not None:
                    words = [w for w in words if w in keep]
                self.counts.setdefault(source, Counter()).update(words)
        return self

    def merge(self, other: "WordCounts") -> "WordCounts":
        for source, c in other.counts.items():
            self.counts.setdefault(source, Counter()).update(c)
        return self

    def table(self, top_n: int) -> "WordFrequencyTable":
        if top_n < 1:
            raise ValueError("top_n must be >= 1")
        return WordFrequencyTable(
            {s: rank_counts(c)[:top_n] for s, c in sorted(self.counts.items())}
        )


@dataclass
class WordFrequencyTable:
    sources: dict[str, list[tuple[str, int]]]

    def to_dict(self) -> dict:
        return {s: [[w, n] for w, n in rows] for s, rows in self.sources.items()}


def rank_counts(counts: Counter) -> list[tuple[str, int]]:
    """Descending by count, ties broken lexicographically."""
    return sorted(((w, n) for w, n in counts.items() if n > 0), key=lambda wn: (-wn[1], wn[0]))


def word_frequency(
    entries: Iterable[AnnotationEntry | EnhancedEntry],
    top_n: int = 50,
    stopwords: Iterable[str] = STOPWORDS,
    lexicon: Iterable[str] | None = None,
) -> WordFrequencyTable:
    return WordCounts().update(entries, stopwords, lexicon).table(top_n)


def _safe_name(source: str) -> str:
    return re.sub(r"[^\w.-]+", "_", source)


def export_wordcloud_counts(table: WordFrequencyTable, directory: str | Path) -> list[Path]:
    """Write ``wordcloud_<source>.csv`` (header ``word,count``) per source."""
    if not table.sources:
        raise ValueError("word frequency table is empty")
    directory = Path(directory)
    paths = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for source, rows in table.sources.items():
            path = directory / f"wordcloud_{_safe_name(source)}.csv"
            with path.open("w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["word", "count"])
                writer.writerows(sorted(rows, key=lambda wn: (-wn[1], wn[0])))
            paths.append(path)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return paths


def read_wordcloud_counts(path: str | Path) -> list[tuple[str, int]]:
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        return [(row["word"], int(row["count"])) for row in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# embeddings and image-text similarity


class DeterministicHasher:
    """Seeded feature-hashing embedder; a stand-in for a pretrained model.

    Texts are embedded as signed bag-of-words hashes. Images are embedded
    from their byte digest, optionally mixed with the hash of a text that
    describes them (``image_hint``) so test corpora can control similarity.
    """

    kind = "deterministic_hasher"

    def __init__(self, dimension: int = 64, seed: int = 0):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension
        self.seed = seed

    def _unit(self, key: str) -> np.ndarray:
        h = hashlib.sha256(f"{self.seed}\x00{key}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
        return rng.standard_normal(self.dimension)

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension))
        for i, t in enumerate(texts):
            for w in _WORD_RE.findall(t.lower()):
                out[i] += self._unit("w:" + w)
        return out

    def embed_images(self, images: Sequence[bytes]) -> np.ndarray:
        return np.stack([self._unit("img:" + hashlib.sha256(b).hexdigest()) for b in images]) if images else np.zeros((0, self.dimension))


class HttpEmbeddingService:
    """Embedding endpoint taking ``{"inputs": [...]}``.

    Texts are sent verbatim, images as base64 data URIs. The response may be a
    bare list of vectors or an object with an ``embeddings`` list.
    """

    kind = "http_service"

    def __init__(self, url: str, dimension: int, *, timeout: float = 60.0, transport: httpx.BaseTransport | None = None):
        self.url = url
        self.dimension = dimension
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _post(self, inputs: list[str]) -> np.ndarray:
        try:
            resp = self._client.post(self.url, json={"inputs": inputs})
            resp.raise_for_status()
            payload = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise ProviderUnavailable(f"{self.url}: {exc}") from exc
        vectors = payload.get("embeddings") if isinstance(payload, dict) else payload
        arr = np.asarray(vectors, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != len(inputs) or arr.shape[1] != self.dimension:
            raise DimensionMismatch(f"expected {len(inputs)}x{self.dimension} embeddings, got shape {arr.shape}")
        return arr

    def embed_texts(self, texts: Sequence[str]) -> np.ndarray:
        return self._post(list(texts))

    def embed_images(self, images: Sequence[bytes]) -> np.ndarray:
        return self._post(["data:application/octet-stream;base64," + base64.b64encode(b).decode("ascii") for b in images])


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine similarity; zero vectors give 0."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = na * nb
    dots = np.einsum("ij,ij->i", a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        sims = np.where(denom > 0, dots / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(sims, -1.0, 1.0)


@dataclass
class SimilarityDistribution:
    samples: np.ndarray
    histogram: list[int]
    mean: float
    median: float

    @classmethod
    def from_samples(cls, sims: np.ndarray) -> "SimilarityDistribution":
        sims = np.asarray(sims, dtype=float)
        nbins = int(round(2 / SIM_BUCKET))
        hist, _ = np.histogram(sims, bins=nbins, range=(-1.0, 1.0))
        mean = float(np.mean(sims)) if sims.size else float("nan")
        median = float(np.median(sims)) if sims.size else float("nan")
        return cls(sims, hist.tolist(), mean, median)

    def to_dict(self) -> dict:
        return {"count": int(self.samples.size), "mean": self.mean, "median": self.median, "bucket_width": SIM_BUCKET, "histogram": self.histogram}


def similarity_pairs(entries: Iterable[EnhancedEntry | AnnotationEntry], pairing: str = "raw_only") -> list[tuple[int, str, str]]:
    """(entry index, source, text) triples selected by ``pairing``."""
    if pairing not in ("raw_only", "all_generated"):
        raise ValueError(f"unknown pairing {pairing!r}")
    out = []
    for i, entry in enumerate(entries):
        for source, text, _ in source_captions(entry):
            if (pairing == "raw_only") == (source == RAW):
                out.append((i, source, text))
    return out


def similarity_distribution(
    entries: Sequence[EnhancedEntry | AnnotationEntry],
    provider,
    image_loader: Callable[[EnhancedEntry | AnnotationEntry], bytes],
    pairing: str = "raw_only",
    *,
    export_path: str | Path | None = None,
) -> SimilarityDistribution:
    """Cosine similarity between each image and its selected captions.

    With ``export_path`` the image and text vectors are also written as
    ``{"id", "kind", "vector"}`` lines.
    """
    entries = list(entries)
    pairs = similarity_pairs(entries, pairing)
    img_vecs = provider.embed_images([image_loader(e) for e in entries])
    txt_vecs = provider.embed_texts([t for _, _, t in pairs])
    for arr in (img_vecs, txt_vecs):
        if arr.ndim != 2 or (arr.shape[0] and arr.shape[1] != provider.dimension):
            raise DimensionMismatch(f"provider returned shape {arr.shape}, dimension is {provider.dimension}")
    idx = np.array([i for i, _, _ in pairs], dtype=int)
    sims = cosine_rows(img_vecs[idx], txt_vecs) if pairs else np.zeros(0)
    if export_path is not None:
        export_embeddings(export_path, entries, img_vecs, pairs, txt_vecs)
    return SimilarityDistribution.from_samples(sims)


def export_embeddings(path, entries, img_vecs, pairs, txt_vecs) -> None:
    try:
        with Path(path).open("w", encoding="utf-8") as fh:
            for e, v in zip(entries, img_vecs):
                fh.write(json.dumps({"id": e.image_id, "kind": "image", "vector": v.tolist()}) + "\n")
            for (i, source, _), v in zip(pairs, txt_vecs):
                fh.write(json.dumps({"id": entries[i].image_id, "kind": "text", "source": source, "vector": v.tolist()}) + "\n")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
