"""Synthetic paired features standing in for an image-caption corpus.

Each item has a latent content vector. Its image feature is a noisy linear
view of the content. Its raw caption is web-quality: often about another
item entirely, and noisy otherwise. Each of the K generated views is a
caption from one captioner: it sees only part of the content (captioners
attend to different things), carries a fixed per-captioner style offset and
independent noise. Longer generated captions drift toward a per-captioner
generic description, which is how the caption-length axis is modelled.

The evaluation set uses clean, human-quality captions.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    n_items: int = 1500
    n_eval: int = 300
    latent_dim: int = 16
    d_img: int = 32
    d_txt: int = 32
    k_views: int = 4
    noise_sigma: float = 0.3
    image_noise_sigma: float = 0.1
    raw_noise_sigma: float = 1.0
    raw_mismatch_prob: float = 0.6
    view_coverage: float = 0.6
    style_bias_magnitude: float = 1.0
    caption_length: int = 15
    base_caption_length: int = 15
    seed: int = 0

    def __post_init__(self):
        for name in ("n_items", "n_eval", "latent_dim", "d_img", "d_txt"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.k_views < 0:
            raise ValueError("k_views must be >= 0")
        if min(self.noise_sigma, self.image_noise_sigma, self.raw_noise_sigma) < 0:
            raise ValueError("noise levels must be >= 0")
        if not 0 <= self.raw_mismatch_prob <= 1 or not 0 < self.view_coverage <= 1:
            raise ValueError("probabilities must lie in [0, 1]")

    def with_(self, **kw) -> "SyntheticCorpusConfig":
        return replace(self, **kw)


@dataclass
class PairCorpus:
    """``texts[i, 0]`` is the raw caption of item i, ``texts[i, v]`` view v."""

    ids: list[str]
    images: np.ndarray  # (n, d_img)
    texts: np.ndarray  # (n, 1 + K, d_txt)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_views(self) -> int:
        return self.texts.shape[1] - 1


@dataclass
class SyntheticCorpus:
    train: PairCorpus
    eval: PairCorpus


def collapse_weight(length: int, base: int) -> float:
    """Share of a generated caption given over to generic description."""
    return max(0.0, (length - base) / (length + base))


def make_corpus(cfg: SyntheticCorpusConfig = SyntheticCorpusConfig()) -> SyntheticCorpus:
    rng = np.random.default_rng(cfg.seed)
    L, K = cfg.latent_dim, cfg.k_views
    A = rng.standard_normal((cfg.d_img, L)) / np.sqrt(L)
    B = rng.standard_normal((cfg.d_txt, L)) / np.sqrt(L)
    # the world and the captioners are fixed before any item is drawn
    masks = rng.random((K, L)) < cfg.view_coverage
    styles = rng.standard_normal((K, cfg.d_txt))
    styles *= cfg.style_bias_magnitude / np.linalg.norm(styles, axis=1, keepdims=True).clip(1e-12)
    generic = rng.standard_normal((K, L))
    w = collapse_weight(cfg.caption_length, cfg.base_caption_length)

    def images_of(z):
        return z @ A.T + cfg.image_noise_sigma * rng.standard_normal((len(z), cfg.d_img))

    n = cfg.n_items
    z = rng.standard_normal((n, L))
    texts = np.empty((n, 1 + K, cfg.d_txt))
    other = (np.arange(n) + rng.integers(1, n, size=n)) % n if n > 1 else np.zeros(n, dtype=int)
    mismatch = rng.random(n) < cfg.raw_mismatch_prob
    raw_content = np.where(mismatch[:, None], z[other], z)
    texts[:, 0] = raw_content @ B.T + cfg.raw_noise_sigma * rng.standard_normal((n, cfg.d_txt))
    for k in range(K):
        seen = (1 - w) * z * masks[k] + w * generic[k]
        noise = cfg.noise_sigma * rng.standard_normal((n, cfg.d_txt))
        texts[:, 1 + k] = seen @ B.T + styles[k] + noise
    train = PairCorpus([f"train-{i}" for i in range(n)], images_of(z), texts)

    ze = rng.standard_normal((cfg.n_eval, L))
    eval_texts = (ze @ B.T + cfg.image_noise_sigma * rng.standard_normal((cfg.n_eval, cfg.d_txt)))[:, None, :]
    eval_set = PairCorpus([f"eval-{i}" for i in range(cfg.n_eval)], images_of(ze), eval_texts)
    return SyntheticCorpus(train, eval_set)
