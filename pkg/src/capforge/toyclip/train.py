"""Dual linear encoder trained with the contrastive loss."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DivergenceDetected
from .loss import contrastive_loss
from .retrieval import Direction, RetrievalReport, report_from_similarity
from .synthetic import PairCorpus


class Optimizer(str, enum.Enum):
    SGD = "sgd"
    ADAMW = "adamw"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    temperature: float = 0.07
    learning_rate: float = 0.01
    epochs: int = 4
    seed: int = 0
    optimizer: Optimizer = Optimizer.ADAMW
    weight_decay: float = 1e-4
    d_out: int = 16
    # "enumerate": every (image, caption) pair once per epoch;
    # "sample": one caption per image per step, drawn at random
    view_mode: str = "enumerate"

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be >= 0")
        if self.view_mode not in ("enumerate", "sample"):
            raise ValueError(f"unknown view_mode {self.view_mode!r}")
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))


@dataclass(frozen=True)
class ViewPolicy:
    """Which captions of each item are used: raw only, or raw plus K views."""

    views: int = 0

    @classmethod
    def parse(cls, text: str) -> "ViewPolicy":
        text = text.strip().lower()
        if text in ("raw", "raw-only", "raw_only"):
            return cls(0)
        if text.startswith("multi:"):
            return cls(int(text.split(":", 1)[1]))
        raise ValueError(f"view policy must be 'raw-only' or 'multi:K', got {text!r}")

    def __str__(self) -> str:
        return "raw-only" if self.views == 0 else f"multi:{self.views}"


@dataclass
class EncoderParams:
    w_img: np.ndarray  # (d_out, d_img)
    w_txt: np.ndarray  # (d_out, d_txt)

    @classmethod
    def init(cls, d_img: int, d_txt: int, d_out: int, rng: np.random.Generator) -> "EncoderParams":
        return cls(rng.standard_normal((d_out, d_img)) / np.sqrt(d_img), rng.standard_normal((d_out, d_txt)) / np.sqrt(d_txt))

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.w_img.copy(), self.w_txt.copy())

    def save(self, path) -> None:
        np.savez(path, w_img=self.w_img, w_txt=self.w_txt)

    @classmethod
    def load(cls, path) -> "EncoderParams":
        with np.load(path) as data:
            return cls(data["w_img"], data["w_txt"])


@dataclass
class TrainResult:
    params: EncoderParams
    loss_trace: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)


def _normalize(u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(u, axis=1, keepdims=True).clip(1e-12)
    return u / norms, norms


def _normalize_backward(grad_z: np.ndarray, z: np.ndarray, norms: np.ndarray) -> np.ndarray:
    return (grad_z - z * np.sum(grad_z * z, axis=1, keepdims=True)) / norms


def encode(w: np.ndarray, x: np.ndarray) -> np.ndarray:
    return _normalize(x @ w.T)[0]


def batch_loss_and_grads(params: EncoderParams, x_img: np.ndarray, x_txt: np.ndarray, temperature: float):
    zi, ni = _normalize(x_img @ params.w_img.T)
    zt, nt = _normalize(x_txt @ params.w_txt.T)
    out = contrastive_loss(zi, zt, temperature)
    gi = _normalize_backward(out.grad_img, zi, ni)
    gt = _normalize_backward(out.grad_txt, zt, nt)
    return out.loss, gi.T @ x_img, gt.T @ x_txt


class _AdamW:
    def __init__(self, lr, weight_decay, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, betas[0], betas[1], eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for k, p in params.items():
            g = grads[k]
            m = self.m[k] = self.b1 * self.m.get(k, 0.0) + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v.get(k, 0.0) + (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            p -= self.lr * (mhat / (np.sqrt(vhat) + self.eps) + self.wd * p)


class _SGD:
    def __init__(self, lr, weight_decay):
        self.lr, self.wd = lr, weight_decay

    def step(self, params, grads):
        for k, p in params.items():
            p -= self.lr * (grads[k] + self.wd * p)


def training_pairs(corpus: PairCorpus, policy: ViewPolicy) -> tuple[np.ndarray, np.ndarray]:
    """(image index, caption index) for every pair used in one epoch."""
    if policy.views > corpus.n_views:
        raise ValueError(f"corpus has {corpus.n_views} generated views, policy asks for {policy.views}")
    n = len(corpus)
    cols = np.arange(policy.views + 1)
    return np.repeat(np.arange(n), len(cols)), np.tile(cols, n)


def train(corpus: PairCorpus, config: TrainConfig = TrainConfig(), policy: ViewPolicy = ViewPolicy()) -> TrainResult:
    """Minimise the contrastive loss over the pairs selected by ``policy``.

    Each (image, caption) pair counts as an independent training pair, so a
    policy with K views sees K+1 times as many pairs per epoch as raw-only.
    The trace holds one loss value per optimizer step.
    """
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    rng = np.random.default_rng(config.seed)
    params = EncoderParams.init(corpus.images.shape[1], corpus.texts.shape[2], config.d_out, rng)
    tensors = {"w_img": params.w_img, "w_txt": params.w_txt}
    opt = _AdamW(config.learning_rate, config.weight_decay) if config.optimizer is Optimizer.ADAMW else _SGD(config.learning_rate, config.weight_decay)
    img_idx, txt_col = training_pairs(corpus, policy)
    trace: list[float] = []
    bs = config.batch_size

    for _ in range(config.epochs):
        if config.view_mode == "enumerate":
            order = rng.permutation(len(img_idx))
            batches = [(img_idx[order[s : s + bs]], txt_col[order[s : s + bs]]) for s in range(0, len(order), bs)]
        else:
            order = rng.permutation(len(corpus))
            cols = rng.integers(0, policy.views + 1, size=len(corpus))
            batches = [(order[s : s + bs], cols[order[s : s + bs]]) for s in range(0, len(order), bs)]
        for ii, cc in batches:
            if len(ii) < 2:
                continue
            loss, g_img, g_txt = batch_loss_and_grads(params, corpus.images[ii], corpus.texts[ii, cc], config.temperature)
            if not np.isfinite(loss):
                raise DivergenceDetected(f"loss became {loss} at step {len(trace)}")
            trace.append(loss)
            with np.errstate(over="ignore", invalid="ignore"):
                opt.step(tensors, {"w_img": g_img, "w_txt": g_txt})
            if not (np.all(np.isfinite(params.w_img)) and np.all(np.isfinite(params.w_txt))):
                raise DivergenceDetected(f"parameters became non-finite at step {len(trace)}")
    cfg = asdict(config)
    cfg["optimizer"] = config.optimizer.value
    cfg["views"] = str(policy)
    return TrainResult(params, trace, cfg)


def similarity(params: EncoderParams, eval_set: PairCorpus, caption: int = 0) -> np.ndarray:
    zi = encode(params.w_img, eval_set.images)
    zt = encode(params.w_txt, eval_set.texts[:, caption])
    return zi @ zt.T


def eval_retrieval(params: EncoderParams, eval_set: PairCorpus, direction: Direction | str = Direction.I2T) -> RetrievalReport:
    """Retrieval of the paired caption (``texts[:, 0]``) under cosine similarity."""
    return report_from_similarity(similarity(params, eval_set), direction)


def smoothed(trace: list[float], window: int = 20) -> np.ndarray:
    if not trace:
        return np.zeros(0)
    w = max(1, min(window, len(trace)))
    return np.convolve(np.asarray(trace), np.ones(w) / w, mode="valid")
