"""Symmetric image-text contrastive loss with analytic gradients."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.special import log_softmax, softmax

from ..errors import NonFiniteInput


class ContrastiveLoss(NamedTuple):
    loss: float
    loss_img: float
    loss_txt: float
    grad_img: np.ndarray
    grad_txt: np.ndarray


def contrastive_loss(img_feats: np.ndarray, txt_feats: np.ndarray, temperature: float = 0.07) -> ContrastiveLoss:
    """Mean of the image->text and text->image cross-entropies.

    Row i of ``img_feats`` is paired with row i of ``txt_feats``; every other
    row in the batch is a negative. Features are expected to be L2-normalized
    already. Gradients are taken with respect to the feature matrices.
    """
    img = np.asarray(img_feats, dtype=float)
    txt = np.asarray(txt_feats, dtype=float)
    if img.ndim != 2 or img.shape != txt.shape:
        raise ValueError(f"feature shapes differ: {img.shape} vs {txt.shape}")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    if not (np.isfinite(img).all() and np.isfinite(txt).all()):
        raise NonFiniteInput("features contain NaN or inf")
    n = img.shape[0]
    if n == 0:
        raise ValueError("empty batch")

    logits = img @ txt.T / temperature
    diag = np.arange(n)
    loss_img = -log_softmax(logits, axis=1)[diag, diag].mean()
    loss_txt = -log_softmax(logits, axis=0)[diag, diag].mean()

    # dL/dlogits = ((softmax_rows - I) + (softmax_cols - I)) / (2N)
    eye = np.eye(n)
    dlogits = (softmax(logits, axis=1) - eye + softmax(logits, axis=0) - eye) / (2 * n)
    grad_img = dlogits @ txt / temperature
    grad_txt = dlogits.T @ img / temperature
    return ContrastiveLoss(float((loss_img + loss_txt) / 2), float(loss_img), float(loss_txt), grad_img, grad_txt)
