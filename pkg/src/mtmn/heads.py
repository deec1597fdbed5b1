"""Token and sentence label heads and the training objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, Tensor

DEFAULT_LAMBDA = 1.0


def predict_token_labels(r_a: Tensor, r_p: Tensor, W_a: Tensor, W_p: Tensor) -> tuple[Tensor, Tensor]:
    """Per-token (B, I, O) distributions for both channels.

    Features are (C, 2K, n) or (2K, n); outputs have the class axis in the
    feature position, i.e. (C, 3, n) or (3, n).
    """
    out = []
    for r, W in ((r_a, W_a), (r_p, W_p)):
        if W.shape != (3, r.shape[-2]):
            raise DimensionError(f"token head {W.shape} does not match features {r.shape}")
        if r.ndim == 2:
            out.append(ad.softmax(ad.matmul(W, r), axis=0))
        else:
            out.append(ad.softmax(ad.einsum("lk,ckn->cln", W, r), axis=1))
    return out[0], out[1]


def token_loss(y_a: Tensor, y_p: Tensor, gold_a, gold_p) -> Tensor:
    """Summed cross-entropy over categories, tokens and both channels."""
    gold_a, gold_p = np.asarray(gold_a), np.asarray(gold_p)
    if y_a.shape != gold_a.shape or y_p.shape != gold_p.shape:
        raise DimensionError(
            f"predictions {y_a.shape}/{y_p.shape} and gold {gold_a.shape}/{gold_p.shape} differ"
        )
    axis = y_a.ndim - 2
    return ad.cross_entropy(y_a, gold_a, axis=axis) + ad.cross_entropy(y_p, gold_p, axis=axis)


def predict_sentence(o_a: Tensor, o_p: Tensor, W_c: Tensor) -> Tensor:
    """(absent, present) probabilities from the concatenated summaries.

    Batched form: ``o_a``/``o_p`` are (C, d) and ``W_c`` is (C, 2, 2d).
    """
    if o_a.ndim == 1:
        x = ad.concat([o_a, o_p], axis=0)
        if W_c.shape != (2, x.shape[0]):
            raise DimensionError(f"sentence head {W_c.shape} does not match input {x.shape}")
        return ad.softmax(ad.einsum("ij,j->i", W_c, x), axis=0)
    x = ad.concat([o_a, o_p], axis=1)
    if W_c.shape != (x.shape[0], 2, x.shape[1]):
        raise DimensionError(f"sentence heads {W_c.shape} do not match input {x.shape}")
    return ad.softmax(ad.einsum("cij,cj->ci", W_c, x), axis=1)


def sentence_loss(l: Tensor, gold) -> Tensor:
    gold = np.asarray(gold)
    if l.shape != gold.shape:
        raise DimensionError(f"sentence predictions {l.shape} vs gold {gold.shape}")
    return ad.cross_entropy(l, gold, axis=l.ndim - 1)


@dataclass
class LossReport:
    L_tok: float
    L_sen: float
    lam: float
    L: float
    auxiliary: bool = True


def combined_loss(L_tok: Tensor, L_sen: Tensor | None, lam: float = DEFAULT_LAMBDA, auxiliary: bool = True):
    """Objective ``L_sen + lam * L_tok`` (or ``lam * L_tok`` without the auxiliary task).

    Returns the loss tensor and its :class:`LossReport`.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    L = L_tok * lam
    if auxiliary:
        if L_sen is None:
            raise ValueError("auxiliary task enabled but no sentence loss given")
        L = L_sen + L
    sen = L_sen.item() if (auxiliary and L_sen is not None) else 0.0
    return L, LossReport(L_tok.item(), sen, lam, L.item(), auxiliary)
