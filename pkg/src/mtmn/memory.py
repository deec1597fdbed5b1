"""Dual-propagation memory layers, batched over categories.

Per-category quantities carry a leading category axis: prototypes are
(C, d), token features (C, 2K, n), attention (C, n).  The memory ``H`` is
d x n and shared by every category and every layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from . import autodiff as ad
from .autodiff import DimensionError, Param, Tensor
from .encoder import GRU
from .sharing import refine_sentence_features, refine_token_features, task_similarity

CHANNELS = ("aspect", "opinion")


@dataclass
class AttentionHead:
    """Parameters shared across categories and layers."""

    v_a: Param
    v_p: Param
    Q_a: Param
    Q_p: Param
    gru_a: GRU
    gru_p: GRU


@dataclass
class ChannelState:
    u: Tensor  # prototypes entering the layer (C, d)
    r_raw: Tensor  # bilinear features before the feature GRU (C, 2K, n)
    r: Tensor  # after the feature GRU
    S: Tensor | None  # task similarity, None when feature sharing is off
    r_tilde: Tensor  # mixed features used for attention and labels
    e: Tensor
    alpha: Tensor
    o: Tensor  # (C, d)
    o_tilde: Tensor
    u_next: Tensor


@dataclass
class LayerState:
    aspect: ChannelState
    opinion: ChannelState

    def channel(self, name: str) -> ChannelState:
        return self.aspect if name == "aspect" else self.opinion


def _pairwise(H: Tensor, T: Tensor, U: Tensor) -> Tensor:
    # out[c, k, j] = h_j^T T[c, k] u_c
    return ad.einsum("aj,ckab,cb->ckj", H, T, U)


def interact_raw(H: Tensor, U_a: Tensor, U_p: Tensor, tensors: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Bilinear features before the feature GRU, each (C, 2K, n).

    ``tensors`` maps ``G_a, D_a, G_p, D_p`` to (C, K, d, d) tensors.
    """
    d = H.shape[0]
    for name, T in tensors.items():
        if T.ndim != 4 or T.shape[2:] != (d, d) or T.shape[0] != U_a.shape[0]:
            raise DimensionError(f"interaction tensor {name} has shape {T.shape}")
    if U_a.shape[1] != d or U_p.shape != U_a.shape:
        raise DimensionError(f"prototypes {U_a.shape}/{U_p.shape} do not match memory dim {d}")
    r_a = ad.tanh(ad.concat([_pairwise(H, tensors["G_a"], U_a), _pairwise(H, tensors["D_a"], U_p)], axis=1))
    r_p = ad.tanh(ad.concat([_pairwise(H, tensors["G_p"], U_a), _pairwise(H, tensors["D_p"], U_p)], axis=1))
    return r_a, r_p


def run_feature_gru(R: Tensor, gru: GRU) -> Tensor:
    """Left-to-right GRU over token positions, all categories as one batch."""
    n = R.shape[2]
    states = gru.run([R[:, :, j] for j in range(n)])
    return ad.stack(states, axis=2)


def interact(H, U_a, U_p, tensors, gru_a: GRU, gru_p: GRU):
    """Token features for both channels after the feature GRUs.

    Returns ``(r_a, r_p, r_a_raw, r_p_raw)``.
    """
    raw_a, raw_p = interact_raw(H, U_a, U_p, tensors)
    return run_feature_gru(raw_a, gru_a), run_feature_gru(raw_p, gru_p), raw_a, raw_p


def attend(R: Tensor, v: Tensor) -> tuple[Tensor, Tensor]:
    """Attention logits and weights over tokens.

    ``R`` is (2K, n) for one category or (C, 2K, n) for all of them.
    """
    if R.shape[-2] != v.shape[0]:
        raise DimensionError(f"feature dim {R.shape[-2]} does not match v {v.shape}")
    if R.ndim == 2:
        e = ad.einsum("k,kn->n", v, R)
        return e, ad.softmax(e, axis=0)
    e = ad.einsum("k,ckn->cn", v, R)
    return e, ad.softmax(e, axis=1)


def summarize(H: Tensor, alpha: Tensor) -> Tensor:
    """Attention-weighted sum of memory columns."""
    if alpha.shape[-1] != H.shape[1]:
        raise DimensionError(f"attention length {alpha.shape[-1]} != memory length {H.shape[1]}")
    if alpha.ndim == 1:
        return ad.einsum("n,dn->d", alpha, H)
    return ad.einsum("cn,dn->cd", alpha, H)


def update_prototypes(u: Tensor, o_tilde: Tensor, Q: Tensor) -> Tensor:
    """Next-layer prototypes: tanh(Q u) + o_tilde (rows are categories)."""
    if u.shape != o_tilde.shape or Q.shape != (u.shape[-1], u.shape[-1]):
        raise DimensionError(f"prototype update shapes {u.shape}, {o_tilde.shape}, {Q.shape}")
    if u.ndim == 1:
        return ad.tanh(ad.einsum("ij,j->i", Q, u)) + o_tilde
    return ad.tanh(ad.einsum("ij,cj->ci", Q, u)) + o_tilde


def _channel_pass(H, u, r_raw, r, v, Q, feature_sharing, identity_S, feature_dropout) -> ChannelState:
    S = None
    if feature_sharing:
        S = task_similarity(u)
    elif identity_S is not None:
        S = identity_S
    r_tilde = r if S is None else refine_token_features(S, r)
    if feature_dropout is not None:
        r_tilde = feature_dropout(r_tilde)
    e, alpha = attend(r_tilde, v)
    o = summarize(H, alpha)
    o_tilde = o if S is None else refine_sentence_features(S, o)
    u_next = update_prototypes(u, o_tilde, Q)
    return ChannelState(u, r_raw, r, S, r_tilde, e, alpha, o, o_tilde, u_next)


def forward_layers(
    H: Tensor,
    U_a: Tensor,
    U_p: Tensor,
    tensors: dict[str, Tensor],
    head: AttentionHead,
    T: int,
    feature_sharing: bool = True,
    feature_dropout: Callable[[Tensor], Tensor] | None = None,
    identity_S: Tensor | None = None,
) -> list[LayerState]:
    """Run T memory layers over the fixed memory ``H``.

    ``identity_S`` forces mixing with a given matrix while sharing is off;
    it exists so the skip-mixing path can be compared with explicit
    identity mixing.
    """
    if T < 1:
        raise ValueError("need at least one memory layer")
    layers = []
    for _ in range(T):
        r_a, r_p, raw_a, raw_p = interact(H, U_a, U_p, tensors, head.gru_a, head.gru_p)
        a = _channel_pass(H, U_a, raw_a, r_a, head.v_a, head.Q_a, feature_sharing, identity_S, feature_dropout)
        p = _channel_pass(H, U_p, raw_p, r_p, head.v_p, head.Q_p, feature_sharing, identity_S, feature_dropout)
        layers.append(LayerState(a, p))
        U_a, U_p = a.u_next, p.u_next
    return layers
