"""Token embedding lookup and the GRU that builds the memory matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Param, Tensor
from .corpus import EmbeddingTable

GATES = ("z", "r", "h")


def init_uniform(rng: np.random.Generator, shape, scale: float = 0.1) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


@dataclass
class GRU:
    """Cho et al. GRU over row batches.

    Weights use the row-vector convention: ``x @ W`` with ``W`` of shape
    (input_dim, hidden_dim).
    """

    input_dim: int
    hidden_dim: int
    params: dict[str, Param]

    @classmethod
    def create(cls, prefix: str, input_dim: int, hidden_dim: int, rng: np.random.Generator) -> "GRU":
        params = {}
        for g in GATES:
            params[f"W_{g}"] = Param(f"{prefix}.W_{g}", init_uniform(rng, (input_dim, hidden_dim)))
            params[f"U_{g}"] = Param(f"{prefix}.U_{g}", init_uniform(rng, (hidden_dim, hidden_dim)))
            params[f"b_{g}"] = Param(f"{prefix}.b_{g}", np.zeros(hidden_dim))
        return cls(input_dim, hidden_dim, params)

    def step(self, x: Tensor, h: Tensor, gates: dict | None = None) -> Tensor:
        p = self.params
        z = ad.sigmoid(x @ p["W_z"] + h @ p["U_z"] + p["b_z"])
        r = ad.sigmoid(x @ p["W_r"] + h @ p["U_r"] + p["b_r"])
        cand = ad.tanh(x @ p["W_h"] + (r * h) @ p["U_h"] + p["b_h"])
        if gates is not None:
            gates.setdefault("z", []).append(z.data)
            gates.setdefault("r", []).append(r.data)
        return (1.0 - z) * h + z * cand

    def run(self, xs: list[Tensor], gates: dict | None = None) -> list[Tensor]:
        """Run over a sequence of (B, input_dim) inputs from a zero state."""
        if not xs:
            raise ContractError("GRU input sequence is empty")
        batch = xs[0].shape[0]
        for x in xs:
            if x.shape != (batch, self.input_dim):
                raise DimensionError(
                    f"GRU expects inputs of shape ({batch}, {self.input_dim}), got {x.shape}"
                )
        h = Tensor(np.zeros((batch, self.hidden_dim)))
        out = []
        for x in xs:
            h = self.step(x, h, gates)
            out.append(h)
        return out


# the GRU parameter record described for the encoder and feature GRUs
GruParams = GRU


def embed(tokens: list[str], table: EmbeddingTable, weights: Param | None = None) -> Tensor:
    """Return the D x n matrix whose columns are the token vectors.

    With ``weights`` the rows are gathered from that (trainable) matrix so
    gradients reach the embeddings; otherwise the table is a constant.
    """
    if not tokens:
        raise ContractError("cannot embed an empty sentence")
    rows = [table.index(t) for t in tokens]
    if weights is None:
        return Tensor(table.matrix[rows].T.copy())
    return ad.transpose(ad.take_rows(weights, rows))


def gru_forward(X: Tensor, gru: GRU, gates: dict | None = None) -> Tensor:
    """Memory matrix H (d x n) from embeddings X (D x n)."""
    if X.ndim != 2 or X.shape[0] != gru.input_dim:
        raise DimensionError(f"embeddings of shape {X.shape} do not match GRU input dim {gru.input_dim}")
    n = X.shape[1]
    Xt = ad.transpose(X)
    states = gru.run([Xt[j : j + 1] for j in range(n)], gates)
    return ad.transpose(ad.concat(states, axis=0))
