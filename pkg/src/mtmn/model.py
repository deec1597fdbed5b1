"""The multi-task memory network: parameters, forward pass and objective."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import GradCheckReport, Param, Tensor, finite_diff_check, no_grad
from .corpus import EmbeddingTable, GoldChannels, Sentence, encode_gold
from .decoder import TermSpan, decode_probabilities
from .encoder import GRU, embed, gru_forward, init_uniform
from .heads import LossReport, combined_loss, predict_sentence, predict_token_labels, sentence_loss, token_loss
from .memory import AttentionHead, LayerState, forward_layers
from .sharing import FAMILIES, SharingConfig, materialize_all


@dataclass
class ModelConfig:
    categories: list[str]
    D: int = 150
    d: int = 50
    K: int = 20
    m: int = 5
    T: int = 2
    sharing: SharingConfig = field(default_factory=SharingConfig)
    lam: float = 1.0
    freeze_embeddings: bool = True

    @property
    def C(self) -> int:
        return len(self.categories)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sharing"] = asdict(self.sharing)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        doc["sharing"] = SharingConfig(**doc.get("sharing", {}))
        return cls(**doc)


def parameter_count(D: int, d: int, K: int, m: int, C: int, sharing: SharingConfig, vocab_rows: int = 0) -> int:
    """Closed-form number of trainable scalars.

    encoder GRU 3(Dd + d^2 + d); two feature GRUs 2*3(2*(2K)^2 + 2K);
    v^a, v^p 2*2K; Q^a, Q^p 2d^2; token heads 2*3*2K; prototypes 2Cd;
    sentence heads C*2*2d; interaction tensors, four families of
      factored       K(Cm + m d^2)
      independent    C K d^2
      single-shared  K d^2
    plus ``vocab_rows * D`` when embeddings are trained.  Memory layers
    share all of these, so the count does not depend on T.
    """
    two_k = 2 * K
    count = 3 * (D * d + d * d + d)
    count += 2 * 3 * (2 * two_k * two_k + two_k)
    count += 2 * two_k + 2 * d * d + 2 * 3 * two_k
    count += 2 * C * d + C * 2 * 2 * d
    per_family = {
        "factored": K * (C * m + m * d * d),
        "independent": C * K * d * d,
        "single-shared": K * d * d,
    }[sharing.tensor_sharing]
    count += 4 * per_family
    return count + vocab_rows * D


class Dropout:
    """Inverted dropout with its own mask stream."""

    def __init__(self, rate: float, rng: np.random.Generator):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate
        self.rng = rng

    def mask(self, shape) -> np.ndarray:
        keep = self.rng.random(shape) >= self.rate
        return keep / (1.0 - self.rate)

    def __call__(self, x: Tensor) -> Tensor:
        if self.rate == 0:
            return x
        return x * Tensor(self.mask(x.shape))


@dataclass
class Forward:
    X: Tensor
    H: Tensor
    layers: list[LayerState]
    y_a: Tensor  # (C, 3, n)
    y_p: Tensor
    l: Tensor  # (C, 2)


class MTMN:
    def __init__(self, config: ModelConfig, params: dict[str, Param]):
        self.config = config
        self.params = params
        cfg = config
        self.encoder = self._gru("encoder", cfg.D, cfg.d)
        self.head = AttentionHead(
            params["attention.v_a"],
            params["attention.v_p"],
            params["attention.Q_a"],
            params["attention.Q_p"],
            self._gru("feature_gru_a", 2 * cfg.K, 2 * cfg.K),
            self._gru("feature_gru_p", 2 * cfg.K, 2 * cfg.K),
        )

    def _gru(self, prefix, din, dh) -> GRU:
        return GRU(din, dh, {k.split(".", 1)[1]: p for k, p in self.params.items() if k.startswith(prefix + ".")})

    # ------------------------------------------------------------------
    # construction

    @classmethod
    def create(cls, config: ModelConfig, seed: int = 0, table: EmbeddingTable | None = None) -> "MTMN":
        rng = np.random.default_rng(seed)
        cfg = config
        C, D, d, K, m = cfg.C, cfg.D, cfg.d, cfg.K, cfg.m
        params: dict[str, Param] = {}

        def add(name, value, trainable=True):
            params[name] = Param(name, value, trainable)

        if not cfg.freeze_embeddings:
            if table is None:
                raise ValueError("trainable embeddings need the embedding table at construction")
            add("embedding.table", table.matrix.copy())
        for prefix, din, dh in (("encoder", D, d), ("feature_gru_a", 2 * K, 2 * K), ("feature_gru_p", 2 * K, 2 * K)):
            for p in GRU.create(prefix, din, dh, rng).params.values():
                params[p.name] = p
        add("attention.v_a", init_uniform(rng, 2 * K))
        add("attention.v_p", init_uniform(rng, 2 * K))
        add("attention.Q_a", init_uniform(rng, (d, d)))
        add("attention.Q_p", init_uniform(rng, (d, d)))
        add("heads.W_a", init_uniform(rng, (3, 2 * K)))
        add("heads.W_p", init_uniform(rng, (3, 2 * K)))
        add("prototypes.u_a", init_uniform(rng, (C, d)))
        add("prototypes.u_p", init_uniform(rng, (C, d)))
        add("sentence.W_c", init_uniform(rng, (C, 2, 2 * d)))
        mode = cfg.sharing.tensor_sharing
        for fam in FAMILIES:
            if mode == "factored":
                add(f"tensors.{fam}.Z", init_uniform(rng, (K, C, m)))
                add(f"tensors.{fam}.basis", init_uniform(rng, (K, m, d, d), 0.1 / math.sqrt(m)))
            elif mode == "independent":
                add(f"tensors.{fam}", init_uniform(rng, (C, K, d, d)))
            else:
                add(f"tensors.{fam}", init_uniform(rng, (K, d, d)))
        return cls(config, params)

    def trainable(self) -> list[Param]:
        return [p for p in self.params.values() if p.trainable]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.trainable())

    # ------------------------------------------------------------------
    # forward

    def interaction_tensors(self) -> dict[str, Tensor]:
        """The four (C, K, d, d) interaction tensors under the sharing mode."""
        mode = self.config.sharing.tensor_sharing
        out = {}
        for fam in FAMILIES:
            if mode == "factored":
                out[fam] = materialize_all(self.params[f"tensors.{fam}.Z"], self.params[f"tensors.{fam}.basis"])
            elif mode == "independent":
                out[fam] = self.params[f"tensors.{fam}"]
            else:
                out[fam] = ad.stack([self.params[f"tensors.{fam}"]] * self.config.C, axis=0)
        return out

    def embed(self, tokens: list[str], table: EmbeddingTable) -> Tensor:
        if table.D != self.config.D:
            raise ad.DimensionError(f"embedding dim {table.D} != model input dim {self.config.D}")
        return embed(tokens, table, self.params.get("embedding.table"))

    def forward(
        self,
        tokens: list[str],
        table: EmbeddingTable,
        dropout: Dropout | None = None,
        identity_mixing: bool = False,
    ) -> Forward:
        """Full forward pass for one sentence.

        ``dropout`` masks the embeddings and the mixed token features; pass
        None for evaluation.  ``identity_mixing`` keeps the mixing steps in
        the graph with an identity similarity while sharing is off.
        """
        cfg = self.config
        X = self.embed(tokens, table)
        if dropout is not None:
            X = dropout(X)
        H = gru_forward(X, self.encoder)
        identity = Tensor(np.eye(cfg.C)) if identity_mixing and not cfg.sharing.feature_sharing else None
        layers = forward_layers(
            H,
            self.params["prototypes.u_a"],
            self.params["prototypes.u_p"],
            self.interaction_tensors(),
            self.head,
            cfg.T,
            feature_sharing=cfg.sharing.feature_sharing,
            feature_dropout=dropout,
            identity_S=identity,
        )
        last = layers[-1]
        y_a, y_p = predict_token_labels(
            last.aspect.r_tilde, last.opinion.r_tilde, self.params["heads.W_a"], self.params["heads.W_p"]
        )
        l = predict_sentence(last.aspect.o_tilde, last.opinion.o_tilde, self.params["sentence.W_c"])
        return Forward(X, H, layers, y_a, y_p, l)

    def loss(self, fwd: Forward, gold: GoldChannels) -> tuple[Tensor, LossReport]:
        aux = self.config.sharing.auxiliary_task
        L_tok = token_loss(fwd.y_a, fwd.y_p, gold.aspect, gold.opinion)
        L_sen = sentence_loss(fwd.l, gold.sentence) if aux else None
        return combined_loss(L_tok, L_sen, self.config.lam, aux)

    def sentence_loss(self, sentence: Sentence, table: EmbeddingTable, dropout: Dropout | None = None):
        gold = encode_gold(sentence, self.config.C)
        return self.loss(self.forward(sentence.tokens, table, dropout), gold)

    def predict(self, tokens: list[str], table: EmbeddingTable) -> set[TermSpan]:
        with no_grad():
            fwd = self.forward(tokens, table)
        return decode_probabilities(fwd.y_a.data, fwd.y_p.data)

    @property
    def categories(self) -> list[str]:
        return self.config.categories


def apply_sharing_config(cfg: SharingConfig, model: MTMN, seed: int = 0) -> MTMN:
    """A model with the given sharing switches.

    Parameters whose names and shapes carry over are copied from ``model``;
    tensors that change layout are freshly initialised from ``seed``.
    """
    new = MTMN.create(replace(model.config, sharing=cfg), seed=seed)
    for name, p in new.params.items():
        old = model.params.get(name)
        if old is not None and old.shape == p.shape:
            p.assign(old.data)
    return new


def check_gradients(
    model: MTMN,
    sentence: Sentence,
    table: EmbeddingTable,
    epsilon: float = 1e-5,
    rel_tol: float = 1e-4,
    abs_floor: float = 1e-7,
    max_per_param: int | None = None,
    grad_hook=None,
) -> GradCheckReport:
    """Finite-difference check of the full objective on one sentence."""
    gold = encode_gold(sentence, model.config.C)

    def loss_fn():
        return model.loss(model.forward(sentence.tokens, table), gold)[0]

    return finite_diff_check(
        loss_fn,
        model.trainable(),
        epsilon=epsilon,
        rel_tol=rel_tol,
        abs_floor=abs_floor,
        max_per_param=max_per_param,
        grad_hook=grad_hook,
    )
