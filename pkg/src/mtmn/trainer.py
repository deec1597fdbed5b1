"""RMSProp training loop, dropout, and checkpoint I/O."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import Param, backward
from .corpus import Corpus, EmbeddingTable, encode_gold
from .heads import LossReport
from .model import MTMN, Dropout, ModelConfig
from .sharing import SharingConfig

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
MANIFEST = "manifest.txt"
BLOB = "params.bin"


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


def rmsprop_step(param: np.ndarray, grad: np.ndarray, cache: np.ndarray, lr: float = 0.001, rho: float = 0.9, eps: float = 1e-8):
    """One RMSProp update; returns ``(new_param, new_cache)``."""
    cache = rho * cache + (1.0 - rho) * grad * grad
    return param - lr * grad / (np.sqrt(cache) + eps), cache


@dataclass
class RMSProp:
    lr: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    cache: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params) -> None:
        for p in params:
            cache = self.cache.get(p.name)
            if cache is None:
                cache = np.zeros_like(p.data)
            p.data, self.cache[p.name] = rmsprop_step(p.data, p.grad, cache, self.lr, self.rho, self.eps)


# the per-parameter optimizer record
OptimizerState = RMSProp


def apply_dropout(rate: float, rng: np.random.Generator) -> Dropout | None:
    """Training-time dropout context for :meth:`MTMN.forward`.

    Masks are drawn for the embedding input and for the mixed token
    features; evaluation passes ``None`` instead.
    """
    return Dropout(rate, rng) if rate > 0 else None


@dataclass
class TrainConfig:
    epochs: int = 10
    seed: int = 0
    lam: float = 1.0
    dropout: float = 0.5
    sharing: SharingConfig = field(default_factory=SharingConfig)
    D: int = 150
    d: int = 50
    K: int = 20
    m: int = 5
    T: int = 2
    lr: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    shuffle: bool = True
    lr_decay: float = 1.0
    freeze_embeddings: bool = True

    def model_config(self, categories: list[str]) -> ModelConfig:
        return ModelConfig(
            list(categories), self.D, self.d, self.K, self.m, self.T, self.sharing, self.lam, self.freeze_embeddings
        )

    def to_dict(self) -> dict:
        out = asdict(self)
        out["sharing"] = asdict(self.sharing)
        return out


@dataclass
class EpochLog:
    epoch: int
    report: LossReport


def train(
    corpus: Corpus,
    table: EmbeddingTable,
    cfg: TrainConfig,
    model: MTMN | None = None,
    callback: Callable[[int, MTMN], bool] | None = None,
) -> tuple[MTMN, list[EpochLog]]:
    """Per-sentence RMSProp over ``cfg.epochs`` epochs.

    Loss reports are summed over the sentences of an epoch.  ``callback``
    runs after every epoch and may return True to stop early.
    """
    if not corpus.sentences:
        raise TrainingError("cannot train on an empty corpus")
    if model is None:
        model = MTMN.create(cfg.model_config(corpus.categories), seed=cfg.seed, table=table)
    rng = np.random.default_rng(cfg.seed + 1)
    dropout = apply_dropout(cfg.dropout, rng)
    opt = RMSProp(cfg.lr, cfg.rho, cfg.eps)
    golds = [encode_gold(s, corpus.C) for s in corpus.sentences]
    params = model.trainable()
    log: list[EpochLog] = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(corpus)) if cfg.shuffle else np.arange(len(corpus))
        tot = LossReport(0.0, 0.0, cfg.lam, 0.0, cfg.sharing.auxiliary_task)
        for i in order:
            s = corpus.sentences[i]
            model.zero_grad()
            loss, rep = model.loss(model.forward(s.tokens, table, dropout), golds[i])
            if not np.isfinite(rep.L):
                raise TrainingError(f"non-finite loss {rep.L} on sentence {s.id!r} in epoch {epoch}")
            backward(loss)
            opt.step(params)
            tot.L_tok += rep.L_tok
            tot.L_sen += rep.L_sen
            tot.L += rep.L
        log.append(EpochLog(epoch, tot))
        logger.info("epoch %d: L=%.4f L_tok=%.4f L_sen=%.4f", epoch, tot.L, tot.L_tok, tot.L_sen)
        opt.lr *= cfg.lr_decay
        if callback is not None and callback(epoch, model):
            break
    return model, log


def write_loss_log(log: list[EpochLog], path, auxiliary: bool = True) -> None:
    lines = ["epoch,L_tok,L_sen,L" if auxiliary else "epoch,L_tok,L"]
    for e in log:
        r = e.report
        cols = [e.epoch, repr(r.L_tok)] + ([repr(r.L_sen)] if auxiliary else []) + [repr(r.L)]
        lines.append(",".join(str(c) for c in cols))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: MTMN, path, seed: int | None = None, extra: dict | None = None) -> None:
    """Write ``manifest.txt`` and ``params.bin`` into the directory ``path``.

    The manifest lists one ``param <name> <shape> <offset>`` line per
    parameter, offsets counted in float64 elements of the little-endian blob.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [
        f"format_version {CHECKPOINT_VERSION}",
        f"seed {seed if seed is not None else ''}".rstrip(),
        "config " + json.dumps(model.config.to_dict(), sort_keys=True),
    ]
    if extra:
        lines.append("extra " + json.dumps(extra, sort_keys=True))
    chunks = []
    offset = 0
    for name, p in model.params.items():
        shape = "x".join(str(s) for s in p.shape) or "scalar"
        lines.append(f"param {name} {shape} {offset} {int(p.trainable)}")
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").ravel())
        offset += p.data.size
    (path / MANIFEST).write_text("\n".join(lines) + "\n")
    blob = np.concatenate(chunks) if chunks else np.zeros(0)
    (path / BLOB).write_bytes(blob.astype("<f8").tobytes())


def read_manifest(path) -> dict:
    path = Path(path)
    try:
        text = (path / MANIFEST).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint manifest in {path}: {exc}") from exc
    out = {"params": [], "seed": None, "extra": {}}
    for line in text.splitlines():
        key, _, rest = line.partition(" ")
        if key == "format_version":
            out["version"] = int(rest)
        elif key == "seed":
            out["seed"] = int(rest) if rest else None
        elif key == "config":
            out["config"] = json.loads(rest)
        elif key == "extra":
            out["extra"] = json.loads(rest)
        elif key == "param":
            name, shape, offset, trainable = rest.split(" ")
            dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
            out["params"].append((name, dims, int(offset), trainable == "1"))
    if out.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {out.get('version')} unsupported (expected {CHECKPOINT_VERSION})"
        )
    return out


def load_checkpoint(path, model: MTMN | None = None) -> MTMN:
    """Load a checkpoint, into ``model`` if given (names and shapes must match)."""
    man = read_manifest(path)
    blob = np.frombuffer((Path(path) / BLOB).read_bytes(), dtype="<f8")
    if model is None:
        model = MTMN(ModelConfig.from_dict(man["config"]), _empty_params(man))
    names = {name for name, *_ in man["params"]}
    missing = set(model.params) - names
    if missing:
        raise CheckpointError(f"checkpoint v{CHECKPOINT_VERSION}: missing parameters {sorted(missing)}")
    for name, shape, offset, _ in man["params"]:
        p = model.params.get(name)
        if p is None:
            raise CheckpointError(f"checkpoint v{CHECKPOINT_VERSION}: unexpected parameter {name!r}")
        if p.shape != shape:
            raise CheckpointError(
                f"checkpoint v{CHECKPOINT_VERSION}: parameter {name!r} has shape {shape}, model expects {p.shape}"
            )
        size = int(np.prod(shape))
        if offset + size > blob.size:
            raise CheckpointError(f"checkpoint blob too short for parameter {name!r}")
        p.assign(blob[offset : offset + size].reshape(shape))
    return model


def _empty_params(man: dict) -> dict[str, Param]:
    return {name: Param(name, np.zeros(shape), trainable) for name, shape, _, trainable in man["params"]}
