"""Command-line entry points.

Usage::

    mtmn train --corpus train.json --embeddings vectors.txt --out runs/a
    mtmn eval --corpus test.json --checkpoint runs/a/checkpoint --out runs/a
    mtmn tag --checkpoint runs/a/checkpoint --input sentences.txt
    mtmn inspect-attention --checkpoint runs/a/checkpoint --corpus test.json
    mtmn gradcheck
    mtmn sweep-m --corpus train.json --embeddings vectors.txt --m-list 2,5,8

Settings come from defaults, then ``--config`` (an INI-style file of
``key = value`` lines under ``[paths]``, ``[model]``, ``[training]`` and
``[sharing]``), then command-line flags.  Exit status is 0 on success, 1 on
runtime failure and 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .autodiff import DimensionError, no_grad
from .corpus import Corpus, CorpusError, EmbeddingFormatError, EmbeddingTable, Sentence, load_corpus, load_embeddings
from .decoder import spans_to_json
from .evaluator import evaluate, write_report
from .model import MTMN, ModelConfig, check_gradients
from .sharing import SharingConfig
from .synthetic import corpus_embeddings, make_synthetic_corpus, random_embeddings
from .trainer import CheckpointError, TrainConfig, TrainingError, load_checkpoint, read_manifest, save_checkpoint, train, write_loss_log

logger = logging.getLogger("mtmn")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    corpus: str | None = None
    embeddings: str | None = None
    checkpoint: str | None = None
    out: str | None = None
    validation: str | None = None
    D: int | None = None
    d: int = 50
    K: int = 20
    m: int = 5
    T: int = 2
    epochs: int = 10
    seed: int = 0
    lam: float = 1.0
    dropout: float = 0.5
    lr: float = 0.001
    rho: float = 0.9
    eps: float = 1e-8
    lr_decay: float = 1.0
    shuffle: bool = True
    freeze_embeddings: bool = True
    tensor_sharing: str = "factored"
    feature_sharing: bool = True
    auxiliary_task: bool = True

    def sharing(self) -> SharingConfig:
        return SharingConfig(self.tensor_sharing, self.feature_sharing, self.auxiliary_task)

    def train_config(self, D: int) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs, seed=self.seed, lam=self.lam, dropout=self.dropout, sharing=self.sharing(),
            D=D, d=self.d, K=self.K, m=self.m, T=self.T, lr=self.lr, rho=self.rho, eps=self.eps,
            shuffle=self.shuffle, lr_decay=self.lr_decay, freeze_embeddings=self.freeze_embeddings,
        )


# config-file keys per section -> RunConfig field
CONFIG_KEYS = {
    "paths": {"corpus": "corpus", "embeddings": "embeddings", "checkpoint": "checkpoint", "out": "out",
              "validation": "validation"},
    "model": {"embedding_dim": "D", "hidden_dim": "d", "k_interactions": "K", "factor_rank": "m",
              "layers": "T"},
    "training": {"epochs": "epochs", "seed": "seed", "lambda": "lam", "dropout": "dropout", "lr": "lr",
                 "rho": "rho", "eps": "eps", "lr_decay": "lr_decay", "shuffle": "shuffle",
                 "freeze_embeddings": "freeze_embeddings"},
    "sharing": {"tensor_sharing": "tensor_sharing", "feature_sharing": "feature_sharing",
                "auxiliary_task": "auxiliary_task"},
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    if "bool" in kind:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{name}: expected a boolean, got {raw!r}")
    try:
        if "int" in kind:
            return int(raw)
        if "float" in kind:
            return float(raw)
    except ValueError:
        raise UsageError(f"{name}: cannot parse {raw!r}") from None
    return raw.strip()


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        known = CONFIG_KEYS.get(section)
        if known is None:
            raise UsageError(f"{path}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in known:
                raise UsageError(f"{path}: unknown key {key!r} in [{section}]")
            values[known[key]] = _coerce(known[key], raw)
    return values


def resolve_config(args: argparse.Namespace, defaults: dict | None = None) -> RunConfig:
    values = dict(defaults or {})
    if args.config:
        values.update(read_config_file(args.config))
    flag_fields = {
        "corpus": "corpus", "embeddings": "embeddings", "checkpoint": "checkpoint", "out": "out",
        "validation": "validation", "seed": "seed", "epochs": "epochs", "lam": "lam", "dropout": "dropout",
        "layers": "T", "k_interactions": "K", "factor_rank": "m", "hidden_dim": "d", "lr": "lr",
    }
    for flag, name in flag_fields.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[name] = value
    if getattr(args, "no_tensor_sharing", False):
        values["tensor_sharing"] = "independent"
    if getattr(args, "single_shared_tensor", False):
        values["tensor_sharing"] = "single-shared"
    if getattr(args, "no_feature_sharing", False):
        values["feature_sharing"] = False
    if getattr(args, "no_auxiliary", False):
        values["auxiliary_task"] = False
    cfg = RunConfig(**values)
    try:
        cfg.sharing()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not 0 <= cfg.dropout < 1:
        raise UsageError("dropout must be in [0, 1)")
    return cfg


# ---------------------------------------------------------------------------
# helpers


def _need_file(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} path {path} does not exist")
    return p


def _out_dir(cfg: RunConfig) -> Path | None:
    if cfg.out is None:
        return None
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _embeddings(spec: str | None, corpus: Corpus | None, seed: int) -> EmbeddingTable:
    """Load an embedding file, or ``random:<D>`` for seeded vectors over the corpus vocabulary."""
    if spec and spec.startswith("random:"):
        D = int(spec.split(":", 1)[1])
        tokens = [t for s in corpus.sentences for t in s.tokens] if corpus else []
        return random_embeddings(tokens, D, seed)
    return load_embeddings(_need_file(spec, "embeddings"))


def _load_model(cfg: RunConfig) -> tuple[MTMN, dict]:
    path = _need_file(cfg.checkpoint, "checkpoint")
    return load_checkpoint(path), read_manifest(path)


def _model_embeddings(cfg: RunConfig, manifest: dict, corpus: Corpus | None) -> EmbeddingTable:
    spec = cfg.embeddings or manifest["extra"].get("run", {}).get("embeddings")
    if spec and spec.startswith("random:"):
        run = manifest["extra"].get("run", {})
        train_corpus = load_corpus(run["corpus"]) if run.get("corpus") else corpus
        return _embeddings(spec, train_corpus, run.get("seed", cfg.seed))
    return _embeddings(spec, corpus, cfg.seed)


def _echo(cfg: RunConfig, out: Path | None) -> dict:
    doc = asdict(cfg)
    logger.info("effective config: %s", json.dumps(doc, sort_keys=True))
    if out is not None:
        (out / "run_config.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    return doc


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: RunConfig) -> int:
    corpus = load_corpus(_need_file(cfg.corpus, "corpus"))
    table = _embeddings(cfg.embeddings, corpus, cfg.seed)
    out = _out_dir(cfg) or Path(".")
    run = _echo(cfg, out)
    tcfg = cfg.train_config(cfg.D or table.D)
    if tcfg.D != table.D:
        raise UsageError(f"embedding_dim {tcfg.D} does not match embeddings of dimension {table.D}")
    ckpt = Path(cfg.checkpoint) if cfg.checkpoint else out / "checkpoint"
    validation = load_corpus(_need_file(cfg.validation, "validation")) if cfg.validation else None
    best = {"f1": -1.0}

    def on_epoch(epoch, model):
        if validation is not None:
            rep = evaluate(model, validation, table)
            f1 = (rep.f1("ASC") + rep.f1("OPC")) / 2
            if f1 > best["f1"]:
                best["f1"] = f1
                save_checkpoint(model, ckpt.with_name(ckpt.name + "_best"), cfg.seed, {"run": run, "epoch": epoch})
        return False

    model, log = train(corpus, table, tcfg, callback=on_epoch)
    save_checkpoint(model, ckpt, cfg.seed, {"run": run, "epoch": len(log)})
    write_loss_log(log, out / "loss_log.csv", tcfg.sharing.auxiliary_task)
    print(f"trained {len(log)} epochs; checkpoint at {ckpt}")
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    corpus = load_corpus(_need_file(cfg.corpus, "corpus"))
    model, manifest = _load_model(cfg)
    if model.categories != corpus.categories:
        raise DimensionError(
            f"checkpoint has {len(model.categories)} categories {model.categories}, "
            f"corpus has {corpus.C} {corpus.categories}"
        )
    table = _model_embeddings(cfg, manifest, corpus)
    report = evaluate(model, corpus, table)
    out = _out_dir(cfg)
    run = _echo(cfg, out)
    if out is not None:
        write_report(report, out / "eval_report", run)
    print(report.to_text(), end="")
    return 0


def read_raw_sentences(path) -> list[Sentence]:
    """Whitespace-tokenised lines, or a corpus JSON file (annotations ignored)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json" and text.strip():
        doc = json.loads(text)
        recs = doc["sentences"] if isinstance(doc, dict) else doc
        return [Sentence(str(r.get("id", i)), list(r["tokens"])) for i, r in enumerate(recs)]
    lines = [ln.split() for ln in text.splitlines()]
    return [Sentence(str(i), toks) for i, toks in enumerate(lines) if toks]


def tag_sentences(model: MTMN, sentences: list[Sentence], table: EmbeddingTable) -> list[dict]:
    return [
        {"id": s.id, "tokens": s.tokens,
         "spans": spans_to_json(model.predict(s.tokens, table), s.tokens, model.categories)}
        for s in sentences
    ]


def cmd_tag(cfg: RunConfig, input_path: str | None) -> int:
    sentences = read_raw_sentences(_need_file(input_path, "input"))
    model, manifest = _load_model(cfg)
    table = _model_embeddings(cfg, manifest, None)
    doc = tag_sentences(model, sentences, table)
    out = _out_dir(cfg)
    run = _echo(cfg, out)
    text = json.dumps(doc, indent=1)
    if out is not None:
        (out / "tagged.json").write_text(json.dumps({"config": run, "sentences": doc}, indent=1))
    print(text)
    return 0


def format_attention(model: MTMN, sentence: Sentence, table: EmbeddingTable, top: int | None = None) -> str:
    """Per layer, channel and category: ``c: token (score), ...`` lines, then the similarity tables."""
    with no_grad():
        fwd = model.forward(sentence.tokens, table)
    lines = [f"sentence {sentence.id}: {' '.join(sentence.tokens)}"]
    for t, layer in enumerate(fwd.layers, start=1):
        lines.append(f"layer {t}")
        for channel in ("aspect", "opinion"):
            st = layer.channel(channel)
            lines.append(f"  {channel}")
            for c in range(model.config.C):
                alpha = st.alpha.data[c]
                order = np.argsort(-alpha, kind="stable")[:top] if top else range(len(alpha))
                items = ", ".join(f"{sentence.tokens[j]} ({alpha[j]:.2f})" for j in order)
                lines.append(f"    {c + 1}: {items}")
        for channel in ("aspect", "opinion"):
            S = layer.channel(channel).S
            if S is None:
                continue
            lines.append(f"  similarity {channel}")
            C = S.shape[0]
            lines.append("       " + "".join(f"{c + 1:>7}" for c in range(C)))
            for c in range(C):
                lines.append(f"    {c + 1:<3}" + "".join(f"{v:7.3f}" for v in S.data[c]))
    return "\n".join(lines)


def cmd_inspect_attention(cfg: RunConfig, top: int | None = None) -> int:
    corpus = load_corpus(_need_file(cfg.corpus, "corpus"))
    model, manifest = _load_model(cfg)
    table = _model_embeddings(cfg, manifest, corpus)
    legend = "categories: " + ", ".join(f"{i + 1}={name}" for i, name in enumerate(model.categories))
    blocks = [legend] + [format_attention(model, s, table, top) for s in corpus.sentences]
    text = "\n\n".join(blocks) + "\n"
    out = _out_dir(cfg)
    run = _echo(cfg, out)
    if out is not None:
        (out / "attention.txt").write_text(text + "\nconfig " + json.dumps(run, sort_keys=True) + "\n")
    print(text, end="")
    return 0


GRADCHECK_DEFAULTS = dict(D=8, d=4, K=2, m=2, T=2)


def cmd_gradcheck(cfg: RunConfig, init_scale: float = 0.5, corrupt: bool = False) -> int:
    """Central-difference check of every trainable scalar on one sentence."""
    if cfg.corpus:
        corpus = load_corpus(_need_file(cfg.corpus, "corpus"))
    else:
        corpus = make_synthetic_corpus(4, C=3, seed=cfg.seed)
    D = cfg.D or GRADCHECK_DEFAULTS["D"]
    table = corpus_embeddings(corpus, D, cfg.seed) if not cfg.embeddings else _embeddings(cfg.embeddings, corpus, cfg.seed)
    mcfg = ModelConfig(corpus.categories, table.D, cfg.d, cfg.K, cfg.m, cfg.T, cfg.sharing(), cfg.lam)
    model = MTMN.create(mcfg, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    for p in model.trainable():
        p.assign(rng.uniform(-init_scale, init_scale, p.shape))
    sentence = corpus.sentences[0]
    hook = None
    if corrupt:
        def hook(p, g):
            return g * 1.01 + 1e-3 if p.name == "heads.W_a" else g
    report = check_gradients(model, sentence, table, grad_hook=hook)
    worst = sorted(report.per_param().items(), key=lambda kv: -kv[1])[:10]
    lines = [f"gradcheck on sentence {sentence.id} (n={len(sentence)}), {len(report.entries)} scalars",
             f"max relative error {report.max_rel_err:.3e} (tolerance {report.rel_tol:g}, "
             f"absolute floor {report.abs_floor:g})",
             "worst parameters:"]
    lines += [f"  {name:<28} {err:.3e}" for name, err in worst]
    lines.append("PASS" if report.passed else "FAIL")
    text = "\n".join(lines) + "\n"
    out = _out_dir(cfg)
    run = _echo(cfg, out)
    if out is not None:
        (out / "gradcheck.txt").write_text(text + "config " + json.dumps(run, sort_keys=True) + "\n")
    print(text, end="")
    return 0 if report.passed else 1


def cmd_sweep_m(cfg: RunConfig, m_list: list[int]) -> int:
    corpus = load_corpus(_need_file(cfg.corpus, "corpus"))
    table = _embeddings(cfg.embeddings, corpus, cfg.seed)
    test = load_corpus(_need_file(cfg.validation, "validation")) if cfg.validation else corpus
    out = _out_dir(cfg) or Path(".")
    _echo(cfg, out)
    rows = []
    for m in m_list:
        run = replace(cfg, m=m, tensor_sharing="factored")
        model, _ = train(corpus, table, run.train_config(table.D))
        rep = evaluate(model, test, table)
        note = f"m>=C ({corpus.C})" if m >= corpus.C else ""
        rows.append([m] + [f"{rep.f1(f):.6f}" for f in ("ASC", "OPC", "AS", "OP")] + [note])
    path = out / "sweep_m.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "ASC", "OPC", "AS", "OP", "note"])
        w.writerows(rows)
    print(path.read_text(), end="")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI-style key = value settings file")
    p.add_argument("--corpus")
    p.add_argument("--embeddings", help="word2vec text file, or random:<D> for seeded vectors")
    p.add_argument("--checkpoint")
    p.add_argument("--out", help="output directory")
    p.add_argument("--validation", help="held-out corpus")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--k-interactions", type=int)
    p.add_argument("--factor-rank", type=int)
    p.add_argument("--no-tensor-sharing", action="store_true", help="independent tensors per category")
    p.add_argument("--single-shared-tensor", action="store_true", help="one tensor set for all categories")
    p.add_argument("--no-feature-sharing", action="store_true")
    p.add_argument("--no-auxiliary", action="store_true")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtmn", description="Multi-task memory network for category-specific term extraction")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "eval", "tag", "inspect-attention", "gradcheck", "sweep-m"):
        p = sub.add_parser(name)
        _common(p)
        if name == "tag":
            p.add_argument("--input", help="one whitespace-tokenised sentence per line, or corpus JSON")
        if name == "inspect-attention":
            p.add_argument("--top", type=int, help="show only the highest-scoring tokens")
        if name == "gradcheck":
            p.add_argument("--init-scale", type=float, default=0.5)
            p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
        if name == "sweep-m":
            p.add_argument("--m-list", default="2,5,8")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "gradcheck":
            cfg = resolve_config(args, GRADCHECK_DEFAULTS)
            return cmd_gradcheck(cfg, args.init_scale, args.corrupt_gradient)
        cfg = resolve_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg)
        if args.command == "tag":
            return cmd_tag(cfg, args.input)
        if args.command == "inspect-attention":
            return cmd_inspect_attention(cfg, args.top)
        try:
            m_list = [int(x) for x in args.m_list.split(",") if x.strip()]
        except ValueError:
            raise UsageError(f"--m-list must be comma-separated integers, got {args.m_list!r}") from None
        return cmd_sweep_m(cfg, m_list)
    except UsageError as exc:
        parser.error(str(exc))
    except (CorpusError, EmbeddingFormatError, CheckpointError, DimensionError, TrainingError, ValueError) as exc:
        print(f"mtmn: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
