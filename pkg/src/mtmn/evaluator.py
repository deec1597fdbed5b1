"""Exact-match span scoring for the ASC, OPC, AS and OP metric families."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .corpus import Corpus, EmbeddingTable, encode_gold
from .decoder import TermSpan, gold_spans

FAMILIES = ("ASC", "OPC", "AS", "OP")


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float
    tp: int = 0
    n_pred: int = 0
    n_gold: int = 0


def prf(tp: int, n_pred: int, n_gold: int) -> PRF:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return PRF(p, r, f, tp, n_pred, n_gold)


def f1_exact(pred: Iterable, gold: Iterable) -> PRF:
    """Precision/recall/F1 of exact set matches.

    Items are compared as whole tuples, so callers decide which fields
    (sentence id, span, kind, category) take part in the match.
    """
    pred, gold = set(pred), set(gold)
    return prf(len(pred & gold), len(pred), len(gold))


def accumulate_agnostic(pred: Iterable[TermSpan]) -> set[tuple[int, int, str]]:
    """Drop categories: a (span, kind) counts once if any category carries it."""
    return {(s.start, s.end, s.kind) for s in pred}


@dataclass
class EvalReport:
    families: dict[str, PRF]
    per_category: dict[str, dict[str, PRF]] = field(default_factory=dict)

    def f1(self, family: str) -> float:
        return self.families[family].f1

    def to_json(self) -> dict:
        return {
            "families": {k: asdict(v) for k, v in self.families.items()},
            "per_category": {
                fam: {c: asdict(v) for c, v in cats.items()} for fam, cats in self.per_category.items()
            },
        }

    def to_text(self) -> str:
        rows = [f"{'':<24}" + "".join(f"{fam:>8}" for fam in FAMILIES)]
        for label, attr in (("P", "precision"), ("R", "recall"), ("F1", "f1")):
            rows.append(
                f"{label:<24}" + "".join(f"{100 * getattr(self.families[f], attr):8.2f}" for f in FAMILIES)
            )
        if self.per_category:
            rows.append("")
            rows.append(f"{'category F1':<24}{'ASC':>8}{'OPC':>8}")
            for cat in self.per_category["ASC"]:
                asc = self.per_category["ASC"][cat].f1
                opc = self.per_category["OPC"][cat].f1
                rows.append(f"{cat:<24}{100 * asc:8.2f}{100 * opc:8.2f}")
        return "\n".join(rows) + "\n"


def score(pred: Sequence[set[TermSpan]], gold: Sequence[set[TermSpan]], categories: Sequence[str]) -> EvalReport:
    """Micro-averaged report over aligned per-sentence prediction and gold sets."""
    if len(pred) != len(gold):
        raise ValueError("prediction and gold lists differ in length")
    tagged = {"pred": {f: set() for f in FAMILIES}, "gold": {f: set() for f in FAMILIES}}
    for i, (p, g) in enumerate(zip(pred, gold)):
        for side, spans in (("pred", p), ("gold", g)):
            out = tagged[side]
            for s in spans:
                fam = "ASC" if s.kind == "aspect" else "OPC"
                out[fam].add((i, s.start, s.end, s.category))
            for start, end, kind in accumulate_agnostic(spans):
                out["AS" if kind == "aspect" else "OP"].add((i, start, end))
    families = {f: f1_exact(tagged["pred"][f], tagged["gold"][f]) for f in FAMILIES}
    per_category = {}
    for fam in ("ASC", "OPC"):
        per_category[fam] = {}
        for c, name in enumerate(categories):
            pc = {t for t in tagged["pred"][fam] if t[3] == c}
            gc = {t for t in tagged["gold"][fam] if t[3] == c}
            per_category[fam][name] = f1_exact(pc, gc)
    return EvalReport(families, per_category)


class Tagger(Protocol):
    categories: list[str]

    def predict(self, tokens: list[str], table: EmbeddingTable) -> set[TermSpan]: ...


def evaluate(model: Tagger, corpus: Corpus, table: EmbeddingTable) -> EvalReport:
    """Decode every sentence (no dropout) and score against the gold spans."""
    if list(model.categories) != list(corpus.categories):
        raise ValueError(
            f"model categories {list(model.categories)} do not match corpus categories {corpus.categories}"
        )
    pred = [model.predict(s.tokens, table) for s in corpus.sentences]
    gold = [gold_spans(encode_gold(s, corpus.C)) for s in corpus.sentences]
    return score(pred, gold, corpus.categories)


def write_report(report: EvalReport, stem, config: dict | None = None) -> None:
    """Write ``<stem>.txt`` and ``<stem>.json``."""
    stem = Path(stem)
    text = report.to_text()
    doc = report.to_json()
    if config is not None:
        text += "\nconfig " + json.dumps(config, sort_keys=True) + "\n"
        doc["config"] = config
    stem.with_suffix(".txt").write_text(text)
    stem.with_suffix(".json").write_text(json.dumps(doc, indent=1, sort_keys=True))
