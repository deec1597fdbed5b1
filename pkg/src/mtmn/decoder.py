"""Turn channel probabilities into category labels and term spans."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .autodiff import ContractError
from .corpus import B, O, GoldChannels

LABELS = ("BA", "IA", "BP", "IP", "O")


@dataclass(frozen=True)
class CategoryDecision:
    label: str
    prob: float


@dataclass(frozen=True, order=True)
class TermSpan:
    start: int
    end: int
    kind: str
    category: int

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


def _check_prob(y: np.ndarray) -> None:
    if y.shape != (3,) or np.any(y < 0) or abs(y.sum() - 1.0) > 1e-6:
        raise ContractError(f"expected a probability 3-vector, got {y!r}")


def decide_category_label(y_a, y_p) -> CategoryDecision:
    """Combine the aspect and opinion distributions for one token and category.

    Both argmaxes O gives O; exactly one O gives the other channel's label;
    otherwise the channel with the larger winning probability wins, the
    aspect channel on ties.  Argmax ties go to the lower index (B < I < O).
    """
    y_a, y_p = np.asarray(y_a, dtype=float), np.asarray(y_p, dtype=float)
    _check_prob(y_a)
    _check_prob(y_p)
    ia, ip = int(np.argmax(y_a)), int(np.argmax(y_p))
    pa, pp = float(y_a[ia]), float(y_p[ip])
    if ia == O and ip == O:
        return CategoryDecision("O", max(pa, pp))
    if ip == O or (ia != O and pa >= pp):
        return CategoryDecision("BA" if ia == B else "IA", pa)
    return CategoryDecision("BP" if ip == B else "IP", pp)


def integrate_categories(decisions: Sequence[CategoryDecision]) -> set[tuple[int, str]]:
    """All non-O (category, label) pairs for one token."""
    return {(c, d.label) for c, d in enumerate(decisions) if d.label != "O"}


def extract_spans(labels: Iterable[str], kind: str = "aspect", category: int = 0) -> list[TermSpan]:
    """Maximal B I* runs of a single channel's label sequence.

    An I that does not continue a term starts a new one.
    """
    spans = []
    start = None
    for j, lab in enumerate(labels):
        if lab == "B" or (lab == "I" and start is None):
            if start is not None:
                spans.append(TermSpan(start, j - 1, kind, category))
            start = j
        elif lab == "O":
            if start is not None:
                spans.append(TermSpan(start, j - 1, kind, category))
            start = None
        elif lab != "I":
            raise ValueError(f"unknown BIO label {lab!r}")
    if start is not None:
        spans.append(TermSpan(start, j, kind, category))
    return spans


def decode_probabilities(y_a: np.ndarray, y_p: np.ndarray) -> set[TermSpan]:
    """Spans from (C, 3, n) channel probabilities."""
    C, _, n = y_a.shape
    spans: set[TermSpan] = set()
    for c in range(C):
        seq = {"aspect": ["O"] * n, "opinion": ["O"] * n}
        for j in range(n):
            label = decide_category_label(y_a[c, :, j], y_p[c, :, j]).label
            if label != "O":
                seq["aspect" if label[1] == "A" else "opinion"][j] = label[0]
        for kind, labs in seq.items():
            spans.update(extract_spans(labs, kind, c))
    return spans


def gold_spans(g: GoldChannels) -> set[TermSpan]:
    """Decode gold one-hot channels back into spans."""
    spans: set[TermSpan] = set()
    for kind in ("aspect", "opinion"):
        ch = g.channel(kind)
        for c in range(ch.shape[0]):
            labs = ["BIO"[i] for i in ch[c].argmax(axis=0)]
            spans.update(extract_spans(labs, kind, c))
    return spans


def spans_to_json(spans: Iterable[TermSpan], tokens: Sequence[str], categories: Sequence[str]) -> list[dict]:
    return [
        {
            "span": [s.start, s.end],
            "kind": s.kind,
            "category": categories[s.category],
            "text": " ".join(tokens[s.start : s.end + 1]),
        }
        for s in sorted(spans, key=lambda s: (s.start, s.end, s.kind, s.category))
    ]
