"""Corpus and embedding loading, and gold label encoding.

Corpus files are JSON::

    {"categories": ["FOOD#QUALITY", ...],
     "sentences": [{"id": "s1", "tokens": ["The", "soup", ...],
                    "annotations": [{"span": [1, 1], "kind": "aspect",
                                     "category": "FOOD#QUALITY"}]}]}

Spans are inclusive token index ranges.  Embedding files use the word2vec
text format: a ``V D`` header followed by one ``token v1 ... vD`` row per
line.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

KINDS = ("aspect", "opinion")
# row order of every token-level label vector
BIO = ("B", "I", "O")
B, I, O = 0, 1, 2
UNK_TOKEN = "<unk>"


class CorpusError(ValueError):
    """A corpus file failed to parse or validate."""


class EmbeddingFormatError(ValueError):
    """An embedding file is malformed."""


@dataclass(frozen=True)
class Annotation:
    start: int
    end: int
    kind: str
    category: int

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass
class Sentence:
    id: str
    tokens: list[str]
    annotations: list[Annotation] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class Corpus:
    categories: list[str]
    sentences: list[Sentence]

    @property
    def C(self) -> int:
        return len(self.categories)

    def __len__(self) -> int:
        return len(self.sentences)

    def to_json(self) -> dict:
        return {
            "categories": list(self.categories),
            "sentences": [
                {
                    "id": s.id,
                    "tokens": list(s.tokens),
                    "annotations": [
                        {
                            "span": [a.start, a.end],
                            "kind": a.kind,
                            "category": self.categories[a.category],
                        }
                        for a in s.annotations
                    ],
                }
                for s in self.sentences
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1), encoding="utf-8")


def _validate_sentence(s: Sentence) -> None:
    if not s.tokens:
        raise CorpusError(f"sentence {s.id!r}: empty token list")
    n = len(s.tokens)
    occupied: dict[tuple[str, int], list[tuple[int, int]]] = {}
    for a in s.annotations:
        if not 0 <= a.start <= a.end < n:
            raise CorpusError(
                f"sentence {s.id!r}: span [{a.start}, {a.end}] outside 0..{n - 1}"
            )
        for lo, hi in occupied.setdefault((a.kind, a.category), []):
            if a.start <= hi and lo <= a.end:
                raise CorpusError(
                    f"sentence {s.id!r}: overlapping {a.kind} spans "
                    f"[{lo}, {hi}] and [{a.start}, {a.end}] in one category"
                )
        occupied[(a.kind, a.category)].append((a.start, a.end))


def corpus_from_json(doc: dict) -> Corpus:
    if not isinstance(doc, dict) or "categories" not in doc or "sentences" not in doc:
        raise CorpusError("corpus must be an object with 'categories' and 'sentences'")
    categories = doc["categories"]
    if not categories or not all(isinstance(c, str) for c in categories):
        raise CorpusError("'categories' must be a non-empty list of strings")
    if len(set(categories)) != len(categories):
        raise CorpusError("'categories' contains duplicates")
    index = {c: i for i, c in enumerate(categories)}
    sentences = []
    for pos, rec in enumerate(doc["sentences"]):
        sid = rec.get("id", f"#{pos}") if isinstance(rec, dict) else f"#{pos}"
        try:
            tokens = rec["tokens"]
            if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
                raise TypeError("tokens must be a list of strings")
            anns = []
            for a in rec.get("annotations", []):
                start, end = a["span"]
                kind = a["kind"]
                cat = a["category"]
                if kind not in KINDS:
                    raise CorpusError(f"sentence {sid!r}: unknown kind {kind!r}")
                if cat not in index:
                    raise CorpusError(f"sentence {sid!r}: unknown category {cat!r}")
                anns.append(Annotation(int(start), int(end), kind, index[cat]))
        except CorpusError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusError(f"sentence {sid!r}: malformed record ({exc})") from exc
        s = Sentence(str(sid), list(tokens), anns)
        _validate_sentence(s)
        sentences.append(s)
    return Corpus(list(categories), sentences)


def load_corpus(path) -> Corpus:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: invalid JSON ({exc})") from exc
    return corpus_from_json(doc)


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingTable:
    """Token vectors stored as rows of ``matrix``; the last row is UNK."""

    vocab: dict[str, int]
    matrix: np.ndarray
    duplicates: int = 0

    @property
    def D(self) -> int:
        return self.matrix.shape[1]

    @property
    def unk_index(self) -> int:
        return self.matrix.shape[0] - 1

    def index(self, token: str) -> int:
        return self.vocab.get(token, self.unk_index)

    def lookup(self, token: str) -> np.ndarray:
        return self.matrix[self.index(token)]

    @classmethod
    def from_dict(cls, vectors: dict[str, np.ndarray], dim: int | None = None) -> "EmbeddingTable":
        vectors = dict(vectors)
        unk = vectors.pop(UNK_TOKEN, None)
        if dim is None:
            dim = len(next(iter(vectors.values()))) if vectors else len(unk)
        rows = [np.asarray(v, dtype=np.float64) for v in vectors.values()]
        rows.append(np.zeros(dim) if unk is None else np.asarray(unk, dtype=np.float64))
        for r in rows:
            if r.shape != (dim,):
                raise EmbeddingFormatError(f"vector of shape {r.shape}, expected ({dim},)")
        return cls({t: i for i, t in enumerate(vectors)}, np.vstack(rows))


def load_embeddings(path) -> EmbeddingTable:
    vectors: dict[str, np.ndarray] = {}
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError(f"{path}:1: header must be 'V D'")
        try:
            V, D = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingFormatError(f"{path}:1: header must be 'V D'") from None
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(" ")
            if parts == [""]:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != D:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {D} values for {token!r}, got {len(values)}"
                )
            try:
                vec = np.array([float(v) for v in values])
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value") from None
            if token in vectors:
                duplicates += 1
            vectors[token] = vec
    if len(vectors) + duplicates != V:
        logger.warning("%s: header declares %d rows, found %d", path, V, len(vectors) + duplicates)
    if duplicates:
        logger.warning("%s: %d duplicate tokens, last occurrence kept", path, duplicates)
    table = EmbeddingTable.from_dict(vectors, dim=D)
    table.duplicates = duplicates
    return table


# ---------------------------------------------------------------------------
# gold labels


@dataclass
class GoldChannels:
    """One-hot targets, shape (C, 3, n) per channel, rows ordered (B, I, O).

    ``sentence`` is (C, 2) with rows ordered (absent, present).
    """

    aspect: np.ndarray
    opinion: np.ndarray
    sentence: np.ndarray

    def channel(self, kind: str) -> np.ndarray:
        return self.aspect if kind == "aspect" else self.opinion


def encode_gold(s: Sentence, C: int) -> GoldChannels:
    n = len(s.tokens)
    labels = {k: np.full((C, n), O, dtype=np.intp) for k in KINDS}
    for a in s.annotations:
        lab = labels[a.kind][a.category]
        lab[a.start] = B
        lab[a.start + 1 : a.end + 1] = I
    onehot = {k: np.moveaxis(np.eye(3)[v], 2, 1) for k, v in labels.items()}
    gold = GoldChannels(onehot["aspect"], onehot["opinion"], np.zeros((C, 2)))
    gold.sentence = derive_sentence_labels(gold)
    return gold


def derive_sentence_labels(g: GoldChannels) -> np.ndarray:
    """(C, 2) one-hots: category present iff any token is non-O in either channel."""
    present = (g.aspect[:, O, :] == 0).any(axis=1) | (g.opinion[:, O, :] == 0).any(axis=1)
    return np.eye(2)[present.astype(np.intp)]
