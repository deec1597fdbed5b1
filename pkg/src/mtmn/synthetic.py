"""Small patterned corpora for smoke tests, gradient checks and demos."""

from __future__ import annotations

import numpy as np

from .corpus import Annotation, Corpus, EmbeddingTable, Sentence


def synthetic_vocabulary(C: int = 3, vocab: int = 40) -> dict[str, list[str]]:
    """Per-category aspect and opinion words plus fillers, ``vocab`` words in total."""
    words: dict[str, list[str]] = {}
    for c in range(C):
        words[f"aspect{c}"] = [f"asp{c}_{i}" for i in range(3)]
        words[f"opinion{c}"] = [f"op{c}_{i}" for i in range(3)]
    used = 6 * C
    if vocab <= used:
        raise ValueError(f"vocabulary of {vocab} is too small for {C} categories")
    words["filler"] = [f"w{i}" for i in range(vocab - used)]
    return words


def make_synthetic_corpus(n_sentences: int = 20, C: int = 3, vocab: int = 40, seed: int = 0) -> Corpus:
    """Sentences of one or two clauses ``filler* aspect+ filler* opinion filler*``.

    Each clause belongs to one category; its aspect term is one or two of
    that category's aspect words and its opinion term one of its opinion
    words, so labels are a function of the words and their order.
    """
    rng = np.random.default_rng(seed)
    words = synthetic_vocabulary(C, vocab)
    fill = words["filler"]
    sentences = []
    for i in range(n_sentences):
        tokens: list[str] = []
        anns: list[Annotation] = []
        for _ in range(1 + int(rng.random() < 0.4)):
            c = int(rng.integers(C))
            tokens += list(rng.choice(fill, size=rng.integers(0, 3)))
            width = 1 + int(rng.random() < 0.3)
            start = len(tokens)
            tokens += list(rng.choice(words[f"aspect{c}"], size=width, replace=False))
            anns.append(Annotation(start, start + width - 1, "aspect", c))
            tokens += list(rng.choice(fill, size=rng.integers(1, 3)))
            anns.append(Annotation(len(tokens), len(tokens), "opinion", c))
            tokens.append(str(rng.choice(words[f"opinion{c}"])))
        tokens += list(rng.choice(fill, size=rng.integers(0, 2)))
        sentences.append(Sentence(f"syn{i}", [str(t) for t in tokens], anns))
    return Corpus([f"CAT{c}" for c in range(C)], sentences)


def random_embeddings(tokens, D: int, seed: int = 0, scale: float = 1.0) -> EmbeddingTable:
    rng = np.random.default_rng(seed)
    return EmbeddingTable.from_dict({t: rng.normal(0.0, scale, D) for t in sorted(set(tokens))}, dim=D)


def corpus_embeddings(corpus: Corpus, D: int, seed: int = 0) -> EmbeddingTable:
    return random_embeddings((t for s in corpus.sentences for t in s.tokens), D, seed)
