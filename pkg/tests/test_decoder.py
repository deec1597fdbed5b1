import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtmn.autodiff import ContractError
from mtmn.corpus import Annotation, Sentence, encode_gold
from mtmn.decoder import (
    CategoryDecision,
    TermSpan,
    decide_category_label,
    decode_probabilities,
    extract_spans,
    gold_spans,
    integrate_categories,
    spans_to_json,
)
from mtmn.synthetic import make_synthetic_corpus


def brute_force_label(y_a, y_p):
    """Independent restatement: enumerate the nine (aspect, opinion) argmax cases."""
    names = "BIO"
    ia = min(i for i in range(3) if y_a[i] == max(y_a))
    ip = min(i for i in range(3) if y_p[i] == max(y_p))
    a, p = names[ia], names[ip]
    if a == "O" and p == "O":
        return "O"
    if a == "O":
        return p + "P"
    if p == "O":
        return a + "A"
    return a + "A" if y_a[ia] >= y_p[ip] else p + "P"


class TestDecide:
    def test_both_outside(self):
        assert decide_category_label([0.1, 0.1, 0.8], [0.2, 0.2, 0.6]).label == "O"

    def test_one_outside(self):
        assert decide_category_label([0.1, 0.1, 0.8], [0.1, 0.7, 0.2]).label == "IP"
        assert decide_category_label([0.6, 0.3, 0.1], [0.1, 0.1, 0.8]).label == "BA"

    def test_both_in_larger_wins(self):
        assert decide_category_label([0.5, 0.3, 0.2], [0.1, 0.7, 0.2]).label == "IP"
        d = decide_category_label([0.9, 0.05, 0.05], [0.1, 0.7, 0.2])
        assert d == CategoryDecision("BA", 0.9)

    def test_probability_tie_goes_to_aspect(self):
        assert decide_category_label([0.6, 0.2, 0.2], [0.2, 0.6, 0.2]).label == "BA"

    def test_argmax_tie_lowest_index(self):
        assert decide_category_label([0.4, 0.4, 0.2], [0.0, 0.0, 1.0]).label == "BA"

    def test_rejects_non_distribution(self):
        with pytest.raises(ContractError):
            decide_category_label([0.5, 0.5, 0.5], [0, 0, 1])

    def test_brute_force_agreement(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            y_a, y_p = rng.dirichlet(np.ones(3) * 0.5), rng.dirichlet(np.ones(3) * 0.5)
            assert decide_category_label(y_a, y_p).label == brute_force_label(y_a, y_p)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(0.01, 1.0), min_size=6, max_size=6), st.floats(0.1, 10.0))
    def test_decision_depends_only_on_distributions(self, raw, k):
        # renormalising a scaled copy of the scores yields the same label
        a, p = np.array(raw[:3]), np.array(raw[3:])
        base = decide_category_label(a / a.sum(), p / p.sum()).label
        scaled = decide_category_label(a * k / (a * k).sum(), p * k / (p * k).sum()).label
        assert base == scaled


class TestIntegrate:
    def test_keeps_non_outside(self):
        decisions = [CategoryDecision("O", 0.9), CategoryDecision("BA", 0.6), CategoryDecision("IP", 0.5)]
        assert integrate_categories(decisions) == {(1, "BA"), (2, "IP")}

    def test_all_outside(self):
        assert integrate_categories([CategoryDecision("O", 1.0)] * 4) == set()


class TestExtract:
    @pytest.mark.parametrize(
        "labels, spans",
        [
            ("BIIOB", [(0, 2), (4, 4)]),
            ("OOO", []),
            ("BB", [(0, 0), (1, 1)]),
            ("OIIO", [(1, 2)]),
            ("BIOI", [(0, 1), (3, 3)]),
            ("I", [(0, 0)]),
        ],
    )
    def test_cases(self, labels, spans):
        assert [s.span for s in extract_spans(list(labels))] == spans

    def test_unknown_label(self):
        with pytest.raises(ValueError):
            extract_spans(["B", "X"])

    def test_decode_probabilities(self):
        n = 4
        y_a = np.tile(np.array([0.0, 0.0, 1.0])[:, None], (2, 1, n))
        y_p = y_a.copy()
        y_a[1, :, 1] = [0.8, 0.1, 0.1]
        y_a[1, :, 2] = [0.1, 0.8, 0.1]
        y_p[0, :, 3] = [0.7, 0.2, 0.1]
        assert decode_probabilities(y_a, y_p) == {TermSpan(1, 2, "aspect", 1), TermSpan(3, 3, "opinion", 0)}


class TestGoldRoundTrip:
    def test_synthetic_corpus(self):
        corpus = make_synthetic_corpus(50, C=4, seed=5)
        for s in corpus.sentences:
            want = {TermSpan(a.start, a.end, a.kind, a.category) for a in s.annotations}
            assert gold_spans(encode_gold(s, corpus.C)) == want

    def test_json(self):
        s = Sentence("x", ["the", "fish", "soup", "was", "great"],
                     [Annotation(1, 2, "aspect", 0), Annotation(4, 4, "opinion", 0)])
        out = spans_to_json(gold_spans(encode_gold(s, 1)), s.tokens, ["FOOD"])
        assert out[0] == {"span": [1, 2], "kind": "aspect", "category": "FOOD", "text": "fish soup"}
        assert out[1]["text"] == "great"
