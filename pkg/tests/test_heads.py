import math

import numpy as np
import pytest

from mtmn.autodiff import DimensionError, Tensor, backward
from mtmn.corpus import encode_gold
from mtmn.heads import combined_loss, predict_sentence, predict_token_labels, sentence_loss, token_loss
from mtmn.sharing import SharingConfig

from conftest import tiny_model


def one_hot(idx, k):
    out = np.zeros((k, len(idx)))
    out[idx, np.arange(len(idx))] = 1.0
    return out


class TestTokenHead:
    def test_zero_weights_uniform(self):
        r = Tensor(np.random.default_rng(0).normal(size=(2, 4, 3)))
        y_a, y_p = predict_token_labels(r, r, Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 4))))
        np.testing.assert_allclose(y_a.data, 1 / 3, atol=1e-15)
        assert y_p.shape == (2, 3, 3)

    def test_uniform_loss_value(self):
        y = Tensor(np.full((2, 3, 3), 1 / 3))
        gold = np.stack([one_hot([0, 1, 2], 3)] * 2)
        loss = token_loss(y, y, gold, gold)
        assert loss.item() == pytest.approx(2 * 3 * 2 * math.log(3), rel=1e-12)
        assert loss.item() == pytest.approx(13.183347464017316, rel=1e-12)

    def test_confident_correct_loss_is_zero(self):
        gold = np.stack([one_hot([2, 0], 3)])
        y = Tensor(gold.copy())
        assert token_loss(y, y, gold, gold).item() == 0.0

    def test_matches_loop(self):
        rng = np.random.default_rng(1)
        r = rng.normal(size=(2, 4, 5))
        W = rng.normal(size=(3, 4))
        y, _ = predict_token_labels(Tensor(r), Tensor(r), Tensor(W), Tensor(W))
        for c in range(2):
            for j in range(5):
                z = W @ r[c, :, j]
                np.testing.assert_allclose(y.data[c, :, j], np.exp(z) / np.exp(z).sum(), atol=1e-14)

    def test_shape_mismatch(self):
        r = Tensor(np.zeros((2, 4, 3)))
        with pytest.raises(DimensionError):
            predict_token_labels(r, r, Tensor(np.zeros((3, 5))), Tensor(np.zeros((3, 4))))
        with pytest.raises(DimensionError):
            token_loss(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((2, 3, 3))), np.zeros((2, 3, 4)), np.zeros((2, 3, 3)))


class TestSentenceHead:
    def test_zero_weights(self):
        o = Tensor(np.random.default_rng(2).normal(size=(12, 3)))
        l = predict_sentence(o, o, Tensor(np.zeros((12, 2, 6))))
        np.testing.assert_allclose(l.data, 0.5)
        gold = np.tile([1.0, 0.0], (12, 1))
        assert sentence_loss(l, gold).item() == pytest.approx(12 * math.log(2), rel=1e-12)
        assert sentence_loss(l, gold).item() == pytest.approx(8.317766166719343, rel=1e-12)

    def test_single_matches_batched(self):
        rng = np.random.default_rng(3)
        oa, op, W = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 2, 8))
        batched = predict_sentence(Tensor(oa), Tensor(op), Tensor(W)).data
        for c in range(3):
            single = predict_sentence(Tensor(oa[c]), Tensor(op[c]), Tensor(W[c])).data
            np.testing.assert_allclose(single, batched[c], atol=1e-15)

    def test_wrong_head_shape(self):
        o = Tensor(np.zeros((3, 4)))
        with pytest.raises(DimensionError):
            predict_sentence(o, o, Tensor(np.zeros((3, 2, 7))))


class TestCombinedLoss:
    def test_values(self):
        L, rep = combined_loss(Tensor(2.0), Tensor(3.0), lam=1.0)
        assert L.item() == 5.0 and rep.L == 5.0
        L, rep = combined_loss(Tensor(2.0), Tensor(3.0), lam=0.0)
        assert L.item() == 3.0
        L, rep = combined_loss(Tensor(2.0), Tensor(3.0), lam=0.5, auxiliary=False)
        assert L.item() == 1.0 and rep.L_sen == 0.0

    def test_negative_lambda(self):
        with pytest.raises(ValueError):
            combined_loss(Tensor(1.0), Tensor(1.0), lam=-1.0)

    def test_sentence_head_gets_no_gradient_without_auxiliary(self, table, sentence):
        model = tiny_model(sharing=SharingConfig("factored", True, False), scale=0.5)
        loss, rep = model.sentence_loss(sentence, table)
        backward(loss)
        W_c = model.params["sentence.W_c"]
        assert W_c.grad is None or np.all(W_c.grad == 0.0)
        assert rep.L_sen == 0.0 and rep.L == rep.L_tok

    def test_gradient_descent_decreases_loss(self, table, sentence):
        model = tiny_model(scale=0.3)
        gold = encode_gold(sentence, 3)
        losses = []
        for _ in range(11):
            model.zero_grad()
            loss, _ = model.loss(model.forward(sentence.tokens, table), gold)
            backward(loss)
            losses.append(loss.item())
            for p in model.trainable():
                p.data = p.data - 0.01 * p.grad
        assert all(b < a for a, b in zip(losses, losses[1:]))
