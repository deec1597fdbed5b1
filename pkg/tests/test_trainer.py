import math

import numpy as np
import pytest

from mtmn.autodiff import Param
from mtmn.model import Dropout, parameter_count
from mtmn.sharing import ABLATIONS, SharingConfig
from mtmn.trainer import (
    CheckpointError,
    RMSProp,
    TrainConfig,
    TrainingError,
    load_checkpoint,
    read_manifest,
    rmsprop_step,
    save_checkpoint,
    train,
    write_loss_log,
)
from mtmn.corpus import Corpus

from conftest import tiny_model

SMALL = dict(D=10, d=4, K=2, m=2, T=2)


class TestRmsprop:
    def test_single_step(self):
        theta, cache = rmsprop_step(np.array([0.0]), np.array([1.0]), np.array([0.0]), 0.001, 0.9, 1e-8)
        assert cache[0] == pytest.approx(0.1, abs=1e-15)
        assert theta[0] == pytest.approx(-0.001 / (math.sqrt(0.1) + 1e-8), abs=1e-15)
        assert theta[0] == pytest.approx(-3.1623e-3, abs=1e-7)

    def test_constant_gradient_limit(self):
        theta, cache = np.array([0.0]), np.array([0.0])
        for _ in range(300):
            new, cache = rmsprop_step(theta, np.array([2.0]), cache, 0.01)
            step, theta = new - theta, new
        assert cache[0] == pytest.approx(4.0, rel=1e-9)
        assert step[0] == pytest.approx(-0.01, rel=1e-6)

    def test_quadratic_converges(self):
        p = Param("theta", np.array([1.0]))
        opt = RMSProp(lr=0.01)
        for _ in range(200):
            p.grad = 2 * p.data
            opt.step([p])
        assert abs(p.data[0]) < 1e-2

    def test_zero_lr_is_identity(self, synthetic):
        corpus, table = synthetic
        model = tiny_model(C=3, D=10)
        model.config.categories = corpus.categories
        before = {k: p.data.copy() for k, p in model.params.items()}
        train(corpus, table, TrainConfig(epochs=1, lr=0.0, **SMALL), model=model)
        for k, p in model.params.items():
            np.testing.assert_array_equal(p.data, before[k])


class TestDropout:
    def test_rate_zero_identity(self):
        from mtmn.autodiff import Tensor
        x = Tensor(np.ones((3, 3)))
        assert Dropout(0.0, np.random.default_rng(0))(x) is x

    def test_seeded_masks_repeat(self):
        a = Dropout(0.5, np.random.default_rng(9)).mask((20,))
        b = Dropout(0.5, np.random.default_rng(9)).mask((20,))
        np.testing.assert_array_equal(a, b)

    def test_keep_rate_and_scaling(self):
        m = Dropout(0.3, np.random.default_rng(1)).mask((10_000,))
        kept = m > 0
        assert abs(kept.mean() - 0.7) < 0.02
        np.testing.assert_allclose(m[kept], 1 / 0.7)
        assert abs(m.mean() - 1.0) < 0.03

    def test_invalid_rate(self):
        with pytest.raises(ValueError):
            Dropout(1.0, np.random.default_rng(0))


class TestTrain:
    def test_empty_corpus(self, table):
        with pytest.raises(TrainingError):
            train(Corpus(["a"], []), table, TrainConfig(epochs=1, **SMALL))

    def test_loss_goes_down(self, synthetic):
        corpus, table = synthetic
        _, log = train(corpus, table, TrainConfig(epochs=8, lr=0.01, dropout=0.0, **SMALL))
        assert log[-1].report.L < log[0].report.L

    def test_callback_stops(self, synthetic):
        corpus, table = synthetic
        _, log = train(corpus, table, TrainConfig(epochs=5, **SMALL), callback=lambda e, m: e == 2)
        assert len(log) == 2

    def test_deterministic(self, synthetic, tmp_path):
        corpus, table = synthetic
        runs = []
        for i in range(2):
            model, log = train(corpus, table, TrainConfig(epochs=2, seed=4, **SMALL))
            save_checkpoint(model, tmp_path / f"ck{i}", seed=4)
            write_loss_log(log, tmp_path / f"log{i}.csv")
            runs.append(((tmp_path / f"ck{i}" / "params.bin").read_bytes(), (tmp_path / f"log{i}.csv").read_text()))
        assert runs[0] == runs[1]

    def test_loss_log_without_auxiliary(self, synthetic, tmp_path):
        corpus, table = synthetic
        cfg = TrainConfig(epochs=1, sharing=SharingConfig("factored", True, False), **SMALL)
        _, log = train(corpus, table, cfg)
        write_loss_log(log, tmp_path / "log.csv", auxiliary=False)
        assert (tmp_path / "log.csv").read_text().splitlines()[0] == "epoch,L_tok,L"


class TestCheckpoint:
    def test_round_trip(self, tmp_path, table, sentence):
        model = tiny_model(scale=0.4)
        save_checkpoint(model, tmp_path / "ck", seed=1, extra={"note": "x"})
        loaded = load_checkpoint(tmp_path / "ck")
        for name, p in model.params.items():
            np.testing.assert_array_equal(loaded.params[name].data, p.data)
            assert loaded.params[name].trainable == p.trainable
        np.testing.assert_array_equal(
            loaded.forward(sentence.tokens, table).y_a.data, model.forward(sentence.tokens, table).y_a.data
        )
        assert read_manifest(tmp_path / "ck")["extra"] == {"note": "x"}

    def test_wrong_dimension(self, tmp_path):
        save_checkpoint(tiny_model(), tmp_path / "ck")
        with pytest.raises(CheckpointError, match="encoder.W_z.*expects"):
            load_checkpoint(tmp_path / "ck", tiny_model(d=5))

    def test_wrong_version(self, tmp_path):
        save_checkpoint(tiny_model(), tmp_path / "ck")
        man = tmp_path / "ck" / "manifest.txt"
        man.write_text(man.read_text().replace("format_version 1", "format_version 7"))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(tmp_path / "ck")

    def test_names_unique(self, tmp_path):
        save_checkpoint(tiny_model(), tmp_path / "ck")
        names = [n for n, *_ in read_manifest(tmp_path / "ck")["params"]]
        assert len(names) == len(set(names))


class TestParameterCount:
    @pytest.mark.parametrize("label", list(ABLATIONS))
    def test_closed_form(self, label):
        model = tiny_model(C=4, sharing=ABLATIONS[label])
        assert model.num_parameters() == parameter_count(8, 4, 2, 2, 4, ABLATIONS[label])

    def test_independent_of_layers(self):
        assert tiny_model(T=1).num_parameters() == tiny_model(T=3).num_parameters()
