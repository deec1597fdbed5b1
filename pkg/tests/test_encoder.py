import numpy as np
import pytest

from mtmn.autodiff import ContractError, DimensionError, Param, Tensor
from mtmn.encoder import GRU, embed, gru_forward
from mtmn.synthetic import random_embeddings


def scalar_gru(values: dict) -> GRU:
    return GRU(1, 1, {k: Param(k, np.array(v, dtype=float).reshape(s)) for k, (v, s) in values.items()})


class TestEmbed:
    def test_columns_are_vectors(self, table):
        X = embed(["w1", "w4"], table)
        np.testing.assert_array_equal(X.data[:, 0], table.lookup("w1"))
        np.testing.assert_array_equal(X.data[:, 1], table.lookup("w4"))

    def test_all_unknown_is_zero(self, table):
        np.testing.assert_array_equal(embed(["??", "!!"], table).data, np.zeros((8, 2)))

    def test_single_token_shape(self, table):
        assert embed(["w1"], table).shape == (8, 1)

    def test_empty_sentence(self, table):
        with pytest.raises(ContractError):
            embed([], table)


class TestGru:
    def test_zero_weights_fixed_point(self):
        gru = GRU.create("g", 3, 4, np.random.default_rng(0))
        for p in gru.params.values():
            p.assign(np.zeros(p.shape))
        H = gru_forward(Tensor(np.random.default_rng(1).normal(size=(3, 6))), gru)
        np.testing.assert_array_equal(H.data, np.zeros((4, 6)))

    def test_scalar_hand_computation(self):
        # W_z=.5 U_z=-.4 b_z=.1  W_r=.3 U_r=.8 b_r=-.2  W_h=2 U_h=-1.5 b_h=-.3, inputs 1 and -0.5
        gru = scalar_gru({
            "W_z": (0.5, (1, 1)), "U_z": (-0.4, (1, 1)), "b_z": (0.1, (1,)),
            "W_r": (0.3, (1, 1)), "U_r": (0.8, (1, 1)), "b_r": (-0.2, (1,)),
            "W_h": (2.0, (1, 1)), "U_h": (-1.5, (1, 1)), "b_h": (-0.3, (1,)),
        })
        H = gru_forward(Tensor([[1.0, -0.5]]), gru)
        np.testing.assert_allclose(H.data[0], [0.6039527653357011, -0.020807013551780773], rtol=1e-14)

    def test_shape_and_finiteness(self):
        rng = np.random.default_rng(2)
        H = gru_forward(Tensor(rng.normal(size=(5, 7))), GRU.create("g", 5, 3, rng))
        assert H.shape == (3, 7) and H.is_finite()

    def test_dimension_mismatch(self):
        gru = GRU.create("g", 5, 3, np.random.default_rng(0))
        with pytest.raises(DimensionError):
            gru_forward(Tensor(np.zeros((4, 2))), gru)

    def test_unidirectional(self):
        rng = np.random.default_rng(3)
        gru = GRU.create("g", 4, 3, rng)
        X = rng.normal(size=(4, 6))
        base = gru_forward(Tensor(X), gru).data
        X2 = X.copy()
        X2[:, 4] += 1.0
        moved = gru_forward(Tensor(X2), gru).data
        np.testing.assert_array_equal(moved[:, :4], base[:, :4])
        assert not np.allclose(moved[:, 4], base[:, 4])

    def test_gates_in_open_interval(self):
        rng = np.random.default_rng(4)
        gru = GRU.create("g", 4, 3, rng)
        gates = {}
        gru_forward(Tensor(rng.normal(size=(4, 5)) * 3), gru, gates)
        for name in ("z", "r"):
            vals = np.concatenate([g.ravel() for g in gates[name]])
            assert np.all((vals > 0) & (vals < 1))
