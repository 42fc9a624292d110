import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaincast.cells import CellKind, CellParams, LayerState, PredictorParams, cell_forward
from chaincast.chain import (
    ChainModel,
    build_model,
    chain_predict_next,
    chain_run,
    chain_step,
    zero_state,
)
from chaincast.config import cycled_architecture
from chaincast.mathcore import ShapeError

K3_ARCH = cycled_architecture(3)


def states_equal(a, b):
    return all(
        x.h.tobytes() == y.h.tobytes() and (x.c is None or x.c.tobytes() == y.c.tobytes())
        for x, y in zip(a, b)
    )


@pytest.fixture(scope="module")
def model3():
    return build_model(K3_ARCH, seed=3)


class TestBuild:
    def test_k3_layout(self, model3):
        assert model3.k == 3
        assert model3.sizes == (10, 15, 8)
        assert [k for k, _ in model3.architecture] == [CellKind.BASIC, CellKind.LSTM, CellKind.GRU]
        assert model3.predictor.W.shape == (1, 8)

    def test_param_count(self, model3):
        # basic 10*(1+10+1), lstm 4*15*(10+15+1), gru 3*8*(15+8+1), predictor 8+1
        assert model3.n_params == 120 + 1560 + 576 + 9
        assert model3.flat_params().size == model3.n_params

    def test_flat_round_trip(self, model3):
        theta = model3.flat_params()
        again = model3.with_flat(theta)
        assert again.flat_params().tobytes() == theta.tobytes()

    def test_seed_determinism(self):
        a = build_model(K3_ARCH, seed=9).flat_params()
        b = build_model(K3_ARCH, seed=9).flat_params()
        c = build_model(K3_ARCH, seed=10).flat_params()
        assert a.tobytes() == b.tobytes()
        assert a.tobytes() != c.tobytes()

    def test_dim_mismatch_rejected(self, model3):
        with pytest.raises(ShapeError, match="layer 2"):
            ChainModel((model3.cells[0], model3.cells[2]), model3.predictor)

    def test_wrong_flat_size(self, model3):
        with pytest.raises(ShapeError):
            model3.with_flat(np.zeros(5))


def scalar_pair():
    cell = CellParams(CellKind.BASIC, 1, 1, np.array([1.0, 1.0, 0.0]))
    return ChainModel((cell, cell), PredictorParams(np.ones((1, 1)), np.zeros(1)))


class TestStep:
    def test_scalar_composition(self):
        model = scalar_pair()
        s = chain_step(model, [0.5], zero_state(model))
        assert s[0].h[0] == pytest.approx(np.tanh(0.5), abs=1e-15)
        assert s[1].h[0] == pytest.approx(np.tanh(np.tanh(0.5)), abs=1e-15)
        assert s[1].h[0] == pytest.approx(0.4318081805950961, abs=1e-15)
        assert chain_predict_next(model, s)[0] == s[1].h[0]

    def test_zero_state_shapes(self, model3):
        s = zero_state(model3)
        assert [x.h.shape for x in s] == [(10,), (15,), (8,)]
        assert s[1].c.shape == (15,) and s[0].c is None
        assert all(not x.h.any() for x in s)

    def test_zero_model_zero_input(self):
        model = build_model(K3_ARCH, scheme="zeros")
        out = chain_step(model, [0.0], zero_state(model))
        assert all(not s.h.any() for s in out)

    def test_matches_manual_composition(self, model3):
        s0 = zero_state(model3)
        out = chain_step(model3, [0.4], s0)
        inp = np.array([0.4])
        for cell, s, got in zip(model3.cells, s0, out):
            want = cell_forward(cell, inp, s)
            np.testing.assert_array_equal(got.h, want.h)
            inp = want.h

    def test_layer_locality(self, model3):
        """Changing layer 3's incoming state leaves layers 1 and 2 untouched."""
        rng = np.random.default_rng(0)
        s0 = zero_state(model3)
        s1 = s0[:2] + (LayerState(rng.uniform(-1, 1, 8)),)
        a, b = chain_step(model3, [0.2], s0), chain_step(model3, [0.2], s1)
        assert states_equal(a[:2], b[:2])
        assert not np.array_equal(a[2].h, b[2].h)

    def test_no_mutation(self, model3):
        rng = np.random.default_rng(1)
        s = tuple(
            LayerState(rng.uniform(-1, 1, c.n_r), rng.normal(size=c.n_r) if c.kind is CellKind.LSTM else None)
            for c in model3.cells
        )
        snap = [(x.h.copy(), None if x.c is None else x.c.copy()) for x in s]
        theta = model3.flat_params().copy()
        chain_step(model3, [0.7], s)
        for x, (h, c) in zip(s, snap):
            np.testing.assert_array_equal(x.h, h)
            if c is not None:
                np.testing.assert_array_equal(x.c, c)
        np.testing.assert_array_equal(model3.flat_params(), theta)

    def test_bad_input_dim(self, model3):
        with pytest.raises(ShapeError, match="layer 1"):
            chain_step(model3, [0.1, 0.2], zero_state(model3))

    def test_predictor_reads_top_layer(self, model3):
        s = chain_step(model3, [0.3], zero_state(model3))
        want = model3.predictor.W @ s[-1].h + model3.predictor.b
        np.testing.assert_array_equal(chain_predict_next(model3, s), want)


class TestRun:
    def test_record_dims(self, model3):
        X = np.sin(np.linspace(0, 3, 75))
        _, rec = chain_run(model3, X, record=True)
        assert [h.shape for h in rec.h] == [(75, 10), (75, 15), (75, 8)]
        assert rec.c[0] is None and rec.c[1].shape == (75, 15) and rec.c[2] is None
        assert rec.layer(1, include_c=True).shape == (75, 30)

    def test_empty_input(self, model3):
        with pytest.raises(ValueError):
            chain_run(model3, [])

    def test_record_last_row_is_final_state(self, model3):
        X = np.linspace(-1, 1, 12)
        final, rec = chain_run(model3, X, record=True)
        for r, s in enumerate(final):
            np.testing.assert_array_equal(rec.h[r][-1], s.h)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=2, max_size=20), st.data())
    def test_associativity(self, xs, data):
        """Running X then Y equals running X ++ Y, bit for bit."""
        model = build_model(K3_ARCH, seed=3)
        cut = data.draw(st.integers(1, len(xs) - 1))
        whole, _ = chain_run(model, xs)
        mid, _ = chain_run(model, xs[:cut])
        split, _ = chain_run(model, xs[cut:], state0=mid)
        assert states_equal(whole, split)

    def test_fold_of_steps(self, model3):
        X = [0.1, -0.3, 0.5]
        s = zero_state(model3)
        for x in X:
            s = chain_step(model3, [x], s)
        assert states_equal(s, chain_run(model3, X)[0])

    @pytest.mark.parametrize("k", [1, 5, 7])
    def test_depths(self, k):
        model = build_model(cycled_architecture(k))
        final, _ = chain_run(model, np.zeros(4))
        assert len(final) == k

    def test_params_of_layer_three_do_not_reach_lower_records(self, model3):
        X = np.cos(np.linspace(0, 2, 20))
        cells = list(model3.cells)
        cells[2] = cells[2].with_theta(cells[2].theta + 0.5)
        other = ChainModel(tuple(cells), model3.predictor)
        _, a = chain_run(model3, X, record=True)
        _, b = chain_run(other, X, record=True)
        for r in (0, 1):
            assert a.h[r].tobytes() == b.h[r].tobytes()
        assert not np.array_equal(a.h[2], b.h[2])
