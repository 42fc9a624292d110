import math
from dataclasses import replace

import numpy as np
import pytest

from chaincast.cells import CellKind, CellParams, PredictorParams
from chaincast.chain import ChainModel, build_model, chain_predict_next, chain_run
from chaincast.train import (
    AdamState,
    DatasetSpec,
    Segment,
    TrainConfig,
    TrainingDiverged,
    Waveform,
    adam_step,
    clip_by_global_norm,
    evaluate_mse,
    generate_dataset,
    loss_and_grads,
    make_segment,
    split_dataset,
    train,
    waveform,
)

from helpers import random_chain_gradient_error
from oracle import LD, fd_gradient, ref_chain_loss, rel_err


class TestWaveform:
    def test_sine_quarter(self):
        assert waveform("sine", 0.25) == pytest.approx(1.0, abs=1e-15)

    def test_triangle_conventions(self):
        t = np.array([0.0, 0.25, 0.5, 0.75, 1.0, 0.125])
        np.testing.assert_allclose(waveform(Waveform.TRIANGLE, t), [0, 1, 0, -1, 0, 0.5], atol=1e-15)

    def test_unit_amplitude(self):
        t = np.linspace(0, 3, 1001)
        for w in Waveform:
            assert np.max(np.abs(waveform(w, t))) == pytest.approx(1.0, abs=1e-3)


class TestDataset:
    def test_noiseless_segment(self):
        spec = DatasetSpec(noise_amplitude=0.0)
        seg = make_segment(spec, 0.0, 25)
        assert seg.inputs[0, 0] == 0.0
        assert seg.inputs.shape == (25, 1)
        assert seg.target[0] == pytest.approx(1.0, abs=1e-15)

    def test_full_size_lengths(self):
        ds = generate_dataset(DatasetSpec(count=12000))
        assert len(ds) == 12000
        lengths = np.array([s.m for s in ds])
        assert lengths.min() >= 5 and lengths.max() <= 150
        # every length should appear in a draw this large
        assert set(lengths) == set(range(5, 151))

    def test_noise_level(self):
        spec = DatasetSpec(count=300, noise_amplitude=0.15)
        resid = np.concatenate([
            s.inputs[:, 0] - waveform("sine", s.t0 + spec.dt * np.arange(s.m)) for s in generate_dataset(spec)
        ])
        assert np.std(resid) == pytest.approx(0.15, rel=0.05)

    def test_clean_targets(self):
        spec = DatasetSpec(count=20, clean_targets=True)
        for s in generate_dataset(spec):
            assert s.target[0] == pytest.approx(waveform("sine", s.t0 + spec.dt * s.m), abs=1e-12)

    def test_deterministic(self):
        a = generate_dataset(DatasetSpec(count=50, seed=3))
        b = generate_dataset(DatasetSpec(count=50, seed=3))
        assert all(x.inputs.tobytes() == y.inputs.tobytes() and x.target == y.target for x, y in zip(a, b))

    @pytest.mark.parametrize("kw", [dict(noise_amplitude=-0.1), dict(dt=0), dict(m_min=4), dict(m_min=10, m_max=9)])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValueError):
            DatasetSpec(**kw)


class TestSplit:
    def test_small(self):
        segs = generate_dataset(DatasetSpec(count=10))
        tr, va = split_dataset(segs, 0.8)
        assert (len(tr), len(va)) == (8, 2)
        assert {id(s) for s in tr}.isdisjoint({id(s) for s in va})
        assert {id(s) for s in tr + va} == {id(s) for s in segs}

    def test_full_size(self):
        segs = [Segment(np.zeros((5, 1)), np.zeros(1)) for _ in range(12000)]
        tr, va = split_dataset(segs, 0.8)
        assert (len(tr), len(va)) == (9600, 2400)

    def test_same_seed_same_split(self):
        segs = generate_dataset(DatasetSpec(count=30))
        a = split_dataset(segs, 0.7, seed=5)[0]
        b = split_dataset(segs, 0.7, seed=5)[0]
        assert [id(s) for s in a] == [id(s) for s in b]

    def test_errors(self):
        with pytest.raises(ValueError):
            split_dataset([], 0.8)
        with pytest.raises(ValueError):
            split_dataset(generate_dataset(DatasetSpec(count=3)), 1.0)


def scalar_basic(W, U, b, Wp, bp):
    cell = CellParams(CellKind.BASIC, 1, 1, np.array([W, U, b], dtype=float))
    return ChainModel((cell,), PredictorParams(np.array([[Wp]]), np.array([bp])))


class TestLoss:
    def test_zero_model_bias_path(self):
        model = build_model([("gru", 3)], scheme="zeros")
        loss, g = loss_and_grads(model, Segment(np.ones((4, 1)), np.array([0.7])))
        assert loss == pytest.approx(0.49)
        assert g.predictor.b[0] == pytest.approx(-1.4)

    def test_perfect_prediction(self):
        model = scalar_basic(0.5, 0.3, 0.1, 1.0, 0.0)
        X = np.array([[0.2], [0.4]])
        h1 = math.tanh(0.5 * 0.2 + 0.1)
        h2 = math.tanh(0.5 * 0.4 + 0.3 * h1 + 0.1)
        y = chain_predict_next(model, chain_run(model, X)[0])
        assert y[0] == pytest.approx(h2, abs=1e-15)
        loss, g = loss_and_grads(model, Segment(X, y))
        assert loss == 0.0
        assert not g.predictor.theta.any()

    def test_scalar_hand_example(self):
        model = scalar_basic(0.5, -0.7, 0.2, 1.3, -0.1)
        X, y = np.array([[0.3], [-0.8]]), np.array([0.25])
        loss, g = loss_and_grads(model, Segment(X, y))
        theta = model.flat_params().astype(LD)
        num = fd_gradient(lambda T: ref_chain_loss([("basic", 1)], 1, T, X, y), theta)
        assert rel_err(g.flat_params(), num) < 1e-6

    def test_random_chains_fd(self):
        rng = np.random.default_rng(2024)
        errs = [random_chain_gradient_error(rng) for _ in range(100)]
        assert max(errs) < 1e-5, max(errs)

    def test_shape_mismatch(self):
        model = build_model([("basic", 2)])
        with pytest.raises(ValueError):
            loss_and_grads(model, Segment(np.zeros((3, 2)), np.zeros(1)))


class TestAdam:
    CFG = TrainConfig()

    def test_zero_grads(self):
        p = np.array([1.0, -2.0])
        new, st = adam_step(p, np.zeros(2), AdamState.zeros(2), self.CFG)
        np.testing.assert_array_equal(new, p)
        assert st.t == 1

    @pytest.mark.parametrize("g", [0.3, -4.0, 1e-3])
    def test_first_step_sign(self, g):
        cfg = replace(self.CFG, learning_rate=0.01)
        new, _ = adam_step(np.array([0.0]), np.array([g]), AdamState.zeros(1), cfg)
        assert new[0] == pytest.approx(-0.01 * np.sign(g), rel=1e-4)

    def test_deterministic(self):
        p, g = np.array([0.1, 0.2]), np.array([0.5, -0.5])
        s = AdamState.zeros(2)
        a, b = adam_step(p, g, s, self.CFG), adam_step(p, g, s, self.CFG)
        assert a[0].tobytes() == b[0].tobytes()

    def test_matches_reference_sequence(self):
        # hand-rolled textbook Adam over three steps, without clipping
        cfg = replace(self.CFG, grad_clip=None, learning_rate=0.1)
        grads = [np.array([1.0, -2.0]), np.array([0.5, 0.5]), np.array([-1.0, 3.0])]
        p, st = np.zeros(2), AdamState.zeros(2)
        m = v = np.zeros(2)
        ref = np.zeros(2)
        for t, g in enumerate(grads, start=1):
            p, st = adam_step(p, g, st, cfg)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            ref = ref - 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        np.testing.assert_allclose(p, ref, rtol=1e-14)

    def test_clipping(self):
        g = np.array([3.0, 4.0])
        np.testing.assert_allclose(clip_by_global_norm(g, 1.0), [0.6, 0.8])
        np.testing.assert_array_equal(clip_by_global_norm(g, 10.0), g)
        np.testing.assert_array_equal(clip_by_global_norm(g, None), g)


@pytest.fixture(scope="module")
def toy():
    return generate_dataset(DatasetSpec(noise_amplitude=0.0, count=300, m_min=5, m_max=40))


class TestTrain:
    def test_zero_epochs_unchanged(self, toy):
        model = build_model([("basic", 4)])
        res = train(model, toy, TrainConfig(epochs=0))
        assert res.model.flat_params().tobytes() == model.flat_params().tobytes()
        assert res.history == []

    def test_toy_sine_improves(self, toy):
        model = build_model([("basic", 10)])
        res = train(model, toy, TrainConfig(epochs=20, learning_rate=5e-3))
        assert len(res.history) == 20
        assert res.history[-1].val_mse < res.initial_val_mse

    def test_bit_identical_reruns(self, toy):
        cfg = TrainConfig(epochs=2, seed=4)
        a = train(build_model([("lstm", 3), ("gru", 2)], seed=1), toy, cfg).model.flat_params()
        b = train(build_model([("lstm", 3), ("gru", 2)], seed=1), toy, cfg).model.flat_params()
        assert a.tobytes() == b.tobytes()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_position(self, toy):
        model = build_model([("basic", 3)])
        bad = list(toy[:20]) + [Segment(np.full((5, 1), np.inf), np.zeros(1))] * 40
        with pytest.raises(TrainingDiverged, match=r"epoch 1, batch \d+"):
            train(model, bad, TrainConfig(epochs=1))

    def test_empty_dataset(self):
        with pytest.raises(ValueError):
            train(build_model([("basic", 2)]), [], TrainConfig(epochs=1))

    def test_evaluate_matches_per_segment_loss(self, toy):
        model = build_model([("gru", 3)], seed=2)
        segs = toy[:25]
        per = np.mean([loss_and_grads(model, s)[0] for s in segs])
        assert evaluate_mse(model, segs) == pytest.approx(per, rel=1e-12)
