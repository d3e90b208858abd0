import math

import numpy as np
import pytest

from aeda.container import dumps_model
from aeda.datasets import Domain, EmbeddingSet, SynthConfig, generate_synthetic
from aeda.exceptions import ConfigError, DimensionMismatchError, TrainingDivergedError
from aeda.network import (AEDA, PARAM_NAMES, AedaModel, DAEBaseline, DaeBaselineModel,
                          TrainConfig, _sparse_targets, adapt, branch_gradients, decode, encode,
                          gradients, loss_ae, loss_dae, loss_total, speaker_mean_targets,
                          train_aeda, train_dae_baseline)
from aeda.sparse import Dictionary
from oracles import finite_difference, max_relative_error


def random_model(r, m, n, scale=1.0):
    return AedaModel(*(scale * r.standard_normal(s) for s in
                       ((n, m), n, (n, m), n, (m, n), m)))


class TestForward:
    def test_zero_weights_encode_half(self):
        model = AedaModel.initialize(3, 4, seed=0)
        model.w_in[...] = 0.0
        np.testing.assert_array_equal(encode(model, "in", np.ones(3)), 0.5)

    def test_sigmoid_of_log3(self):
        model = AedaModel(np.ones((1, 1)), np.zeros(1), np.ones((1, 1)), np.zeros(1),
                          np.ones((1, 1)), np.zeros(1))
        assert encode(model, "in", [math.log(3.0)])[0] == pytest.approx(0.75, abs=1e-15)

    def test_encode_range_and_errors(self):
        r = np.random.default_rng(0)
        model = random_model(r, 3, 5, scale=3.0)
        H = encode(model, "out", r.standard_normal((50, 3)))
        assert np.all((H > 0) & (H < 1))
        with pytest.raises(DimensionMismatchError):
            encode(model, "in", np.ones(4))
        with pytest.raises(ValueError):
            encode(model, "in", [np.nan, 0.0, 0.0])
        with pytest.raises(ValueError):
            encode(model, "sideways", np.ones(3))

    def test_decode_examples(self):
        r = np.random.default_rng(1)
        model = random_model(r, 3, 3)
        b = model.b_dec.copy()
        model.w_dec[...] = 0.0
        np.testing.assert_array_equal(decode(model, r.uniform(size=3)), b)
        model.w_dec[...] = np.eye(3)
        model.b_dec[...] = 0.0
        h = r.uniform(size=3)
        np.testing.assert_array_equal(decode(model, h), h)
        model = random_model(r, 3, 4)
        h1, h2 = r.uniform(size=4), r.uniform(size=4)
        np.testing.assert_allclose(decode(model, h1 + h2) - decode(model, h1)
                                   - decode(model, h2) + model.b_dec, 0.0, atol=1e-12)


class TestLosses:
    def test_one_dimensional_loss(self):
        model = AedaModel(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), np.zeros(1),
                          np.zeros((1, 1)), np.zeros(1))
        assert loss_ae(model, [[1.0]]) == 1.0

    def test_order_invariance_and_zero(self):
        r = np.random.default_rng(2)
        model = random_model(r, 3, 4)
        X = r.standard_normal((6, 3))
        assert loss_ae(model, X) == pytest.approx(loss_ae(model, X[::-1]), rel=1e-14)
        Y = decode(model, encode(model, "out", X))
        assert loss_dae(model, X, Y) == 0.0

    def test_residual_scaling_is_quadratic(self):
        r = np.random.default_rng(3)
        model = random_model(r, 3, 4)
        X = r.standard_normal((5, 3))
        Y = decode(model, encode(model, "out", X))
        R = r.standard_normal((5, 3))
        assert loss_dae(model, X, Y + 3.0 * R) == pytest.approx(9.0 * loss_dae(model, X, Y + R))

    def test_dae_equals_ae_with_copied_branches(self):
        r = np.random.default_rng(4)
        model = AedaModel.initialize(4, 3, seed=1)
        X = r.standard_normal((7, 4))
        assert loss_dae(model, X, X) == loss_ae(model, X)

    def test_total_is_sum_and_row_check(self):
        r = np.random.default_rng(5)
        model = random_model(r, 3, 2)
        Xi, Xo, T = (r.standard_normal((4, 3)) for _ in range(3))
        lt = loss_total(model, Xi, Xo, T)
        assert lt == loss_ae(model, Xi) + loss_dae(model, Xo, T)
        assert lt >= max(loss_ae(model, Xi), loss_dae(model, Xo, T)) >= 0
        with pytest.raises(DimensionMismatchError):
            loss_dae(model, Xo, T[:3])


class TestGradients:
    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences(self, seed):
        r = np.random.default_rng(seed)
        m, n = int(r.integers(2, 7)), int(r.integers(2, 6))
        model = random_model(r, m, n, scale=0.7)
        Xi, Xo, T = r.standard_normal((6, m)), r.standard_normal((5, m)), r.standard_normal((5, m))
        grads, _ = gradients(model, Xi, Xo, T)
        for name in PARAM_NAMES:
            fd = finite_difference(lambda: loss_total(model, Xi, Xo, T), getattr(model, name))
            assert max_relative_error(grads[name], fd) <= 1e-5, name

    def test_zero_residual_gives_zero_gradients(self):
        r = np.random.default_rng(11)
        model = random_model(r, 3, 4)
        X = r.standard_normal((5, 3))
        # a constant decoder output equal to every input and target
        model.w_dec[...] = 0.0
        model.b_dec[...] = 1.0
        ones = np.ones((5, 3))
        grads, losses = gradients(model, ones, X, np.ones((5, 3)))
        assert losses == (0.0, 0.0)
        for g in grads.values():
            assert np.all(g == 0.0)

    def test_decoder_gradient_is_branch_sum(self):
        r = np.random.default_rng(12)
        model = random_model(r, 4, 3)
        Xi, Xo, T = r.standard_normal((5, 4)), r.standard_normal((6, 4)), r.standard_normal((6, 4))
        grads, _ = gradients(model, Xi, Xo, T)
        ae = branch_gradients(model, X_in=Xi)["ae"]
        dae = branch_gradients(model, X_out=Xo, targets=T)["dae"]
        np.testing.assert_allclose(grads["w_dec"], ae[3] + dae[3], rtol=0, atol=1e-14)
        np.testing.assert_allclose(grads["b_dec"], ae[4] + dae[4], rtol=0, atol=1e-14)

    def test_dae_baseline_finite_differences(self):
        r = np.random.default_rng(13)
        model = DaeBaselineModel(r.standard_normal((4, 5)), r.standard_normal(4),
                                 r.standard_normal((5, 4)), r.standard_normal(5))
        X, T = r.standard_normal((6, 5)), r.standard_normal((6, 5))
        grads, _ = model.gradients(X, T)
        for name in ("w_enc", "b_enc", "w_dec", "b_dec"):
            fd = finite_difference(lambda: model.loss(X, T), getattr(model, name))
            assert max_relative_error(grads[name], fd) <= 1e-5


def _sets(seed=0, shift=0.0, m=5):
    cfg = SynthConfig(dimension=m, speakers_per_domain=20, channels_per_speaker=2,
                      sessions_per_channel=2, domain_shift=shift, domain_rotation_angle=0.0,
                      eval_speakers=0, target_trials=0, nontarget_trials=0, seed=seed)
    d = generate_synthetic(cfg)
    return d.in_set, d.out_set


SMALL = dict(hidden_dim=6, learning_rate=0.01, batch_size=16, init_epochs=3,
             epochs_per_alternation=2, alternations=2, gamma=0.5, dictionary_k=20)


class TestTraining:
    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(hidden_dim=0)
        with pytest.raises(ConfigError):
            TrainConfig(penalty="l3")
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=-1.0)
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"gama": 0.1})
        cfg = TrainConfig(**SMALL)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    @pytest.mark.parametrize("seed", range(3))
    def test_matched_domains_reduce_loss(self, seed):
        in_set, _ = _sets(seed)
        cfg = TrainConfig(**{**SMALL, "init_epochs": 0, "alternations": 3,
                             "epochs_per_alternation": 5, "seed": seed})
        _, trace = train_aeda(in_set, in_set, cfg)
        assert trace.loss_total[-1] < trace.loss_total[0]

    def test_zero_alternations_is_phase_zero(self):
        in_set, out_set = _sets(1, shift=1.0)
        cfg0 = TrainConfig(**{**SMALL, "alternations": 0})
        m0, trace = train_aeda(in_set, out_set, cfg0)
        assert {p for p, *_ in trace.records} == {"init"}
        m_ref, _ = train_aeda(in_set, in_set, cfg0)
        assert dumps_model(m0) == dumps_model(m_ref)

    def test_zero_learning_rate_returns_initialization(self):
        in_set, out_set = _sets(2, shift=1.0)
        cfg = TrainConfig(**{**SMALL, "learning_rate": 0.0, "seed": 9})
        model, _ = train_aeda(in_set, out_set, cfg)
        init = AedaModel.initialize(in_set.dimension, cfg.hidden_dim, 9, cfg.weight_init_scale)
        for name in PARAM_NAMES:
            np.testing.assert_array_equal(getattr(model, name), getattr(init, name))

    def test_phase_zero_branches_stay_equal(self):
        # with copied initial weights and identical batches both encoders move together
        in_set, _ = _sets(3)
        cfg = TrainConfig(**{**SMALL, "alternations": 0})
        model, trace = train_aeda(in_set, in_set, cfg)
        np.testing.assert_array_equal(model.w_in, model.w_out)
        np.testing.assert_array_equal(model.b_in, model.b_out)
        for _, _, _, la, ld in trace.records:
            assert la == ld

    def test_deterministic(self):
        in_set, out_set = _sets(4, shift=1.0)
        cfg = TrainConfig(**SMALL)
        a, ta = train_aeda(in_set, out_set, cfg)
        b, tb = train_aeda(in_set, out_set, cfg, n_jobs=3)
        assert dumps_model(a) == dumps_model(b)
        assert ta.to_csv() == tb.to_csv()

    def test_sparse_targets_in_dictionary_span(self):
        in_set, out_set = _sets(5, shift=1.0, m=8)
        r = np.random.default_rng(0)
        atoms = r.standard_normal((8, 3))
        d = Dictionary(atoms, 0.5)
        cfg = TrainConfig(**{**SMALL, "alternations": 1, "epochs_per_alternation": 0})
        model, trace = train_aeda(in_set, out_set, cfg, dictionary=d)
        T, resid = _sparse_targets(model, d, out_set.X, "l1", 1)
        Q, _ = np.linalg.qr(atoms)
        assert np.linalg.norm(T - (T @ Q) @ Q.T) <= 1e-10 * np.linalg.norm(T)
        assert trace.sparse_residuals == [resid]

    def test_divergence_is_reported(self):
        in_set, out_set = _sets(6, shift=1.0)
        cfg = TrainConfig(**{**SMALL, "learning_rate": 1e6})
        with pytest.raises(TrainingDivergedError):
            train_aeda(in_set, out_set, cfg)

    def test_dimension_mismatch(self):
        in_set, _ = _sets(7)
        _, other = _sets(7, m=4)
        with pytest.raises(DimensionMismatchError):
            train_aeda(in_set, other, TrainConfig(**SMALL))

    def test_trace_csv(self):
        in_set, out_set = _sets(8, shift=1.0)
        _, trace = train_aeda(in_set, out_set, TrainConfig(**SMALL))
        lines = trace.to_csv().splitlines()
        assert lines[0] == "phase,epoch,loss_total,loss_ae,loss_dae"
        assert len(lines) - 1 == SMALL["init_epochs"] + SMALL["alternations"] * SMALL[
            "epochs_per_alternation"]


class TestAdapt:
    def test_labels_and_shape(self):
        in_set, out_set = _sets(9, shift=1.0)
        model, _ = train_aeda(in_set, out_set, TrainConfig(**SMALL))
        ad = adapt(model, out_set)
        assert ad.ids == out_set.ids and ad.speakers == out_set.speakers
        assert ad.channels == out_set.channels
        assert ad.domain is Domain.ADAPTED and ad.dimension == out_set.dimension
        with pytest.raises(DimensionMismatchError):
            adapt(model, _sets(9, m=4)[0])


class TestDaeBaseline:
    def test_speaker_mean_targets(self):
        s = EmbeddingSet(np.array([[0.0], [2.0], [5.0]]), list("abc"), ["x", "x", "y"])
        np.testing.assert_array_equal(speaker_mean_targets(s), [[1.0], [1.0], [5.0]])

    def test_identical_speaker_vectors_reach_zero_loss(self):
        r = np.random.default_rng(14)
        centers = r.uniform(-1, 1, size=(3, 2))
        X = np.repeat(centers, 4, axis=0)
        s = EmbeddingSet(X, [str(i) for i in range(12)], np.repeat(list("abc"), 4))
        cfg = TrainConfig(hidden_dim=8, learning_rate=0.1, batch_size=12, init_epochs=3000,
                          alternations=0)
        model, trace = train_dae_baseline(s, cfg)
        assert trace.records[-1][4] < 1e-3
        assert trace.records[-1][4] < trace.records[0][4]

    def test_epoch_budget_matches_aeda(self):
        _, out_set = _sets(10, shift=1.0)
        _, trace = train_dae_baseline(out_set, TrainConfig(**SMALL))
        assert len(trace.records) == SMALL["init_epochs"] + SMALL["alternations"] * SMALL[
            "epochs_per_alternation"]

    def test_round_trip(self):
        _, out_set = _sets(11, shift=1.0)
        model, _ = train_dae_baseline(out_set, TrainConfig(**SMALL))
        back = DaeBaselineModel.from_dict(model.to_dict())
        np.testing.assert_array_equal(back.forward(out_set.X), model.forward(out_set.X))


def test_estimators_follow_sklearn_conventions():
    in_set, out_set = _sets(12, shift=1.0)
    est = AEDA(hidden_dim=6, init_epochs=2, alternations=1, epochs_per_alternation=1,
               gamma=0.5, dictionary_k=500)
    assert est.get_params()["hidden_dim"] == 6
    Z = est.fit(out_set.X, in_set.X).transform(out_set.X)
    assert Z.shape == out_set.X.shape
    np.testing.assert_array_equal(Z, adapt(est.model_, out_set).X)
    dae = DAEBaseline(hidden_dim=5, epochs=2).fit(out_set.X, out_set.speakers)
    assert dae.transform(out_set.X).shape == out_set.X.shape
