import math

import numpy as np
import pytest

from riskdec.errors import ConfigurationError, ContractError
from riskdec.fvec_io import FeatureDataset
from riskdec.probe import train_probe
from riskdec.repstats import effective_dim
from riskdec.synth import (ENCODER_KINDS, EncoderSpec, LatticeSpec, SynthTask, apply_encoder, bayes_risk_oracle,
                           brute_force_probe, fit_encoder, gaussian_task, gen_gaussian_task, pca_components,
                           population_risk, tradeoff_sweep, two_gaussian_task)

from helpers import normal_cdf_series

#: Phi(-1), from the Maclaurin series of erf (see helpers.normal_cdf_series).
PHI_MINUS_ONE = 0.15865525393145707


def test_frozen_oracle_matches_series():
    assert normal_cdf_series(-1.0) == pytest.approx(PHI_MINUS_ONE, abs=1e-15)


class TestTasks:
    def test_two_gaussian_construction(self):
        task = two_gaussian_task()
        assert task.mean_matrix[:, 0].tolist() == [-1.0, 1.0] and np.all(task.mean_matrix[:, 1:] == 0)

    def test_deterministic_and_balanced(self):
        task = gaussian_task(n_pre=50, n_tr=100, n_te=40, seed=3)
        a, b = gen_gaussian_task(task), gen_gaussian_task(task)
        assert all(x == y for x, y in zip(a, b))
        assert a[1].class_counts().tolist() == [10] * 10
        assert not (gen_gaussian_task(task.with_seed(4))[1] == a[1])

    @pytest.mark.parametrize("kw", [{"n_te": 0}, {"sigma": 0.0}, {"n_tr": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            gaussian_task(**kw)

    def test_duplicate_means_reported(self):
        task = SynthTask(2, 2, np.zeros((2, 2)), 1.0, 10, 10, 10, 0)
        assert not task.distinct_means() and gaussian_task().distinct_means()

    def test_round_trip(self):
        task = gaussian_task(seed=9)
        back = SynthTask.from_dict(task.to_dict())
        assert np.array_equal(back.mean_matrix, task.mean_matrix) and back.seed == 9


class TestBayes:
    def test_closed_form(self):
        got = bayes_risk_oracle(two_gaussian_task())
        assert got.method == "closed_form" and got.value == pytest.approx(PHI_MINUS_ONE, abs=1e-15)

    def test_monte_carlo_agrees_within_three_se(self):
        mc = bayes_risk_oracle(two_gaussian_task(), method="monte_carlo")
        assert mc.stderr > 0 and abs(mc.value - PHI_MINUS_ONE) <= 3 * mc.stderr

    def test_far_apart(self):
        assert bayes_risk_oracle(two_gaussian_task(delta=80.0)).value == 0.0

    @pytest.mark.parametrize("C", [2, 3, 10])
    def test_identical_means(self, C):
        task = SynthTask(C, 2, np.zeros((C, 2)), 1.0, 10, 10, 10, 0)
        assert bayes_risk_oracle(task).value == (C - 1) / C

    def test_population_risk_of_optimal_rule(self):
        task = two_gaussian_task()
        from riskdec.probe import ProbeModel
        W = np.zeros((2, 2))
        W[0] = [-1.0, 1.0]
        assert population_risk(task, ProbeModel(W, np.zeros(2), 0.0)) == pytest.approx(PHI_MINUS_ONE, abs=1e-15)


class TestEncoders:
    def setup_method(self):
        self.pre, self.tr, self.te = gen_gaussian_task(gaussian_task(n_pre=200, n_tr=100, n_te=50))

    def test_identity_copy(self):
        out = apply_encoder(EncoderSpec("identity"), self.pre, self.tr)
        assert np.array_equal(out.features, self.tr.features)

    def test_constant_effective_dim(self):
        out = apply_encoder(EncoderSpec("constant", d_out=4), self.pre, self.tr)
        with pytest.warns(RuntimeWarning):
            assert effective_dim(out.features) == 1

    def test_one_hot_train(self):
        enc = fit_encoder(EncoderSpec("one_hot_train"), self.pre, n_train=100)
        Z = enc.transform(self.tr, "train").features
        assert Z.shape == (100, 100) and np.array_equal(Z @ Z.T, np.eye(100))
        assert not np.any(enc.transform(self.te, "test").features)

    def test_pca_orthonormal(self):
        _, V = pca_components(np.asarray(self.pre.features), 5)
        assert np.max(np.abs(V @ V.T - np.eye(5))) < 1e-8

    def test_pca_needs_enough_rows(self):
        tiny = self.pre.subset(np.arange(3))
        with pytest.raises(ContractError):
            fit_encoder(EncoderSpec("pca_pretrained", d_out=5), tiny)

    def test_random_projection_seeded(self):
        a = apply_encoder(EncoderSpec("random_projection", d_out=3, seed=1), self.pre, self.tr)
        b = apply_encoder(EncoderSpec("random_projection", d_out=3, seed=1), self.pre, self.tr)
        c = apply_encoder(EncoderSpec("random_projection", d_out=3, seed=2), self.pre, self.tr)
        assert a == b and not a == c
        t = apply_encoder(EncoderSpec("random_projection", d_out=3, seed=1, nonlinearity=True), self.pre, self.tr)
        assert np.allclose(t.features, np.tanh(a.features))

    def test_noisy_identity(self):
        out = apply_encoder(EncoderSpec("noisy_identity", sigma_noise=0.5), self.pre, self.tr)
        assert 0.15 < float(np.var(out.features - self.tr.features)) < 0.35

    @pytest.mark.parametrize("kw", [{"kind": "autoencoder"}, {"kind": "random_projection"},
                                    {"kind": "pca_pretrained", "d_out": 0}])
    def test_invalid_specs(self, kw):
        with pytest.raises(ConfigurationError):
            EncoderSpec(**kw)

    def test_kinds(self):
        assert set(ENCODER_KINDS) == {"identity", "constant", "one_hot_train", "random_projection",
                                      "noisy_identity", "pca_pretrained"}

    def test_dimension_mismatch(self):
        enc = fit_encoder(EncoderSpec("identity"), self.pre)
        with pytest.raises(ContractError):
            enc.transform(FeatureDataset(np.zeros((3, 2)), [0, 1, 0], 10))


class TestBruteForce:
    def test_separable_oracle(self):
        ds = FeatureDataset(np.array([[-1.0], [1.0]] * 3), [0, 1] * 3, 2)
        best, _, _ = brute_force_probe(ds, 1e-2, LatticeSpec(-5, 5, 0.05))
        from riskdec.probe import loss_and_grad
        assert abs(loss_and_grad(train_probe(ds, 1e-2), ds)[0] - best) <= 1e-3

    def test_huge_lambda_zero_weights(self):
        ds = FeatureDataset(np.array([[-1.0], [1.0]] * 3), [0, 1] * 3, 2)
        _, W, b = brute_force_probe(ds, 1e6, LatticeSpec(-1, 1, 0.05))
        assert np.allclose(W, 0.0, atol=1e-12)

    def test_refusals(self):
        ds = FeatureDataset(np.zeros((4, 1)), [0, 1, 0, 1], 2)
        with pytest.raises(ConfigurationError):
            brute_force_probe(ds, 0.1, None)
        with pytest.raises(ConfigurationError):
            brute_force_probe(ds, 0.1, LatticeSpec(1, 0, 0.1))
        with pytest.raises(ContractError):
            brute_force_probe(ds, 0.1, LatticeSpec(-5, 5, 1e-3))
        wide = FeatureDataset(np.zeros((4, 3)), [0, 1, 0, 1], 2)
        with pytest.raises(ContractError):
            brute_force_probe(wide, 0.1, LatticeSpec())


class TestSweeps:
    def test_bit_reproducible(self):
        task = gaussian_task(n_tr=200, n_te=200)
        specs = [EncoderSpec("random_projection", d_out=4), EncoderSpec("pca_pretrained", d_out=4)]
        a = tradeoff_sweep(task, specs, seeds=[0, 1])
        b = tradeoff_sweep(task, specs, seeds=[0, 1])
        assert [r.components.to_dict() for r in a.rows] == [r.components.to_dict() for r in b.rows]

    def test_one_hot_fits_training_set(self):
        task = gaussian_task(n_tr=200, n_te=200)
        table = tradeoff_sweep(task, [EncoderSpec("one_hot_train")], seeds=[0])
        assert table.rows[0].components.estimates.hr_AF == 0.0

    def test_random_projection_dimension(self):
        specs = [EncoderSpec("random_projection", d_out=d) for d in (2, 8, 32)]
        table = tradeoff_sweep(gaussian_task(d_raw=32), specs, seeds=range(10))
        (_, u2, p2), (_, u8, p8), (_, u32, p32) = table.frontier()
        assert u2 >= u8 - 0.01 and u8 >= u32 - 0.01
        assert p2 <= p8 + 0.01 and p8 <= p32 + 0.01

    def test_untrained_frontier(self):
        specs = [EncoderSpec("random_projection", d_out=d, nonlinearity=True) for d in (2, 8, 32)]
        frontier = tradeoff_sweep(gaussian_task(d_raw=32), specs, seeds=range(10)).frontier()
        order = sorted(frontier, key=lambda row: row[1])
        assert all(b[2] <= a[2] + 0.01 for a, b in zip(order, order[1:]))

    def test_empty_specs(self):
        with pytest.raises(ConfigurationError):
            tradeoff_sweep(gaussian_task(), [])

    @pytest.mark.xfail(strict=False, reason=(
        "pca_pretrained is fit on S_pre only, so S_sub and S_te are equally unseen by the encoder "
        "and encoder_gen carries no n_pre signal; the measured small-vs-large gap is within noise"))
    def test_pca_small_pretrain_has_larger_encoder_gen(self):
        spec = [EncoderSpec("pca_pretrained", d_out=8)]
        small = tradeoff_sweep(gaussian_task(n_pre=50), spec, seeds=range(20))
        large = tradeoff_sweep(gaussian_task(n_pre=5000), spec, seeds=range(20))
        label = spec[0].label
        assert small.mean(label, "encoder_gen") > large.mean(label, "encoder_gen")
