import numpy as np
import pytest

from hiresnn import datasets, model as M, training as Tr
from hiresnn.errors import ConfigurationError, ContractError, TrainingError


@pytest.fixture(scope="module")
def toy():
    X, Y = datasets.make_bars(48, seed=0, size=12)
    ann = M.vgg_like((12, 12, 1), 2, conv_channels=(2,), seed=0)
    snn = M.convert_ann_to_snn(ann, X[:16], T=6)
    return snn, X, Y


def snapshot(graph):
    return {k: v.copy() for k, v in graph.params.items()}


def same(a, b):
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)


class TestConfig:
    def test_ann_milestones(self):
        cfg = Tr.TrainConfig(mode="ann", epochs=240)
        assert cfg.milestone_epochs() == [150, 180, 210]
        assert cfg.lr_at(149) == 0.01
        assert cfg.lr_at(150) == pytest.approx(0.001)
        assert cfg.lr_at(239) == pytest.approx(1e-5)

    def test_snn_schedule(self):
        cfg = Tr.TrainConfig(mode="snn-hire", epochs=100)
        assert cfg.lr == 1e-4 and cfg.milestone_epochs() == [60, 80, 90]
        assert cfg.lr_at(60) == pytest.approx(2e-5)

    def test_default_regime(self):
        cfg = Tr.TrainConfig()
        assert (cfg.T, cfg.N, cfg.eps_s, cfg.eps_t) == (6, 2, 0.013, 0.013)

    def test_periods(self):
        assert Tr.TrainConfig(mode="snn-hire", T=4, N=2).period_length == 2
        assert Tr.TrainConfig(mode="snn-traditional", T=4, N=2).periods == 1

    @pytest.mark.parametrize("kwargs", [
        {"mode": "snn-xyz"}, {"T": 0}, {"T": 2, "N": 3}, {"eps_s": 0.02, "eps_t": 0.01},
        {"epochs": -1}, {"batch_size": 0}])
    def test_rejects(self, kwargs):
        with pytest.raises(ConfigurationError):
            Tr.TrainConfig(**kwargs)


class TestAnn:
    def test_zero_epochs(self):
        g = M.ModelGraph([M.linear(16, 2), M.output()], (16,))
        M.init_params(g, 0)
        before = snapshot(g)
        res = Tr.train_ann(g, *datasets.make_separable(20), Tr.TrainConfig(mode="ann", epochs=0))
        assert same(before, snapshot(g)) and res.history == []

    def test_separable_task(self):
        X, Y = datasets.make_separable(200, seed=1)
        g = M.init_params(M.ModelGraph([M.linear(16, 2), M.output()], (16,)), 0)
        res = Tr.train_ann(g, X, Y, Tr.TrainConfig(mode="ann", epochs=50, lr=0.5, seed=1))
        assert res.history[-1]["train_acc"] >= 99.0

    def test_mode_contract(self, toy):
        snn, X, Y = toy
        with pytest.raises(ContractError):
            Tr.train_ann(snn.copy(), X, Y, Tr.TrainConfig(mode="ann", epochs=1))


class TestSnn:
    def test_freeze(self, toy):
        snn, X, Y = toy
        g = snn.copy()
        before = snapshot(g)
        cfg = Tr.TrainConfig(mode="snn-hire", epochs=1, lr=0.05, freeze_v_t=True, freeze_l_k=True)
        Tr.train(g, X, Y, cfg)
        for k in before:
            if k.endswith(("v_t", "l_k")):
                assert np.array_equal(before[k], g.params[k])
        assert not same(before, snapshot(g))

    def test_traditional_ignores_n(self, toy):
        snn, X, Y = toy
        res = Tr.train(snn.copy(), X, Y, Tr.TrainConfig(mode="snn-traditional", N=3, epochs=1))
        assert res.stats.updates == res.stats.batches
        assert set(res.stats.stored_steps_per_update) == {6}

    def test_periods_and_updates(self, toy):
        snn, X, Y = toy
        cfg = Tr.TrainConfig(mode="snn-hire", T=4, N=2, epochs=1, batch_size=16)
        res = Tr.train(snn.copy(), X, Y, cfg)
        assert res.stats.batches == 3 and res.stats.updates == 6
        assert set(res.stats.stored_steps_per_update) == {2}

    def test_degenerate_hire_is_traditional(self, toy):
        snn, X, Y = toy
        trajectories = []
        for mode in ("snn-traditional", "snn-hire"):
            steps = []
            cfg = Tr.TrainConfig(mode=mode, N=1, eps_s=0.0, eps_t=0.0, epochs=2, lr=0.05, momentum=0.9)
            fn = Tr.train_snn_traditional if mode == "snn-traditional" else Tr.train_snn_hire
            fn(snn.copy(), X, Y, cfg, callback=lambda i, g: steps.append(snapshot(g)))
            trajectories.append(steps)
        assert len(trajectories[0]) == len(trajectories[1]) > 0
        assert all(same(a, b) for a, b in zip(*trajectories))

    def test_storage_report(self):
        assert Tr.gradient_storage_report(Tr.TrainConfig(mode="snn-hire", T=6, N=2)) == 3
        assert Tr.gradient_storage_report(Tr.TrainConfig(mode="snn-traditional", T=6)) == 6
        assert Tr.gradient_storage_report(Tr.TrainConfig(mode="snn-hire", T=10, N=1)) == 10

    def test_storage_report_matches_instrumentation(self, toy):
        snn, X, Y = toy
        for mode in ("snn-hire", "snn-traditional"):
            cfg = Tr.TrainConfig(mode=mode, epochs=1)
            res = Tr.train(snn.copy(), X, Y, cfg)
            assert res.stats.peak_stored_steps == Tr.gradient_storage_report(cfg)
            assert res.stats.simulated_steps == res.stats.batches * cfg.T

    def test_history_rows(self, toy):
        snn, X, Y = toy
        res = Tr.train(snn.copy(), X, Y, Tr.TrainConfig(mode="snn-hire", epochs=2), val=(X, Y))
        assert [r["epoch"] for r in res.history] == [1, 2]
        assert set(res.history[0]) == set(Tr.CSV_HEADER)

    def test_reset_state_option_runs(self, toy):
        snn, X, Y = toy
        res = Tr.train(snn.copy(), X, Y, Tr.TrainConfig(mode="snn-hire", epochs=1, carry_state=False))
        assert res.stats.updates == 2 * res.stats.batches

    def test_divergence(self):
        with pytest.raises(TrainingError):
            Tr._check_finite(float("nan"))


class TestKappa:
    def test_noise_state_step(self):
        ns = Tr.NoiseState.zeros(2, (2,))
        ns.step(np.array([[1.0, -1.0], [0.0, 2.0]]), 0.01, 0.015)
        np.testing.assert_allclose(ns.kappa, [[0.01, -0.01], [0.0, 0.01]])
        ns.step(np.array([[1.0, -1.0], [0.0, 2.0]]), 0.01, 0.015)
        np.testing.assert_allclose(ns.kappa, [[0.015, -0.015], [0.0, 0.015]])
        assert ns.saturation(0.015) == 0.75

    def test_for_batch_grows(self):
        ns = Tr.NoiseState.zeros(2, (3,))
        assert ns.for_batch(4).shape == (4, 3)

    def test_carryover_across_batches(self, toy):
        snn, X, Y = toy
        cfg = Tr.TrainConfig(mode="snn-hire", epochs=1, batch_size=24)
        res = Tr.train_snn_hire(snn.copy(), X, Y, cfg, record_kappa=True)
        log = res.kappa_log
        assert [(b, p, tag) for b, p, tag, _ in log] == [
            (0, 0, "start"), (0, 0, "end"), (0, 1, "start"), (0, 1, "end"),
            (1, 0, "start"), (1, 0, "end"), (1, 1, "start"), (1, 1, "end")]
        assert not log[0][3].any()
        np.testing.assert_array_equal(log[4][3], log[3][3])  # batch 2 starts where batch 1 ended
        np.testing.assert_array_equal(log[2][3], log[1][3])
        assert log[3][3].any()
        assert all(np.abs(k).max() <= cfg.eps_t for *_, k in log)

    def test_external_noise_state_continues(self, toy):
        snn, X, Y = toy
        cfg = Tr.TrainConfig(mode="snn-hire", epochs=1)
        res = Tr.train_snn_hire(snn.copy(), X, Y, cfg)
        kappa = res.noise.kappa.copy()
        res2 = Tr.train_snn_hire(snn.copy(), X[:8], Y[:8], cfg, noise=res.noise, record_kappa=True)
        np.testing.assert_array_equal(res2.kappa_log[0][3], kappa[:8])


class TestGaussian:
    def test_std(self):
        draw = Tr.gaussian_noise(np.random.default_rng(0), (100000,), 0.013)
        assert abs(draw.std() - 0.013) <= 0.05 * 0.013

    def test_deterministic(self, toy):
        snn, X, Y = toy
        cfg = Tr.TrainConfig(mode="snn-gaussian", epochs=1, seed=4)
        a, b = snn.copy(), snn.copy()
        Tr.train(a, X, Y, cfg)
        Tr.train(b, X, Y, cfg)
        assert same(snapshot(a), snapshot(b))

    def test_zero_noise_matches_hire_without_crafting(self, toy):
        snn, X, Y = toy
        a, b = snn.copy(), snn.copy()
        Tr.train(a, X, Y, Tr.TrainConfig(mode="snn-gaussian", eps_s=0.0, epochs=1))
        Tr.train(b, X, Y, Tr.TrainConfig(mode="snn-hire", eps_s=0.0, epochs=1))
        assert same(snapshot(a), snapshot(b))
