import math
from decimal import Decimal

import numpy as np
import pytest

from hiresnn import attacks as A
from hiresnn import metrics as X
from hiresnn import model as M
from hiresnn.errors import InputError


@pytest.fixture(scope="module")
def snn():
    ann = M.vgg_like((8, 8, 1), 2, conv_channels=(3,), hidden=(4,), dropout_rate=0, seed=0)
    return M.convert_ann_to_snn(ann, np.random.default_rng(0).random((16, 8, 8, 1)), T=5)


class TestActivity:
    def test_silent(self):
        assert X.spiking_activity(np.zeros((4, 3)), 3, 4) == (0.0, 0.0)

    def test_saturated(self):
        assert X.spiking_activity(np.ones((4, 3)), 3, 4) == (4.0, 1.0)

    def test_hand_example(self):
        assert X.spiking_activity(3, 2, 4) == (1.5, 0.375)

    def test_bad_args(self):
        with pytest.raises(InputError):
            X.spiking_activity(1, 0, 4)

    def test_layer_records_in_range(self, snn):
        _, cache = M.forward_snn(snn, np.random.default_rng(1).random((6, 8, 8, 1)))
        recs = X.layer_activity(cache)
        assert [r.layer for r in recs] == snn.neuron_layers()
        for r in recs:
            assert 0 <= r.sa <= snn.T and 0 <= r.tasa <= 1
            assert r.tasa == pytest.approx(r.sa / snn.T)


class TestDistance:
    def test_identical(self):
        x = np.random.default_rng(0).random((3, 3))
        assert X.perturbation_distance(x, x) == 0.0

    def test_single_pixel(self):
        x = np.zeros((4, 4))
        y = x.copy()
        y[1, 2] = 8 / 255
        assert X.perturbation_distance(x, y) == 8 / 255

    def test_metric_axioms(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            a, b, c = rng.uniform(-1, 1, (3, 5))
            ab, bc, ac = (X.perturbation_distance(a, b), X.perturbation_distance(b, c),
                          X.perturbation_distance(a, c))
            assert ab >= 0 and X.perturbation_distance(a, a) == 0
            assert abs(ab - X.perturbation_distance(b, a)) <= 1e-12
            assert ac <= ab + bc + 1e-12

    def test_spike_pd_hand_example(self):
        a = np.zeros((4, 2))
        a[:, 0] = 1
        b = np.zeros((4, 2))
        b[:2, 0] = 1
        b[2:, 1] = 1
        assert X.spike_pd(a, b) == math.sqrt(0.5)

    def test_spike_pd_accepts_traces(self, snn):
        x = np.random.default_rng(2).random((2, 8, 8, 1))
        _, c1 = M.forward_snn(snn, x)
        _, c2 = M.forward_snn(snn, np.clip(x + 0.2, 0, 1))
        i = snn.neuron_layers()[0]
        assert X.spike_pd(c1.traces[i], c2.traces[i]) == X.spike_pd(c1.traces[i].spikes, c2.traces[i].spikes)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            X.perturbation_distance(np.zeros(2), np.zeros(3))


class TestFlopsEnergy:
    def test_conv_flops(self):
        g = M.ModelGraph([M.conv(3, 4, 16, padding=1), M.neuron(), M.avgpool(8), M.linear(16, 2), M.output()],
                         (8, 8, 4))
        rows = X.flops(g)
        assert rows[0].flops_ann == 36864 and rows[1].flops_ann == 32

    def test_activity_scaling(self):
        g = M.ModelGraph([M.conv(3, 4, 16, padding=1), M.neuron(), M.avgpool(8), M.linear(16, 2), M.output()],
                         (8, 8, 4))
        assert [r.flops_snn for r in X.flops(g, {0: 0.0, 3: 0.0})] == [0.0, 0.0]
        assert [r.flops_snn for r in X.flops(g, {0: 1.0, 3: 1.0})] == [36864, 32]

    def test_missing_activity(self):
        g = M.ModelGraph([M.linear(4, 2), M.output()], (4,))
        with pytest.raises(InputError):
            X.flops(g, {})

    def test_constants(self):
        c = X.EnergyConstants()
        assert (c.mac("fp"), c.ac("fp"), c.mac("int"), c.ac("int")) == (
            Decimal("4.6"), Decimal("0.9"), Decimal("3.2"), Decimal("0.1"))
        assert c.e_mac_32fp == c.e_mult_32fp + c.e_add_32fp
        assert c.e_mac_32int == c.e_mult_32int + c.e_add_32int
        with pytest.raises(ValueError):
            X.EnergyConstants(e_mac_32fp=Decimal("4.5"))

    def test_ann_energy(self):
        assert X.energy([1000], "ann") == 4600.0

    def test_direct_energy(self):
        assert X.energy([100, 1000], "direct") == 1360.0

    def test_rate_energy(self):
        assert X.energy([100, 1000], "rate") == 990.0
        assert X.energy([100, 1000], "rate", "int") == 110.0

    def test_layer_energies_sum(self):
        rows = [X.LayerFlops(0, "conv", 100, 1.0, 100.0), X.LayerFlops(2, "linear", 2000, 0.5, 1000.0)]
        assert X.layer_energies(rows, "direct") == [460.0, 900.0]
        assert X.energy(rows, "ann") == 2100 * 4.6

    def test_bad_mode(self):
        with pytest.raises(InputError):
            X.energy([1], "analog")

    def test_input_activity(self, snn):
        _, cache = M.forward_snn(snn, np.random.default_rng(3).random((4, 8, 8, 1)))
        step = X.input_activity(snn, cache, "direct", "step")
        run = X.input_activity(snn, cache, "direct", "run")
        first = snn.weighted_layers()[0]
        assert step[first] == 1.0
        for i in step:
            assert run[i] == pytest.approx(snn.T * step[i])
            assert 0 <= step[i] <= 1

    def test_profile_rows(self, snn):
        activity, rows = X.profile(snn, np.random.default_rng(4).random((10, 8, 8, 1)))
        assert len(rows) == len(snn.weighted_layers())
        assert rows[0][5] == rows[0][4]  # direct coding: first layer at full activity
        assert all(0 <= a.tasa <= 1 for a in activity)


class TestEvaluation:
    def test_clean_and_zero_eps(self, snn):
        x = np.random.default_rng(5).random((12, 8, 8, 1))
        y = M.predict(snn, x)
        rep = X.evaluate(snn, x, y)
        assert rep.clean_accuracy == rep.accuracy == 100.0
        rep0 = X.evaluate(snn, x, y, attack=A.AttackConfig(epsilon=0.0))
        assert rep0.accuracy == rep.clean_accuracy and rep0.pd_max == 0.0

    def test_delta(self):
        assert X.delta(41.25, 30.0) == pytest.approx(11.25, abs=0.1)

    def test_checklist_on_random_model(self):
        ann = M.vgg_like((8, 8, 1), 2, conv_channels=(3,), hidden=(4,), dropout_rate=0, seed=0)
        x = np.random.default_rng(6).random((12, 8, 8, 1))
        y = M.predict(ann, x)
        rows = X.obfuscation_checklist(ann, x, y, source=ann)
        assert [r[0][:3] for r in rows] == ["i_s", "ii_", "iii", "iv_", "v_a"]
        assert dict((r[0], r[1]) for r in rows)["v_adversarial_found"]

    def test_checklist_without_source_fails_transfer_check(self, snn):
        x = np.random.default_rng(6).random((6, 8, 8, 1))
        rows = X.obfuscation_checklist(snn, x, M.predict(snn, x), epsilons=(0.0, 1.0))
        assert rows[1][1] is False


def test_csv_round_trip(tmp_path):
    rows = [(0, 12, 0.1 + 0.2, "", True), (3, 2, 1 / 3, 0.5, False)]
    X.write_csv(tmp_path / "r.csv", ("a", "b", "c", "d", "e"), rows)
    back = X.read_csv(tmp_path / "r.csv")
    assert float(back[0]["c"]) == 0.1 + 0.2 and float(back[1]["c"]) == 1 / 3
    assert [r["e"] for r in back] == ["pass", "fail"]
