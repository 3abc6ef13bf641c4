import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from popood.errors import InvalidArgumentError, ProxyLabelError
from popood.hierarchy import SimilarityMatrix, augment_with_proxies, build_distance_matrix, builtin_tree, distance_to_similarity
from popood.losses import LossConfig, batch_loss, cosine_ce, default_beta, hsbl, predict

mpmath.mp.dps = 50


def toy3_pop_similarity():
    return distance_to_similarity(augment_with_proxies(build_distance_matrix(builtin_tree("toy3")), 1, 4))


def mp_loss(z, y, beta, m=0.0):
    """Extended-precision value and gradient of -log softmax with a margin on the true class."""
    t = [mpmath.mpf(beta) * mpmath.mpf(float(v)) for v in z]
    t[y] -= mpmath.mpf(beta) * mpmath.mpf(m)
    top = max(t)
    lse = top + mpmath.log(mpmath.fsum(mpmath.exp(v - top) for v in t))
    value = lse - t[y]
    grad = [mpmath.mpf(beta) * mpmath.exp(v - lse) for v in t]
    grad[y] -= beta
    return float(value), np.array([float(g) for g in grad])


logit_vectors = arrays(np.float64, st.integers(2, 8), elements=st.floats(-1, 1))


class TestDefaults:
    def test_default_beta(self):
        assert default_beta(3) == 10 and default_beta(10) == 10 and default_beta(11) == 5

    def test_config_validation(self):
        sim = toy3_pop_similarity()
        with pytest.raises(InvalidArgumentError):
            LossConfig(0.0, sim)
        with pytest.raises(InvalidArgumentError):
            LossConfig(1.0, sim, variant="focal")
        with pytest.raises(InvalidArgumentError):
            LossConfig(1.0, sim, denominator="some")
        with pytest.raises(InvalidArgumentError):
            LossConfig(1.0, sim, argmax_over="proxy")


class TestCosineCE:
    def test_uniform_logits(self):
        sim = toy3_pop_similarity()
        res = cosine_ce(np.full(4, 0.3), 1, LossConfig(10, sim))
        assert abs(res.value - math.log(4)) < 1e-12

    def test_saturation(self):
        sim = toy3_pop_similarity()
        res = cosine_ce(np.array([-1.0, 1.0, -1.0, -1.0]), 1, LossConfig(50, sim))
        assert res.value < 1e-40

    def test_extended_precision_oracle(self):
        sim = toy3_pop_similarity()
        cfg = LossConfig(5.0, sim)
        rng = np.random.default_rng(0)
        for _ in range(200):
            z = rng.uniform(-1, 1, 4)
            y = int(rng.integers(3))
            res = cosine_ce(z, y, cfg)
            value, grad = mp_loss(z, y, 5.0)
            assert abs(res.value - value) < 1e-10
            assert np.max(np.abs(res.logit_grad - grad)) < 1e-10
            assert res.margin_applied == 0.0

    def test_large_logits_stable(self):
        sim = SimilarityMatrix(np.eye(2), num_id=2)
        res = cosine_ce(np.array([800.0, -800.0]), 1, LossConfig(10, sim))
        assert np.isfinite(res.value) and abs(res.value - 16000) < 1e-9

    def test_proxy_label_rejected(self):
        with pytest.raises(ProxyLabelError):
            cosine_ce(np.zeros(4), 3, LossConfig(10, toy3_pop_similarity()))
        with pytest.raises(ProxyLabelError):
            hsbl(np.zeros(4), -1, LossConfig(10, toy3_pop_similarity()))

    def test_wrong_logit_count(self):
        with pytest.raises(InvalidArgumentError):
            cosine_ce(np.zeros(3), 0, LossConfig(10, toy3_pop_similarity()))


class TestHSBL:
    def test_toy3_margins(self):
        cfg = LossConfig(10, toy3_pop_similarity())
        to_horse = hsbl(np.array([0.1, 0.9, 0.2, 0.0]), 0, cfg)
        to_ship = hsbl(np.array([0.1, 0.2, 0.9, 0.0]), 0, cfg)
        assert (to_horse.predicted, to_horse.margin_applied) == (1, 0.5)
        assert (to_ship.predicted, to_ship.margin_applied) == (2, 0.75)
        assert to_ship.margin_applied > to_horse.margin_applied

    def test_correct_prediction_equals_ce(self):
        cfg = LossConfig(10, toy3_pop_similarity())
        z = np.array([0.7, 0.2, -0.3, 0.5])
        assert hsbl(z, 0, cfg).value == cosine_ce(z, 0, cfg).value
        assert np.array_equal(hsbl(z, 0, cfg).logit_grad, cosine_ce(z, 0, cfg).logit_grad)

    def test_tie_goes_to_lowest_index(self):
        assert predict(np.array([0.5, 0.5, 0.1, 0.9]), 3).tolist() == [0]
        cfg = LossConfig(10, toy3_pop_similarity())
        assert hsbl(np.array([0.5, 0.5, 0.1, 0.9]), 1, cfg).predicted == 0

    def test_argmax_ignores_proxy_by_default(self):
        z = np.array([0.1, 0.2, 0.3, 0.9])
        sim = toy3_pop_similarity()
        assert hsbl(z, 2, LossConfig(10, sim)).margin_applied == 0.0
        res = hsbl(z, 2, LossConfig(10, sim, argmax_over="all"))
        assert res.predicted == 3 and abs(res.margin_applied - 0.8) < 1e-15

    def test_extended_precision_oracle(self):
        sim = toy3_pop_similarity()
        cfg = LossConfig(10.0, sim)
        rng = np.random.default_rng(1)
        for _ in range(200):
            z = rng.uniform(-1, 1, 4)
            y = int(rng.integers(3))
            res = hsbl(z, y, cfg)
            pred = int(np.argmax(z[:3]))
            m = 0.0 if pred == y else 1 - sim.entries[pred, y]
            value, grad = mp_loss(z, y, 10.0, m)
            assert res.margin_applied == m
            assert abs(res.value - value) < 1e-10
            assert np.max(np.abs(res.logit_grad - grad)) < 1e-10

    def test_logit_grad_finite_differences(self):
        sim = toy3_pop_similarity()
        cfg = LossConfig(10.0, sim)
        rng = np.random.default_rng(2)
        h = 1e-6
        for _ in range(50):
            z = rng.uniform(-1, 1, 4)
            y = int(rng.integers(3))
            values, grads, _, m = batch_loss(z, [y], cfg)
            numeric = np.zeros(4)
            for j in range(4):
                e = np.zeros(4)
                e[j] = h
                up = batch_loss(z + e, [y], cfg, margins=m)[0][0]
                down = batch_loss(z - e, [y], cfg, margins=m)[0][0]
                numeric[j] = (up - down) / (2 * h)
            assert np.linalg.norm(grads[0] - numeric) <= 1e-6 * np.linalg.norm(grads[0])

    def test_denominator_all_variant(self):
        sim = toy3_pop_similarity()
        z = np.array([0.1, 0.9, 0.2, 0.0])
        res = hsbl(z, 0, LossConfig(10, sim, denominator="all"))
        t = 10 * z
        expected = np.log(np.exp(t[0] - 5) + np.exp(t).sum()) - (t[0] - 5)
        assert abs(res.value - expected) < 1e-12
        assert abs(res.logit_grad.sum()) < 1e-12

    @given(z=logit_vectors, data=st.data())
    @settings(max_examples=200, deadline=None)
    def test_properties(self, z, data):
        k = z.size
        num_id = data.draw(st.integers(1, k))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**16)))
        a = rng.uniform(0, 1, (k, k))
        s = np.clip((a + a.T) / 4, 0, 1)
        np.fill_diagonal(s, 1)
        cfg = LossConfig(data.draw(st.floats(0.5, 20)), SimilarityMatrix(s, num_id, k - num_id))
        y = data.draw(st.integers(0, num_id - 1))
        h, c = hsbl(z, y, cfg), cosine_ce(z, y, cfg)
        assert abs(h.logit_grad.sum()) < 1e-12
        assert abs(c.logit_grad.sum()) < 1e-12
        if h.margin_applied > 0:
            assert h.value > c.value
        else:
            assert h.value == c.value

    def test_monotone_penalty(self):
        cfg = LossConfig(10, toy3_pop_similarity())
        z = np.array([0.2, 0.3, 0.1, -0.5])
        near = batch_loss(z, [0], cfg, margins=1 - 0.5)[0][0]
        far = batch_loss(z, [0], cfg, margins=1 - 0.25)[0][0]
        assert far >= near

    def test_degenerate_hierarchy_uniform_margin(self):
        s = np.full((4, 4), 0.3)
        np.fill_diagonal(s, 1)
        cfg = LossConfig(10, SimilarityMatrix(s, num_id=4))
        rng = np.random.default_rng(3)
        margins = set()
        for _ in range(100):
            z = rng.uniform(-1, 1, 4)
            y = int(rng.integers(4))
            res = hsbl(z, y, cfg)
            if res.predicted != y:
                margins.add(res.margin_applied)
        assert margins == {0.7}

    def test_identity_1000_pairs(self):
        sim = toy3_pop_similarity()
        cfg = LossConfig(10, sim)
        rng = np.random.default_rng(4)
        for _ in range(1000):
            z = rng.uniform(-1, 1, 4)
            y = int(np.argmax(z[:3]))
            assert abs(hsbl(z, y, cfg).value - cosine_ce(z, y, cfg).value) <= 1e-10

    def test_batch_matches_single(self):
        sim = toy3_pop_similarity()
        cfg = LossConfig(10, sim)
        z = np.random.default_rng(5).uniform(-1, 1, (6, 4))
        y = np.array([0, 1, 2, 0, 1, 2])
        values, grads, pred, m = batch_loss(z, y, cfg)
        for i in range(6):
            res = hsbl(z[i], y[i], cfg)
            assert values[i] == res.value
            assert np.array_equal(grads[i], res.logit_grad)
