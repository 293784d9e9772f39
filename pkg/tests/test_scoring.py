import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdlcal.dist import one_hot
from mdlcal.scoring import BrierLoss, CostMatrix, LogLoss, bregman, entropy, expected_cost, expected_loss, loss, make_loss

from conftest import kl, simplex_vectors

LOSSES = [LogLoss(), BrierLoss()]


class TestLoss:
    def test_log_certain(self):
        assert loss(LogLoss(), 0, [1.0, 0.0]) == 0.0

    def test_log_clip(self):
        assert -math.log(1e-12) > 20
        assert loss(LogLoss(bound=20), 1, [1 - 1e-12, 1e-12]) == 20.0

    def test_brier_half(self):
        assert loss(BrierLoss(), 0, [0.5, 0.5]) == pytest.approx(0.5)

    @pytest.mark.parametrize("pl", LOSSES, ids=lambda p: p.name)
    def test_in_range(self, pl, rng):
        for h in rng.dirichlet(np.ones(4) * 0.3, size=200):
            v = pl.losses(h)
            assert np.all(v >= 0) and np.all(v <= pl.bound)


class TestExpectedLoss:
    def test_brier_equal(self):
        assert expected_loss(BrierLoss(), [0.5, 0.5], [0.5, 0.5]) == pytest.approx(0.5)

    def test_brier_hand(self):
        assert expected_loss(BrierLoss(), [0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.625)

    @pytest.mark.parametrize("pl", LOSSES, ids=lambda p: p.name)
    @given(eta=simplex_vectors(m=3))
    def test_equals_entropy_on_diagonal(self, pl, eta):
        assert expected_loss(pl, eta, eta) == pytest.approx(entropy(pl, eta), abs=1e-9)


class TestEntropy:
    def test_log_fair_coin(self):
        assert entropy(LogLoss(), [0.5, 0.5]) == pytest.approx(math.log(2), abs=1e-12)

    def test_brier_one_hot(self):
        assert entropy(BrierLoss(), [0.0, 1.0, 0.0]) == pytest.approx(0.0, abs=1e-15)

    def test_brier_half(self):
        assert entropy(BrierLoss(), [0.5, 0.5]) == pytest.approx(0.5)

    @pytest.mark.parametrize("pl", LOSSES, ids=lambda p: p.name)
    def test_minimal_over_grid(self, pl):
        grid = np.linspace(0.001, 0.999, 999)
        hs = np.stack([grid, 1 - grid], axis=1)
        for p in (0.1, 0.37, 0.5, 0.8):
            eta = np.array([p, 1 - p])
            assert entropy(pl, eta) <= np.min(pl.expected_loss(eta, hs)) + 1e-12

    @pytest.mark.parametrize("pl", LOSSES, ids=lambda p: p.name)
    @given(p=simplex_vectors(m=3), q=simplex_vectors(m=3))
    def test_concave(self, pl, p, q):
        assert entropy(pl, 0.5 * (p + q)) >= 0.5 * entropy(pl, p) + 0.5 * entropy(pl, q) - 1e-9


class TestBregman:
    @pytest.mark.parametrize("pl", LOSSES, ids=lambda p: p.name)
    def test_self_zero(self, pl):
        assert bregman(pl, [0.2, 0.3, 0.5], [0.2, 0.3, 0.5]) == pytest.approx(0.0, abs=1e-12)

    def test_log_is_kl(self):
        want = 0.5 * math.log(0.5 / 0.25) + 0.5 * math.log(0.5 / 0.75)
        assert want == pytest.approx(0.143841, abs=1e-6)
        assert bregman(LogLoss(), [0.5, 0.5], [0.25, 0.75]) == pytest.approx(want, abs=1e-12)

    def test_brier_squared_distance(self):
        assert bregman(BrierLoss(), [0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.125)

    @given(eta=simplex_vectors(m=4), h=simplex_vectors(m=4))
    def test_log_matches_independent_kl(self, eta, h):
        assert bregman(LogLoss(), eta, h) == pytest.approx(kl(eta, h), abs=1e-9)

    @pytest.mark.parametrize("pl", LOSSES, ids=lambda p: p.name)
    def test_nonnegative(self, pl, rng):
        for _ in range(300):
            eta, h = rng.dirichlet(np.ones(3), size=2)
            assert bregman(pl, eta, h) >= -1e-9


@pytest.mark.parametrize("pl", LOSSES, ids=lambda p: p.name)
def test_propriety(pl, rng):
    floor = math.exp(-pl.bound) if pl.name == "log" else 0.0
    strict_seen = 0
    for _ in range(1000):
        eta = rng.dirichlet(np.ones(3))
        h = np.maximum(rng.dirichlet(np.ones(3)), floor)
        h /= h.sum()
        assert expected_loss(pl, eta, h) >= entropy(pl, eta) - 1e-9
        if np.abs(h - eta).sum() > 0.01:
            assert expected_loss(pl, eta, h) > entropy(pl, eta)
            strict_seen += 1
    assert strict_seen > 900


@pytest.mark.parametrize("pl", LOSSES, ids=lambda p: p.name)
def test_representation_identity(pl, rng):
    for h in rng.dirichlet(np.ones(4), size=300):
        if pl.clip_active(h):
            continue
        for y in range(4):
            rep = entropy(pl, h) + pl.subgradient(h) @ (one_hot(y, 4) - h)
            assert loss(pl, y, h) == pytest.approx(rep, abs=1e-9)


def test_make_loss():
    assert make_loss("brier").name == "brier"
    pl = make_loss({"name": "log", "bound": 7.5})
    assert isinstance(pl, LogLoss) and pl.bound == 7.5
    with pytest.raises(ValueError):
        make_loss("hinge")


class TestCosts:
    def test_zero_costs(self):
        cm = CostMatrix(("a", "b"), np.zeros((2, 2)))
        assert expected_cost(cm, [0.3, 0.7], 0) == 0 and expected_cost(cm, [0.3, 0.7], 1) == 0

    def test_test_action_row(self):
        # labels ordered (positive, negative); test row holds c_TP=0, c_FP=1
        cm = CostMatrix(("test", "skip"), [[0.0, 1.0], [10.0, 0.0]])
        assert expected_cost(cm, [0.3, 0.7], 0) == pytest.approx(0.7)

    def test_one_hot(self):
        cm = CostMatrix(("a", "b"), [[2.0, 3.0], [5.0, 7.0]])
        assert expected_cost(cm, [0.0, 1.0], 1) == 7.0

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            CostMatrix(("a", "b"), [[-1.0, 0.0], [0.0, 1.0]])

    def test_json(self, tmp_path):
        cm = CostMatrix(("a", "b"), [[0.0, 1.0], [1.0, 0.0]])
        p = tmp_path / "c.json"
        import json

        p.write_text(json.dumps(cm.to_dict()))
        back = CostMatrix.load(p)
        assert back.actions == cm.actions
        np.testing.assert_array_equal(back.costs, cm.costs)
