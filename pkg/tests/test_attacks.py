import itertools

import numpy as np
import pytest

from sovr import attacks
from sovr.attacks import (
    AttackConfig,
    BatchAttack,
    fgsm,
    fgsm_batch,
    kl_pgd,
    least_flip_step,
    pgd,
    pgd_batch,
    robust_mask,
    worst_case_eval,
)
from sovr.errors import ConfigError
from sovr.losses import ce_terms, kl_terms, lm_terms
from sovr.tensor_net import init_network, logits

from conftest import affine_net, constant_net


def _in_ball(x_adv, x, cfg_eps, lo=0.0, hi=1.0):
    return (np.all(np.abs(x_adv - x) <= cfg_eps + 1e-15)
            and np.all(x_adv >= lo) and np.all(x_adv <= hi))


def test_config_validation():
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=-0.1, eta=0.1)
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=0.1, eta=0.0)
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=0.1, eta=0.1, steps=0)
    with pytest.raises(ConfigError):
        AttackConfig(epsilon=0.1, eta=0.1, objective="MSE")


def test_fgsm_zero_epsilon():
    net = init_network((3, 4, 2), 0)
    x = np.array([0.2, 0.5, 0.9])
    np.testing.assert_array_equal(fgsm(net, x, 1, 0.0).x_adv, x)


def test_fgsm_linear_1d_moves_down():
    net = affine_net([[2.0], [0.0]])
    for x in (0.05, 0.5):
        r = fgsm(net, np.array([x]), 0, 0.1)
        np.testing.assert_allclose(r.x_adv, [max(x - 0.1, 0.0)], rtol=0, atol=1e-16)


def test_fgsm_constant_logits_stays():
    x = np.array([0.3, 0.4])
    r = fgsm(constant_net(2, 3), x, 0, 0.2)
    np.testing.assert_array_equal(r.x_adv, x)
    assert not r.success


def test_pgd_single_step_is_fgsm_with_eta():
    net = init_network((3, 6, 3), 1)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(0.2, 0.8, 3)
        y = int(rng.integers(3))
        r = pgd(net, x, y, AttackConfig(epsilon=0.1, eta=0.05, steps=1))
        np.testing.assert_array_equal(r.x_adv, fgsm(net, x, y, 0.05).x_adv)


def test_pgd_constant_net_keeps_initial_delta():
    x = np.array([0.5, 0.5])
    cfg = AttackConfig(epsilon=0.1, eta=0.02, steps=5, random_init=True)
    r = pgd(constant_net(2, 2), x, 0, cfg, np.random.default_rng(3))
    delta0 = np.random.default_rng(3).uniform(-0.1, 0.1, size=(1, 2))[0]
    np.testing.assert_array_equal(r.x_adv, np.clip(x + delta0, 0.4, 0.6))
    assert not r.success and r.flip_step is None


@pytest.mark.parametrize("objective", ["CE", "LM"])
def test_pgd_linear_reaches_best_corner(objective):
    rng = np.random.default_rng(11)
    cfg = AttackConfig(epsilon=0.2, eta=0.05, steps=10, objective=objective)
    for _ in range(50):
        net = affine_net(rng.normal(size=(2, 2)), rng.normal(size=2))
        x, y = rng.uniform(0, 1, 2), int(rng.integers(2))
        lo, hi = np.maximum(x - 0.2, 0), np.minimum(x + 0.2, 1)
        corners = np.array(list(itertools.product(*zip(lo, hi))))
        best = lm_terms(logits(net, corners), np.full(4, y)).max()
        r = pgd(net, x, y, cfg)
        got = lm_terms(logits(net, r.x_adv[None]), [y])[0]
        assert got == pytest.approx(best, abs=1e-12)


def test_ball_and_domain_invariants():
    net = init_network((4, 8, 3), 2)
    rng = np.random.default_rng(5)
    X = rng.uniform(0, 1, (50, 4))
    y = rng.integers(0, 3, 50)
    for cfg in (AttackConfig(0.1, 0.03, 7, random_init=True),
                AttackConfig(0.3, 0.2, 3, restarts=3, random_init=True, objective="LM"),
                AttackConfig(0.05, 0.01, 4, random_init=True, objective="KL")):
        res = attacks._run_config(net, X, y, cfg, rng)
        assert _in_ball(res.x_adv, X, cfg.epsilon)
    assert _in_ball(fgsm_batch(net, X, y, 0.2).x_adv, X, 0.2)


def test_refinement_order_linear():
    # K = 2 linear: CE is monotone in one direction, so with steps * eta >= eps
    # PGD reaches the FGSM corner and nothing beats it
    rng = np.random.default_rng(9)
    for _ in range(200):
        net = affine_net(rng.normal(size=(2, 3)), rng.normal(size=2))
        x, y = rng.uniform(0, 1, 3), int(rng.integers(2))
        eps = rng.uniform(0.01, 0.3)
        eta = rng.uniform(0.2, 1.0) * eps
        steps = int(np.ceil(eps / eta)) + int(rng.integers(0, 3))
        clean = ce_terms(logits(net, x[None]), [y])[0][0]
        f = fgsm_batch(net, x[None], [y], eps).loss[0]
        p = pgd_batch(net, x[None], [y], AttackConfig(eps, eta, steps)).loss[0]
        assert p >= f - 1e-12 and f >= clean - 1e-12


def test_refinement_order_nonlinear_rate():
    net = init_network((3, 16, 3), 4)
    rng = np.random.default_rng(10)
    X = rng.uniform(0, 1, (500, 3))
    y = rng.integers(0, 3, 500)
    eps = 0.1
    clean = ce_terms(logits(net, X), y)[0]
    f = fgsm_batch(net, X, y, eps).loss
    p = pgd_batch(net, X, y, AttackConfig(eps, 0.025, 10)).loss
    violations = np.mean((p < f - 1e-12) | (f < clean - 1e-12))
    assert violations <= 0.01


def test_restarts_prefer_success(monkeypatch):
    runs = iter([
        (np.zeros((2, 1)), np.array([False, True]), np.array([-1, 3]),
         np.array([5.0, 1.0]), np.array([-1.0, 0.5])),
        (np.ones((2, 1)), np.array([True, True]), np.array([2, 4]),
         np.array([0.5, 2.0]), np.array([0.1, 0.9])),
    ])
    monkeypatch.setattr(attacks, "_pgd_run", lambda *a: next(runs))
    res = pgd_batch(constant_net(1, 2), np.zeros((2, 1)), [0, 0],
                    AttackConfig(0.1, 0.1, restarts=2))
    np.testing.assert_array_equal(res.x_adv, [[1.0], [1.0]])
    np.testing.assert_array_equal(res.flip_step, [2, 4])


def test_least_flip_step_cases():
    cfg = AttackConfig(epsilon=2.0, eta=0.1, steps=10, clip_lo=-10, clip_hi=10)
    net = affine_net([[1.0, 0.5], [0.0, 0.0]])
    # margin 0.8, each sign step gains eta * ||w||_1 = 0.15
    x = np.array([0.55, 0.5])
    assert least_flip_step(net, x, 0, cfg) == int(np.ceil(0.8 / 0.15))
    # step-by-step simulation agrees
    z = x.copy()
    for t in range(11):
        if lm_terms(logits(net, z[None]), [0])[0] > 0:
            break
        z = z - 0.1
    assert t == 6
    assert least_flip_step(net, np.array([-1.0, 0.0]), 0, cfg) == 0
    assert least_flip_step(constant_net(2, 2, 1.0), x, 0, cfg) is None
    with pytest.raises(ConfigError):
        least_flip_step(net, x, 0, AttackConfig(0.1, 0.1, restarts=2))


def test_kl_pgd_zero_epsilon():
    net = init_network((2, 5, 3), 0)
    x = np.array([0.4, 0.6])
    r = kl_pgd(net, x, AttackConfig(0.0, 0.1, objective="KL", random_init=True))
    np.testing.assert_array_equal(r.x_adv, x)
    assert kl_terms(logits(net, x), logits(net, r.x_adv))[0][0] == 0.0


def test_kl_pgd_constant_net():
    x = np.array([0.4, 0.6])
    cfg = AttackConfig(0.1, 0.03, 5, random_init=True, objective="KL")
    r = kl_pgd(constant_net(2, 3), x, cfg, np.random.default_rng(1))
    delta0 = np.random.default_rng(1).uniform(-0.1, 0.1, size=(1, 2))[0]
    np.testing.assert_array_equal(r.x_adv, np.clip(x + delta0, 0.3, 0.5 + 0.2))


def test_kl_pgd_stationary_without_random_init():
    # KL has zero gradient at delta = 0 and sign(0) = 0
    net = init_network((2, 5, 3), 0)
    x = np.array([0.4, 0.6])
    r = kl_pgd(net, x, AttackConfig(0.1, 0.03, 5, objective="KL"))
    np.testing.assert_array_equal(r.x_adv, x)


def test_kl_pgd_logistic_grid_search():
    net = affine_net([[3.0], [0.0]], [-1.0, 0.0])
    cfg = AttackConfig(0.2, 0.05, 10, restarts=6, random_init=True, objective="KL")
    for x0 in (0.3, 0.5, 0.7):
        x = np.array([x0])
        r = kl_pgd(net, x, cfg, np.random.default_rng(0))
        grid = np.linspace(max(x0 - 0.2, 0), min(x0 + 0.2, 1), 4001)[:, None]
        kl = kl_terms(np.repeat(logits(net, x[None]), len(grid), 0), logits(net, grid))[0]
        assert abs(r.x_adv[0] - grid[np.argmax(kl), 0]) <= 0.4 / 4000


def _fixed_attack(monkeypatch, success_by_cfg):
    def fake(net, X, labels, cfg, rng):
        s = success_by_cfg[cfg.eta]
        n = X.shape[0]
        return BatchAttack(X, s, np.full(n, -1), np.zeros(n), np.zeros(n))
    monkeypatch.setattr(attacks, "_run_config", fake)


def test_worst_case_set_arithmetic(monkeypatch):
    net = affine_net([[1.0], [0.0]])
    X, y = np.ones((5, 1)), np.zeros(5, dtype=int)
    a = AttackConfig(0.1, 0.1)
    b = AttackConfig(0.1, 0.2)
    _fixed_attack(monkeypatch, {0.1: np.array([0, 1, 1, 0, 0], bool),
                                0.2: np.array([0, 0, 1, 1, 0], bool)})
    assert worst_case_eval(net, X, y, []) == 1.0
    assert worst_case_eval(net, X, y, [a]) == pytest.approx(3 / 5)
    assert worst_case_eval(net, X, y, [a, b]) == pytest.approx(2 / 5)


def test_worst_case_adding_attacks_never_helps():
    net = init_network((3, 8, 3), 6)
    rng = np.random.default_rng(2)
    X, y = rng.uniform(0, 1, (80, 3)), rng.integers(0, 3, 80)
    c1 = [AttackConfig(0.05, 0.02, 5)]
    c2 = c1 + [AttackConfig(0.1, 0.02, 10, objective="LM")]
    m1, m2 = robust_mask(net, X, y, c1), robust_mask(net, X, y, c2)
    assert np.all(m2 <= m1)


def test_worst_case_empty_dataset():
    with pytest.raises(ConfigError):
        worst_case_eval(constant_net(2, 2), np.zeros((0, 2)), [], [])
