import numpy as np
import pytest

from sovr import trainer
from sovr.attacks import AttackConfig, BatchAttack
from sovr.data import Dataset, gen_synthetic
from sovr.errors import ConfigError, NumericalError
from sovr.losses import Ewat, Gairat, Mail, ce_terms, ovr_loss, sovr_batch_loss
from sovr.tensor_net import backward, forward, init_network, logits
from sovr.trainer import TrainConfig, batch_objective, lr_at, minibatch_step, train, tsovr_batch

from conftest import affine_net, central_diff, rel_close

ATK = AttackConfig(0.1, 0.025, 5, random_init=True)


@pytest.fixture(scope="module")
def blobs():
    return gen_synthetic("blobs", 60, 3, 0.3, 0)


def _cfg(**kw):
    base = dict(epochs=2, batch_size=16, lr=0.05, attack=ATK, early_stop_attack=ATK, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def _trajectory(cfg, ds, init):
    flats = []
    train(cfg, ds, ds, init, callback=lambda e, b, net: flats.append(net.flat()))
    return flats


def test_config_validation():
    for bad in (dict(method="MSE"), dict(epochs=0), dict(batch_size=0), dict(m_percent=120),
                dict(lam=-1.0), dict(beta_t=-1.0), dict(method="WeightedCE")):
        with pytest.raises(ConfigError):
            TrainConfig(**bad)


def test_lr_schedule():
    cfg = TrainConfig(lr=0.1, lr_milestones=((100, 10), (150, 10)))
    assert lr_at(0, TrainConfig(lr=0.1)) == lr_at(500, TrainConfig(lr=0.1)) == 0.1
    assert lr_at(99, cfg) == 0.1
    assert lr_at(120, cfg) == pytest.approx(0.01, rel=1e-15)
    assert lr_at(160, cfg) == pytest.approx(0.001, rel=1e-15)
    with pytest.raises(ConfigError):
        lr_at(-1, cfg)


def test_zero_lr_returns_init(blobs):
    init = init_network((2, 8, 3), 0)
    best, rep = train(_cfg(epochs=1, lr=0.0), blobs, blobs, init)
    assert best.equals(init) and rep.last_network.equals(init)
    assert len(rep.rows) == 1


def test_input_checks(blobs):
    with pytest.raises(ConfigError):
        train(_cfg(), blobs, blobs, init_network((3, 4, 3), 0))
    empty = blobs.subset(np.array([], dtype=int))
    with pytest.raises(ConfigError):
        train(_cfg(), empty, blobs, init_network((2, 4, 3), 0))


def test_sovr_m0_is_at(blobs):
    init = init_network((2, 8, 3), 1)
    a = _trajectory(_cfg(method="AT"), blobs, init)
    b = _trajectory(_cfg(method="SOVR", m_percent=0, lam=0.4), blobs, init)
    assert len(a) == len(b) > 0
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


def test_sovr_m100_is_ovr(blobs):
    init = init_network((2, 8, 3), 1)
    a = _trajectory(_cfg(method="OVR"), blobs, init)
    b = _trajectory(_cfg(method="SOVR", m_percent=100, lam=1.0), blobs, init)
    assert all(np.array_equal(p, q) for p, q in zip(a, b))


def test_single_example_full_switch():
    net = init_network((2, 6, 3), 2)
    X, y = np.array([[0.3, 0.7]]), np.array([1])
    cfg = _cfg(method="SOVR", m_percent=100, lam=0.7)
    rng = np.random.default_rng(0)
    loss, _, m = batch_objective(net, X, y, cfg, rng)
    x_adv = trainer.pgd_batch(net, X, y, cfg.attack, np.random.default_rng(0)).x_adv
    assert loss == pytest.approx(0.7 * ovr_loss(logits(net, x_adv)[0], 1).value, rel=1e-14)
    np.testing.assert_array_equal(m.large, [0])


def _grads(net, X, y, cfg):
    loss, g, _ = batch_objective(net, X, y, cfg, np.random.default_rng(0))
    return loss, g.param_grads()


def test_ewat_uniform_outputs_doubles_at():
    net = affine_net(np.zeros((3, 2)))  # uniform softmax everywhere
    X, y = np.random.default_rng(1).uniform(0, 1, (8, 2)), np.arange(8) % 3
    la, ga = _grads(net, X, y, _cfg(method="AT"))
    le, ge = _grads(net, X, y, _cfg(method="WeightedCE", scheme=Ewat()))
    assert le == pytest.approx(2 * la, rel=1e-15)
    for p, q in zip(ga, ge):
        np.testing.assert_allclose(q, 2 * p, rtol=1e-15, atol=0)


def test_gairat_burn_in_is_at():
    net = init_network((2, 6, 3), 3)
    X, y = np.random.default_rng(2).uniform(0, 1, (8, 2)), np.arange(8) % 3
    la, ga = _grads(net, X, y, _cfg(method="AT"))
    lg, gg = _grads(net, X, y, _cfg(method="WeightedCE", scheme=Gairat(total_steps=5),
                                    gairat_burn_in=1))
    assert lg == la
    assert all(np.array_equal(p, q) for p, q in zip(ga, gg))


def test_weighted_ce_schemes_run():
    net = init_network((2, 6, 3), 3)
    X, y = np.random.default_rng(2).uniform(0, 1, (8, 2)), np.arange(8) % 3
    for scheme in (Gairat(total_steps=5), Mail()):
        loss, g = _grads(net, X, y, _cfg(method="WeightedCE", scheme=scheme))
        assert np.isfinite(loss) and all(np.all(np.isfinite(p)) for p in g)


def _tsovr(net, X, y, **kw):
    cfg = _cfg(method="TSOVR", attack=AttackConfig(kw.pop("eps", 0.1), 0.025, 5,
                                                   random_init=True), **kw)
    return tsovr_batch(net, X, y, cfg, np.random.default_rng(0))


def _clean_sovr_grads(net, X, y, m, lam):
    Z, tr = forward(net, X)
    v, g, _ = sovr_batch_loss(Z, y, m, lam)
    return v, backward(net, tr, g).param_grads()


def test_tsovr_beta0_m0_is_clean_ce():
    net = init_network((2, 6, 3), 4)
    X, y = np.random.default_rng(3).uniform(0, 1, (6, 2)), np.arange(6) % 3
    loss, g, _ = _tsovr(net, X, y, beta_t=0.0, m_percent=0)
    Z, tr = forward(net, X)
    v, dz = ce_terms(Z, y)
    assert loss == pytest.approx(v.mean(), rel=1e-15)
    for p, q in zip(g.param_grads(), backward(net, tr, dz / 6).param_grads()):
        np.testing.assert_allclose(p, q, rtol=1e-13, atol=1e-16)


def test_tsovr_zero_eps_is_clean_sovr():
    net = init_network((2, 6, 3), 5)
    X, y = np.random.default_rng(4).uniform(0, 1, (6, 2)), np.arange(6) % 3
    loss, g, _ = _tsovr(net, X, y, eps=0.0, beta_t=6.0, m_percent=40, lam=0.4)
    v, ref = _clean_sovr_grads(net, X, y, 40, 0.4)
    assert loss == pytest.approx(v, rel=1e-15)
    for p, q in zip(g.param_grads(), ref):
        np.testing.assert_allclose(p, q, rtol=1e-13, atol=1e-15)


def test_tsovr_gradient_fd(monkeypatch):
    # pin x' so the objective is a smooth function of the parameters
    net = init_network((2, 4, 3), 6)
    X, y = np.random.default_rng(5).uniform(0.2, 0.8, (4, 2)), np.arange(4) % 3
    x_adv = X + np.random.default_rng(6).uniform(-0.05, 0.05, X.shape)
    monkeypatch.setattr(trainer, "kl_pgd_batch",
                        lambda *a, **k: BatchAttack(x_adv, None, None, None, None))
    cfg = _cfg(method="TSOVR", m_percent=50, lam=0.4, beta_t=6.0)
    _, g, _ = tsovr_batch(net, X, y, cfg, None)

    def objective(flat):
        sizes = [p.size for p in net.parameters()]
        parts = np.split(flat, np.cumsum(sizes)[:-1])
        ps = [p.reshape(q.shape) for p, q in zip(parts, net.parameters())]
        return tsovr_batch(net.replace(ps[:2], ps[2:]), X, y, cfg, None)[0]

    analytic = np.concatenate([p.ravel() for p in g.param_grads()])
    assert rel_close(analytic, central_diff(objective, net.flat()))


def test_minibatch_zero_lr_and_empty():
    net = init_network((2, 6, 3), 3)
    X, y = np.random.default_rng(2).uniform(0, 1, (4, 2)), np.arange(4) % 3
    new, _, m = minibatch_step(net, X, y, _cfg(), np.random.default_rng(0), lr=0.0)
    assert new.equals(net) and m.lm.shape == (4,)
    with pytest.raises(ConfigError):
        minibatch_step(net, X[:0], y[:0], _cfg(), np.random.default_rng(0))


def test_non_finite_loss_reports_location(monkeypatch, blobs):
    def bad(net, X, labels, cfg, rng, epoch=0):
        return float("nan"), None, None
    monkeypatch.setattr(trainer, "batch_objective", bad)
    with pytest.raises(NumericalError, match="epoch 0 batch 0"):
        train(_cfg(), blobs, blobs, init_network((2, 4, 3), 0))


def test_report_invariants(blobs):
    init = init_network((2, 8, 3), 0)
    best, rep = train(_cfg(method="SOVR", epochs=4), blobs, blobs, init)
    accs = [r["robust_acc_pgd"] for r in rep.rows]
    assert rep.best_epoch == int(np.argmax(accs))
    assert best is rep.best_checkpoint
    for e, r in enumerate(rep.rows):
        assert r["epoch"] == e
        assert r["mean_lm_adv"] == float(np.mean(rep.lm_adv[e]))
    header, rows = rep.as_table()
    assert header[0] == "epoch" and len(rows) == 4


def test_seed_determinism(blobs):
    init = init_network((2, 8, 3), 0)
    for method in ("AT", "TSOVR"):
        _, r1 = train(_cfg(method=method), blobs, blobs, init)
        _, r2 = train(_cfg(method=method), blobs, blobs, init)
        assert r1.rows == r2.rows
        assert r1.last_network.equals(r2.last_network)


def test_full_ovr_margin_beats_at_on_separable_set():
    X = np.array([[0.2, 0.2], [0.3, 0.25], [0.8, 0.8], [0.75, 0.7]])
    ds = Dataset(X, np.array([0, 0, 1, 1]), 2)
    init = init_network((2, 8, 2), 0)
    out = {}
    for name, kw in (("AT", {}), ("SOVR", dict(m_percent=100, lam=1.0))):
        cfg = _cfg(method=name, epochs=30, batch_size=4, lr=0.1, **kw)
        _, rep = train(cfg, ds, ds, init)
        out[name] = rep.rows[-1]["mean_lm_adv"]
    assert out["SOVR"] <= out["AT"]
