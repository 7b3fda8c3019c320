"""Adversarial training loops: AT, pure OVR, weighted CE, SOVR and TSOVR."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .attacks import AttackConfig, kl_pgd_batch, pgd_batch, worst_case_eval
from .errors import ConfigError, NumericalError
from .losses import (
    Ewat,
    Gairat,
    Mail,
    WeightScheme,
    ce_terms,
    kl_terms,
    lm_terms,
    normalize_weights,
    ovr_terms,
    probabilistic_margins,
    sovr_batch_loss,
    weight_ewat,
    weight_gairat,
    weight_mail,
)
from .tensor_net import Network, backward, forward, logits, sgd_step, softmax

METHODS = ("AT", "OVR", "WeightedCE", "SOVR", "TSOVR")

DEFAULT_ATTACK = AttackConfig(epsilon=0.1, eta=0.025, steps=10, random_init=True)


@dataclass(frozen=True)
class TrainConfig:
    method: str = "AT"
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.1
    lr_milestones: tuple = ()
    momentum: float = 0.9
    weight_decay: float = 5e-4
    m_percent: float = 40.0
    lam: float = 0.4
    beta_t: float = 6.0
    scheme: Optional[WeightScheme] = None
    gairat_burn_in: int = 0
    attack: AttackConfig = DEFAULT_ATTACK
    early_stop_attack: AttackConfig = DEFAULT_ATTACK
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not 0 <= self.m_percent <= 100:
            raise ConfigError("M must be in [0, 100]")
        if self.lam < 0 or self.beta_t < 0:
            raise ConfigError("lambda and beta_T must be >= 0")
        if self.method == "WeightedCE" and self.scheme is None:
            raise ConfigError("WeightedCE needs a weight scheme")
        object.__setattr__(self, "lr_milestones",
                           tuple((int(e), float(d)) for e, d in self.lr_milestones))

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)


@dataclass
class BatchMetrics:
    loss: float
    lm: np.ndarray
    large: np.ndarray


@dataclass
class TrainReport:
    rows: list
    best_epoch: int
    best_checkpoint: Network
    last_network: Network
    lm_adv: np.ndarray = field(repr=False)  # (epochs, n) per-example lm of training x'

    def as_table(self):
        header = ["epoch", "train_loss", "clean_acc", "robust_acc_pgd", "mean_lm_adv"]
        return header, [[r[h] for h in header] for r in self.rows]


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Piecewise-constant schedule: divide at each milestone epoch reached."""
    if epoch < 0:
        raise ConfigError("epoch must be >= 0")
    lr = cfg.lr
    for milestone, divisor in cfg.lr_milestones:
        if epoch >= milestone:
            lr /= divisor
    return lr


def _scheme_weights(scheme, Z, labels, flip, steps, epoch, burn_in):
    n = Z.shape[0]
    if isinstance(scheme, Gairat):
        if epoch < burn_in:
            scheme = dataclasses.replace(scheme, uniform=True)
        kappa = np.where(flip < 0, scheme.total_steps, np.minimum(flip, scheme.total_steps))
        return normalize_weights(np.atleast_1d(weight_gairat(kappa, scheme)), "sum_to_one")
    if isinstance(scheme, Mail):
        pm = probabilistic_margins(softmax(Z), labels)
        return normalize_weights(np.atleast_1d(weight_mail(pm, scheme)), "sum_to_one")
    if isinstance(scheme, Ewat):
        w = np.atleast_1d(weight_ewat(softmax(Z)))
        return normalize_weights(w, "batch_mean_plus_one") * (1.0 / n)
    raise ConfigError(f"unknown weight scheme {scheme!r}")


def tsovr_batch(net: Network, X, labels, cfg: TrainConfig, rng):
    """TRADES-style objective with SOVR on clean logits.

    Returns ``(loss, GradientBundle, BatchMetrics)``; the KL term
    contributes gradients through both the clean and adversarial passes.
    """
    n = X.shape[0]
    adv = kl_pgd_batch(net, X, dataclasses.replace(cfg.attack, objective="KL"), rng, labels)
    Zc, trace_c = forward(net, X)
    Za, trace_a = forward(net, adv.x_adv)
    value, g_clean, large = sovr_batch_loss(Zc, labels, cfg.m_percent, cfg.lam)
    kl_v, kl_gc, kl_ga = kl_terms(Zc, Za)
    scale = cfg.beta_t / n
    loss = value + scale * float(np.sum(kl_v))
    grads = backward(net, trace_c, g_clean + scale * kl_gc) + backward(net, trace_a, scale * kl_ga)
    return loss, grads, BatchMetrics(loss, lm_terms(Za, labels), large)


def batch_objective(net: Network, X, labels, cfg: TrainConfig, rng, epoch: int = 0):
    """Generate x' and return ``(loss, GradientBundle, BatchMetrics)``."""
    if cfg.method == "TSOVR":
        return tsovr_batch(net, X, labels, cfg, rng)
    n = X.shape[0]
    adv = pgd_batch(net, X, labels, cfg.attack, rng, objective="CE")
    Z, trace = forward(net, adv.x_adv)
    lm = lm_terms(Z, labels)
    large = np.array([], dtype=np.int64)
    if cfg.method == "SOVR":
        loss, dZ, large = sovr_batch_loss(Z, labels, cfg.m_percent, cfg.lam)
    else:
        if cfg.method == "OVR":
            values, g = ovr_terms(Z, labels)
            coef = np.full(n, 1.0 / n)
            large = np.arange(n)
        elif cfg.method == "AT":
            values, g = ce_terms(Z, labels)
            coef = np.full(n, 1.0 / n)
        else:
            values, g = ce_terms(Z, labels)
            coef = _scheme_weights(cfg.scheme, Z, labels, adv.flip_step, cfg.attack.steps,
                                   epoch, cfg.gairat_burn_in)
        loss = float(np.dot(coef, values))
        dZ = coef[:, None] * g
    return loss, backward(net, trace, dZ), BatchMetrics(loss, lm, large)


def minibatch_step(net: Network, X, labels, cfg: TrainConfig, rng, *, velocity=None,
                   lr: Optional[float] = None, epoch: int = 0):
    """Attack, select, compute the objective, apply one SGD step.

    Returns ``(net, velocity, BatchMetrics)``.  A zero learning rate leaves
    the network untouched.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if X.shape[0] == 0:
        raise ConfigError("empty batch")
    lr = cfg.lr if lr is None else lr
    loss, grads, metrics = batch_objective(net, X, labels, cfg, rng, epoch)
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite loss {loss}")
    if lr > 0:
        net, velocity = sgd_step(net, grads, lr, cfg.momentum, cfg.weight_decay, velocity)
    return net, velocity, metrics


def _accuracy(net, X, labels):
    return float(np.mean(lm_terms(logits(net, X), labels) <= 0))


def train(cfg: TrainConfig, train_set, val_set, init: Network,
          callback: Optional[Callable] = None):
    """Run the epoch loop; returns ``(best_checkpoint, TrainReport)``.

    ``callback(epoch, batch_index, net)`` runs after every parameter update.
    The best checkpoint maximizes validation robust accuracy (first epoch
    wins ties); the final network is kept in ``report.last_network``.
    """
    X, y = np.asarray(train_set.features, dtype=np.float64), np.asarray(train_set.labels)
    Xv, yv = np.asarray(val_set.features, dtype=np.float64), np.asarray(val_set.labels)
    if X.shape[0] == 0 or Xv.shape[0] == 0:
        raise ConfigError("train and validation sets must be non-empty")
    if X.shape[1] != init.input_dim or Xv.shape[1] != init.input_dim:
        raise ConfigError("feature dimension does not match the network input")
    n = X.shape[0]
    rng = np.random.default_rng(cfg.seed)
    net, velocity = init, None
    rows = []
    lm_adv = np.zeros((cfg.epochs, n))
    best_epoch, best_acc, best_net = -1, -np.inf, init
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        perm = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = perm[start:start + cfg.batch_size]
            try:
                net, velocity, m = minibatch_step(net, X[idx], y[idx], cfg, rng,
                                                  velocity=velocity, lr=lr, epoch=epoch)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} batch {b}: {exc}") from None
            total += m.loss * len(idx)
            lm_adv[epoch, idx] = m.lm
            if callback is not None:
                callback(epoch, b, net)
        eval_rng = np.random.default_rng([cfg.seed, 1, epoch])
        robust = worst_case_eval(net, Xv, yv, [cfg.early_stop_attack], eval_rng)
        rows.append({
            "epoch": epoch,
            "train_loss": total / n,
            "clean_acc": _accuracy(net, Xv, yv),
            "robust_acc_pgd": robust,
            "mean_lm_adv": float(np.mean(lm_adv[epoch])),
        })
        if robust > best_acc:
            best_epoch, best_acc, best_net = epoch, robust, net
    report = TrainReport(rows, best_epoch, best_net, net, lm_adv)
    return best_net, report
