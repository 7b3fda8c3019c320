"""L-infinity attacks: FGSM, multi-restart PGD, least flip step, KL-PGD.

All attacks run batched over the rows of ``X``; the single-example entry
points wrap the batch versions.  "Misclassified" always means
``lm > 0`` (ties count as correct).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .losses import ce_terms, kl_terms, lm_subgrad, lm_terms
from .tensor_net import Network, backward, forward, logits

OBJECTIVES = ("CE", "LM", "KL")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    eta: float
    steps: int = 10
    restarts: int = 1
    random_init: bool = False
    clip_lo: float = 0.0
    clip_hi: float = 1.0
    objective: str = "CE"

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ConfigError("epsilon must be >= 0")
        if not self.eta > 0:
            raise ConfigError("eta must be > 0")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if not self.clip_lo <= self.clip_hi:
            raise ConfigError("clip_lo must be <= clip_hi")
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}")


@dataclass
class AttackResult:
    x_adv: np.ndarray
    success: bool
    flip_step: Optional[int]  # None means never


@dataclass
class BatchAttack:
    x_adv: np.ndarray
    success: np.ndarray
    flip_step: np.ndarray  # -1 means never
    loss: np.ndarray
    lm: np.ndarray

    def item(self, i: int) -> AttackResult:
        k = int(self.flip_step[i])
        return AttackResult(self.x_adv[i], bool(self.success[i]), None if k < 0 else k)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _box(X, cfg):
    lo = np.maximum(X - cfg.epsilon, cfg.clip_lo)
    hi = np.minimum(X + cfg.epsilon, cfg.clip_hi)
    return lo, hi


def _objective(name, labels, p_ref=None):
    if name == "CE":
        return lambda Z: ce_terms(Z, labels)
    if name == "LM":
        return lambda Z: (lm_terms(Z, labels), lm_subgrad(Z, labels))
    if name == "KL":
        return lambda Z: (lambda v, _gc, ga: (v, ga))(*kl_terms(p_ref, Z))
    raise ConfigError(f"unknown objective {name!r}")


def _pgd_run(net, X, labels, cfg, objective, rng):
    lo, hi = _box(X, cfg)
    if cfg.random_init and cfg.epsilon > 0:
        x = np.clip(X + rng.uniform(-cfg.epsilon, cfg.epsilon, size=X.shape), lo, hi)
    else:
        x = np.clip(X, lo, hi)
    flip = np.full(X.shape[0], -1, dtype=np.int64)
    for t in range(cfg.steps + 1):
        Z, trace = forward(net, x)
        lm = lm_terms(Z, labels)
        flip = np.where((flip < 0) & (lm > 0), t, flip)
        loss, dZ = objective(Z)
        if t == cfg.steps:
            break
        g = backward(net, trace, dZ).input_grad
        # clip to the ball-domain box each step
        x = np.clip(x + cfg.eta * np.sign(g), lo, hi)
    return x, lm > 0, flip, loss, lm


def pgd_batch(net: Network, X, labels, cfg: AttackConfig, rng=None,
              objective: Optional[str] = None, p_ref=None) -> BatchAttack:
    """Sign-gradient ascent with per-step projection and clipping.

    With several restarts, each example keeps the restart that succeeded,
    else the one with the largest final objective.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    rng = _rng(rng)
    obj = _objective(objective or cfg.objective, labels, p_ref)
    best = None
    for _ in range(cfg.restarts):
        run = _pgd_run(net, X, labels, cfg, obj, rng)
        if best is None:
            best = list(run)
            continue
        x, succ, flip, loss, lm = run
        better = (succ & ~best[1]) | ((succ == best[1]) & (loss > best[3]))
        best[0] = np.where(better[:, None], x, best[0])
        for i, arr in ((1, succ), (2, flip), (3, loss), (4, lm)):
            best[i] = np.where(better, arr, best[i])
    return BatchAttack(*best)


def pgd(net: Network, x, y: int, cfg: AttackConfig, rng=None) -> AttackResult:
    return pgd_batch(net, np.asarray(x, dtype=np.float64)[None, :], [y], cfg, rng).item(0)


def fgsm_batch(net: Network, X, labels, epsilon: float, clip_lo: float = 0.0,
               clip_hi: float = 1.0) -> BatchAttack:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if epsilon < 0:
        raise ConfigError("epsilon must be >= 0")
    Z, trace = forward(net, X)
    lm0 = lm_terms(Z, labels)
    _, dZ = ce_terms(Z, labels)
    g = backward(net, trace, dZ).input_grad
    x = np.clip(X + epsilon * np.sign(g), clip_lo, clip_hi)
    Z1 = logits(net, x)
    loss, _ = ce_terms(Z1, labels)
    lm = lm_terms(Z1, labels)
    flip = np.where(lm0 > 0, 0, np.where(lm > 0, 1, -1))
    return BatchAttack(x, lm > 0, flip, loss, lm)


def fgsm(net: Network, x, y: int, epsilon: float, clip_lo: float = 0.0,
         clip_hi: float = 1.0) -> AttackResult:
    return fgsm_batch(net, np.asarray(x, dtype=np.float64)[None, :], [y], epsilon,
                      clip_lo, clip_hi).item(0)


def least_flip_step(net: Network, x, y: int, cfg: AttackConfig, rng=None) -> Optional[int]:
    """First PGD iterate index t in [0, steps] that is misclassified, or None."""
    if cfg.restarts != 1:
        raise ConfigError("least_flip_step is defined for a single PGD run")
    return pgd(net, x, y, cfg, rng).flip_step


def kl_pgd_batch(net: Network, X, cfg: AttackConfig, rng=None, labels=None) -> BatchAttack:
    """PGD ascent on KL(f(x) || f(x')) with f(x) held fixed.

    Without labels, success means the prediction moved off the clean argmax.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Z0 = logits(net, X)
    if labels is None:
        labels = np.argmax(Z0, axis=1)
    return pgd_batch(net, X, labels, cfg, rng, objective="KL", p_ref=Z0)


def kl_pgd(net: Network, x, cfg: AttackConfig, rng=None, y: Optional[int] = None) -> AttackResult:
    x = np.asarray(x, dtype=np.float64)[None, :]
    return kl_pgd_batch(net, x, cfg, rng, None if y is None else [y]).item(0)


def _run_config(net, X, labels, cfg, rng):
    if cfg.objective == "KL":
        return kl_pgd_batch(net, X, cfg, rng, labels)
    return pgd_batch(net, X, labels, cfg, rng)


def robust_mask(net: Network, X, labels, configs, rng=None) -> np.ndarray:
    """True where the clean point is correct and every attack fails."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    rng = _rng(rng)
    ok = lm_terms(logits(net, X), labels) <= 0
    for cfg in configs:
        ok &= ~_run_config(net, X, labels, cfg, rng).success
    return ok


def worst_case_eval(net: Network, X, labels, configs, rng=None) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        raise ConfigError("empty dataset")
    return float(np.mean(robust_mask(net, X, labels, configs, rng)))
