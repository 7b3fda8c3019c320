"""Logit losses, margins and importance weights.

Losses come in two flavours: ``*_terms(Z, labels)`` works on a batch of
logit rows and returns per-example ``(values, grads)``; the single-example
``*_loss(z, y)`` wrappers return a :class:`LossEval`.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np

from .errors import ConfigError
from .tensor_net import softmax

KL_FLOOR = 1e-12


@dataclass(frozen=True)
class LossEval:
    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class Gairat:
    """GAIRAT weights from the least PGD flip step.

    ``uniform=True`` stands for the lambda = infinity burn-in phase.
    """

    lam: float = 3.0
    total_steps: int = 10
    uniform: bool = False

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError("Gairat.total_steps must be >= 1")


@dataclass(frozen=True)
class Mail:
    gamma: float = 10.0
    beta: float = 0.5

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError("Mail.gamma must be > 0")


@dataclass(frozen=True)
class Ewat:
    pass


WeightScheme = Union[Gairat, Mail, Ewat]


def _check(Z, labels):
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if Z.ndim != 2 or Z.shape[1] < 2:
        raise ConfigError(f"need a (n, K>=2) logit array, got shape {Z.shape}")
    if labels.shape != (Z.shape[0],):
        raise ConfigError("labels must have one entry per logit row")
    if np.any(labels < 0) or np.any(labels >= Z.shape[1]):
        raise ConfigError("label out of range")
    return Z, labels


def _one_hot(labels, K):
    return np.eye(K)[labels]


def softplus(z):
    """log(1 + e^z) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def logsumexp(Z, axis=-1):
    Z = np.asarray(Z, dtype=np.float64)
    m = np.max(Z, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(Z - m), axis=axis, keepdims=True))).squeeze(axis)


def log_softmax(Z):
    Z = np.asarray(Z, dtype=np.float64)
    return Z - logsumexp(Z)[..., None]


# -- losses --------------------------------------------------------------

def ce_terms(Z, labels):
    Z, labels = _check(Z, labels)
    rows = np.arange(len(labels))
    values = logsumexp(Z) - Z[rows, labels]
    grads = softmax(Z) - _one_hot(labels, Z.shape[1])
    return values, grads


def ovr_terms(Z, labels):
    """One-vs-the-rest: softplus(-z_y) + sum_{k != y} softplus(z_k)."""
    Z, labels = _check(Z, labels)
    onehot = _one_hot(labels, Z.shape[1]).astype(bool)
    # this form has no cancellation when z_y is large
    per_class = softplus(np.where(onehot, -Z, Z))
    values = per_class.sum(axis=1)
    grads = np.where(onehot, -sigmoid(-Z), sigmoid(Z))
    return values, grads


def slm_terms(Z, labels):
    """Soft logit margin: log sum_{k != y} e^{z_k} - z_y."""
    Z, labels = _check(Z, labels)
    rows = np.arange(len(labels))
    onehot = _one_hot(labels, Z.shape[1]).astype(bool)
    rivals = np.where(onehot, -np.inf, Z)
    values = logsumexp(rivals) - Z[rows, labels]
    grads = softmax(rivals) - onehot
    return values, grads


def lm_terms(Z, labels):
    """Logit margin max_{k != y} z_k - z_y for each row."""
    Z, labels = _check(Z, labels)
    rows = np.arange(len(labels))
    rivals = np.where(_one_hot(labels, Z.shape[1]).astype(bool), -np.inf, Z)
    return rivals.max(axis=1) - Z[rows, labels]


def lm_subgrad(Z, labels):
    """e_{k*} - e_y with k* the lowest-index strongest rival."""
    Z, labels = _check(Z, labels)
    rows = np.arange(len(labels))
    rivals = np.where(_one_hot(labels, Z.shape[1]).astype(bool), -np.inf, Z)
    g = np.zeros_like(Z)
    g[rows, np.argmax(rivals, axis=1)] = 1.0
    g[rows, labels] -= 1.0
    return g


def kl_terms(Z_clean, Z_adv):
    """KL(softmax(Z_clean) || softmax(Z_adv)) per row, with logit gradients.

    Returns ``(values, grad_clean, grad_adv)``.  Log-probabilities come
    from log-softmax, so no flooring is needed on this path.
    """
    Zc = np.atleast_2d(np.asarray(Z_clean, dtype=np.float64))
    Za = np.atleast_2d(np.asarray(Z_adv, dtype=np.float64))
    if Zc.shape != Za.shape:
        raise ConfigError("clean and adversarial logits must have the same shape")
    lp, lq = log_softmax(Zc), log_softmax(Za)
    p, q = np.exp(lp), np.exp(lq)
    a = lp - lq
    values = np.sum(p * a, axis=1)
    grad_clean = p * (a - values[:, None])
    grad_adv = q - p
    return values, grad_clean, grad_adv


def _single(fn, z, y):
    z = np.asarray(z, dtype=np.float64)
    v, g = fn(z[None, :], [int(y)])
    return LossEval(float(v[0]), g[0])


def ce_loss(z, y) -> LossEval:
    return _single(ce_terms, z, y)


def ovr_loss(z, y) -> LossEval:
    return _single(ovr_terms, z, y)


def slm_loss(z, y) -> LossEval:
    return _single(slm_terms, z, y)


def lm_loss(z, y) -> float:
    z = np.asarray(z, dtype=np.float64)
    return float(lm_terms(z[None, :], [int(y)])[0])


def is_correct(z, y) -> bool:
    """Correct iff lm <= 0; ties count as correct."""
    return lm_loss(z, y) <= 0.0


def kl_divergence(p, q) -> float:
    """KL(p || q) for probability vectors; q is floored at 1e-12 and 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.maximum(np.asarray(q, dtype=np.float64), KL_FLOOR)
    mask = p > 0
    return float(max(np.sum(p[mask] * np.log(p[mask] / q[mask])), 0.0))


def probabilistic_margin(f, y) -> float:
    f = np.asarray(f, dtype=np.float64)
    rivals = np.delete(f, int(y))
    return float(f[int(y)] - rivals.max())


def probabilistic_margins(F, labels) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    labels = np.asarray(labels)
    rows = np.arange(len(labels))
    rivals = np.where(_one_hot(labels, F.shape[1]).astype(bool), -np.inf, F)
    return F[rows, labels] - rivals.max(axis=1)


# -- importance weights --------------------------------------------------

def weight_gairat(kappa, scheme: Gairat):
    kappa = np.asarray(kappa, dtype=np.float64)
    if np.any(kappa < 0) or np.any(kappa > scheme.total_steps):
        raise ConfigError("kappa must lie in [0, total_steps]")
    if scheme.uniform:
        w = np.ones_like(kappa)
    else:
        w = (1.0 + np.tanh(scheme.lam + 5.0 * (1.0 - 2.0 * kappa / scheme.total_steps))) / 2.0
    return float(w) if w.ndim == 0 else w


def weight_mail(pm, scheme: Mail):
    pm = np.asarray(pm, dtype=np.float64)
    w = sigmoid(-scheme.gamma * (pm - scheme.beta))
    return float(w) if w.ndim == 0 else w


def weight_ewat(f):
    """Entropy of the softmax output(s), with 0 log 0 = 0."""
    f = np.asarray(f, dtype=np.float64)
    safe = np.where(f > 0, f, 1.0)
    h = -np.sum(np.where(f > 0, f * np.log(safe), 0.0), axis=-1)
    h = np.maximum(h, 0.0)
    return float(h) if h.ndim == 0 else h


def normalize_weights(ws, mode: str = "sum_to_one") -> np.ndarray:
    """``sum_to_one``: w / sum(w).  ``batch_mean_plus_one``: 1 + n w / sum(w)."""
    ws = np.asarray(ws, dtype=np.float64)
    if ws.ndim != 1 or ws.size == 0:
        raise ConfigError("weights must be a non-empty vector")
    if np.any(ws < 0):
        raise ConfigError("weights must be non-negative")
    total = ws.sum()
    if not total > 0:
        raise ConfigError("weights sum to zero; normalization undefined")
    if mode == "sum_to_one":
        return ws / total
    if mode == "batch_mean_plus_one":
        return 1.0 + len(ws) * ws / total
    raise ConfigError(f"unknown normalization mode {mode!r}")


# -- switching objective -------------------------------------------------

def select_top_m(lm_values, m_percent) -> np.ndarray:
    """Indices of the floor(M% * n) largest margin losses, ascending.

    Ties go to the lower original index.
    """
    lm_values = np.asarray(lm_values, dtype=np.float64)
    if not 0 <= m_percent <= 100:
        raise ConfigError(f"M must be in [0, 100], got {m_percent}")
    n = lm_values.shape[0]
    count = int(Fraction(m_percent) * n // 100)
    order = np.argsort(-lm_values, kind="stable")
    return np.sort(order[:count])


def sovr_batch_loss(Z, labels, m_percent, lam):
    """Switching objective: CE on the easy set, lambda * OVR on the top-M% set.

    Returns ``(value, grads, large)`` where ``grads[i]`` is the gradient of
    the batch value with respect to the logits of example ``i`` (the 1/|B|
    factor included) and ``large`` holds the indices routed to OVR.
    """
    Z, labels = _check(Z, labels)
    n = Z.shape[0]
    if n == 0:
        raise ConfigError("empty batch")
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    large = select_top_m(lm_terms(Z, labels), m_percent)
    in_large = np.zeros(n, dtype=bool)
    in_large[large] = True
    ce_v, ce_g = ce_terms(Z, labels)
    ovr_v, ovr_g = ovr_terms(Z, labels)
    coef = np.where(in_large, float(lam), 1.0) * (1.0 / n)
    per = np.where(in_large, ovr_v, ce_v)
    grads = coef[:, None] * np.where(in_large[:, None], ovr_g, ce_g)
    return float(np.dot(coef, per)), grads, large
