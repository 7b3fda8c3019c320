"""Post-hoc robustness analyses built on logit margins.

For nonlinear networks the input-gradient norm is only a local stand-in for
the Lipschitz constant, so the potentially-misclassified rate is an
estimate.  For affine networks ``||w_k||_1`` is exact, so an unflagged
example is certified, which :func:`certify_brute_force` can confirm.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attacks import AttackConfig, kl_pgd_batch, pgd_batch
from .errors import ConfigError
from .losses import lm_terms
from .tensor_net import Network, backward, forward, logits

DEFAULT_EDGES = np.linspace(-25.0, 10.0, 61)
MAX_CORNER_DIM = 12


@dataclass
class MarginHistogram:
    bin_edges: np.ndarray
    counts_correct: np.ndarray
    counts_incorrect: np.ndarray

    def rows(self):
        e = self.bin_edges
        return [(e[i], e[i + 1], int(self.counts_correct[i]), int(self.counts_incorrect[i]))
                for i in range(len(e) - 1)]


@dataclass
class PotentialReport:
    lm_clean: np.ndarray
    g_max: np.ndarray
    g_y: np.ndarray
    flagged: np.ndarray
    estimated: bool = True  # False only when every layer is affine

    @property
    def rate(self) -> float:
        return float(np.mean(self.flagged)) if self.flagged.size else 0.0

    def rows(self):
        return [(i, self.lm_clean[i], self.g_max[i], self.g_y[i], bool(self.flagged[i]))
                for i in range(len(self.flagged))]


def _points(net, X, labels, attack, rng):
    if attack is None:
        return X
    if attack.objective == "KL":
        return kl_pgd_batch(net, X, attack, rng, labels).x_adv
    return pgd_batch(net, X, labels, attack, rng).x_adv


def margin_lm(net: Network, X, labels, attack: Optional[AttackConfig] = None, rng=None):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    pts = _points(net, X, labels, attack, np.random.default_rng(rng) if not isinstance(
        rng, np.random.Generator) else rng)
    return lm_terms(logits(net, pts), labels)


def histogram_from_lm(lm, bins=None) -> MarginHistogram:
    """Bucket margins; values outside the edges land in the end bins."""
    if bins is None:
        edges = DEFAULT_EDGES
    elif np.ndim(bins) == 0:
        if int(bins) < 1:
            raise ConfigError("bins must be >= 1")
        edges = np.linspace(DEFAULT_EDGES[0], DEFAULT_EDGES[-1], int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
        if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
            raise ConfigError("bin edges must be strictly ascending")
    lm = np.asarray(lm, dtype=np.float64)
    idx = np.clip(np.searchsorted(edges, lm, side="right") - 1, 0, len(edges) - 2)
    nb = len(edges) - 1
    correct = lm <= 0
    return MarginHistogram(np.asarray(edges),
                           np.bincount(idx[correct], minlength=nb),
                           np.bincount(idx[~correct], minlength=nb))


def margin_histogram(net: Network, dataset, attack: Optional[AttackConfig] = None,
                     bins=None, rng=None) -> MarginHistogram:
    lm = margin_lm(net, dataset.features, dataset.labels, attack, rng)
    return histogram_from_lm(lm, bins)


def input_grad_norms_l1(net: Network, X) -> np.ndarray:
    """||grad_x z_k(x)||_1 for every example (rows) and class (columns)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Z, trace = forward(net, X)
    K = Z.shape[1]
    out = np.empty((X.shape[0], K))
    for k in range(K):
        seed = np.zeros_like(Z)
        seed[:, k] = 1.0
        out[:, k] = np.abs(backward(net, trace, seed).input_grad).sum(axis=1)
    return out


def input_grad_norm_l1(net: Network, x, k: int) -> float:
    if not 0 <= k < net.n_classes:
        raise ConfigError(f"class index {k} out of range")
    return float(input_grad_norms_l1(net, np.asarray(x, dtype=np.float64)[None, :])[0, k])


def potentially_misclassified_rate(net: Network, dataset, epsilon: float) -> PotentialReport:
    """Flag x when lm(x) > -(max_k ||grad z_k||_1 + ||grad z_y||_1) * eps."""
    if epsilon < 0:
        raise ConfigError("epsilon must be >= 0")
    X, labels = dataset.features, np.asarray(dataset.labels, dtype=np.int64)
    lm = lm_terms(logits(net, X), labels)
    G = input_grad_norms_l1(net, X)
    g_max = G.max(axis=1)
    g_y = G[np.arange(len(labels)), labels]
    flagged = lm > -(g_max + g_y) * epsilon
    return PotentialReport(lm, g_max, g_y, flagged, estimated=len(net.weights) > 1)


def certify_brute_force(net: Network, x, y: int, epsilon: float, mode="corners",
                        clip_lo: float = 0.0, clip_hi: float = 1.0) -> bool:
    """True iff lm(x + delta) <= 0 on every enumerated point of the clipped ball.

    ``mode="corners"`` enumerates the 2^d vertices, which is exact for affine
    networks.  ``mode=("grid", m)`` uses an m-point grid per axis.
    """
    x = np.asarray(x, dtype=np.float64)
    lo = np.maximum(x - epsilon, clip_lo)
    hi = np.minimum(x + epsilon, clip_hi)
    d = x.shape[0]
    if mode == "corners":
        if d > MAX_CORNER_DIM:
            raise ConfigError(f"corner enumeration limited to d <= {MAX_CORNER_DIM}")
        axes = [(lo[i], hi[i]) for i in range(d)]
    elif isinstance(mode, tuple) and mode[0] == "grid":
        m = int(mode[1])
        if m < 2 or m ** d > 10 ** 7:
            raise ConfigError("grid too small or too large")
        axes = [np.linspace(lo[i], hi[i], m) for i in range(d)]
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    pts = np.array(list(itertools.product(*axes)), dtype=np.float64)
    lm = lm_terms(logits(net, pts), np.full(len(pts), int(y)))
    return bool(np.all(lm <= 0))


def mean_lm(net: Network, dataset, attack: Optional[AttackConfig] = None, rng=None) -> float:
    if len(dataset.labels) == 0:
        raise ConfigError("empty dataset")
    return float(np.mean(margin_lm(net, dataset.features, dataset.labels, attack, rng)))
