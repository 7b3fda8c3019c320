"""Gradient flow of a single weighted loss on a directly movable logit vector.

The flow dz/dt = -w * grad_z loss(z, y) from z(0) = 0 has closed-form
solutions through the principal branch of the Lambert W function.  Large
times need W(e^a) with e^a far beyond float range, so every closed form
here goes through :func:`lambert_w_exp`, which never forms e^a.

Two identities keep the formulas free of cancellation.  With V = W(e^a),
``a - V = log V``, so for OVR

    z_y = a - W(e^a) = log V,            lm = -2 log V,

and for CE with V = W(e^{b - log(K-1)}), b = (K w t + 1) / (K - 1),

    z_y = (K-1)/K * log((K-1) V),        lm = -log((K-1) V).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .losses import ce_terms, ovr_terms

HALLEY_MAX_ITER = 100
KINDS = ("ovr", "ce")


@dataclass(frozen=True)
class FlowConfig:
    kind: str
    w: float
    K: int
    t_grid: tuple

    def __post_init__(self):
        _check_params(self.kind, self.w, self.K)
        t = np.asarray(self.t_grid, dtype=np.float64)
        if np.any(t < 0) or np.any(np.diff(t) < 0):
            raise ConfigError("t_grid must be sorted and non-negative")


@dataclass(frozen=True)
class TrajectoryRecord:
    t: float
    z_y: float
    z_other: float
    lm: float


def _check_params(kind, w, K):
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    if not w > 0:
        raise ConfigError(f"w must be > 0, got {w}")
    if int(K) != K or K < 2:
        raise ConfigError(f"K must be an integer >= 2, got {K}")


def lambert_w(x: float) -> float:
    """Principal branch W(x) for x >= 0 by Halley iteration."""
    x = float(x)
    if not x >= 0 or math.isinf(x):
        raise DomainError(f"lambert_w needs a finite x >= 0, got {x}")
    if x == 0.0:
        return 0.0
    if x < 1.0:
        w = x
    elif x < 3.0:
        w = 1.0
    else:
        lx = math.log(x)
        w = lx - math.log(lx)
    for _ in range(HALLEY_MAX_ITER):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= step
        if abs(step) <= 1e-15 * (1.0 + abs(w)):
            break
    return w


def lambert_w_exp(a: float) -> float:
    """W(e^a) computed from ``a`` directly.

    For a >= 1 this solves W + log W = a by Halley iteration starting from
    the asymptotic expansion a - log a + log(a)/a; below that e^a is small
    enough to hand to :func:`lambert_w`.
    """
    a = float(a)
    if not math.isfinite(a):
        raise DomainError(f"lambert_w_exp needs a finite argument, got {a}")
    if a < 1.0:
        return lambert_w(math.exp(a))
    la = math.log(a)
    w = a - la + la / a
    for _ in range(HALLEY_MAX_ITER):
        g = w + math.log(w) - a
        gp = 1.0 + 1.0 / w
        gpp = -1.0 / (w * w)
        step = 2.0 * g * gp / (2.0 * gp * gp - g * gpp)
        w -= step
        if abs(step) <= 1e-15 * (1.0 + abs(w)):
            break
    return w


def ovr_trajectory(w: float, t: float) -> tuple[float, float]:
    """(z_y, z_k) for k != y under the OVR flow."""
    _check_params("ovr", w, 2)
    if t < 0:
        raise ConfigError("t must be >= 0")
    z_y = math.log(lambert_w_exp(w * t + 1.0))
    return z_y, -z_y


def _ce_v(w, K, t):
    b = (K * w * t + 1.0) / (K - 1.0)
    return lambert_w_exp(b - math.log(K - 1.0))


def ce_trajectory(w: float, K: int, t: float) -> tuple[float, float]:
    """(z_y, z_k) for k != y under the cross-entropy flow."""
    _check_params("ce", w, K)
    if t < 0:
        raise ConfigError("t must be >= 0")
    if t == 0:
        return 0.0, 0.0
    z_y = (K - 1.0) / K * math.log((K - 1.0) * _ce_v(w, K, t))
    return z_y, -z_y / (K - 1.0)


def lm_trajectory_exact(kind: str, w: float, K: int, t: float) -> float:
    _check_params(kind, w, K)
    if t < 0:
        raise ConfigError("t must be >= 0")
    if t == 0:
        return 0.0
    if kind == "ovr":
        return -2.0 * math.log(lambert_w_exp(w * t + 1.0))
    return -math.log((K - 1.0) * _ce_v(w, K, t))


def lm_trajectory_approx(kind: str, w: float, K: int, t: float) -> float:
    """Large-t forms: -log((wt+1)^2) and -log(Kwt + 1 - (K-1) log(K-1))."""
    _check_params(kind, w, K)
    if kind == "ovr":
        arg = w * t + 1.0
        if not arg > 0:
            raise DomainError("log argument must be positive")
        return -2.0 * math.log(arg)
    arg = K * w * t + 1.0 - (K - 1.0) * math.log(K - 1.0)
    if not arg > 0:
        raise DomainError(f"log argument {arg} is not positive (t too small)")
    return -math.log(arg)


def margin_ratio(w1: float, w2: float, K: int, t: float) -> float:
    """lm_OVR(w1, t) / lm_CE(w2, K, t); tends to 2 as t grows."""
    denom = lm_trajectory_exact("ce", w2, K, t)
    if not denom < -1e-300:
        raise DomainError(f"CE margin loss is {denom} at t={t}; ratio undefined")
    return lm_trajectory_exact("ovr", w1, 2, t) / denom


def trajectory(cfg: FlowConfig) -> list[TrajectoryRecord]:
    """Closed-form records on ``cfg.t_grid``."""
    out = []
    for t in np.asarray(cfg.t_grid, dtype=np.float64):
        t = float(t)
        if cfg.kind == "ovr":
            z_y, z_o = ovr_trajectory(cfg.w, t)
        else:
            z_y, z_o = ce_trajectory(cfg.w, cfg.K, t)
        out.append(TrajectoryRecord(t, z_y, z_o, lm_trajectory_exact(cfg.kind, cfg.w, cfg.K, t)))
    return out


def rk4_flow(kind: str, w: float, K: int, t_end: float, dt: float = 0.1,
             y: int = 0) -> list[TrajectoryRecord]:
    """Classical RK4 on dz/dt = -w grad loss(z, y) from z = 0.

    Uses the loss gradients from :mod:`sovr.losses`, not the closed forms.
    The last step is shortened if ``t_end`` is not a multiple of ``dt``.
    """
    _check_params(kind, w, K)
    if not dt > 0:
        raise ConfigError("dt must be > 0")
    if t_end < 0:
        raise ConfigError("t_end must be >= 0")
    terms = ovr_terms if kind == "ovr" else ce_terms
    labels = [y]

    def rhs(z):
        return -w * terms(z[None, :], labels)[1][0]

    def record(t, z):
        rivals = np.delete(z, y)
        top = float(rivals.max())
        return TrajectoryRecord(t, float(z[y]), top, top - float(z[y]))

    ratio = t_end / dt
    n_steps = int(round(ratio)) if abs(ratio - round(ratio)) < 1e-9 else int(math.ceil(ratio))
    z = np.zeros(K)
    out = [record(0.0, z)]
    t = 0.0
    for i in range(1, n_steps + 1):
        h = min(dt, t_end - t) if i == n_steps else dt
        k1 = rhs(z)
        k2 = rhs(z + 0.5 * h * k1)
        k3 = rhs(z + 0.5 * h * k2)
        k4 = rhs(z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t_end if i == n_steps else i * dt
        out.append(record(t, z))
    return out


def flow_table(kind: str, w: float, K: int, t_max: float, dt: float = 0.1) -> list[tuple]:
    """Rows (t, z_y, z_other, lm_exact, lm_approx, lm_rk4) on the RK4 grid.

    ``lm_approx`` is NaN where the large-t form is undefined.
    """
    rows = []
    for rec in rk4_flow(kind, w, K, t_max, dt):
        if kind == "ovr":
            z_y, z_o = ovr_trajectory(w, rec.t)
        else:
            z_y, z_o = ce_trajectory(w, K, rec.t)
        try:
            approx = lm_trajectory_approx(kind, w, K, rec.t)
        except DomainError:
            approx = math.nan
        rows.append((rec.t, z_y, z_o, lm_trajectory_exact(kind, w, K, rec.t), approx, rec.lm))
    return rows
