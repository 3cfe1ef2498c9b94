"""Loss functions and sparsity penalties: values, subgradients, constants.

Supported base losses (features ``a``, target ``b``, weights ``x``):

* ``mad``            absolute residual |a.x - b|
* ``least_squares``  squared residual (a.x - b)^2
* ``logistic``       log(1 + exp(-b * a.x)), targets nominally in {-1, +1}

Each loss may carry a separable penalty (``lasso``, ``scad``, ``mcp``)
added to every per-point value. Subgradient selections at kinks use the
midpoint of the one-sided derivatives, which is 0 at symmetric kinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BoxConstraint, DataPoint, Dataset, DimensionMismatch

BASES = ("mad", "least_squares", "logistic")
PENALTIES = ("none", "lasso", "scad", "mcp")


@dataclass(frozen=True)
class PenaltyParams:
    """Penalty weight and concavity knob.

    ``gamma`` is unused for lasso. SCAD is classically stated with
    gamma > 2; gamma > 1 is enough for all three pieces to be defined,
    so only that is enforced.
    """

    lam: float
    gamma: float = 0.0


def _check_penalty(kind: str, p: PenaltyParams | None) -> None:
    if kind not in PENALTIES:
        raise ValueError(f"unknown penalty {kind!r}")
    if kind == "none":
        return
    if p is None:
        raise ValueError(f"penalty {kind!r} requires parameters")
    if not p.lam > 0:
        raise ValueError("penalty weight lam must be > 0")
    if kind == "scad" and not p.gamma > 1:
        raise ValueError("scad requires gamma > 1")
    if kind == "mcp" and not p.gamma > 0:
        raise ValueError("mcp requires gamma > 0")


@dataclass(frozen=True)
class LossSpec:
    """Base loss plus optional penalty."""

    base: str
    penalty: str = "none"
    params: PenaltyParams | None = None

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"unknown base loss {self.base!r}")
        _check_penalty(self.penalty, self.params)


# ---------------------------------------------------------------------------
# penalties


def penalty_value(kind: str, p: PenaltyParams | None, x) -> float:
    _check_penalty(kind, p)
    x = np.asarray(x, dtype=float)
    if kind == "none":
        return 0.0
    ax = np.abs(x)
    lam = p.lam
    if kind == "lasso":
        return float(lam * ax.sum())
    g = p.gamma
    if kind == "scad":
        v = np.select(
            [ax <= lam, ax <= lam * g],
            [lam * ax, (g * lam * ax - 0.5 * (ax**2 + lam**2)) / (g - 1.0)],
            default=0.5 * lam**2 * (g + 1.0),
        )
    else:  # mcp
        v = np.where(ax <= lam * g, lam * ax - ax**2 / (2.0 * g), 0.5 * g * lam**2)
    return float(v.sum())


def penalty_subgradient(kind: str, p: PenaltyParams | None, x) -> np.ndarray:
    _check_penalty(kind, p)
    x = np.asarray(x, dtype=float)
    if kind == "none":
        return np.zeros_like(x)
    s = np.sign(x)  # 0 at the origin: midpoint selection
    ax = np.abs(x)
    lam = p.lam
    if kind == "lasso":
        return lam * s
    g = p.gamma
    if kind == "scad":
        slope = np.select(
            [ax <= lam, ax <= lam * g],
            [np.full_like(ax, lam), (g * lam - ax) / (g - 1.0)],
            default=0.0,
        )
    else:  # mcp
        slope = np.where(ax <= lam * g, lam - ax / g, 0.0)
    return slope * s


def penalty_modulus(kind: str, p: PenaltyParams | None) -> float:
    """Weak-convexity modulus of the penalty alone."""
    _check_penalty(kind, p)
    if kind == "scad":
        return 1.0 / (p.gamma - 1.0)
    if kind == "mcp":
        return 1.0 / p.gamma
    return 0.0


def penalty_lipschitz(kind: str, p: PenaltyParams | None, dim: int) -> float:
    """Euclidean Lipschitz bound of the penalty (slope is at most lam
    per coordinate for all three kinds)."""
    _check_penalty(kind, p)
    if kind == "none":
        return 0.0
    return p.lam * math.sqrt(dim)


# ---------------------------------------------------------------------------
# base losses


def _base_value(base: str, margin: float, b: float) -> float:
    if base == "mad":
        return abs(margin - b)
    if base == "least_squares":
        return (margin - b) ** 2
    # logistic
    return float(np.logaddexp(0.0, -b * margin))


def _base_coef(base: str, margin: float, b: float) -> float:
    """Scalar c with d(base)/dx = c * a."""
    if base == "mad":
        return float(np.sign(margin - b))
    if base == "least_squares":
        return 2.0 * (margin - b)
    # logistic: -b * sigmoid(-b * margin), computed stably
    z = b * margin
    return float(-b * 0.5 * (1.0 - np.tanh(0.5 * z)))


def loss_value(spec: LossSpec, x, point: DataPoint) -> float:
    x = np.asarray(x, dtype=float)
    a = np.asarray(point.features, dtype=float)
    if x.shape != a.shape:
        raise DimensionMismatch(f"weights dim {x.shape} vs features dim {a.shape}")
    m = float(a @ x)
    return _base_value(spec.base, m, point.target) + penalty_value(spec.penalty, spec.params, x)


def loss_subgradient(spec: LossSpec, x, point: DataPoint) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    a = np.asarray(point.features, dtype=float)
    if x.shape != a.shape:
        raise DimensionMismatch(f"weights dim {x.shape} vs features dim {a.shape}")
    m = float(a @ x)
    c = _base_coef(spec.base, m, point.target)
    return c * a + penalty_subgradient(spec.penalty, spec.params, x)


def batch_loss_values(spec: LossSpec, x, ds: Dataset) -> np.ndarray:
    """Per-point loss values over the whole dataset."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != ds.dim:
        raise DimensionMismatch(f"weights dim {x.shape[0]} vs dataset dim {ds.dim}")
    m = ds.features @ x
    b = ds.targets
    if spec.base == "mad":
        vals = np.abs(m - b)
    elif spec.base == "least_squares":
        vals = (m - b) ** 2
    else:
        vals = np.logaddexp(0.0, -b * m)
    return vals + penalty_value(spec.penalty, spec.params, x)


def batch_base_coefs(spec: LossSpec, x, ds: Dataset) -> np.ndarray:
    """Per-point scalars c_i with d(base_i)/dx = c_i * a_i."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != ds.dim:
        raise DimensionMismatch(f"weights dim {x.shape[0]} vs dataset dim {ds.dim}")
    m = ds.features @ x
    b = ds.targets
    if spec.base == "mad":
        return np.sign(m - b)
    if spec.base == "least_squares":
        return 2.0 * (m - b)
    return -b * 0.5 * (1.0 - np.tanh(0.5 * (b * m)))


# ---------------------------------------------------------------------------
# constants


def weak_convexity_modulus(spec: LossSpec) -> float:
    """Weak-convexity modulus of the per-point loss.

    All three base losses are convex, so only the penalty contributes.
    """
    return penalty_modulus(spec.penalty, spec.params)


def curvature_modulus(spec: LossSpec, ds: Dataset) -> float:
    """Gradient-Lipschitz bound of the smooth base losses over the data,
    plus the penalty modulus. Infinite for the mad base (not smooth).
    """
    row_sq = np.einsum("ij,ij->i", ds.features, ds.features)
    if spec.base == "mad":
        base = math.inf
    elif spec.base == "least_squares":
        base = 2.0 * float(row_sq.max())
    else:
        base = 0.25 * float((ds.targets**2 * row_sq).max())
    return base + penalty_modulus(spec.penalty, spec.params)


def point_lipschitz(spec: LossSpec, point: DataPoint, box: BoxConstraint) -> float:
    """Lipschitz bound of the per-point loss over the box."""
    a = np.asarray(point.features, dtype=float)
    na = float(np.linalg.norm(a))
    if spec.base == "mad":
        base = na
    elif spec.base == "least_squares":
        sup_margin = float(np.abs(a) @ np.maximum(np.abs(box.lower), np.abs(box.upper)))
        base = 2.0 * (sup_margin + abs(point.target)) * na
    else:
        base = abs(point.target) * na
    return base + penalty_lipschitz(spec.penalty, spec.params, a.shape[0])


def lipschitz_bound(spec: LossSpec, ds: Dataset, box: BoxConstraint) -> float:
    """Mean-square Lipschitz constant over the empirical distribution."""
    sq = [point_lipschitz(spec, p, box) ** 2 for p in ds]
    return math.sqrt(float(np.mean(sq)))


def feature_gradient(spec: LossSpec, x, point: DataPoint) -> np.ndarray:
    """Gradient of the loss with respect to the feature vector (the
    penalty does not depend on the features)."""
    x = np.asarray(x, dtype=float)
    a = np.asarray(point.features, dtype=float)
    if x.shape != a.shape:
        raise DimensionMismatch(f"weights dim {x.shape} vs features dim {a.shape}")
    m = float(a @ x)
    return _base_coef(spec.base, m, point.target) * x
