"""Mean-semideviation risk measure and the composite robust objective.

The risk of a random loss Z is E[Z] + kappa * E[max(0, Z - E[Z])] with
kappa in [0, 1]. On a finite distribution it equals the maximum of
E[Z * mu] over distortion densities mu = 1 + xi - E[xi], xi in [0, kappa]
per outcome; ``dual_value_oracle`` evaluates that maximum by enumerating
the vertices xi in {0, kappa}^n, which is exact because the objective is
linear in xi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import CapacityError, Dataset, DimensionMismatch
from .losses import LossSpec, batch_base_coefs, batch_loss_values, penalty_subgradient

_PROB_TOL = 1e-12
_MAX_SUPPORT = 20  # vertex enumeration costs 2**n


@dataclass(frozen=True)
class RiskParams:
    kappa: float

    def __post_init__(self):
        if not 0.0 <= self.kappa <= 1.0:
            raise ValueError("kappa must lie in [0, 1]")


@dataclass(frozen=True)
class FiniteDistribution:
    """Finitely supported real random variable."""

    values: np.ndarray
    probs: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.size == 0:
            raise ValueError("distribution has empty support")
        if self.probs is None:
            probs = np.full(values.size, 1.0 / values.size)
        else:
            probs = np.asarray(self.probs, dtype=float).ravel()
            if probs.shape != values.shape:
                raise DimensionMismatch("values and probs differ in length")
            if np.any(probs < 0):
                raise ValueError("probabilities must be nonnegative")
            total = probs.sum()
            if abs(total - 1.0) > _PROB_TOL:
                raise ValueError(f"probabilities sum to {total!r}, not 1")
            probs = probs / total
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    def __len__(self):
        return self.values.size


def mean_semideviation(d: FiniteDistribution, rp: RiskParams) -> float:
    """E[Z] + kappa * E[(Z - E[Z])_+]."""
    m = float(d.probs @ d.values)
    return m + rp.kappa * float(d.probs @ np.maximum(0.0, d.values - m))


def _vertex_values(d: FiniteDistribution, rp: RiskParams, chunk: int = 1 << 16):
    """Yield (vertex index block, objective values) over xi in {0,kappa}^n."""
    n = len(d)
    if n > _MAX_SUPPORT:
        raise CapacityError(f"support size {n} exceeds oracle cap {_MAX_SUPPORT}")
    m = float(d.probs @ d.values)
    pv = d.probs * d.values
    total = 1 << n
    cols = np.arange(n)
    for lo in range(0, total, chunk):
        idx = np.arange(lo, min(lo + chunk, total))
        bits = ((idx[:, None] >> cols) & 1).astype(float)
        # value(xi) = E[Z] + sum_i p_i Z_i xi_i - E[xi] E[Z]
        vals = m + rp.kappa * (bits @ pv) - rp.kappa * (bits @ d.probs) * m
        yield idx, bits, vals


def dual_value_oracle(d: FiniteDistribution, rp: RiskParams) -> float:
    """Exact distorted-expectation maximum by vertex enumeration."""
    best = -np.inf
    for _, _, vals in _vertex_values(d, rp):
        best = max(best, float(vals.max()))
    return best


def worst_case_distortion(d: FiniteDistribution, rp: RiskParams) -> np.ndarray:
    """The maximizing density mu* (nonnegative, E[mu*] = 1).

    Non-unique when some outcome ties the mean; the first maximizing
    vertex in index order is returned.
    """
    best = -np.inf
    best_bits = None
    for _, bits, vals in _vertex_values(d, rp):
        j = int(np.argmax(vals))
        if vals[j] > best:
            best = float(vals[j])
            best_bits = bits[j]
    xi = rp.kappa * best_bits
    return 1.0 + xi - float(d.probs @ xi)


# ---------------------------------------------------------------------------
# composite objective F(x) = risk of the empirical loss distribution


def loss_distribution(spec: LossSpec, x, ds: Dataset) -> FiniteDistribution:
    return FiniteDistribution(batch_loss_values(spec, x, ds))


def outer_value(spec: LossSpec, x, u: float, ds: Dataset, rp: RiskParams) -> float:
    """Empirical expectation of u + kappa * max(0, loss - u)."""
    losses = batch_loss_values(spec, x, ds)
    return float(u + rp.kappa * np.mean(np.maximum(0.0, losses - u)))


def composite_objective(spec: LossSpec, x, ds: Dataset, rp: RiskParams) -> float:
    """Risk of the empirical loss distribution at x."""
    losses = batch_loss_values(spec, x, ds)
    m = float(losses.mean())
    return m + rp.kappa * float(np.mean(np.maximum(0.0, losses - m)))


def composite_subgradient(spec: LossSpec, x, ds: Dataset, rp: RiskParams) -> np.ndarray:
    """Full-batch subgradient of the composite objective.

    Per-point subgradients are averaged under the worst-case distortion
    weights; ties loss == mean count as exceeding it.
    """
    x = np.asarray(x, dtype=float)
    losses = batch_loss_values(spec, x, ds)
    n = losses.size
    m = float(losses.mean())
    above = (losses >= m).astype(float)
    w = (1.0 + rp.kappa * (above - above.mean())) / n
    coefs = batch_base_coefs(spec, x, ds)
    grad = ds.features.T @ (w * coefs)
    return grad + penalty_subgradient(spec.penalty, spec.params, x)
