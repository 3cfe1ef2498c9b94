"""Compositional subgradient run with a variance-reduced inner tracker.

Instead of the linearized filter, the tracker is the SPIDER-style
path-integrated difference estimator: at the start of each epoch it
restarts from a large-batch mean loss; in between it accumulates
small-batch differences of the loss between consecutive iterates. The
estimator is unbiased, and its mean squared error over one epoch is
bounded by sigma^2/B + T L^2 s^2 / b for step lengths at most s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    STREAM_BATCH,
    STREAM_D1,
    STREAM_D2,
    STREAM_PILOT,
    STREAM_SELECT,
    BoxConstraint,
    Dataset,
    NumericError,
    RngStream,
    project,
)
from .losses import LossSpec, batch_loss_values, loss_subgradient
from .risk import RiskParams, composite_objective
from .tracking import gated_estimates
from .trace import SPIDER_COLUMNS, RunTrace

_SIGMA_FLOOR = float(np.finfo(float).eps)


@dataclass(frozen=True)
class SpiderConfig:
    tau: float
    iters: int
    epoch_len: int
    big_batch: int
    small_batch: int
    risk: RiskParams
    box: BoxConstraint
    seed: int = 0
    x0: np.ndarray | None = None
    trace_thin: int = 1

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.epoch_len < 1:
            raise ValueError("epoch_len must be >= 1")
        if not self.big_batch >= self.small_batch >= 1:
            raise ValueError("need big_batch >= small_batch >= 1")
        if self.trace_thin < 1:
            raise ValueError("trace_thin must be >= 1")


@dataclass(frozen=True)
class SpiderState:
    x: np.ndarray
    x_prev: np.ndarray
    u: float
    k: int


def auto_params(sigma: float, L: float, M: float, tau: float) -> tuple[int, int, int]:
    """Batch sizes and epoch length that push the tracker's expected
    absolute error below tau.

    B = ceil(2 sigma^2 / tau^2), b = ceil(2 L M sigma / tau),
    T = max(1, ceil(sigma / (L M tau))). Ceilings keep the error
    inequalities directional. When the formulas invert (T would fall
    below 1), every step restarts and the small batch is never used, so
    B is lifted to b to keep B >= b.
    """
    if not (sigma > 0 and L > 0 and M > 0 and tau > 0):
        raise ValueError("sigma, L, M, tau must all be positive")
    B = max(1, math.ceil(2.0 * sigma**2 / tau**2))
    b = max(1, math.ceil(2.0 * L * M * sigma / tau))
    T = max(1, math.ceil(sigma / (L * M * tau)))
    B = max(B, b)
    return B, b, T


def restart_tracker(spec: LossSpec, x, batch: Dataset) -> float:
    """Fresh tracker value: mean loss over the batch."""
    return float(batch_loss_values(spec, x, batch).mean())


def refresh_tracker(spec: LossSpec, u_prev: float, x, x_prev, batch: Dataset) -> float:
    """Advance the tracker by the batch-mean loss difference between
    consecutive iterates."""
    delta = batch_loss_values(spec, x, batch) - batch_loss_values(spec, x_prev, batch)
    return u_prev + float(delta.mean())


def estimate_constants(
    spec: LossSpec,
    ds: Dataset,
    box: BoxConstraint,
    rng: RngStream,
    pilot: int = 64,
    kappa: float = 1.0,
) -> tuple[float, float, float]:
    """Pilot estimates (sigma, L, M) feeding ``auto_params``.

    sigma: sample standard deviation of the loss at the default start
    point over pilot draws (floored at machine epsilon when the pilot
    degenerates). L: largest sampled difference quotient, inflated by
    1.5. M: from the direction-norm bound
    M^2 = (D_fx + D_h)^2 + 2 sigma^2 + 2 sigma D_h with the D's taken as
    max subgradient norms over the pilot and D_fx = kappa * D_h; the
    default kappa = 1 is an upper bound valid for any risk level.
    """
    if pilot < 16:
        raise ValueError("pilot must be >= 16")
    n = len(ds)
    d = ds.dim
    x0 = project(box, np.zeros(d))
    idx = rng.integers(n, size=pilot)
    batch = ds.subset(idx)
    losses = batch_loss_values(spec, x0, batch)
    sigma = float(losses.std(ddof=1))
    if not sigma > _SIGMA_FLOOR:
        sigma = _SIGMA_FLOOR

    xs = rng.uniform(0.0, 1.0, size=(pilot, d)) * (box.upper - box.lower) + box.lower
    ys = rng.uniform(0.0, 1.0, size=(pilot, d)) * (box.upper - box.lower) + box.lower
    ratio_max = 0.0
    grad_max = 0.0
    for j in range(pilot):
        point = batch[j]
        dist = float(np.linalg.norm(xs[j] - ys[j]))
        if dist > 0:
            lv_x = batch_loss_values(spec, xs[j], ds.subset([idx[j]]))[0]
            lv_y = batch_loss_values(spec, ys[j], ds.subset([idx[j]]))[0]
            ratio_max = max(ratio_max, abs(lv_x - lv_y) / dist)
        grad_max = max(grad_max, float(np.linalg.norm(loss_subgradient(spec, xs[j], point))))
    L = 1.5 * ratio_max
    if not L > 0:
        L = _SIGMA_FLOOR
    d_h = grad_max
    d_fx = kappa * d_h
    M = math.sqrt((d_fx + d_h) ** 2 + 2.0 * sigma**2 + 2.0 * sigma * d_h)
    if not M > 0:
        M = _SIGMA_FLOOR
    return sigma, L, M


def run(
    cfg: SpiderConfig,
    spec: LossSpec,
    ds: Dataset,
    rng: RngStream | None = None,
    on_iterate=None,
) -> tuple[RunTrace, np.ndarray]:
    """Execute the configured number of steps.

    At iterations divisible by the epoch length the tracker restarts
    from a big-batch mean; otherwise it is refreshed with a small batch.
    Batch indices come from a dedicated substream so that changing batch
    sizes leaves the two per-step sample streams untouched.
    """
    if rng is None:
        rng = RngStream(cfg.seed)
    n = len(ds)
    N = cfg.iters
    x = project(cfg.box, cfg.x0 if cfg.x0 is not None else np.zeros(ds.dim))
    x_prev = x
    u = 0.0
    i1 = rng.substream(STREAM_D1).integers(n, size=N)
    i2 = rng.substream(STREAM_D2).integers(n, size=N)
    batch_stream = rng.substream(STREAM_BATCH)
    R = int(rng.substream(STREAM_SELECT).integers(N))

    trace = RunTrace(SPIDER_COLUMNS)
    x_R = None
    for k in range(N):
        if on_iterate is not None:
            on_iterate(k, x)
        if k == R:
            x_R = x.copy()
        if k % cfg.epoch_len == 0:
            bidx = batch_stream.integers(n, size=cfg.big_batch)
            u = restart_tracker(spec, x, ds.subset(bidx))
            bsize = cfg.big_batch
        else:
            bidx = batch_stream.integers(n, size=cfg.small_batch)
            u = refresh_tracker(spec, u, x, x_prev, ds.subset(bidx))
            bsize = cfg.small_batch
        if not np.isfinite(u):
            raise NumericError(f"non-finite tracker at iteration {k}")
        est = gated_estimates(spec, cfg.risk, x, u, ds[i1[k]], ds[i2[k]])
        direction = est.g_fx + est.g_fu * est.g_h
        if not np.all(np.isfinite(direction)):
            raise NumericError(f"non-finite direction at iteration {k}")
        x_new = project(cfg.box, x - cfg.tau * direction)
        if k % cfg.trace_thin == 0:
            F_hat = composite_objective(spec, x, ds, cfg.risk)
            h = float(batch_loss_values(spec, x, ds).mean())
            trace.append(
                k,
                F_hat,
                u,
                abs(u - h),
                float(np.linalg.norm(x_new - x)),
                k // cfg.epoch_len,
                bsize,
            )
        x_prev, x = x, x_new
    if on_iterate is not None:
        on_iterate(N, x)
    return trace, x_R
