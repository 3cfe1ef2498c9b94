"""Projected compositional subgradient run with a linearized inner tracker.

Each step draws three independent data points. The first gates the risk
part of the direction: when the sampled loss reaches the tracker value u,
the outer subgradient contributes kappa times the sampled loss
subgradient and the inner weight drops to 1 - kappa. The solution moves
by a projected subgradient step; the tracker follows a geometric filter
toward the sampled mean loss, corrected by a linearization term that
accounts for the solution's own motion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    STREAM_D1,
    STREAM_D2,
    STREAM_D3,
    STREAM_PILOT,
    STREAM_SELECT,
    BoxConstraint,
    DataPoint,
    Dataset,
    NumericError,
    RngStream,
    project,
)
from .losses import LossSpec, batch_loss_values, loss_subgradient, loss_value
from .risk import RiskParams, composite_objective
from .trace import BASE_COLUMNS, RunTrace


@dataclass(frozen=True)
class GatedEstimates:
    """One step's stochastic estimates.

    ``g_fx = kappa * indicator * G`` and ``g_fu = 1 - kappa * indicator``,
    so g_fu always lies in (0, 1]. ``J`` and ``h_tilde`` are absent when
    the tracker is maintained by other means.
    """

    indicator: int
    G: np.ndarray
    g_fx: np.ndarray
    g_fu: float
    g_h: np.ndarray
    J: np.ndarray | None = None
    h_tilde: float | None = None


def gated_estimates(
    spec: LossSpec,
    rp: RiskParams,
    x: np.ndarray,
    u: float,
    d1: DataPoint,
    d2: DataPoint,
    d3: DataPoint | None = None,
) -> GatedEstimates:
    """Evaluate the gated direction estimates at (x, u).

    A sampled loss equal to u counts as exceeding it.
    """
    l1 = loss_value(spec, x, d1)
    G = loss_subgradient(spec, x, d1)
    indicator = 1 if l1 >= u else 0
    g_fx = (rp.kappa * indicator) * G
    g_fu = 1.0 - rp.kappa * indicator
    g_h = loss_subgradient(spec, x, d2)
    J = None
    h_tilde = None
    if d3 is not None:
        J = loss_subgradient(spec, x, d3)
        l2 = loss_value(spec, x, d2)
        l3 = loss_value(spec, x, d3)
        h_tilde = (l1 + l2 + l3) / 3.0
    return GatedEstimates(indicator, G, g_fx, g_fu, g_h, J, h_tilde)


@dataclass(frozen=True)
class TrackingConfig:
    tau: float
    iters: int
    risk: RiskParams
    box: BoxConstraint
    seed: int = 0
    x0: np.ndarray | None = None
    pilot_size: int = 32
    trace_thin: int = 1

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.pilot_size < 1:
            raise ValueError("pilot_size must be >= 1")
        if self.trace_thin < 1:
            raise ValueError("trace_thin must be >= 1")


@dataclass(frozen=True)
class TrackingState:
    x: np.ndarray
    u: float
    k: int


def step(cfg: TrackingConfig, state: TrackingState, est: GatedEstimates) -> TrackingState:
    """One projected update of the solution and the tracker."""
    direction = est.g_fx + est.g_fu * est.g_h
    if not np.all(np.isfinite(direction)):
        raise NumericError(f"non-finite direction at iteration {state.k}")
    x_new = project(cfg.box, state.x - cfg.tau * direction)
    u_new = (
        state.u
        + cfg.tau * (est.h_tilde - state.u)
        + float(est.J @ (x_new - state.x))
    )
    if not np.isfinite(u_new):
        raise NumericError(f"non-finite tracker at iteration {state.k}")
    return TrackingState(x_new, u_new, state.k + 1)


def initial_state(cfg: TrackingConfig, spec: LossSpec, ds: Dataset, rng: RngStream) -> TrackingState:
    """Project the starting point and seed the tracker with a pilot-batch
    mean loss, killing the filter's initialization transient."""
    x0 = cfg.x0 if cfg.x0 is not None else np.zeros(ds.dim)
    x = project(cfg.box, x0)
    pilot = rng.substream(STREAM_PILOT)
    idx = pilot.integers(len(ds), size=cfg.pilot_size)
    u = float(batch_loss_values(spec, x, ds.subset(idx)).mean())
    return TrackingState(x, u, 0)


def run(
    cfg: TrackingConfig,
    spec: LossSpec,
    ds: Dataset,
    rng: RngStream | None = None,
    on_iterate=None,
) -> tuple[RunTrace, np.ndarray]:
    """Execute the configured number of steps.

    Returns the trace and the solution at an iteration index drawn
    uniformly from the run's own selection substream. Data draws for the
    three per-step samples come from three fixed substreams, one block
    draw each, so the second stream can be replayed verbatim by a plain
    projected-subgradient reference.

    ``on_iterate(k, x)`` is called with each iterate (including the
    final one) before it is advanced.
    """
    if rng is None:
        rng = RngStream(cfg.seed)
    n = len(ds)
    N = cfg.iters
    state = initial_state(cfg, spec, ds, rng)
    i1 = rng.substream(STREAM_D1).integers(n, size=N)
    i2 = rng.substream(STREAM_D2).integers(n, size=N)
    i3 = rng.substream(STREAM_D3).integers(n, size=N)
    R = int(rng.substream(STREAM_SELECT).integers(N))

    trace = RunTrace(BASE_COLUMNS)
    x_R = None
    for k in range(N):
        if on_iterate is not None:
            on_iterate(k, state.x)
        if k == R:
            x_R = state.x.copy()
        est = gated_estimates(
            spec, cfg.risk, state.x, state.u, ds[i1[k]], ds[i2[k]], ds[i3[k]]
        )
        new_state = step(cfg, state, est)
        if k % cfg.trace_thin == 0:
            F_hat = composite_objective(spec, state.x, ds, cfg.risk)
            h = float(batch_loss_values(spec, state.x, ds).mean())
            trace.append(
                k,
                F_hat,
                state.u,
                abs(state.u - h),
                float(np.linalg.norm(new_state.x - state.x)),
            )
        state = new_state
    if on_iterate is not None:
        on_iterate(N, state.x)
    return trace, x_R
