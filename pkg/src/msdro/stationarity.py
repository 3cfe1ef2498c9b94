"""Moreau-envelope stationarity probe for the box-constrained composite
objective.

For phi = F + indicator(box), the envelope at scale lam is
min_y phi(y) + ||y - x||^2 / (2 lam) and its gradient is
(x - prox(x)) / lam. A small gradient norm certifies proximity to a
nearly stationary point: the prox point is close, does not increase phi,
and carries a small subdifferential residual.

The prox subproblem is (1/lam - rho)-strongly convex when lam * rho < 1,
with rho the weak-convexity modulus of F. It is solved by a
deterministic full-batch projected subgradient sweep whose fixed step
shrinks geometrically between epochs; the returned point is certified by
a strong-convexity lower bound on the subproblem minimum, maximized over
the subdifferential freedoms active at kinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import BoxConstraint, Dataset, project
from .losses import (
    LossSpec,
    batch_base_coefs,
    batch_loss_values,
    penalty_modulus,
    penalty_subgradient,
    weak_convexity_modulus,
)
from .risk import RiskParams, composite_objective, composite_subgradient

_STEP_SHRINK = 1e-13  # last epoch step relative to the first
_KINK_DETECT = 1e-6  # relative threshold for targeting a kink manifold
_KINK_RELAX = 1e-9  # relative threshold for relaxing a selection


def rho_weakly_convex(kappa: float, delta: float) -> float:
    """Weak-convexity modulus of the composite objective built from a
    delta-weakly-convex loss at risk level kappa."""
    if not 0.0 <= kappa <= 1.0:
        raise ValueError("kappa must lie in [0, 1]")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    return (1.0 + 2.0 * kappa) * delta


def rho_bar(kappa: float, delta: float) -> float:
    """Envelope curvature scale: the composite modulus plus an extra
    (1 + kappa) * delta margin; the probe default is lam = 1 / rho_bar."""
    return rho_weakly_convex(kappa, delta) + (1.0 + kappa) * delta


class ProxDidNotCertify(RuntimeError):
    """Budget exhausted before the prox certificate reached tolerance.

    Carries the best iterate and its certified squared distance.
    """

    def __init__(self, msg: str, x_hat: np.ndarray, certified_sqdist: float):
        super().__init__(msg)
        self.x_hat = x_hat
        self.certified_sqdist = certified_sqdist


@dataclass(frozen=True)
class MoreauProbe:
    """Probe configuration.

    ``lam`` must satisfy lam * rho < 1; ``tol`` bounds the certified
    squared distance between the returned point and the exact prox.
    ``delta`` overrides the weak-convexity modulus taken from the loss.
    """

    lam: float
    box: BoxConstraint
    budget: int = 5000
    tol: float = 1e-10
    delta: float | None = None

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be > 0")
        if self.budget < 10:
            raise ValueError("budget must be >= 10")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


@dataclass(frozen=True)
class StationarityReport:
    x_hat: np.ndarray
    grad_norm: float
    phi_at_xhat: float
    dist_to_xhat: float
    envelope_value: float
    certified_sqdist: float


def _subproblem_value(spec, ds, rp, lam, x, y) -> float:
    return composite_objective(spec, y, ds, rp) + float(np.dot(y - x, y - x)) / (2.0 * lam)


def _subproblem_subgrad(spec, ds, rp, lam, x, y) -> np.ndarray:
    return composite_subgradient(spec, y, ds, rp) + (y - x) / lam


def _box_quad_min(s: np.ndarray, y: np.ndarray, box: BoxConstraint, mu: float) -> float:
    """min over z in the box of <s, z - y> + (mu/2) ||z - y||^2."""
    t = np.clip(-s / mu, box.lower - y, box.upper - y)
    return float(s @ t + 0.5 * mu * (t @ t))


def _selection_freedoms(spec, ds, rp, y):
    """Subdifferential freedoms of the composite objective at y.

    Returns (s_base, V, correction): any s_base + theta @ V with theta in
    [-1, 1]^F satisfies the weak-convexity inequality at y up to the
    additive correction. Freedoms come from absolute-residual terms of
    the mad base sitting (numerically) on their kink manifold and from
    penalised coordinates at zero; both relaxations are charged for
    their distance to the exact kink.
    """
    y = np.asarray(y, dtype=float)
    losses = batch_loss_values(spec, y, ds)
    n = losses.size
    m = float(losses.mean())
    above = (losses >= m).astype(float)
    w = (1.0 + rp.kappa * (above - above.mean())) / n

    coefs = batch_base_coefs(spec, y, ds).copy()
    rows = []
    correction = 0.0
    scale = max(1.0, float(np.abs(y).max(initial=0.0)))
    if spec.base == "mad":
        res = ds.features @ y - ds.targets
        row_norm = np.sqrt(np.einsum("ij,ij->i", ds.features, ds.features))
        kink = np.abs(res) <= _KINK_RELAX * np.maximum(1.0, row_norm) * scale
        for i in np.flatnonzero(kink):
            coefs[i] = 0.0
            rows.append(w[i] * ds.features[i])
            # |r'| >= |r| + theta (r' - r) - 2|r| for affine r, any theta
            correction += 2.0 * abs(w[i] * res[i])
    s_base = ds.features.T @ (w * coefs)

    pen_g = penalty_subgradient(spec.penalty, spec.params, y).copy()
    if spec.penalty != "none":
        lam_pen = spec.params.lam
        zero = np.abs(y) <= _KINK_RELAX * scale
        for j in np.flatnonzero(zero):
            pen_g[j] = 0.0
            e = np.zeros_like(y)
            e[j] = lam_pen
            rows.append(e)
            correction += 2.0 * lam_pen * abs(y[j])
    s_base = s_base + pen_g
    V = np.asarray(rows) if rows else np.zeros((0, y.size))
    return s_base, V, correction


def _certified_lower_bound(spec, ds, rp, lam, mu, box, x, y) -> float:
    """Best strong-convexity lower bound on the subproblem minimum
    obtainable from the point y."""
    phi_y = _subproblem_value(spec, ds, rp, lam, x, y)
    s_base, V, correction = _selection_freedoms(spec, ds, rp, y)
    s_base = s_base + (y - x) / lam

    def bound(theta):
        s = s_base if V.shape[0] == 0 else s_base + theta @ V
        return phi_y + _box_quad_min(s, y, box, mu) - correction

    nfree = V.shape[0]
    if nfree == 0:
        return bound(None)
    theta = np.zeros(nfree)
    for _ in range(2):
        for r in range(nfree):
            lo, hi = -1.0, 1.0
            for _ in range(48):  # ternary search: bound is concave in theta_r
                m1 = lo + (hi - lo) / 3.0
                m2 = hi - (hi - lo) / 3.0
                theta[r] = m1
                b1 = bound(theta)
                theta[r] = m2
                b2 = bound(theta)
                if b1 < b2:
                    lo = m1
                else:
                    hi = m2
            theta[r] = 0.5 * (lo + hi)
    return bound(theta)


def _kink_snapped_candidates(spec, ds, box, y) -> list[np.ndarray]:
    """Candidate points moved exactly onto nearby kink manifolds.

    Moving the candidate is always sound (the lower bound may be taken
    at any point); landing exactly on a kink unlocks its selection
    freedom, which is what makes the certificate tight when the true
    prox sits on one.
    """
    out = []
    scale = max(1.0, float(np.abs(y).max(initial=0.0)))
    snapped = y.copy()
    moved = False
    if spec.penalty != "none":
        zero = np.abs(snapped) <= _KINK_DETECT * scale
        if zero.any():
            snapped[zero] = 0.0
            moved = True
    if spec.base == "mad":
        res = ds.features @ snapped - ds.targets
        row_norm = np.sqrt(np.einsum("ij,ij->i", ds.features, ds.features))
        active = np.flatnonzero(np.abs(res) <= _KINK_DETECT * np.maximum(1.0, row_norm) * scale)
        if active.size and active.size <= snapped.size:
            A = ds.features[active]
            corr, *_ = np.linalg.lstsq(A, -res[active], rcond=None)
            if np.linalg.norm(corr) <= 10.0 * _KINK_DETECT * scale * math.sqrt(max(1, active.size)):
                snapped = snapped + corr
                moved = True
    if moved:
        out.append(project(box, snapped))
    return out


def prox(probe: MoreauProbe, spec: LossSpec, ds: Dataset, rp: RiskParams, x) -> np.ndarray:
    """Approximate minimizer of F(y) + ||y - x||^2 / (2 lam) over the box.

    The returned point never increases the subproblem objective relative
    to x and carries a certified squared distance to the exact prox of at
    most ``probe.tol``; exhausting the budget without that certificate
    raises ProxDidNotCertify with the best iterate attached.
    """
    return _prox_certified(probe, spec, ds, rp, x)[0]


def _prox_certified(
    probe: MoreauProbe, spec: LossSpec, ds: Dataset, rp: RiskParams, x
) -> tuple[np.ndarray, float]:
    x = np.asarray(x, dtype=float)
    delta = probe.delta if probe.delta is not None else weak_convexity_modulus(spec)
    rho = rho_weakly_convex(rp.kappa, delta)
    lam = probe.lam
    if lam * rho >= 1.0:
        raise ValueError(f"lam * rho = {lam * rho!r} must be < 1")
    mu = 1.0 / lam - rho
    box = probe.box

    y = project(box, x)
    best_y = y.copy()
    best_phi = _subproblem_value(spec, ds, rp, lam, x, y)

    epochs = int(min(60, max(12, probe.budget // 100)))
    steps = max(1, probe.budget // epochs)
    shrink = _STEP_SHRINK ** (1.0 / max(1, epochs - 1))

    def certify():
        candidates = [best_y] + _kink_snapped_candidates(spec, ds, box, best_y)
        top_y, top_phi = best_y, best_phi
        lower = -math.inf
        for cand in candidates:
            phi_c = _subproblem_value(spec, ds, rp, lam, x, cand)
            if phi_c < top_phi:
                top_y, top_phi = cand, phi_c
            lower = max(lower, _certified_lower_bound(spec, ds, rp, lam, mu, box, x, cand))
        gap = max(0.0, top_phi - lower)
        return top_y, top_phi, 2.0 * gap / mu

    beta = lam
    sqdist = math.inf
    for e in range(epochs):
        for _ in range(steps):
            s = _subproblem_subgrad(spec, ds, rp, lam, x, y)
            y = project(box, y - beta * s)
            phi_y = _subproblem_value(spec, ds, rp, lam, x, y)
            if phi_y < best_phi:
                best_phi = phi_y
                best_y = y.copy()
        beta *= shrink
        if e >= 2 and (e % 2 == 0 or e == epochs - 1):
            cand, cand_phi, sqdist = certify()
            if sqdist <= probe.tol:
                return cand, sqdist
            if cand_phi < best_phi:
                best_y, best_phi = cand, cand_phi
    cand, _, sqdist = certify()
    if sqdist <= probe.tol:
        return cand, sqdist
    raise ProxDidNotCertify(
        f"prox certificate {sqdist!r} above tolerance {probe.tol!r} "
        f"after {probe.budget} iterations",
        x_hat=cand,
        certified_sqdist=sqdist,
    )


def moreau_gradient(
    probe: MoreauProbe, spec: LossSpec, ds: Dataset, rp: RiskParams, x
) -> StationarityReport:
    """Envelope gradient (x - prox(x)) / lam and the companion
    near-stationarity quantities."""
    x = np.asarray(x, dtype=float)
    x_hat = prox(probe, spec, ds, rp, x)
    grad = (x - x_hat) / probe.lam
    grad_norm = float(np.linalg.norm(grad))
    phi_hat = composite_objective(spec, x_hat, ds, rp)
    dist = probe.lam * grad_norm
    return StationarityReport(
        x_hat=x_hat,
        grad_norm=grad_norm,
        phi_at_xhat=phi_hat,
        dist_to_xhat=dist,
        envelope_value=phi_hat + dist**2 / (2.0 * probe.lam),
        certified_sqdist=probe.tol,
    )
