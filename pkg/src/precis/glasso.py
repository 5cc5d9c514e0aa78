"""Graphical Lasso with unpenalised diagonal: plain, weighted and normalised.

    minimise  tr(S Theta) - log det Theta + sum_{i != j} P_ij |Theta_ij|

with P_ij = lam (plain, S = Sigma_hat), P_ij = lam * W_i * W_j (weighted) or
P_ij = lam on the correlation matrix (normalised).

The solver is block coordinate ascent on the dual, max log det W subject to
W_jj = S_jj and |W_ij - S_ij| <= P_ij. Each column update is a Lasso in the
remaining block of W. Starting from a strictly feasible positive definite
W keeps every iterate positive definite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .core import CovarianceEstimate, PrecisionEstimate, Provenance
from .errors import NonPositiveDefiniteInput, NotPositiveDefinite, NotSymmetric, ProvenanceMismatch, ValidationError

VARIANTS = ("plain", "weighted", "normalized")


@dataclass(frozen=True)
class GlassoConfig:
    lam: float
    variant: str = "plain"
    tol: float = 1e-7
    max_iter: int = 1000

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValidationError("lambda must be non-negative")
        if not self.tol > 0:
            raise ValidationError("tol must be positive")
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown glasso variant {self.variant!r}")


@dataclass(frozen=True)
class GlassoKktReport:
    off_diagonal_violation: float
    diagonal_residual: float
    subgradient_sup: float
    subgradient: np.ndarray = field(repr=False)

    @property
    def max_violation(self):
        return max(self.off_diagonal_violation, self.diagonal_residual)

    def passed(self, tol):
        return self.max_violation <= tol


@numba.njit(cache=True, nogil=True)
def _column_lasso(W, s, pen, beta, g, j, tol, max_sweeps):
    # minimise 1/2 b'W11 b - b's12 + sum pen|b| over coordinates k != j
    p = W.shape[0]
    for m in range(p):
        acc = 0.0
        for k in range(p):
            if k != j:
                acc += W[m, k] * beta[k]
        g[m] = s[m] - acc
    sweeps = 0
    active_only = False
    while sweeps < max_sweeps:
        max_delta = 0.0
        for k in range(p):
            if k == j:
                continue
            bk = beta[k]
            if active_only and bk == 0.0:
                continue
            wkk = W[k, k]
            z = g[k] + wkk * bk
            if z > pen[k]:
                new = (z - pen[k]) / wkk
            elif z < -pen[k]:
                new = (z + pen[k]) / wkk
            else:
                new = 0.0
            delta = new - bk
            if delta != 0.0:
                for m in range(p):
                    g[m] -= W[m, k] * delta
                beta[k] = new
                if abs(delta) > max_delta:
                    max_delta = abs(delta)
        sweeps += 1
        if max_delta <= tol:
            if not active_only:
                break
            active_only = False
        else:
            active_only = True
    return sweeps


@numba.njit(cache=True, nogil=True)
def glasso_bcd(S, P, W, B, tol, max_iter, inner_tol):
    """Dual block coordinate ascent in place on W (covariance) and B (column coefficients)."""
    p = S.shape[0]
    g = np.empty(p)
    w12 = np.empty(p)
    for it in range(max_iter):
        max_change = 0.0
        for j in range(p):
            beta = B[:, j].copy()
            _column_lasso(W, S[:, j], P[:, j], beta, g, j, inner_tol, 100000)
            for m in range(p):
                acc = 0.0
                for k in range(p):
                    if k != j:
                        acc += W[m, k] * beta[k]
                w12[m] = acc
            for m in range(p):
                if m != j:
                    d = abs(w12[m] - W[m, j])
                    if d > max_change:
                        max_change = d
                    W[m, j] = w12[m]
                    W[j, m] = w12[m]
            B[:, j] = beta
        if max_change <= tol:
            return it + 1, True
    return max_iter, False


def penalty_matrix(cov: CovarianceEstimate, lam: float, variant: str):
    p = cov.p
    if variant == "weighted":
        P = lam * np.outer(cov.w_hat, cov.w_hat)
    else:
        P = np.full((p, p), float(lam))
    np.fill_diagonal(P, 0.0)
    return P


def _target(cov, variant):
    return np.array(cov.r_hat if variant == "normalized" else cov.sigma_hat, dtype=float)


def glasso_objective(theta, S, P):
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return np.inf
    return float(np.sum(S * theta) - logdet + np.sum(P * np.abs(theta)))


def _recover_primal(W, B):
    p = W.shape[0]
    theta = np.empty((p, p))
    for j in range(p):
        beta = B[:, j]
        denom = W[j, j] - W[:, j] @ beta
        if not denom > 0:
            raise NotPositiveDefinite("graphical Lasso iterate lost positive definiteness")
        tjj = 1.0 / denom
        theta[:, j] = -beta * tjj
        theta[j, j] = tjj
    return (theta + theta.T) / 2


def _kkt(theta, S, P):
    try:
        inv = np.linalg.inv(theta)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("estimate is singular") from exc
    inv = (inv + inv.T) / 2
    grad = S - inv
    off = ~np.eye(theta.shape[0], dtype=bool)
    nz = (theta != 0) & off
    viol = np.where(nz, np.abs(grad + P * np.sign(theta)), np.maximum(np.abs(grad) - P, 0.0))
    viol[~off] = 0.0
    diag = float(np.abs(np.diag(grad)).max())
    with np.errstate(divide="ignore", invalid="ignore"):
        Z = np.where(P > 0, -grad / np.where(P > 0, P, 1.0), 0.0)
    Z[nz] = np.sign(theta[nz])
    np.fill_diagonal(Z, 0.0)
    return GlassoKktReport(float(viol.max(initial=0.0)), diag, float(np.abs(Z).max(initial=0.0)), Z)


def _feasible_start(S, P):
    off = ~np.eye(S.shape[0], dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(off & (S != 0), P / np.abs(S), np.inf)
    t = min(1.0, float(ratio.min(initial=np.inf)))
    W = S * (1.0 - t)
    np.fill_diagonal(W, np.diag(S))
    return W


def solve_graphical_lasso(cov: CovarianceEstimate, cfg: GlassoConfig, warm_start=None) -> PrecisionEstimate:
    """Return the penalised likelihood estimate; ``info`` carries the KKT report.

    ``warm_start`` may be the ``info["state"]`` of a solve at a smaller
    penalty, whose dual iterate stays feasible for larger penalties.
    """
    S = _target(cov, cfg.variant)
    P = penalty_matrix(cov, cfg.lam, cfg.variant)
    p = S.shape[0]
    ev_min = np.linalg.eigvalsh(S)[0]
    scale = max(np.abs(S).max(), 1.0)
    if ev_min < -cfg.tol * scale:
        raise NonPositiveDefiniteInput("covariance input has a negative eigenvalue")
    prov = {"plain": Provenance.GLASSO, "weighted": Provenance.GLASSO_WEIGHTED,
            "normalized": Provenance.GLASSO_NORMALIZED}[cfg.variant]

    if cfg.lam == 0:
        if ev_min <= 1e-12 * scale:
            raise NonPositiveDefiniteInput("lambda = 0 needs an invertible covariance (no MLE exists)")
        theta = np.linalg.inv(S)
        theta = (theta + theta.T) / 2
        rep = _kkt(theta, S, P)
        return PrecisionEstimate(theta, prov, 0.0, True, info={"kkt": rep, "iterations": 0})

    if warm_start is not None and np.all(np.abs(warm_start[0] - S)[P > 0] <= P[P > 0] + 1e-12):
        W, B = warm_start[0].copy(), warm_start[1].copy()
    else:
        W, B = _feasible_start(S, P), np.zeros((p, p))
    tol = cfg.tol
    total = 0
    converged = False
    theta = None
    while total < cfg.max_iter:
        its, ok = glasso_bcd(S, P, W, B, tol, cfg.max_iter - total, min(1e-10, tol * 1e-3))
        total += its
        theta = _recover_primal(W, B)
        rep = _kkt(theta, S, P)
        if ok and rep.passed(cfg.tol):
            converged = True
            break
        if not ok:
            break
        tol /= 10
        if tol < 1e-15:
            break
    if theta is None:
        theta = _recover_primal(W, B)
    rep = _kkt(theta, S, P)
    if np.linalg.eigvalsh(theta)[0] <= 0:
        raise NotPositiveDefinite("graphical Lasso estimate is not positive definite")
    return PrecisionEstimate(theta, prov, float(cfg.lam), converged,
                             info={"kkt": rep, "iterations": total, "state": (W, B)})


def weighted_from_normalized(norm_est: PrecisionEstimate, cov: CovarianceEstimate) -> PrecisionEstimate:
    """Map an inverse-correlation estimate back to the precision scale, W^-1 K W^-1."""
    if norm_est.provenance is not Provenance.GLASSO_NORMALIZED:
        raise ProvenanceMismatch(f"expected glasso_normalized, got {norm_est.provenance.value}")
    winv = 1.0 / np.asarray(cov.w_hat)
    theta = norm_est.theta * np.outer(winv, winv)
    return PrecisionEstimate(theta, Provenance.GLASSO_WEIGHTED, norm_est.lambda_used, norm_est.converged)


def glasso_kkt_report(theta: PrecisionEstimate, cov: CovarianceEstimate, cfg: GlassoConfig) -> GlassoKktReport:
    t = np.asarray(theta.theta if isinstance(theta, PrecisionEstimate) else theta, dtype=float)
    if not np.allclose(t, t.T, rtol=0, atol=1e-12 * max(1.0, np.abs(t).max())):
        raise NotSymmetric("precision estimate is not symmetric")
    t = (t + t.T) / 2
    if np.linalg.eigvalsh(t)[0] <= 0:
        raise NotPositiveDefinite("precision estimate is not positive definite")
    return _kkt(t, _target(cov, cfg.variant), penalty_matrix(cov, cfg.lam, cfg.variant))
