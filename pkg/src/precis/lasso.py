"""Weighted Lasso and square-root Lasso by cyclic coordinate descent.

Both solvers work on the Gram form of the problem,

    G = A'A/n,   c = A'y/n,   yy = y'y/n,

so the nodewise and graphical-Lasso code can hand over slices of a
covariance matrix without rebuilding a design.

Objectives (``w`` are the positive penalty weights):

    lasso:       ||y - A b||_2^2 / n + 2 lam * sum_k w_k |b_k|
    sqrt-lasso:  ||y - A b||_2 / sqrt(n) + lam * sum_k w_k |b_k|

The square-root problem is solved through its jointly convex reformulation
in (b, tau): for fixed tau it is a Lasso with penalty ``lam * tau``, for
fixed b the optimal tau is the residual RMS. Stationarity is

    lasso:       A'(y - A b)/n            = lam * w * kappa
    sqrt-lasso:  A'(y - A b)/(n * tau)    = lam * w * kappa

with ``kappa`` in the subdifferential of the l1 norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import DegenerateResidual, DimensionMismatch, MaxIterationsExceeded, ValidationError

MAX_SWEEPS = 10_000
COEF_TOL = 1e-9
TAU_RTOL = 1e-8


@numba.njit(cache=True, nogil=True)
def _sweep(G, g, beta, pen, active_only):
    q = beta.shape[0]
    max_delta = 0.0
    for k in range(q):
        bk = beta[k]
        if active_only and bk == 0.0:
            continue
        gkk = G[k, k]
        if gkk <= 0.0:
            continue
        z = g[k] + gkk * bk
        if z > pen[k]:
            new = (z - pen[k]) / gkk
        elif z < -pen[k]:
            new = (z + pen[k]) / gkk
        else:
            new = 0.0
        delta = new - bk
        if delta != 0.0:
            for m in range(q):
                g[m] -= G[m, k] * delta
            beta[k] = new
            ad = abs(delta)
            if ad > max_delta:
                max_delta = ad
    return max_delta


@numba.njit(cache=True, nogil=True)
def _lasso_objective(c, g, beta, pen):
    # b'Gb - 2c'b + 2 sum pen|b|, using Gb = c - g
    val = 0.0
    for k in range(beta.shape[0]):
        val += -c[k] * beta[k] - g[k] * beta[k] + 2.0 * pen[k] * abs(beta[k])
    return val


@numba.njit(cache=True, nogil=True)
def cd_lasso_gram(G, c, pen, beta, tol, max_sweeps, trace):
    """Minimise b'Gb - 2c'b + 2 sum pen_k |b_k| in place, warm-started at ``beta``.

    Alternates full sweeps with sweeps restricted to the active set. Returns
    (sweeps used, converged flag, number of trace entries written).
    """
    g = c - G @ beta
    sweeps = 0
    nt = 0
    record = trace.shape[0] > 0
    while sweeps < max_sweeps:
        delta = _sweep(G, g, beta, pen, False)
        sweeps += 1
        if record and nt < trace.shape[0]:
            trace[nt] = _lasso_objective(c, g, beta, pen)
            nt += 1
        if delta <= tol:
            return sweeps, True, nt
        while sweeps < max_sweeps:
            delta = _sweep(G, g, beta, pen, True)
            sweeps += 1
            if record and nt < trace.shape[0]:
                trace[nt] = _lasso_objective(c, g, beta, pen)
                nt += 1
            if delta <= tol:
                break
    return sweeps, False, nt


@numba.njit(cache=True, nogil=True)
def _rss(G, c, yy, beta):
    # ||y - Ab||^2/n from Gram quantities
    return yy - 2.0 * (c @ beta) + beta @ (G @ beta)


@numba.njit(cache=True, nogil=True)
def cd_sqrt_lasso_gram(G, c, yy, lam, w, beta, tol, max_sweeps, tau_rtol, floor, trace):
    """Block coordinate descent on tau/2 + ||y - Ab||^2/(2 n tau) + lam ||w b||_1.

    Every sweep over b uses the penalty lam*tau*w; tau is then reset to the
    residual RMS, which is its exact minimiser. Returns (tau, sweeps,
    converged, status, trace entries) where status 1 means the residual
    collapsed below ``floor``.
    """
    q = beta.shape[0]
    pen = np.empty(q)
    rss = _rss(G, c, yy, beta)
    if rss <= floor * floor:
        return 0.0, 0, False, 1, 0
    tau = np.sqrt(rss)
    g = c - G @ beta
    sweeps = 0
    nt = 0
    active_only = False
    while sweeps < max_sweeps:
        for k in range(q):
            pen[k] = lam * tau * w[k]
        delta = _sweep(G, g, beta, pen, active_only)
        sweeps += 1
        rss = _rss(G, c, yy, beta)
        if rss <= floor * floor:
            return 0.0, sweeps, False, 1, nt
        tau_new = np.sqrt(rss)
        if nt < trace.shape[0]:
            l1 = 0.0
            for k in range(q):
                l1 += w[k] * abs(beta[k])
            trace[nt] = tau_new + lam * l1
            nt += 1
        change = abs(tau_new - tau)
        tau = tau_new
        if delta <= tol and change <= tau_rtol * max(1.0, tau):
            if not active_only:
                return tau, sweeps, True, 0, nt
            active_only = False
        else:
            active_only = delta > tol
    return tau, sweeps, False, 0, nt


@dataclass(frozen=True)
class LassoProblem:
    design: np.ndarray
    response: np.ndarray
    lam: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.design, dtype=float)
        y = np.asarray(self.response, dtype=float)
        if a.ndim != 2 or y.ndim != 1 or a.shape[0] != y.shape[0]:
            raise DimensionMismatch("design must be n x q and response length n")
        w = np.ones(a.shape[1]) if self.weights is None else np.asarray(self.weights, dtype=float)
        if w.shape != (a.shape[1],):
            raise DimensionMismatch("weights must have one entry per column")
        if np.any(w <= 0):
            raise ValidationError("penalty weights must be positive")
        if not self.lam >= 0:
            raise ValidationError("lambda must be non-negative")
        object.__setattr__(self, "design", a)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.design.shape[0]

    def gram(self):
        a, y, n = self.design, self.response, self.n
        G = a.T @ a / n
        return (G + G.T) / 2, a.T @ y / n, float(y @ y) / n


@dataclass(frozen=True)
class LassoSolution:
    coefficients: np.ndarray
    subgradient: np.ndarray
    iterations: int
    converged: bool
    noise_level: float | None = None
    trace: np.ndarray | None = None


@dataclass(frozen=True)
class KktReport:
    max_violation: float
    active_set_sign_errors: int

    def passed(self, tol):
        return self.max_violation <= tol and self.active_set_sign_errors == 0


def _recover_subgradient(score, beta, pen):
    kappa = np.where(beta > 0, 1.0, np.where(beta < 0, -1.0, 0.0))
    free = (beta == 0) & (pen > 0)
    kappa[free] = score[free] / pen[free]
    return kappa


def _check_inputs(G, c, lam, weights):
    G = np.ascontiguousarray(G, dtype=float)
    c = np.ascontiguousarray(c, dtype=float)
    q = c.shape[0]
    if G.shape != (q, q):
        raise DimensionMismatch("Gram matrix and cross-product disagree")
    w = np.ones(q) if weights is None else np.ascontiguousarray(weights, dtype=float)
    if w.shape != (q,) or np.any(w <= 0):
        raise ValidationError("penalty weights must be positive, one per column")
    if not lam >= 0:
        raise ValidationError("lambda must be non-negative")
    return G, c, w


def solve_lasso_gram(G, c, lam, weights=None, beta0=None, tol=COEF_TOL,
                     max_sweeps=MAX_SWEEPS, record_trace=False, strict=False):
    G, c, w = _check_inputs(G, c, lam, weights)
    q = c.shape[0]
    beta = np.zeros(q) if beta0 is None else np.array(beta0, dtype=float)
    pen = lam * w
    trace = np.empty(max_sweeps if record_trace else 0)
    sweeps, ok, nt = cd_lasso_gram(G, c, pen, beta, tol, max_sweeps, trace)
    if strict and not ok:
        raise MaxIterationsExceeded(f"lasso did not converge in {max_sweeps} sweeps")
    score = c - G @ beta
    return LassoSolution(
        coefficients=beta,
        subgradient=_recover_subgradient(score, beta, pen),
        iterations=int(sweeps),
        converged=bool(ok),
        trace=trace[:nt] if record_trace else None,
    )


def solve_sqrt_lasso_gram(G, c, yy, lam, weights=None, beta0=None, tol=COEF_TOL,
                          max_sweeps=MAX_SWEEPS, record_trace=False, strict=False):
    G, c, w = _check_inputs(G, c, lam, weights)
    q = c.shape[0]
    beta = np.zeros(q) if beta0 is None else np.array(beta0, dtype=float)
    # Gram arithmetic cannot resolve a residual much below sqrt(eps * yy)
    floor = max(1e-10, np.sqrt(64 * np.finfo(float).eps * max(yy, 0.0)))
    trace = np.empty(max_sweeps if record_trace else 0)
    tau, sweeps, ok, status, nt = cd_sqrt_lasso_gram(
        G, c, float(yy), float(lam), w, beta, tol, max_sweeps, TAU_RTOL, floor, trace)
    if status == 1:
        raise DegenerateResidual("square-root Lasso residual vanished; lambda too small for this design")
    if strict and not ok:
        raise MaxIterationsExceeded("square-root Lasso did not converge")
    score = (c - G @ beta) / tau
    return LassoSolution(
        coefficients=beta,
        subgradient=_recover_subgradient(score, beta, lam * w),
        iterations=int(sweeps),
        converged=bool(ok),
        noise_level=float(tau),
        trace=trace[:nt] if record_trace else None,
    )


def solve_lasso(prob: LassoProblem, **kw) -> LassoSolution:
    """Weighted Lasso: minimise ||y - Ab||^2/n + 2 lam ||diag(w) b||_1."""
    G, c, _ = prob.gram()
    return solve_lasso_gram(G, c, prob.lam, prob.weights, **kw)


def solve_sqrt_lasso(prob: LassoProblem, **kw) -> LassoSolution:
    """Weighted square-root Lasso: minimise ||y - Ab||_2/sqrt(n) + lam ||diag(w) b||_1.

    ``noise_level`` of the result is the residual RMS ||y - Ab||_2/sqrt(n).
    """
    G, c, yy = prob.gram()
    return solve_sqrt_lasso_gram(G, c, yy, prob.lam, prob.weights, **kw)


def lasso_objective(prob: LassoProblem, beta, variant="lasso") -> float:
    r = prob.response - prob.design @ beta
    l1 = float(np.sum(prob.weights * np.abs(beta)))
    if variant == "lasso":
        return float(r @ r) / prob.n + 2 * prob.lam * l1
    return float(np.sqrt(r @ r / prob.n)) + prob.lam * l1


def stationarity_residual(score, beta, pen, sign_tol=1e-6):
    """Per-coordinate KKT violation given the score vector (gradient of the fit term)."""
    nz = beta != 0
    viol = np.where(nz, np.abs(score - pen * np.sign(beta)), np.maximum(np.abs(score) - pen, 0.0))
    return viol


def kkt_report(prob: LassoProblem, sol: LassoSolution, variant="lasso", sign_tol=1e-6) -> KktReport:
    """Stationarity check for a candidate solution.

    For ``variant="sqrt"`` the score is divided by the residual RMS of the
    candidate, as in the square-root stationarity condition.
    """
    if variant not in ("lasso", "sqrt"):
        raise ValidationError(f"unknown variant {variant!r}")
    beta = np.asarray(sol.coefficients, dtype=float)
    if beta.shape != (prob.design.shape[1],):
        raise DimensionMismatch("coefficient vector has the wrong length")
    r = prob.response - prob.design @ beta
    score = prob.design.T @ r / prob.n
    if variant == "sqrt":
        score = score / np.sqrt(r @ r / prob.n)
    pen = prob.lam * prob.weights
    viol = stationarity_residual(score, beta, pen)
    nz = beta != 0
    kappa = np.asarray(sol.subgradient)
    sign_err = int(np.sum(nz & (np.abs(kappa - np.sign(beta)) > sign_tol)))
    return KktReport(float(viol.max(initial=0.0)), sign_err)
