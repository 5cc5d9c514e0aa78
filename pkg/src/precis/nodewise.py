"""Nodewise (square-root) Lasso estimation of a precision matrix.

Each column j regresses X_j on the remaining variables,

    sqrt_lasso:  ||X_j - X_{-j} g||_2 / sqrt(n) + lam * ||W_{-j} g||_1
    lasso:       ||X_j - X_{-j} g||_2^2 / n     + lam * ||W_{-j} g||_1

and column j of the estimate is (-g_1, .., 1, .., -g_p)' / tau_j^2. Two noise
levels are available: the residual variance ``tau_hat^2`` and the corrected

    sqrt_lasso:  tau_tilde^2 = tau_hat^2 + lam * tau_hat * ||W_{-j} g||_1
    lasso:       tau_tilde^2 = tau_hat^2 + (lam / 2) * ||W_{-j} g||_1

which makes the diagonal of Sigma_hat Theta_hat exactly one. ``W`` is either
the sample standard deviations (``penalty_weights="sd"``) or all ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._parallel import pmap
from .core import CovarianceEstimate, DataMatrix, PrecisionEstimate, Provenance, sample_covariance
from .errors import MissingColumn, NotPositiveDefinite, ValidationError
from .lasso import solve_lasso_gram, solve_sqrt_lasso_gram

REGRESSORS = ("sqrt_lasso", "lasso")
TAU_VARIANTS = ("tau_tilde", "tau_hat")

# Named estimators as they appear in the coverage tables and on the CLI.
PRESETS = {
    "node-sqrt": dict(regressor="sqrt_lasso", tau_variant="tau_hat", penalty_weights="unit"),
    "node-sqrt-tau": dict(regressor="sqrt_lasso", tau_variant="tau_tilde", penalty_weights="unit"),
    "node": dict(regressor="lasso", tau_variant="tau_tilde", penalty_weights="sd"),
}


def universal_lambda(n, p):
    return float(np.sqrt(np.log(p) / n))


@dataclass(frozen=True)
class NodewiseColumnFit:
    node: int
    gamma: np.ndarray
    tau_hat: float
    tau_tilde: float
    lam: float
    subgradient: np.ndarray
    weights: np.ndarray
    regressor: str
    converged: bool = True

    @property
    def p(self):
        return self.gamma.shape[0] + 1

    def tau_sq(self, tau_variant="tau_tilde"):
        return self.tau_tilde**2 if tau_variant == "tau_tilde" else self.tau_hat**2

    def column(self, tau_variant="tau_tilde"):
        col = np.insert(-self.gamma, self.node, 1.0)
        return col / self.tau_sq(tau_variant)

    def weighted_subgradient(self):
        """Z_j: weights times kappa, with a zero inserted at the node itself."""
        return np.insert(self.weights * self.subgradient, self.node, 0.0)

    def bias_scale(self):
        """Scalar c_j with Sigma_hat Theta_j - e_j = c_j Z_j for the tau_tilde assembly."""
        if self.regressor == "sqrt_lasso":
            return self.lam * self.tau_hat / self.tau_tilde**2
        return 0.5 * self.lam / self.tau_tilde**2


@dataclass(frozen=True)
class NodewiseEstimate:
    fits: tuple
    theta: np.ndarray
    tau_variant: str = "tau_tilde"
    regressor: str = "sqrt_lasso"

    @property
    def lam(self):
        return float(np.mean([f.lam for f in self.fits]))

    @property
    def converged(self):
        return all(f.converged for f in self.fits)

    def as_precision(self) -> PrecisionEstimate:
        prov = Provenance.NODEWISE_SQRT if self.regressor == "sqrt_lasso" else Provenance.NODEWISE_LASSO
        return PrecisionEstimate(self.theta, prov, self.lam, self.converged,
                                 info={"tau_variant": self.tau_variant})


def _as_cov(data_or_cov):
    if isinstance(data_or_cov, CovarianceEstimate):
        return data_or_cov
    if isinstance(data_or_cov, DataMatrix):
        return sample_covariance(data_or_cov)
    raise ValidationError("expected a DataMatrix or CovarianceEstimate")


def _weights(cov, penalty_weights):
    if penalty_weights == "sd":
        return np.asarray(cov.w_hat)
    if penalty_weights == "unit":
        return np.ones(cov.p)
    raise ValidationError(f"unknown penalty_weights {penalty_weights!r}")


def fit_node_column(data_or_cov, j, lam, regressor="sqrt_lasso", penalty_weights="sd",
                    beta0=None) -> NodewiseColumnFit:
    """Regress variable ``j`` on all others from the Gram matrix."""
    cov = _as_cov(data_or_cov)
    if regressor not in REGRESSORS:
        raise ValidationError(f"unknown regressor {regressor!r}")
    S = np.asarray(cov.sigma_hat)
    p = S.shape[0]
    if not 0 <= j < p:
        raise ValidationError(f"node index {j} out of range")
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    if lam == 0 and cov.n is not None and p - 1 >= cov.n:
        raise ValidationError("lambda must be positive when p - 1 >= n")
    idx = np.r_[0:j, j + 1:p]
    G = S[np.ix_(idx, idx)]
    c = S[idx, j]
    yy = float(S[j, j])
    w = _weights(cov, penalty_weights)[idx]
    if regressor == "sqrt_lasso":
        sol = solve_sqrt_lasso_gram(G, c, yy, lam, w, beta0=beta0)
        g = sol.coefficients
        tau_hat = sol.noise_level
        tau_tilde_sq = tau_hat**2 + lam * tau_hat * float(w @ np.abs(g))
    else:
        # lasso kernel uses the 2*lam convention, so halve to get lam*||Wg||_1
        sol = solve_lasso_gram(G, c, 0.5 * lam, w, beta0=beta0)
        g = sol.coefficients
        rss = max(yy - 2 * float(c @ g) + float(g @ G @ g), 0.0)
        tau_hat = float(np.sqrt(rss))
        tau_tilde_sq = rss + 0.5 * lam * float(w @ np.abs(g))
    if not tau_tilde_sq > 0:
        raise NotPositiveDefinite(f"column {j}: non-positive noise level")
    return NodewiseColumnFit(
        node=j, gamma=g, tau_hat=float(tau_hat), tau_tilde=float(np.sqrt(tau_tilde_sq)),
        lam=float(lam), subgradient=sol.subgradient, weights=w, regressor=regressor,
        converged=sol.converged,
    )


def population_column(theta0, j):
    """Population regression coefficients and noise variance of column j."""
    t = theta0.theta if isinstance(theta0, PrecisionEstimate) else np.asarray(theta0, dtype=float)
    if t[j, j] <= 0:
        raise NotPositiveDefinite("diagonal entry must be positive")
    if np.linalg.eigvalsh((t + t.T) / 2)[0] <= 0:
        raise NotPositiveDefinite("population precision is not positive definite")
    idx = np.r_[0:j, j + 1:t.shape[0]]
    return -t[idx, j] / t[j, j], 1.0 / t[j, j]


def population_fit(theta0, j) -> NodewiseColumnFit:
    """Column fit carrying exact population values; tau_hat == tau_tilde."""
    gamma, tau_sq = population_column(theta0, j)
    tau = float(np.sqrt(tau_sq))
    q = gamma.shape[0]
    return NodewiseColumnFit(j, gamma, tau, tau, 0.0, np.zeros(q), np.ones(q), "sqrt_lasso")


def assemble_precision(fits, tau_variant="tau_tilde") -> NodewiseEstimate:
    if tau_variant not in TAU_VARIANTS:
        raise ValidationError(f"unknown tau variant {tau_variant!r}")
    fits = sorted(fits, key=lambda f: f.node)
    if not fits:
        raise MissingColumn("no column fits supplied")
    p = fits[0].p
    nodes = [f.node for f in fits]
    if nodes != list(range(p)):
        missing = sorted(set(range(p)) - set(nodes))
        raise MissingColumn(f"missing or duplicated columns, missing: {missing}")
    if any(f.p != p for f in fits):
        raise MissingColumn("column fits have inconsistent dimensions")
    theta = np.column_stack([f.column(tau_variant) for f in fits])
    regs = {f.regressor for f in fits}
    return NodewiseEstimate(tuple(fits), theta, tau_variant, regs.pop() if len(regs) == 1 else "mixed")


def nodewise_estimate(data_or_cov, lam=None, regressor="sqrt_lasso", tau_variant="tau_tilde",
                      penalty_weights="sd", threads=None) -> NodewiseEstimate:
    """Fit all p columns (in parallel) and assemble.

    ``lam`` may be a scalar or a length-p sequence of per-column values;
    by default sqrt(log p / n).
    """
    cov = _as_cov(data_or_cov)
    p = cov.p
    if lam is None:
        if cov.n is None:
            raise ValidationError("sample size unknown; pass lam explicitly")
        lam = universal_lambda(cov.n, p)
    lams = np.broadcast_to(np.asarray(lam, dtype=float), (p,))
    fits = pmap(lambda j: fit_node_column(cov, j, float(lams[j]), regressor, penalty_weights),
                range(p), threads)
    return assemble_precision(fits, tau_variant)


def nodewise_preset(data_or_cov, method, lam=None, threads=None) -> NodewiseEstimate:
    if method not in PRESETS:
        raise ValidationError(f"unknown nodewise method {method!r}")
    return nodewise_estimate(data_or_cov, lam, threads=threads, **PRESETS[method])
