"""Data containers and covariance bookkeeping shared by every estimator."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import NotSymmetric, ValidationError, ZeroVarianceColumn


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataMatrix:
    """n x p matrix of observations, rows are samples."""

    values: np.ndarray

    def __post_init__(self):
        x = _frozen(self.values)
        if x.ndim != 2:
            raise ValidationError("data must be a 2-d array")
        n, p = x.shape
        if n < 2:
            raise ValidationError(f"need at least 2 observations, got n={n}")
        if p < 2:
            raise ValidationError(f"need at least 2 variables, got p={p}")
        if not np.all(np.isfinite(x)):
            raise ValidationError("data contains non-finite entries")
        object.__setattr__(self, "values", x)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def scaled(self, c: float) -> "DataMatrix":
        return DataMatrix(self.values * c)


@dataclass(frozen=True)
class CovarianceEstimate:
    """Gram matrix X'X/n with its correlation matrix and scale vector.

    ``w_hat`` holds the square roots of the diagonal of ``sigma_hat`` so that
    ``r_hat = diag(w_hat)^-1 sigma_hat diag(w_hat)^-1``.
    """

    sigma_hat: np.ndarray
    r_hat: np.ndarray
    w_hat: np.ndarray
    n: int | None = None
    population: bool = False

    @property
    def p(self) -> int:
        return self.sigma_hat.shape[0]

    @classmethod
    def from_sigma(cls, sigma, n=None, population=False) -> "CovarianceEstimate":
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValidationError("covariance must be square")
        if not np.array_equal(sigma, sigma.T):
            sigma = (sigma + sigma.T) / 2
        d = np.diag(sigma)
        bad = np.flatnonzero(~(d > 0))
        if bad.size:
            raise ZeroVarianceColumn(int(bad[0]))
        w = np.sqrt(d)
        r = sigma / np.outer(w, w)
        r = (r + r.T) / 2
        np.fill_diagonal(r, 1.0)
        return cls(_frozen(sigma), _frozen(r), _frozen(w), n, population)


class Provenance(str, enum.Enum):
    GLASSO = "glasso"
    GLASSO_WEIGHTED = "glasso_weighted"
    GLASSO_NORMALIZED = "glasso_normalized"
    NODEWISE_SQRT = "nodewise_sqrt"
    NODEWISE_LASSO = "nodewise_lasso"
    MLE = "mle"
    ORACLE = "oracle"
    POPULATION = "population"


@dataclass(frozen=True)
class PrecisionEstimate:
    theta: np.ndarray
    provenance: Provenance
    lambda_used: float = 0.0
    converged: bool = True
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        t = _frozen(self.theta)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValidationError("precision matrix must be square")
        object.__setattr__(self, "theta", t)
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if self.lambda_used < 0:
            raise ValidationError("lambda_used must be non-negative")

    @property
    def p(self) -> int:
        return self.theta.shape[0]


@dataclass(frozen=True)
class SparsityPattern:
    """Off-diagonal support as ordered index pairs."""

    p: int
    edges: frozenset

    @property
    def per_node_degree(self) -> np.ndarray:
        deg = np.zeros(self.p, dtype=int)
        for _, j in self.edges:
            deg[j] += 1
        return deg

    @property
    def max_degree(self) -> int:
        return int(self.per_node_degree.max()) if self.p else 0

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def mask(self, include_diagonal=False) -> np.ndarray:
        m = np.zeros((self.p, self.p), dtype=bool)
        for i, j in self.edges:
            m[i, j] = True
        if include_diagonal:
            np.fill_diagonal(m, True)
        return m

    def is_symmetric(self) -> bool:
        return all((j, i) in self.edges for i, j in self.edges)

    @classmethod
    def from_mask(cls, mask) -> "SparsityPattern":
        mask = np.asarray(mask, dtype=bool).copy()
        np.fill_diagonal(mask, False)
        ii, jj = np.nonzero(mask)
        return cls(mask.shape[0], frozenset(zip(ii.tolist(), jj.tolist())))


def sample_covariance(data: DataMatrix, center: bool = False) -> CovarianceEstimate:
    """Gram matrix X'X/n; ``center`` subtracts column means first (divisor stays n)."""
    x = data.values
    if center:
        x = x - x.mean(axis=0)
    for j in range(x.shape[1]):
        col = data.values[:, j]
        if np.all(col == col[0]):
            raise ZeroVarianceColumn(j)
    sigma = x.T @ x / x.shape[0]
    # X'X is not guaranteed bit-symmetric through BLAS
    sigma = np.triu(sigma) + np.triu(sigma, 1).T
    return CovarianceEstimate.from_sigma(sigma, n=data.n)


def pattern_from_matrix(theta, tol: float = 0.0) -> SparsityPattern:
    theta = np.asarray(theta)
    if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
        raise ValidationError("matrix must be square")
    return SparsityPattern.from_mask(np.abs(theta) > tol)


def spectrum_diagnostic(m, rtol: float = 1e-10):
    """Extreme eigenvalues and the bounded-spectrum constant max(1/lmin, lmax)."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetric("matrix must be square")
    scale = max(np.abs(m).max(), 1.0)
    if np.abs(m - m.T).max() > rtol * scale:
        raise NotSymmetric("matrix is not symmetric")
    ev = np.linalg.eigvalsh((m + m.T) / 2)
    lmin, lmax = float(ev[0]), float(ev[-1])
    L = max(1.0 / lmin, lmax) if lmin > 0 else np.inf
    return lmin, lmax, L


def sup_norm(a) -> float:
    return float(np.abs(a).max())
