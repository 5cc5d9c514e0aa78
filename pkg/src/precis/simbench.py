"""Simulation models, benchmark estimators and the Monte-Carlo coverage harness."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields, replace

import networkx as nx
import numpy as np
from scipy.linalg import solve_triangular

from ._parallel import pmap
from .core import (CovarianceEstimate, DataMatrix, PrecisionEstimate, Provenance, SparsityPattern,
                   pattern_from_matrix, sample_covariance, spectrum_diagnostic)
from .dag import DagModel
from .errors import (AllFitsFailed, InvalidAlpha, NotConverged, NotPositiveDefinite, PrecisError,
                     SingularCovariance, TooManyFailures, ValidationError)
from .glasso import GlassoConfig, solve_graphical_lasso
from .inference import (confidence_intervals, debiased_estimate, plain_estimate, two_sided_z,
                        variance_estimates)
from .nodewise import PRESETS, nodewise_preset, universal_lambda

MODELS = ("model1", "model2_like", "model3")
METHODS = ("glasso", "glasso-weigh", "node-sqrt", "node-sqrt-tau", "node", "MLE", "oracle", "perfect")
FAILURE_LIMIT = 0.05
GRID_POINTS = 20
GRID_RANGE = (0.01, 10.0)
IPS_TOL = 1e-8
IPS_MAX_SWEEPS = 10_000

_M64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _M64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def replicate_seed(seed: int, r: int) -> int:
    return splitmix64(splitmix64(seed & _M64) ^ (r & _M64))


# ---- models ----------------------------------------------------------------

def _banded_block(size, a, b, c):
    t = np.eye(size) * a
    i = np.arange(size)
    t[i[:-1], i[:-1] + 1] = t[i[:-1] + 1, i[:-1]] = b
    t[i[:-2], i[:-2] + 2] = t[i[:-2] + 2, i[:-2]] = c
    return t


def _model2_like(p, seed, edge_prob=0.07):
    rng = np.random.default_rng(seed)
    for _ in range(100):
        upper = np.triu(rng.random((p, p)) < edge_prob, 1)
        w = rng.uniform(0.5, 1.0, (p, p)) * rng.choice([-1.0, 1.0], (p, p))
        t = np.where(upper, w, 0.0)
        t = t + t.T
        # diagonal dominance, then rescale so the implied covariance has unit diagonal
        np.fill_diagonal(t, np.abs(t).sum(axis=1) + 0.1)
        s = np.linalg.inv(t)
        d = np.sqrt(np.diag(s))
        t = t * np.outer(d, d)
        t = (t + t.T) / 2
        if np.linalg.eigvalsh(t)[0] > 0:
            return t
    raise NotPositiveDefinite("could not draw a positive definite model2_like instance")


def make_model(model, p, seed=0) -> PrecisionEstimate:
    """Population precision matrix of a simulation model (``seed`` only matters for model2_like)."""
    if p < 2:
        raise ValidationError("p must be at least 2")
    if model == "model1":
        if p % 2:
            raise ValidationError("model1 needs an even p (two equal blocks)")
        h = p // 2
        t = np.zeros((p, p))
        t[:h, :h] = _banded_block(h, 1.0, 0.5, 0.4)
        t[h:, h:] = _banded_block(h, 2.0, 1.0, 0.6)
    elif model == "model3":
        i = np.arange(p)
        t = 0.5 ** np.abs(i[:, None] - i[None, :])
    elif model == "model2_like":
        t = _model2_like(p, seed)
    else:
        raise ValidationError(f"unknown model {model!r}")
    lmin, _, _ = spectrum_diagnostic(t)
    if lmin <= 0:
        raise NotPositiveDefinite(f"{model} with p={p} is not positive definite")
    return PrecisionEstimate(t, Provenance.POPULATION)


def sample_gaussian(theta0, n, seed) -> DataMatrix:
    """n draws from N(0, theta0^-1); x = L'^-1 z with theta0 = L L'."""
    t = theta0.theta if isinstance(theta0, PrecisionEstimate) else np.asarray(theta0, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    try:
        L = np.linalg.cholesky(t)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("population precision is not positive definite") from exc
    z = rng.standard_normal((n, t.shape[0]))
    return DataMatrix(solve_triangular(L, z.T, lower=True, trans="T").T)


# ---- benchmark estimators ----------------------------------------------------

def mle_estimator(cov: CovarianceEstimate) -> PrecisionEstimate:
    S = np.asarray(cov.sigma_hat)
    if cov.n is not None and cov.n <= cov.p:
        raise SingularCovariance(f"sample covariance is singular (n={cov.n} <= p={cov.p})")
    if np.linalg.eigvalsh(S)[0] <= 1e-12 * np.abs(S).max():
        raise SingularCovariance("sample covariance is singular")
    t = np.linalg.inv(S)
    return PrecisionEstimate((t + t.T) / 2, Provenance.MLE)


def _ips_residual(sigma, S, keep):
    return float(np.abs(sigma - S)[keep].max())


def oracle_mle(cov: CovarianceEstimate, pattern: SparsityPattern, tol=IPS_TOL,
               max_sweeps=IPS_MAX_SWEEPS) -> PrecisionEstimate:
    """Likelihood maximisation with zeros fixed off ``pattern``, by iterative proportional scaling.

    Each step sets the clique block of the implied covariance to the sample
    block; the covariance is kept up to date with a low-rank correction.
    """
    S = np.asarray(cov.sigma_hat)
    p = S.shape[0]
    mask = pattern.mask() | pattern.mask().T
    keep = mask | np.eye(p, dtype=bool)
    if keep.all():
        t = mle_estimator(cov).theta
        return PrecisionEstimate(t, Provenance.ORACLE, info={"sweeps": 0, "residual": 0.0})
    g = nx.Graph()
    g.add_nodes_from(range(p))
    g.add_edges_from(zip(*np.nonzero(np.triu(mask, 1))))
    cliques = sorted(tuple(sorted(c)) for c in nx.find_cliques(g))
    theta = np.diag(1.0 / np.diag(S))
    sigma = np.diag(np.diag(S)).astype(float)
    res = _ips_residual(sigma, S, keep)
    sweeps = 0
    while res > tol and sweeps < max_sweeps:
        for c in cliques:
            c = list(c)
            s_cc = S[np.ix_(c, c)]
            cur = sigma[np.ix_(c, c)]
            try:
                cur_inv = np.linalg.inv(cur)
                theta[np.ix_(c, c)] += np.linalg.inv(s_cc) - cur_inv
            except np.linalg.LinAlgError as exc:
                raise SingularCovariance("clique block of the sample covariance is singular") from exc
            # replace the clique marginal, keep the conditional of the rest given the clique
            a = sigma[:, c] @ cur_inv
            sigma = sigma + a @ (s_cc - cur) @ a.T
            sigma = (sigma + sigma.T) / 2
        sweeps += 1
        # refresh against drift from repeated low-rank updates
        if sweeps % 20 == 0:
            sigma = np.linalg.inv(theta)
            sigma = (sigma + sigma.T) / 2
        res = _ips_residual(sigma, S, keep)
    sigma_exact = np.linalg.inv(theta)
    res = _ips_residual(sigma_exact, S, keep)
    if res > tol * 10:
        raise NotConverged(f"iterative proportional scaling stopped at residual {res:.3g}")
    theta = (theta + theta.T) / 2
    theta[~keep] = 0.0
    return PrecisionEstimate(theta, Provenance.ORACLE, info={"sweeps": sweeps, "residual": res})


def perfect_reference(theta0, n, alpha=0.05):
    """Interval lengths under the efficient asymptotic variance, and the nominal coverage in percent."""
    z = two_sided_z(alpha)
    return 2 * z * variance_estimates(theta0) / math.sqrt(n), 100 * (1 - alpha)


def validation_grid(n, p, points=GRID_POINTS, lo=GRID_RANGE[0], hi=GRID_RANGE[1]):
    base = universal_lambda(n, p)
    return base * np.logspace(math.log10(lo), math.log10(hi), points)


def validation_loss(theta, sigma_val):
    sign, logdet = np.linalg.slogdet(theta)
    if sign <= 0:
        return np.inf
    return float(np.sum(sigma_val * theta) - logdet)


def select_lambda_validation(train, validation, grid, variant="plain"):
    """Pick the glasso penalty minimising the validation negative log-likelihood.

    Fits run in ascending penalty order with warm starts; ties go to the
    smaller penalty. Returns (lambda, losses in grid order, estimate at lambda).
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid < 0):
        raise ValidationError("grid must be a nonempty set of non-negative penalties")
    cov_tr = train if isinstance(train, CovarianceEstimate) else sample_covariance(train)
    cov_va = validation if isinstance(validation, CovarianceEstimate) else sample_covariance(validation)
    losses = np.full(grid.size, np.inf)
    fits = [None] * grid.size
    state = None
    for k in np.argsort(grid, kind="stable"):
        try:
            est = solve_graphical_lasso(cov_tr, GlassoConfig(float(grid[k]), variant), warm_start=state)
        except PrecisError:
            continue
        state = est.info.get("state")
        fits[k] = est
        losses[k] = validation_loss(est.theta, np.asarray(cov_va.sigma_hat))
    if not np.isfinite(losses).any():
        raise AllFitsFailed("every glasso fit on the grid failed")
    best = min(range(grid.size), key=lambda k: (losses[k], grid[k]))
    return float(grid[best]), losses, fits[best]


# ---- experiment harness ------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "model1"
    p: int = 100
    n: int = 200
    replicates: int = 100
    alpha: float = 0.05
    methods: tuple = ("node-sqrt", "node-sqrt-tau", "node", "MLE", "perfect")
    seed: int = 0
    lambda_policy: str = "validation_grid"
    grid_points: int = GRID_POINTS
    model_seed: int = 0
    first_replicate: int = 0
    threads: int | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValidationError(f"unknown model {self.model!r}")
        if self.replicates < 1:
            raise ValidationError("replicates must be at least 1")
        if not 0 < self.alpha < 1:
            raise InvalidAlpha(f"alpha must lie in (0, 1), got {self.alpha}")
        methods = tuple(self.methods.split(",")) if isinstance(self.methods, str) else tuple(self.methods)
        bad = [m for m in methods if m not in METHODS]
        if bad:
            raise ValidationError(f"unknown methods {bad}")
        object.__setattr__(self, "methods", methods)
        if self.lambda_policy not in ("universal", "validation_grid"):
            raise ValidationError(f"unknown lambda policy {self.lambda_policy!r}")
        if self.grid_points < 1:
            raise ValidationError("grid_points must be positive")

    @classmethod
    def from_mapping(cls, d) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValidationError(f"unknown config keys {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k in ("p", "n", "replicates", "seed", "grid_points", "model_seed", "first_replicate", "threads"):
                kw[k] = None if v is None else int(v)
            elif k == "alpha":
                kw[k] = float(v)
            else:
                kw[k] = v
        return cls(**kw)


@dataclass(frozen=True)
class ReplicateRecord:
    """Per-replicate sums for one method; tables are built from these so splits merge exactly."""

    replicate: int
    method: str
    ok: bool
    cover_s0: int = 0
    cover_s0c: int = 0
    length_s0: float = 0.0
    length_s0c: float = 0.0
    lam: float = float("nan")


@dataclass(frozen=True)
class CoverageRow:
    method: str
    coverage_S0: float
    coverage_S0c: float
    length_S0: float
    length_S0c: float
    avg_lambda: float
    failures: int
    replicates: int


@dataclass(frozen=True)
class CoverageTable:
    config: ExperimentConfig
    records: tuple = field(repr=False)
    size_s0: int = 0
    size_s0c: int = 0

    def merge(self, other: "CoverageTable") -> "CoverageTable":
        recs = sorted(self.records + other.records, key=lambda r: (r.replicate, self.config.methods.index(r.method)))
        keys = [(r.replicate, r.method) for r in recs]
        if len(set(keys)) != len(keys):
            raise ValidationError("tables share replicates")
        return replace(self, records=tuple(recs))

    def rows(self):
        out = []
        for m in self.config.methods:
            recs = sorted((r for r in self.records if r.method == m), key=lambda r: r.replicate)
            good = [r for r in recs if r.ok]
            k = len(good)
            nan = float("nan")
            if k == 0:
                out.append(CoverageRow(m, nan, nan, nan, nan, nan, len(recs), len(recs)))
                continue
            c0 = sum(r.cover_s0 for r in good)
            c1 = sum(r.cover_s0c for r in good)
            l0 = math.fsum(r.length_s0 for r in good)
            l1 = math.fsum(r.length_s0c for r in good)
            lams = [r.lam for r in good if not math.isnan(r.lam)]
            if m == "perfect":
                cov0 = cov1 = 100 * (1 - self.config.alpha)
                cov1 = cov1 if self.size_s0c else nan
            else:
                cov0 = 100 * c0 / (k * self.size_s0)
                cov1 = 100 * c1 / (k * self.size_s0c) if self.size_s0c else nan
            out.append(CoverageRow(
                m,
                cov0,
                cov1,
                l0 / (k * self.size_s0),
                l1 / (k * self.size_s0c) if self.size_s0c else nan,
                math.fsum(lams) / len(lams) if lams else nan,
                len(recs) - k,
                len(recs),
            ))
        return out

    def row(self, method) -> CoverageRow:
        for r in self.rows():
            if r.method == method:
                return r
        raise KeyError(method)

    def to_csv(self, digits=None) -> str:
        def fmt(x):
            if isinstance(x, (int, np.integer)) or isinstance(x, str):
                return str(x)
            if math.isnan(x):
                return "nan"
            return f"{x:.{digits}f}" if digits is not None else f"{x:.17g}"

        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "coverage_S0", "coverage_S0c", "length_S0", "length_S0c", "avg_lambda",
                    "failures", "replicates"])
        for r in self.rows():
            w.writerow([fmt(getattr(r, f.name)) for f in fields(r)])
        return buf.getvalue()


def _method_estimate(method, cov, cov_val, cfg, theta0, pattern):
    """Return (DebiasedEstimate, lambda) for one estimation method."""
    n, p = cfg.n, cfg.p
    if method in PRESETS:
        lam = universal_lambda(n, p)
        est = nodewise_preset(cov, method, lam).as_precision()
        return debiased_estimate(est, cov), lam
    if method in ("glasso", "glasso-weigh"):
        variant = "plain" if method == "glasso" else "weighted"
        if cfg.lambda_policy == "validation_grid":
            lam, _, est = select_lambda_validation(cov, cov_val, validation_grid(n, p, cfg.grid_points), variant)
        else:
            lam = universal_lambda(n, p)
            est = solve_graphical_lasso(cov, GlassoConfig(lam, variant))
        return debiased_estimate(est, cov), lam
    if method == "MLE":
        return plain_estimate(mle_estimator(cov), n), float("nan")
    if method == "oracle":
        return plain_estimate(oracle_mle(cov, pattern), n), float("nan")
    raise ValidationError(f"unknown method {method!r}")


def _run_replicate(cfg: ExperimentConfig, theta0, r):
    t0 = theta0.theta
    p = cfg.p
    pattern = pattern_from_matrix(t0)
    s0 = pattern.mask(include_diagonal=True)
    s0c = ~s0
    rng = np.random.default_rng(replicate_seed(cfg.seed, r))
    x = sample_gaussian(theta0, cfg.n, rng)
    needs_val = cfg.lambda_policy == "validation_grid" and any(m.startswith("glasso") for m in cfg.methods)
    cov = sample_covariance(x)
    cov_val = sample_covariance(sample_gaussian(theta0, cfg.n, rng)) if needs_val else None
    out = []
    for m in cfg.methods:
        if m == "perfect":
            lengths, _ = perfect_reference(t0, cfg.n, cfg.alpha)
            # covers at the nominal rate by definition; the table reports that directly
            out.append(ReplicateRecord(r, m, True, 0, 0, math.fsum(lengths[s0]), math.fsum(lengths[s0c])))
            continue
        try:
            deb, lam = _method_estimate(m, cov, cov_val, cfg, theta0, pattern)
            grid = confidence_intervals(deb, cfg.alpha)
        except PrecisError:
            out.append(ReplicateRecord(r, m, False))
            continue
        hit = grid.covers(t0)
        width = grid.width()
        out.append(ReplicateRecord(r, m, True, int(hit[s0].sum()), int(hit[s0c].sum()),
                                   math.fsum(width[s0]), math.fsum(width[s0c]), lam))
    return out


def run_coverage_experiment(cfg: ExperimentConfig) -> CoverageTable:
    theta0 = make_model(cfg.model, cfg.p, cfg.model_seed)
    reps = range(cfg.first_replicate, cfg.first_replicate + cfg.replicates)
    per_rep = pmap(lambda r: _run_replicate(cfg, theta0, r), reps, cfg.threads)
    records = tuple(rec for recs in per_rep for rec in recs)
    s0 = pattern_from_matrix(theta0.theta).mask(include_diagonal=True)
    table = CoverageTable(cfg, records, int(s0.sum()), int((~s0).sum()))
    for row in table.rows():
        if row.failures > FAILURE_LIMIT * row.replicates:
            raise TooManyFailures(f"{row.method}: {row.failures} of {row.replicates} replicates failed")
    return table


def make_dag_instance(p, edge_prob=0.3, beta_range=(0.5, 1.0), omega=1.0, seed=0, edges=None) -> DagModel:
    """Random DAG under a random ordering; ``edges`` [(k, j, weight), ...] overrides the draw (ordering 0..p-1)."""
    if not 0 <= edge_prob <= 1:
        raise ValidationError("edge_prob must lie in [0, 1]")
    if not omega > 0:
        raise ValidationError("omega must be positive")
    b = np.zeros((p, p))
    if edges is not None:
        for k, j, w in edges:
            b[k, j] = w
        ordering = tuple(range(p))
        if not all(k < j for k, j, _ in edges):
            ordering = tuple(nx.topological_sort(nx.DiGraph([(k, j) for k, j, _ in edges])))
            ordering = ordering + tuple(sorted(set(range(p)) - set(ordering)))
    else:
        rng = np.random.default_rng(seed)
        ordering = tuple(int(k) for k in rng.permutation(p))
        lo, hi = (beta_range, beta_range) if np.isscalar(beta_range) else beta_range
        for a in range(p):
            for c in range(a + 1, p):
                if rng.random() < edge_prob:
                    w = rng.uniform(lo, hi) * rng.choice([-1.0, 1.0])
                    b[ordering[a], ordering[c]] = w
    model = DagModel(b, float(omega), ordering)
    if spectrum_diagnostic(model.theta0())[0] <= 0:
        raise NotPositiveDefinite("DAG precision is not positive definite")
    return model
