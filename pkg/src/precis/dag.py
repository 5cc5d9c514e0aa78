"""Equal-variance Gaussian DAGs: ordering search by an l0-penalised likelihood
and de-biased edge weights given the estimated ordering.

Convention: ``b[k, j]`` is the weight of the edge k -> j, so the structural
equations read X = X B + E and the precision matrix is (I - B)(I - B)' / omega^2.

With omega profiled out, minus twice the log-likelihood per observation of
a fit with node residual sums of squares RSS_j is p + p log(sum_j RSS_j / (n p)).
Orderings are compared by

    score = p log(sum_j RSS_j / (n p)) + lam^2 * (number of edges)

where, for a fixed ordering, each node picks its best subset of predecessors.
Since the penalty only depends on the total edge count, the minimisation is
exact: best-subset RSS per node and support size, then a min-plus
combination over nodes for every total edge count.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import pmap
from .core import CovarianceEstimate, DataMatrix
from .errors import NotPositiveDefinite, TooLargeForExhaustive, ValidationError
from .inference import two_sided_z
from .lasso import solve_lasso_gram
from .nodewise import fit_node_column, universal_lambda

EXHAUSTIVE_MAX_P = 9
EXHAUSTIVE_SUBSET_MAX = 10
GREEDY_STARTS = 16
MAX_PARENTS_FRACTION = 0.5


@dataclass(frozen=True)
class DagModel:
    b: np.ndarray
    omega: float
    ordering: tuple

    def __post_init__(self):
        b = np.array(self.b, dtype=float)
        p = b.shape[0]
        if b.shape != (p, p):
            raise ValidationError("edge-weight matrix must be square")
        if not self.omega > 0:
            raise ValidationError("omega must be positive")
        order = tuple(int(k) for k in self.ordering)
        if sorted(order) != list(range(p)):
            raise ValidationError("ordering must be a permutation of 0..p-1")
        if not is_acyclic_for(b, order):
            raise ValidationError("edge weights are not compatible with the ordering")
        b.setflags(write=False)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "ordering", order)

    @property
    def p(self):
        return self.b.shape[0]

    @property
    def parents(self):
        return tuple(frozenset(np.flatnonzero(self.b[:, j]).tolist()) for j in range(self.p))

    def theta0(self):
        a = np.eye(self.p) - self.b
        t = a @ a.T / self.omega**2
        return (t + t.T) / 2

    def sigma0(self):
        ainv = np.linalg.inv(np.eye(self.p) - self.b)
        s = self.omega**2 * ainv.T @ ainv
        return (s + s.T) / 2

    def sample(self, n, rng) -> DataMatrix:
        """Draw n rows from the structural equations, nodes in causal order."""
        e = rng.standard_normal((n, self.p)) * self.omega
        x = np.zeros((n, self.p))
        for j in self.ordering:
            x[:, j] = x @ self.b[:, j] + e[:, j]
        return DataMatrix(x)

    def consistent_with(self, ordering):
        return is_acyclic_for(self.b, ordering)


def is_acyclic_for(b, ordering):
    """True when every edge k -> j has k placed before j; the permuted matrix is then strictly upper triangular."""
    perm = np.asarray(ordering)
    bp = np.asarray(b)[np.ix_(perm, perm)]
    return not np.any(np.tril(bp) != 0)


@dataclass(frozen=True)
class OrderingScore:
    ordering: tuple
    b_hat: np.ndarray
    residual_variances: np.ndarray
    omega_hat_sq: float
    edge_count: int
    score: float


@dataclass(frozen=True)
class DagFit:
    ordering_hat: tuple
    predecessors: tuple
    beta_hat: tuple
    b_debiased: tuple
    sigma_kj: tuple
    omega_hat: np.ndarray
    n: int
    score: OrderingScore | None = field(default=None, repr=False)

    def intervals(self, alpha=0.05):
        """Rows (k, j, beta_hat, b_debiased, lower, upper) for every predecessor pair."""
        z = two_sided_z(alpha)
        rows = []
        for j in range(len(self.predecessors)):
            for m, k in enumerate(self.predecessors[j]):
                h = z * self.sigma_kj[j][m] / math.sqrt(self.n)
                b = self.b_debiased[j][m]
                rows.append((k, j, float(self.beta_hat[j][m]), float(b), float(b - h), float(b + h)))
        return rows

    def debiased_matrix(self):
        p = len(self.predecessors)
        out = np.zeros((p, p))
        for j, pred in enumerate(self.predecessors):
            out[list(pred), j] = self.b_debiased[j]
        return out


class _SubsetCache:
    """Best-subset RSS per (node, predecessor set), from the Gram matrix."""

    def __init__(self, S, n, max_parents):
        self.S = S
        self.n = n
        self.max_parents = max_parents
        self._store = {}

    def _rss(self, j, sub):
        S = self.S
        if not sub:
            return S[j, j]
        idx = list(sub)
        g = S[np.ix_(idx, idx)]
        c = S[idx, j]
        try:
            coef = np.linalg.solve(g, c)
        except np.linalg.LinAlgError:
            coef = np.linalg.lstsq(g, c, rcond=None)[0]
        return max(S[j, j] - c @ coef, 0.0)

    def best(self, j, pred):
        """Arrays (rss_by_size, support_by_size) for node j given its predecessors."""
        key = (j, pred)
        hit = self._store.get(key)
        if hit is not None:
            return hit
        pred_sorted = tuple(sorted(pred))
        kmax = min(len(pred_sorted), self.max_parents)
        rss = np.full(kmax + 1, np.inf)
        supp = [()] * (kmax + 1)
        if len(pred_sorted) <= EXHAUSTIVE_SUBSET_MAX:
            for size in range(kmax + 1):
                for sub in itertools.combinations(pred_sorted, size):
                    r = self._rss(j, sub)
                    if r < rss[size]:
                        rss[size], supp[size] = r, sub
        else:
            # forward stepwise beyond the exhaustive range
            cur = ()
            rss[0] = self._rss(j, cur)
            for size in range(1, kmax + 1):
                best_r, best_k = np.inf, None
                for k in pred_sorted:
                    if k in cur:
                        continue
                    r = self._rss(j, tuple(sorted(cur + (k,))))
                    if r < best_r:
                        best_r, best_k = r, k
                cur = tuple(sorted(cur + (best_k,)))
                rss[size], supp[size] = best_r, cur
        out = (rss * self.n, supp)
        self._store[key] = out
        return out


def _max_parents(n, p):
    return max(1, int(MAX_PARENTS_FRACTION * n / math.log(max(p, 2))))


def _score_with_cache(cache: _SubsetCache, pi, lam, n, p):
    pos = {j: t for t, j in enumerate(pi)}
    per_node = []
    for j in range(p):
        per_node.append(cache.best(j, frozenset(pi[:pos[j]])))
    # min-plus combination over nodes in index order: total[s] = min sum of RSS with s edges
    total = np.zeros(1)
    choice = []
    for rss, _ in per_node:
        m = total.shape[0] + rss.shape[0] - 1
        new = np.full(m, np.inf)
        arg = np.zeros(m, dtype=int)
        for s_j, r in enumerate(rss):
            cand = total + r
            seg = new[s_j:s_j + total.shape[0]]
            better = cand < seg
            seg[better] = cand[better]
            arg[s_j:s_j + total.shape[0]][better] = s_j
        choice.append(arg)
        total = new
    with np.errstate(divide="ignore"):
        scores = p * np.log(total / (n * p)) + lam**2 * np.arange(total.shape[0])
    s_best = int(np.argmin(scores))
    # backtrack the per-node support sizes
    sizes = [0] * p
    s = s_best
    for j in range(p - 1, -1, -1):
        sizes[j] = int(choice[j][s])
        s -= sizes[j]
    return scores[s_best], sizes, per_node


def score_ordering(data: DataMatrix, pi, lam=None, _cache=None) -> OrderingScore:
    n, p = data.n, data.p
    pi = tuple(int(k) for k in pi)
    if sorted(pi) != list(range(p)):
        raise ValidationError("ordering must be a permutation of 0..p-1")
    lam = universal_lambda(n, p) if lam is None else float(lam)
    if lam < 0:
        raise ValidationError("lambda must be non-negative")
    cache = _cache or _SubsetCache(np.asarray(data.values.T @ data.values / n), n, _max_parents(n, p))
    score, sizes, per_node = _score_with_cache(cache, pi, lam, n, p)
    S = cache.S
    b_hat = np.zeros((p, p))
    rss = np.zeros(p)
    for j in range(p):
        r, supp = per_node[j]
        sub = list(supp[sizes[j]])
        rss[j] = r[sizes[j]]
        if sub:
            b_hat[sub, j] = np.linalg.lstsq(S[np.ix_(sub, sub)], S[sub, j], rcond=None)[0]
    return OrderingScore(pi, b_hat, rss / n, float(rss.sum() / (n * p)), int(sum(sizes)), float(score))


def search_ordering(data: DataMatrix, lam=None, mode="exhaustive", seed=0) -> OrderingScore:
    n, p = data.n, data.p
    lam = universal_lambda(n, p) if lam is None else float(lam)
    cache = _SubsetCache(np.asarray(data.values.T @ data.values / n), n, _max_parents(n, p))

    def score(pi):
        return _score_with_cache(cache, pi, lam, n, p)[0]

    if mode == "exhaustive":
        if p > EXHAUSTIVE_MAX_P:
            raise TooLargeForExhaustive(f"exhaustive search is limited to p <= {EXHAUSTIVE_MAX_P}, got p={p}")
        best, best_pi = np.inf, None
        for pi in itertools.permutations(range(p)):
            s = score(pi)
            if s < best:
                best, best_pi = s, pi
    elif mode == "greedy":
        rng = np.random.default_rng(seed)
        best, best_pi = np.inf, None
        for _ in range(GREEDY_STARTS):
            pi = tuple(int(k) for k in rng.permutation(p))
            cur = score(pi)
            while True:
                step, step_pi = cur, None
                for t in range(p - 1):
                    cand = list(pi)
                    cand[t], cand[t + 1] = cand[t + 1], cand[t]
                    cand = tuple(cand)
                    s = score(cand)
                    if s < step:
                        step, step_pi = s, cand
                if step_pi is None:
                    break
                pi, cur = step_pi, step
            if cur < best or (cur == best and pi < best_pi):
                best, best_pi = cur, pi
    else:
        raise ValidationError(f"unknown search mode {mode!r}")
    return score_ordering(data, best_pi, lam, _cache=cache)


def _predecessors(ordering, j):
    ordering = tuple(ordering)
    return tuple(ordering[:ordering.index(j)])


def predecessor_regression(data: DataMatrix, ordering, j, lam_j=None):
    """Lasso of X_j on its predecessors: ||X_j - X_P b||^2/n + 2 lam_j ||b||_1."""
    pred = list(_predecessors(ordering, j))
    if not pred:
        return np.zeros(0)
    n = data.n
    lam_j = universal_lambda(n, data.p) if lam_j is None else float(lam_j)
    x = data.values
    xp = x[:, pred]
    G = xp.T @ xp / n
    G = (G + G.T) / 2
    c = xp.T @ x[:, j] / n
    return solve_lasso_gram(G, c, lam_j).coefficients


def surrogate_inverse(cov_p: CovarianceEstimate, lam):
    """Nodewise Lasso inverse of a predecessor Gram matrix (exact for one predecessor or lam = 0)."""
    S = np.asarray(cov_p.sigma_hat)
    q = S.shape[0]
    if q == 1:
        return np.array([[1.0 / S[0, 0]]])
    # fit_node_column's lasso objective is ||r||^2/n + lam ||g||_1, hence 2 * lam here
    fits = [fit_node_column(cov_p, k, 2 * lam, regressor="lasso", penalty_weights="unit") for k in range(q)]
    return np.column_stack([f.column("tau_tilde") for f in fits])


def debias_dag_column(data: DataMatrix, ordering, j, lam_j=None, lam_kj=None):
    """De-biased predecessor weights of node j and their standard deviations.

    Returns (predecessors, beta_hat, b_hat, sigma_hat, omega_hat).
    """
    pred = list(_predecessors(ordering, j))
    n, p = data.n, data.p
    x = data.values
    if not pred:
        r = x[:, j]
        return (), np.zeros(0), np.zeros(0), np.zeros(0), float(np.sqrt(r @ r / n))
    lam_kj = universal_lambda(n, p) if lam_kj is None else float(lam_kj)
    beta = predecessor_regression(data, ordering, j, lam_j)
    xp = x[:, pred]
    res = x[:, j] - xp @ beta
    omega_sq = float(res @ res) / n
    G = xp.T @ xp / n
    G = (G + G.T) / 2
    theta = surrogate_inverse(CovarianceEstimate.from_sigma(G, n=n), lam_kj)
    b = beta + theta.T @ (xp.T @ res) / n
    d = np.diag(theta)
    if not np.all(d > 0):
        raise NotPositiveDefinite(f"node {j}: surrogate inverse has a non-positive diagonal")
    sigma = np.sqrt(omega_sq * d)
    return tuple(pred), beta, b, sigma, math.sqrt(omega_sq)


def fit_dag(data: DataMatrix, lam=None, mode="exhaustive", known_ordering=None,
            lam_j=None, lam_kj=None, seed=0, threads=None) -> DagFit:
    """Search the ordering (unless ``known_ordering`` is given), then de-bias every column."""
    p = data.p
    score = None
    if known_ordering is not None:
        ordering = tuple(int(k) for k in known_ordering)
        if sorted(ordering) != list(range(p)):
            raise ValidationError("known ordering must be a permutation of 0..p-1")
    else:
        score = search_ordering(data, lam, mode, seed)
        ordering = score.ordering
    cols = pmap(lambda j: debias_dag_column(data, ordering, j, lam_j, lam_kj), range(p), threads)
    return DagFit(
        ordering_hat=ordering,
        predecessors=tuple(c[0] for c in cols),
        beta_hat=tuple(c[1] for c in cols),
        b_debiased=tuple(c[2] for c in cols),
        sigma_kj=tuple(c[3] for c in cols),
        omega_hat=np.array([c[4] for c in cols]),
        n=data.n,
        score=score,
    )

