"""Exact and Monte Carlo oracles for layer-wise Horvitz-Thompson estimation.

Everything here works on a small dense view of the problem: a set of target
nodes ``i``, the candidate nodes ``j`` that may be sampled, and the matrix
``A[i, j] = alpha_ij`` (zero where ``j`` is not an in-neighbour of ``i``).
Two sampling designs are supported:

``categorical``
    ``k`` independent draws from ``q``; estimate
    ``(1/k) * sum_s alpha_{i j_s} / q_{j_s} * h_{j_s}``.
``poisson``
    node ``j`` is included independently with probability ``p_j``; estimate
    ``sum_{j included} alpha_ij / p_j * h_j`` (no ``1/k`` factor).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .graph import EdgeCoefficients, gather_rows

__all__ = [
    "NodeDistribution",
    "VarianceEstimate",
    "OptimalDistribution",
    "ENUMERATION_LIMIT",
    "dense_alpha",
    "exact_mu",
    "ht_estimate",
    "ht_estimate_poisson",
    "enumerate_outcomes",
    "exact_expectation",
    "estimator_variance",
    "monte_carlo_variance",
    "poisson_variance_closed_form",
    "optimal_distribution",
]

ENUMERATION_LIMIT = 12
_MODES = ("categorical", "poisson")


@dataclass(frozen=True, eq=False)
class NodeDistribution:
    """Probabilities over ``candidate_ids``.

    In ``categorical`` mode the probabilities sum to one; in ``poisson`` mode
    each entry is an independent inclusion probability in ``[0, 1]``.
    """

    candidate_ids: np.ndarray
    probs: np.ndarray
    mode: str = "categorical"

    def __post_init__(self):
        ids = np.asarray(self.candidate_ids, dtype=np.int64)
        p = np.asarray(self.probs, dtype=np.float64)
        if ids.shape != p.shape or ids.ndim != 1:
            raise ValueError("candidate_ids and probs must be aligned 1-d arrays")
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("probabilities must be finite and non-negative")
        if self.mode == "categorical" and abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"categorical probabilities sum to {p.sum()!r}, not 1")
        if self.mode == "poisson" and np.any(p > 1.0):
            raise ValueError("inclusion probabilities must lie in [0, 1]")
        object.__setattr__(self, "candidate_ids", ids)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, candidate_ids):
        ids = np.asarray(candidate_ids, dtype=np.int64)
        return cls(ids, np.full(ids.size, 1.0 / ids.size))

    def prob_of(self, node_ids):
        lookup = dict(zip(self.candidate_ids.tolist(), self.probs.tolist()))
        try:
            return np.array([lookup[j] for j in np.ravel(node_ids).tolist()], dtype=np.float64)
        except KeyError as exc:
            raise KeyError(f"node {exc.args[0]} is not a candidate") from None


@dataclass(frozen=True)
class VarianceEstimate:
    per_target: np.ndarray
    stderr: np.ndarray
    total: float
    total_stderr: float
    n_trials: int


@dataclass(frozen=True, eq=False)
class OptimalDistribution:
    candidate_ids: np.ndarray
    closed_form_scores: np.ndarray
    minimizer: NodeDistribution
    variance: float
    iterations: int


def _targets(targets):
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if t.size == 0:
        raise ValueError("need at least one target")
    return t


def dense_alpha(targets, alpha: EdgeCoefficients, candidate_ids=None):
    """Dense ``(len(targets), len(candidates))`` coefficient matrix.

    Without ``candidate_ids`` the candidates are the union of the targets'
    in-neighbourhoods, sorted.  Neighbours outside an explicit candidate set
    are dropped (such an estimator is biased, which the oracles will show).
    """
    t = _targets(targets)
    local, slots = gather_rows(alpha.graph, t)
    nbrs = alpha.graph.targets[slots]
    if candidate_ids is None:
        candidate_ids = np.unique(nbrs)
    cand = np.asarray(candidate_ids, dtype=np.int64)
    order = np.argsort(cand, kind="stable")
    pos = np.searchsorted(cand[order], nbrs)
    pos = np.clip(pos, 0, max(cand.size - 1, 0))
    ok = cand[order][pos] == nbrs if cand.size else np.zeros(nbrs.size, bool)
    A = np.zeros((t.size, cand.size))
    A[local[ok], order[pos[ok]]] = alpha.values[slots[ok]]
    return A, cand


def exact_mu(targets, alpha: EdgeCoefficients, h):
    """Full aggregation ``mu_i = sum_{j in N_i} alpha_ij h_j`` for each target."""
    t = _targets(targets)
    h = np.asarray(h, dtype=np.float64)
    g = alpha.graph
    empty = t[g.degrees[t] == 0]
    if empty.size:
        raise ValueError(f"target {int(empty[0])} has an empty neighbourhood")
    local, slots = gather_rows(g, t)
    out = np.zeros((t.size, h.shape[1]))
    np.add.at(out, local, alpha.values[slots, None] * h[g.targets[slots]])
    return out


def ht_estimate(targets, sampled, q, alpha: EdgeCoefficients, h, k=None):
    """Categorical Horvitz-Thompson estimate from the draws ``sampled``.

    ``q`` is a :class:`NodeDistribution` or a mapping node -> probability.
    Draws that are not neighbours of a target contribute zero to it.
    """
    t = _targets(targets)
    sampled = np.asarray(sampled, dtype=np.int64).ravel()
    k = sampled.size if k is None else int(k)
    if k <= 0:
        raise ValueError("k must be positive")
    if isinstance(q, NodeDistribution):
        qs = q.prob_of(sampled)
    else:
        qs = np.array([q[int(j)] for j in sampled], dtype=np.float64)
    if np.any(qs <= 0):
        raise ZeroDivisionError(f"sampled node {int(sampled[np.argmax(qs <= 0)])} has probability 0")
    cand, counts = np.unique(sampled, return_counts=True)
    A, _ = dense_alpha(t, alpha, cand)
    qc = _first_prob(sampled, qs, cand)
    w = counts / (k * qc)
    h = np.asarray(h, dtype=np.float64)
    return (A * w) @ h[cand]


def _first_prob(sampled, qs, cand):
    lookup = {}
    for j, qj in zip(sampled.tolist(), qs.tolist()):
        lookup.setdefault(j, qj)
    return np.array([lookup[j] for j in cand.tolist()])


def ht_estimate_poisson(targets, included, p, alpha: EdgeCoefficients, h):
    """Poisson Horvitz-Thompson estimate ``sum_{j in included} alpha_ij / p_j h_j``."""
    t = _targets(targets)
    inc = np.unique(np.asarray(included, dtype=np.int64))
    if isinstance(p, NodeDistribution):
        pj = p.prob_of(inc)
    else:
        pj = np.array([p[int(j)] for j in inc], dtype=np.float64)
    if np.any(pj <= 0):
        raise ZeroDivisionError("included node with inclusion probability 0")
    A, _ = dense_alpha(t, alpha, inc)
    h = np.asarray(h, dtype=np.float64)
    return (A / pj) @ h[inc]


def enumerate_outcomes(q: NodeDistribution, k=1):
    """Every outcome of the sampling design with its probability.

    Categorical: yields ``(prob, draws)`` for all ``n**k`` ordered k-tuples.
    Poisson: yields ``(prob, included_ids)`` for all ``2**n`` patterns.
    """
    n = q.candidate_ids.size
    if n > ENUMERATION_LIMIT:
        raise ValueError(f"exact enumeration limited to {ENUMERATION_LIMIT} candidates, got {n}")
    if q.mode == "categorical":
        for combo in itertools.product(range(n), repeat=k):
            idx = np.array(combo, dtype=np.int64)
            yield float(np.prod(q.probs[idx])), q.candidate_ids[idx]
    else:
        for bits in itertools.product((False, True), repeat=n):
            mask = np.array(bits, dtype=bool)
            prob = float(np.prod(np.where(mask, q.probs, 1.0 - q.probs)))
            yield prob, q.candidate_ids[mask]


def _outcome_weights(q: NodeDistribution, k):
    """Matrix of per-outcome node weights and outcome probabilities.

    Row ``o`` holds ``w_oj`` so that the estimate is ``sum_j A_ij w_oj h_j``.
    """
    n = q.candidate_ids.size
    if n > ENUMERATION_LIMIT:
        raise ValueError(f"exact enumeration limited to {ENUMERATION_LIMIT} candidates, got {n}")
    if q.mode == "categorical":
        combos = np.array(list(itertools.product(range(n), repeat=k)), dtype=np.int64).reshape(-1, k)
        counts = np.zeros((combos.shape[0], n))
        for s in range(k):
            np.add.at(counts, (np.arange(combos.shape[0]), combos[:, s]), 1.0)
        probs = np.prod(q.probs[combos], axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(counts > 0, counts / (k * q.probs), 0.0)
        return w, probs
    masks = np.array(list(itertools.product((0.0, 1.0), repeat=n))).reshape(-1, n)
    probs = np.prod(np.where(masks > 0, q.probs, 1.0 - q.probs), axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(masks > 0, masks / q.probs, 0.0)
    return w, probs


def exact_expectation(targets, alpha: EdgeCoefficients, h, q: NodeDistribution, k=1):
    """Expected estimate over every outcome, weighted by outcome probability."""
    A, _ = dense_alpha(targets, alpha, q.candidate_ids)
    W, probs = _outcome_weights(q, k)
    h = np.asarray(h, dtype=np.float64)[q.candidate_ids]
    mean_w = probs @ W
    return (A * mean_w) @ h


def estimator_variance(targets, alpha, h, q: NodeDistribution, k=1, mode="exact",
                       n_trials=100_000, seed=0):
    """Per-target ``E ||mu_hat_i - mu_i||^2`` of the k-draw (or Poisson) estimator.

    ``mode="exact"`` enumerates outcomes (at most 12 candidates);
    ``mode="monte-carlo"`` averages ``n_trials`` seeded trials.
    """
    if mode in ("exact", "exact-enumeration"):
        mu = exact_mu(targets, alpha, h)
        A, _ = dense_alpha(targets, alpha, q.candidate_ids)
        W, probs = _outcome_weights(q, k)
        err = _errors(A, W, np.asarray(h, float)[q.candidate_ids], mu)
        return probs @ err
    if mode in ("monte-carlo", "mc"):
        return monte_carlo_variance(targets, alpha, h, q, k, n_trials=n_trials, seed=seed).per_target
    raise ValueError(f"unknown variance mode {mode!r}")


def _errors(A, W, hc, mu):
    """Squared error per (outcome, target)."""
    t, n = A.shape
    d = hc.shape[1]
    B = (A[:, :, None] * hc[None, :, :]).transpose(1, 0, 2).reshape(n, t * d)
    est = (W @ B).reshape(W.shape[0], t, d)
    return np.sum((est - mu[None]) ** 2, axis=2)


def _draw_weights(q: NodeDistribution, k, size, rng):
    if q.mode == "categorical":
        counts = rng.multinomial(k, q.probs, size=size).astype(np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(counts > 0, counts / (k * q.probs), 0.0)
    inc = rng.random((size, q.probs.size)) <= q.probs
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(inc, 1.0 / q.probs, 0.0)


def monte_carlo_variance(targets, alpha, h, q: NodeDistribution, k=1, *, n_trials=100_000,
                         seed=0, chunk=2000, mu=None) -> VarianceEstimate:
    """Monte Carlo estimate of the estimator variance with standard errors.

    Trials are processed in chunks; chunk ``c`` draws from
    ``default_rng([seed, c])`` so any partition of chunks over workers
    reproduces the same numbers.
    """
    if mu is None:
        mu = exact_mu(targets, alpha, h)
    A, _ = dense_alpha(targets, alpha, q.candidate_ids)
    hc = np.asarray(h, float)[q.candidate_ids]
    sums = np.zeros(A.shape[0])
    sqs = np.zeros(A.shape[0])
    tot = tot_sq = 0.0
    done = 0
    c = 0
    while done < n_trials:
        m = min(chunk, n_trials - done)
        rng = np.random.default_rng([seed, c])
        err = _errors(A, _draw_weights(q, k, m, rng), hc, mu)
        sums += err.sum(0)
        sqs += (err ** 2).sum(0)
        row = err.sum(1)
        tot += row.sum()
        tot_sq += (row ** 2).sum()
        done += m
        c += 1
    mean = sums / n_trials
    var = np.maximum(sqs / n_trials - mean ** 2, 0.0)
    tmean = tot / n_trials
    tvar = max(tot_sq / n_trials - tmean ** 2, 0.0)
    return VarianceEstimate(
        per_target=mean,
        stderr=np.sqrt(var / n_trials),
        total=float(tmean),
        total_stderr=float(np.sqrt(tvar / n_trials)),
        n_trials=int(n_trials),
    )


def poisson_variance_closed_form(targets, alpha, h, p: NodeDistribution):
    """``sum_j alpha_ij^2 ||h_j||^2 (1 - p_j) / p_j`` per target (independent inclusion)."""
    A, _ = dense_alpha(targets, alpha, p.candidate_ids)
    hn = np.sum(np.asarray(h, float)[p.candidate_ids] ** 2, axis=1)
    with np.errstate(divide="ignore"):
        f = np.where(p.probs > 0, (1.0 - p.probs) / p.probs, np.inf)
    contrib = A ** 2 * hn * f
    contrib[A == 0] = 0.0
    return contrib.sum(1)


def _closed_form_scores(A, cand, targets, alpha, hn):
    # sqrt(sum_i (alpha_ij |h_j| / sum_{s in N_i} alpha_sj |h_j|)^2), read literally
    g = alpha.graph
    t = _targets(targets)
    scores = np.zeros(cand.size)
    for r, i in enumerate(t):
        nbrs = g.neighbors(int(i))
        for c, j in enumerate(cand):
            if A[r, c] == 0:
                continue
            denom = 0.0
            for s in nbrs:
                try:
                    denom += alpha.values[g.slot(int(s), int(j))]
                except KeyError:
                    pass
            denom *= hn[c]
            if denom > 0:
                scores[c] += (A[r, c] * hn[c] / denom) ** 2
    return np.sqrt(scores)


def optimal_distribution(targets, alpha: EdgeCoefficients, h, *, max_iter=20_000, tol=1e-13):
    """Variance-minimising categorical distribution over the targets' neighbours.

    Minimises the summed single-draw variance over the simplex by
    exponentiated-gradient (mirror) descent.  The closed-form per-node scores,
    taken term by term, are returned alongside as ``closed_form_scores``.
    """
    t = _targets(targets)
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise ValueError("embeddings must be finite")
    A, cand = dense_alpha(t, alpha)
    hn = np.linalg.norm(h[cand], axis=1)
    # a_j = sum_i alpha_ij^2 ||h_j||^2 ; single-draw variance is sum_j a_j / q_j - sum_i ||mu_i||^2
    a = np.sum(A ** 2, axis=0) * hn ** 2
    if not np.any(a > 0):
        raise ValueError("all importance scores are zero")
    closed = _closed_form_scores(A, cand, t, alpha, hn)

    mu = A @ h[cand]
    mu_sq = float(np.sum(mu ** 2))
    q = np.full(cand.size, 1.0 / cand.size)
    it = 0
    for it in range(1, max_iter + 1):
        # the gradient of the variance is mu_sq - a_j / q_j^2; the constant
        # part vanishes after renormalisation
        g = a / q ** 2
        logq = np.log(q) + 0.5 * g / g.max()
        new = np.exp(logq - logq.max())
        new /= new.sum()
        if np.max(np.abs(new - q)) < tol:
            q = new
            break
        q = new
    var = float(np.sum(a[q > 0] / q[q > 0]) - mu_sq)
    return OptimalDistribution(cand, closed, NodeDistribution(cand, q / q.sum()), var, it)
