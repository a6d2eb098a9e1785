"""Static layer-wise samplers: LADIES, SKETCH, PLADIES and a uniform baseline.

A sampler turns a set of destination nodes into a :class:`SampledBlock`, the
bipartite graph between those nodes and the selected source nodes of the
layer below.  Multi-layer pipelines run top-down from the seed batch and
return blocks ordered from the input layer to the output layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import EdgeCoefficients, gather_rows

__all__ = [
    "LayerProbabilities",
    "ThinningConfig",
    "SampledBlock",
    "frontier",
    "ladies_probs",
    "uniform_probs",
    "reweight_edges",
    "iterative_thinning",
    "poisson_inclusion_probs",
    "poisson_sample_with_skips",
    "ladies_sample",
    "full_block",
    "ladies_sample_pipeline",
]


@dataclass(frozen=True, eq=False)
class LayerProbabilities:
    candidate_ids: np.ndarray
    pi: np.ndarray
    p: np.ndarray
    mode: str = "categorical"

    def __post_init__(self):
        if np.any(self.pi < 0):
            raise ValueError("importance scores must be non-negative")
        if self.mode == "categorical" and abs(float(np.sum(self.p)) - 1.0) > 1e-12:
            raise ValueError("categorical probabilities must sum to 1")
        if self.mode == "poisson" and (np.any(self.p < 0) or np.any(self.p > 1)):
            raise ValueError("inclusion probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class ThinningConfig:
    """Stopping rule of the thinning loop.

    ``rule="literal"`` rescales by ``k / S``.  ``"saturation-aware"`` rescales
    only the unclipped mass, ``(k - n_sat) / (S - n_sat)``; it is the same
    update whenever nothing is clipped but does not stall when most entries
    sit at 1.
    """

    epsilon: float = 0.99
    n_ref: int = 20
    rule: str = "saturation-aware"

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.n_ref < 1:
            raise ValueError("n_ref must be >= 1")
        if self.rule not in ("literal", "saturation-aware"):
            raise ValueError(f"unknown thinning rule {self.rule!r}")


@dataclass(eq=False)
class SampledBlock:
    """One sampled layer.

    Edge arrays are aligned: edge ``e`` connects ``dst_ids[edge_dst[e]]`` to
    ``src_ids[edge_src[e]]`` through graph slot ``edge_slot[e]`` with raw
    coefficient ``alpha[e]``, reweighted coefficient ``alpha_tilde[e]`` and
    source inclusion probability ``q_used[e]``.  ``edge_q`` carries the
    bandit's per-edge probability ``q_ij`` when a bandit produced the block.
    """

    layer_index: int
    dst_ids: np.ndarray
    src_ids: np.ndarray
    edge_dst: np.ndarray
    edge_src: np.ndarray
    edge_slot: np.ndarray
    alpha: np.ndarray
    alpha_tilde: np.ndarray
    q_used: np.ndarray
    src_prob: np.ndarray
    src_forced: np.ndarray
    edge_q: np.ndarray | None = None
    all_included: bool = False
    scale: float = 1.0
    budget: int = 0
    expected_size: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def num_dst(self):
        return int(self.dst_ids.size)

    @property
    def num_src(self):
        return int(self.src_ids.size)

    @property
    def num_edges(self):
        return int(self.edge_dst.size)

    @property
    def dst_in_src(self):
        """Position of every destination node inside ``src_ids``."""
        pos = np.searchsorted(self.src_ids, self.dst_ids)
        pos = np.clip(pos, 0, self.src_ids.size - 1)
        if not np.array_equal(self.src_ids[pos], self.dst_ids):
            raise ValueError("destination nodes are not all present among sources")
        return pos

    def sampled_neighbors(self, local_dst):
        """Global ids of ``S_i`` for the destination at local index ``local_dst``."""
        return self.src_ids[self.edge_src[self.edge_dst == local_dst]]

    def check(self):
        """Raise if a block invariant is violated."""
        if np.any(np.bincount(self.edge_dst, minlength=self.num_dst) == 0):
            raise AssertionError("a destination node has no surviving edge")
        if np.any(np.bincount(self.edge_src, minlength=self.num_src) == 0):
            raise AssertionError("a source node has no edge")
        if not np.all(np.isfinite(self.alpha_tilde)) or np.any(self.alpha_tilde < 0):
            raise AssertionError("reweighted coefficients must be finite and >= 0")
        if np.any(self.q_used <= 0) or np.any(self.q_used > 1):
            raise AssertionError("q_used must lie in (0, 1]")


def frontier(dst_ids, alpha: EdgeCoefficients):
    """Candidate frontier of ``dst_ids`` with the edges that reach it.

    Returns ``(cand, local_dst, slots, cand_pos)``: sorted candidate ids, and
    per edge its destination (local), graph slot and candidate index.
    """
    dst_ids = np.asarray(dst_ids, dtype=np.int64)
    if dst_ids.size == 0:
        raise ValueError("dst_ids must be non-empty")
    local, slots = gather_rows(alpha.graph, dst_ids)
    nbrs = alpha.graph.targets[slots]
    cand, cand_pos = np.unique(nbrs, return_inverse=True)
    if cand.size == 0:
        raise ValueError("empty candidate frontier")
    return cand, local, slots, cand_pos.ravel()


def ladies_probs(dst_ids, alpha: EdgeCoefficients, variant="LADIES") -> LayerProbabilities:
    """Layer importance ``pi_j = sum_i alpha_ij^2`` (LADIES) or its square root (SKETCH)."""
    cand, _, slots, pos = frontier(dst_ids, alpha)
    pi = np.bincount(pos, weights=alpha.values[slots] ** 2, minlength=cand.size)
    variant = variant.upper()
    if variant == "SKETCH":
        pi = np.sqrt(pi)
    elif variant not in ("LADIES", "PLADIES"):
        raise ValueError(f"unknown variant {variant!r}")
    total = pi.sum()
    if total <= 0:
        raise ValueError("all importance scores are zero")
    return LayerProbabilities(cand, pi, pi / total)


def uniform_probs(dst_ids, alpha: EdgeCoefficients) -> LayerProbabilities:
    cand, *_ = frontier(dst_ids, alpha)
    pi = np.ones(cand.size)
    return LayerProbabilities(cand, pi, pi / cand.size)


def reweight_edges(edge_dst, alpha, p, scheme="LADIES-rownorm", *, c=None, num_dst=None):
    """Reweight surviving edges by ``alpha_ij / p_j`` and normalise per ``scheme``.

    ``LADIES-rownorm``: rows sum to one.  ``LADIES-degnorm``: divide by the
    per-edge normaliser ``c`` (``1/alpha`` when omitted).
    ``SKETCH-samplecount``: divide by the number of sampled neighbours of the
    destination.  ``HT``: no normalisation (Poisson Horvitz-Thompson weight).
    """
    edge_dst = np.asarray(edge_dst, dtype=np.int64)
    alpha = np.asarray(alpha, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0):
        raise ZeroDivisionError("surviving edge with source probability 0")
    base = alpha / p
    if num_dst is None:
        num_dst = int(edge_dst.max()) + 1 if edge_dst.size else 0
    key = scheme.upper()
    if key == "LADIES-ROWNORM":
        rowsum = np.bincount(edge_dst, weights=base, minlength=num_dst)
        return base / rowsum[edge_dst]
    if key == "LADIES-DEGNORM":
        c = 1.0 / alpha if c is None else np.asarray(c, dtype=np.float64)
        return base / c
    if key == "SKETCH-SAMPLECOUNT":
        ns = np.bincount(edge_dst, minlength=num_dst).astype(np.float64)
        return base / ns[edge_dst]
    if key == "HT":
        return base
    raise ValueError(f"unknown reweighting scheme {scheme!r}")


def iterative_thinning(p, k, cfg: ThinningConfig = ThinningConfig()) -> float:
    """Scale factor ``c`` so that ``sum_j min(p_j c, 1)`` approaches ``k``."""
    p = np.asarray(p, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if np.any(p < 0):
        raise ValueError("probabilities must be non-negative")
    if p.sum() <= 0:
        raise ValueError("probabilities sum to zero")
    c = 1.0
    for _ in range(cfg.n_ref):
        pc = p * c
        s = np.minimum(pc, 1.0).sum()
        if min(s, k) / max(s, k) >= cfg.epsilon:
            break
        n_sat = np.count_nonzero(pc >= 1.0)
        if cfg.rule == "saturation-aware" and n_sat < k and s > n_sat:
            c = c * (k - n_sat) / (s - n_sat)
        else:
            c = c * k / s
    return c


def poisson_inclusion_probs(cand, scores, forced, k, cfg: ThinningConfig = ThinningConfig()):
    """Final inclusion probabilities for Poisson sampling with skip connections.

    Forced (seed) nodes get probability 1 and are kept out of the budget.
    When the remaining candidates number at most ``k`` every node is taken.
    Returns ``(p, all_included, c)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    forced = np.asarray(forced, dtype=bool)
    free = ~forced
    if int(free.sum()) <= k:
        return np.ones(cand.size), True, 1.0
    c = iterative_thinning(scores[free], k, cfg)
    p = np.ones(cand.size)
    p[free] = np.minimum(scores[free] * c, 1.0)
    return p, False, c


def _block_from_selection(layer_index, dst_ids, cand, local, slots, cand_pos, selected,
                          cand_prob, forced, alpha: EdgeCoefficients, scheme, edge_q_all=None):
    keep = selected[cand_pos]
    src_ids = cand[selected]
    src_rank = np.cumsum(selected) - 1
    edge_dst = local[keep]
    edge_src = src_rank[cand_pos[keep]]
    edge_slot = slots[keep]
    a = alpha.values[edge_slot]
    q_used = cand_prob[cand_pos[keep]]
    a_tilde = reweight_edges(edge_dst, a, q_used, scheme, num_dst=dst_ids.size)
    return SampledBlock(
        layer_index=layer_index,
        dst_ids=np.asarray(dst_ids, dtype=np.int64),
        src_ids=src_ids,
        edge_dst=edge_dst,
        edge_src=edge_src,
        edge_slot=edge_slot,
        alpha=a,
        alpha_tilde=a_tilde,
        q_used=q_used,
        src_prob=cand_prob[selected],
        src_forced=forced[selected],
        edge_q=None if edge_q_all is None else edge_q_all[keep],
    )


def poisson_sample_with_skips(dst_ids, alpha: EdgeCoefficients, k, cfg: ThinningConfig = ThinningConfig(),
                              rng=None, *, scores=None, layer_index=0, scheme="HT", edge_q=None):
    """PLADIES step: Poisson sampling of the frontier with forced seed nodes.

    ``scores`` are raw node probabilities aligned with the sorted frontier
    (LADIES scores when omitted).  ``edge_q`` is an optional per-edge array
    aligned with the frontier edges (``gather_rows`` order) that is carried
    onto the surviving edges.
    """
    rng = np.random.default_rng() if rng is None else rng
    dst_ids = np.asarray(dst_ids, dtype=np.int64)
    cand, local, slots, pos = frontier(dst_ids, alpha)
    if scores is None:
        scores = ladies_probs(dst_ids, alpha).p
    forced = np.isin(cand, dst_ids)
    p, all_in, c = poisson_inclusion_probs(cand, scores, forced, k, cfg)
    phi = rng.random(cand.size)
    selected = phi <= p
    block = _block_from_selection(layer_index, dst_ids, cand, local, slots, pos, selected, p,
                                  forced, alpha, scheme, edge_q)
    block.all_included = all_in
    block.scale = c
    block.budget = int(k)
    block.expected_size = float(p[~forced].sum())
    block.info["candidates"] = cand
    block.info["cand_prob"] = p
    return block


def ladies_sample(dst_ids, alpha: EdgeCoefficients, k, rng=None, *, variant="LADIES",
                  scheme="LADIES-rownorm", layer_index=0):
    """Categorical LADIES/SKETCH step: ``k`` draws with replacement, then dedup.

    Destination nodes are unioned into the source set so every destination
    keeps its self edge.
    """
    rng = np.random.default_rng() if rng is None else rng
    dst_ids = np.asarray(dst_ids, dtype=np.int64)
    cand, local, slots, pos = frontier(dst_ids, alpha)
    forced = np.isin(cand, dst_ids)
    if cand.size <= k:
        p = np.ones(cand.size)
        selected = np.ones(cand.size, dtype=bool)
        all_in = True
    else:
        probs = ladies_probs(dst_ids, alpha, variant)
        p = probs.p
        draws = rng.choice(cand.size, size=int(k), replace=True, p=p)
        selected = forced.copy()
        selected[draws] = True
        all_in = False
    block = _block_from_selection(layer_index, dst_ids, cand, local, slots, pos, selected, p,
                                  forced, alpha, scheme)
    block.all_included = all_in
    block.budget = int(k)
    return block


def full_block(dst_ids, alpha: EdgeCoefficients, layer_index=0):
    """Unsampled block over the complete in-neighbourhoods of ``dst_ids``."""
    dst_ids = np.asarray(dst_ids, dtype=np.int64)
    cand, local, slots, pos = frontier(dst_ids, alpha)
    ones = np.ones(cand.size)
    block = _block_from_selection(layer_index, dst_ids, cand, local, slots, pos,
                                  np.ones(cand.size, bool), ones, np.isin(cand, dst_ids),
                                  alpha, "HT")
    block.all_included = True
    return block


def ladies_sample_pipeline(seed_batch, alpha: EdgeCoefficients, fanouts, L=None, variant="LADIES",
                           rng=None, cfg: ThinningConfig = ThinningConfig(), scheme=None):
    """Top-down multi-layer sampling; returns blocks ordered input -> output.

    ``fanouts[l]`` is the budget of layer ``l`` counted from the input side,
    e.g. ``(512, 256, 128)`` samples 128 nodes below the seed batch.
    ``variant`` is one of LADIES, SKETCH (categorical), PLADIES, UNIFORM
    (Poisson with skip connections).
    """
    fanouts = list(fanouts)
    L = len(fanouts) if L is None else int(L)
    if len(fanouts) != L:
        raise ValueError("need one fanout per layer")
    rng = np.random.default_rng() if rng is None else rng
    variant = variant.upper()
    dst = np.unique(np.asarray(seed_batch, dtype=np.int64))
    blocks = []
    for l in range(L - 1, -1, -1):
        k = fanouts[l]
        if variant in ("LADIES", "SKETCH"):
            block = ladies_sample(dst, alpha, k, rng, variant=variant,
                                  scheme=scheme or "LADIES-rownorm", layer_index=l)
        elif variant in ("PLADIES", "UNIFORM"):
            scores = None if variant == "PLADIES" else uniform_probs(dst, alpha).p
            block = poisson_sample_with_skips(dst, alpha, k, cfg, rng, scores=scores,
                                              layer_index=l, scheme=scheme or "HT")
        else:
            raise ValueError(f"unknown sampler variant {variant!r}")
        blocks.append(block)
        dst = block.src_ids
    return blocks[::-1]
