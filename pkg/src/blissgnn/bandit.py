"""Bandit-driven layer-wise sampling (BLISS).

Every edge ``j -> i`` of every layer is an EXP3 arm with weight ``w_ij``.
The per-destination distribution mixes normalised weights with a uniform
exploration floor, node probabilities are pooled from it across the
destinations of a layer, and Poisson sampling with skip connections picks
the nodes.  After the forward pass the sampled edges are rewarded with their
contribution to the estimator variance and the weights are updated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binio import read_arrays, write_arrays
from .graph import CsrGraph, EdgeCoefficients, gather_rows
from .samplers import LayerProbabilities, ThinningConfig, frontier, poisson_sample_with_skips

__all__ = [
    "BanditState",
    "QDistribution",
    "SampleRecord",
    "RewardBatch",
    "init_state",
    "q_distribution",
    "node_probability",
    "bliss_sample_layers",
    "compute_rewards",
    "estimated_rewards",
    "exp3_update",
    "feedback_attention",
    "feedback_attention_edges",
    "frozen_rounds",
    "save_state",
    "load_state",
]

_OVERFLOW = 1e100
_TINY = np.finfo(np.float64).tiny


@dataclass(eq=False)
class BanditState:
    graph: CsrGraph
    num_layers: int
    weights: list
    eta: float
    delta: float
    step: int = 0

    def check(self):
        for w in self.weights:
            if w.shape != (self.graph.num_edges,):
                raise AssertionError("weights must cover every edge slot")
            if not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise AssertionError("bandit weights must be positive and finite")


@dataclass(eq=False)
class QDistribution:
    """Per-destination edge distributions ``q_ij`` for one layer.

    Edge ``e`` goes from ``nbr[e]`` to ``dst_ids[edge_dst[e]]`` via graph slot
    ``slot[e]``; ``q[e]`` is its probability.  Edges follow ``gather_rows``
    order over ``dst_ids``.
    """

    dst_ids: np.ndarray
    edge_dst: np.ndarray
    slot: np.ndarray
    nbr: np.ndarray
    q: np.ndarray

    def row(self, local_dst):
        m = self.edge_dst == local_dst
        return self.nbr[m], self.q[m]


@dataclass(eq=False)
class SampleRecord:
    """Blocks of one BLISS sampling pass, ordered input -> output."""

    blocks: list
    fanouts: list

    def sampled_set(self, layer, local_dst):
        return self.blocks[layer].sampled_neighbors(local_dst)


@dataclass(eq=False)
class RewardBatch:
    """Per-layer rewards aligned with the edges of the corresponding block."""

    slots: list
    dst_nodes: list
    r: list
    r_hat: list


def init_state(graph: CsrGraph, L, eta=0.4, delta=None) -> BanditState:
    """Unit weights for every edge of every layer; ``delta`` defaults to ``eta / 1e6``."""
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    delta = eta / 1e6 if delta is None else float(delta)
    if delta <= 0:
        raise ValueError("delta must be positive")
    if L < 1:
        raise ValueError("need at least one layer")
    weights = [np.ones(graph.num_edges) for _ in range(int(L))]
    return BanditState(graph, int(L), weights, float(eta), delta, 0)


def q_distribution(state: BanditState, layer, dst_ids) -> QDistribution:
    """``q_ij = (1 - eta) w_ij / sum_{j'} w_ij' + eta / |N_i|`` over each full neighbourhood."""
    if not 0 <= layer < state.num_layers:
        raise IndexError(f"layer {layer} out of range for {state.num_layers} layers")
    g = state.graph
    dst_ids = np.asarray(dst_ids, dtype=np.int64)
    local, slots = gather_rows(g, dst_ids)
    w = state.weights[layer][slots]
    rowsum = np.bincount(local, weights=w, minlength=dst_ids.size)
    deg = g.degrees[dst_ids].astype(np.float64)
    eta = state.eta
    q = (1.0 - eta) * w / rowsum[local] + eta / deg[local]
    return QDistribution(dst_ids, local, slots, g.targets[slots], q)


def node_probability(q: QDistribution, candidate_ids=None) -> LayerProbabilities:
    """Pooled node score ``p_j = sqrt(sum_i (q_ij / sum_k q_ik)^2)`` over destinations."""
    if candidate_ids is None:
        candidate_ids = np.unique(q.nbr)
    cand = np.asarray(candidate_ids, dtype=np.int64)
    rowsum = np.bincount(q.edge_dst, weights=q.q, minlength=q.dst_ids.size)
    norm = q.q / rowsum[q.edge_dst]
    pos = np.searchsorted(cand, q.nbr)
    pos = np.clip(pos, 0, cand.size - 1)
    if not np.array_equal(cand[pos], q.nbr):
        raise ValueError("candidate set does not cover every neighbour")
    p = np.sqrt(np.bincount(pos, weights=norm ** 2, minlength=cand.size))
    return LayerProbabilities(cand, p, p, mode="raw")


def bliss_sample_layers(alpha: EdgeCoefficients, seed_batch, fanouts, state: BanditState,
                        cfg: ThinningConfig = ThinningConfig(), rng=None) -> SampleRecord:
    """Top-down BLISS sampling; ``fanouts`` are ordered input -> output."""
    fanouts = list(fanouts)
    if len(fanouts) != state.num_layers:
        raise ValueError("need one fanout per bandit layer")
    rng = np.random.default_rng() if rng is None else rng
    dst = np.unique(np.asarray(seed_batch, dtype=np.int64))
    blocks = []
    for l in range(state.num_layers - 1, -1, -1):
        qd = q_distribution(state, l, dst)
        cand, *_ = frontier(dst, alpha)
        p = node_probability(qd, cand)
        block = poisson_sample_with_skips(dst, alpha, fanouts[l], cfg, rng, scores=p.p,
                                          layer_index=l, scheme="HT", edge_q=qd.q)
        blocks.append(block)
        dst = block.src_ids
    return SampleRecord(blocks[::-1], fanouts)


def compute_rewards(record: SampleRecord, h, alpha_used, k=None) -> RewardBatch:
    """``r_ij = alpha_ij^2 / (k q_j^2) ||h_j||^2`` on every sampled edge.

    ``h[l]`` holds the embeddings of ``record.blocks[l].src_ids`` (row-aligned),
    ``alpha_used[l]`` the per-edge aggregation coefficients of that block and
    ``k[l]`` its budget (defaults to the record's fanouts).
    """
    k = record.fanouts if k is None else list(k)
    slots, dsts, rs = [], [], []
    for l, block in enumerate(record.blocks):
        q = block.q_used
        if np.any(q <= 0):
            raise ZeroDivisionError("recorded node probability is zero")
        hl = np.asarray(h[l], dtype=np.float64)
        if hl.shape[0] != block.num_src:
            raise ValueError(f"layer {l}: embeddings have {hl.shape[0]} rows, block has {block.num_src} sources")
        sq = np.sum(hl ** 2, axis=1)[block.edge_src]
        a = np.asarray(alpha_used[l], dtype=np.float64)
        rs.append(a ** 2 / (k[l] * q ** 2) * sq)
        slots.append(block.edge_slot)
        dsts.append(block.dst_ids[block.edge_dst])
    return RewardBatch(slots, dsts, rs, [None] * len(rs))


def estimated_rewards(rewards: RewardBatch, record: SampleRecord, single_division=False) -> RewardBatch:
    """Importance-weighted rewards ``r_hat_ij = r_ij / q_j`` on sampled edges.

    With ``single_division`` the reward is passed through unchanged (ablation
    switch for the double division by the inclusion probability).
    """
    out = []
    for r, block in zip(rewards.r, record.blocks):
        out.append(r.copy() if single_division else r / block.q_used)
    return RewardBatch(rewards.slots, rewards.dst_nodes, rewards.r, out)


def exp3_update(state: BanditState, rewards: RewardBatch) -> BanditState:
    """``w_ij <- w_ij exp(delta r_hat_ij / |N_i|)`` on rewarded edges, in place.

    Rows whose weights would exceed 1e100 are divided by their maximum;
    ``q_distribution`` is invariant to that rescaling.
    """
    g = state.graph
    deg = g.degrees
    for l, (slots, dsts, r_hat) in enumerate(zip(rewards.slots, rewards.dst_nodes, rewards.r_hat)):
        if r_hat is None:
            raise ValueError("estimated rewards missing; call estimated_rewards first")
        r_hat = np.asarray(r_hat, dtype=np.float64)
        if not np.all(np.isfinite(r_hat)) or np.any(r_hat < 0):
            raise ValueError("estimated rewards must be finite and non-negative")
        w = state.weights[l]
        inc = state.delta * r_hat / deg[dsts]
        with np.errstate(over="ignore"):
            new = w[slots] * np.exp(inc)
        over = ~np.isfinite(new) | (new > _OVERFLOW)
        if not np.any(over):
            w[slots] = new
            continue
        bad_rows = np.unique(dsts[over])
        ok = ~np.isin(dsts, bad_rows)
        w[slots[ok]] = new[ok]
        for i in bad_rows:
            lo, hi = g.offsets[i], g.offsets[i + 1]
            logw = np.log(w[lo:hi])
            m = dsts == i
            logw[slots[m] - lo] += inc[m]
            w[lo:hi] = np.maximum(np.exp(logw - logw.max()), _TINY)
        if not np.all(np.isfinite(w)):
            raise FloatingPointError("non-finite bandit weight after update")
    state.step += 1
    return state


def feedback_attention(q_row, raw_scores):
    """``alpha'_ij = (sum_{S_i} q_ij) * a_ij / sum_{S_i} a_ij`` for one destination.

    ``q_row`` and ``raw_scores`` are aligned over the sampled neighbours ``S_i``.
    """
    q_row = np.asarray(q_row, dtype=np.float64)
    a = np.asarray(raw_scores, dtype=np.float64)
    if a.size == 0:
        raise ValueError("sampled neighbour set is empty")
    total = a.sum()
    if total <= 0:
        raise ZeroDivisionError("attention scores sum to zero")
    return q_row.sum() * a / total


def feedback_attention_edges(edge_dst, edge_q, raw_scores, num_dst):
    """Vectorised :func:`feedback_attention` over all destinations of a block."""
    qs = np.bincount(edge_dst, weights=edge_q, minlength=num_dst)
    tot = np.bincount(edge_dst, weights=raw_scores, minlength=num_dst)
    if np.any(tot[np.unique(edge_dst)] <= 0):
        raise ZeroDivisionError("attention scores sum to zero")
    return qs[edge_dst] * raw_scores / tot[edge_dst]


def frozen_rounds(state: BanditState, alpha: EdgeCoefficients, targets, h, k, rounds,
                  cfg: ThinningConfig = ThinningConfig(), rng=None, layer=0):
    """Run ``rounds`` single-layer BLISS updates with fixed embeddings ``h``.

    Each round samples the frontier of ``targets`` with the current bandit
    distribution, rewards the sampled edges using the raw coefficients and
    the rows of ``h`` and applies EXP3.  Used for warm-up and adaptivity
    checks where no model is trained.
    """
    rng = np.random.default_rng() if rng is None else rng
    dst = np.unique(np.asarray(targets, dtype=np.int64))
    h = np.asarray(h, dtype=np.float64)
    for _ in range(int(rounds)):
        qd = q_distribution(state, layer, dst)
        cand, *_ = frontier(dst, alpha)
        p = node_probability(qd, cand)
        block = poisson_sample_with_skips(dst, alpha, k, cfg, rng, scores=p.p, layer_index=layer,
                                          scheme="HT", edge_q=qd.q)
        rec = SampleRecord([block], [k])
        rw = compute_rewards(rec, [h[block.src_ids]], [block.alpha], [k])
        rw = estimated_rewards(rw, rec)
        _single_layer_update(state, rw, layer)
    return state


def _single_layer_update(state, rw, layer):
    if state.num_layers == 1:
        exp3_update(state, rw)
        return
    pad = [np.zeros(0, np.int64)] * state.num_layers
    slots, dsts, rh = list(pad), list(pad), [np.zeros(0)] * state.num_layers
    slots[layer], dsts[layer], rh[layer] = rw.slots[0], rw.dst_nodes[0], rw.r_hat[0]
    exp3_update(state, RewardBatch(slots, dsts, [None] * state.num_layers, rh))


def save_state(state: BanditState, path):
    header = {"kind": "bandit", "num_layers": state.num_layers, "eta": state.eta,
              "delta": state.delta, "step": state.step, "num_edges": state.graph.num_edges}
    write_arrays(path, header, {f"layer{l}": w for l, w in enumerate(state.weights)})


def load_state(path, graph: CsrGraph) -> BanditState:
    header, arrays = read_arrays(path)
    if header.get("kind") != "bandit":
        raise ValueError(f"{path} is not a bandit checkpoint")
    if header["num_edges"] != graph.num_edges:
        raise ValueError("checkpoint edge count does not match graph")
    weights = [arrays[f"layer{l}"].copy() for l in range(header["num_layers"])]
    return BanditState(graph, header["num_layers"], weights, header["eta"], header["delta"], header["step"])
