"""Dense float64 GraphSAGE / GATv2 layers over sampled blocks, with hand-written gradients.

Each layer maps the embeddings of a block's source nodes to embeddings of its
destination nodes.  Forward functions return ``(out, cache)``; the matching
backward functions consume the cache and the upstream gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .bandit import feedback_attention_edges
from .binio import read_arrays, write_arrays

__all__ = [
    "Activation",
    "RELU",
    "IDENTITY",
    "GnnParams",
    "AdamState",
    "init_params",
    "sage_layer_forward",
    "sage_layer_backward",
    "gatv2_scores",
    "attention_normalize",
    "gatv2_layer_forward",
    "gatv2_layer_backward",
    "model_forward",
    "model_backward",
    "cross_entropy",
    "adam_step",
    "micro_f1",
    "save_params",
    "load_params",
]


@dataclass(frozen=True)
class Activation:
    kind: str = "relu"
    slope: float = 0.2

    def __post_init__(self):
        if self.kind not in ("relu", "leaky_relu", "identity"):
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind == "leaky_relu" and not 0 < self.slope < 1:
            raise ValueError("LeakyReLU slope must lie in (0, 1)")

    def __call__(self, z):
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "leaky_relu":
            return np.where(z > 0, z, self.slope * z)
        return z

    def grad(self, z):
        if self.kind == "relu":
            return (z > 0).astype(np.float64)
        if self.kind == "leaky_relu":
            return np.where(z > 0, 1.0, self.slope)
        return np.ones_like(z)


RELU = Activation("relu")
IDENTITY = Activation("identity")


@dataclass(eq=False)
class GnnParams:
    """Named parameter arrays ``l{n}.W``, ``l{n}.b`` and, for GATv2, ``l{n}.W_dst``, ``l{n}.a``."""

    arch: str
    dims: list
    arrays: dict

    @property
    def num_layers(self):
        return len(self.dims) - 1

    def layer(self, l):
        pre = f"l{l}."
        return {k[len(pre):]: v for k, v in self.arrays.items() if k.startswith(pre)}

    def copy(self):
        return GnnParams(self.arch, list(self.dims), {k: v.copy() for k, v in self.arrays.items()})


def init_params(arch, dims, seed=0) -> GnnParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    arch = arch.upper()
    if arch not in ("SAGE", "GATV2"):
        raise ValueError(f"unknown architecture {arch!r}")
    rng = np.random.default_rng(seed)
    arrays = {}
    for l, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        bound = 1.0 / np.sqrt(din)
        arrays[f"l{l}.W"] = rng.uniform(-bound, bound, size=(din, dout))
        arrays[f"l{l}.b"] = np.zeros(dout)
        if arch == "GATV2":
            arrays[f"l{l}.W_dst"] = rng.uniform(-bound, bound, size=(din, dout))
            ab = 1.0 / np.sqrt(dout)
            arrays[f"l{l}.a"] = rng.uniform(-ab, ab, size=dout)
    return GnnParams(arch, [int(d) for d in dims], arrays)


def _agg_matrix(edge_dst, edge_src, coeff, n_dst, n_src):
    return sp.csr_matrix((coeff, (edge_dst, edge_src)), shape=(n_dst, n_src))


def sage_layer_forward(block, h_src, W, bias, act: Activation = RELU, coeff=None):
    """``h_i = act(sum_j coeff_ij h_j W + b)`` over the block's edges.

    ``coeff`` defaults to the block's reweighted coefficients.
    """
    h_src = np.asarray(h_src, dtype=np.float64)
    if h_src.shape[0] != block.num_src or h_src.shape[1] != W.shape[0]:
        raise ValueError(f"shape mismatch: h_src {h_src.shape}, block sources {block.num_src}, W {W.shape}")
    coeff = block.alpha_tilde if coeff is None else coeff
    A = _agg_matrix(block.edge_dst, block.edge_src, coeff, block.num_dst, block.num_src)
    ah = A @ h_src
    z = ah @ W + bias
    return act(z), {"A": A, "ah": ah, "z": z, "h_src": h_src, "W": W, "act": act}


def sage_layer_backward(cache, dout):
    dz = dout * cache["act"].grad(cache["z"])
    grads = {"W": cache["ah"].T @ dz, "b": dz.sum(0)}
    dh_src = cache["A"].T @ (dz @ cache["W"].T)
    return grads, dh_src


def gatv2_scores(block, h_dst, h_src, W, W_dst, a, slope=0.2):
    """Per-edge scores ``e_ij = a . LeakyReLU(h_i W_dst + h_j W)`` and ``exp(e - rowmax)``.

    This is ``a . LeakyReLU(W' [h_i || h_j])`` with ``W' = [W_dst; W]``.
    """
    xs = np.asarray(h_src) @ W
    xd = np.asarray(h_dst) @ W_dst
    s = xd[block.edge_dst] + xs[block.edge_src]
    u = np.where(s > 0, s, slope * s)
    e = u @ a
    rowmax = np.full(block.num_dst, -np.inf)
    np.maximum.at(rowmax, block.edge_dst, e)
    a_tilde = np.exp(e - rowmax[block.edge_dst])
    return e, a_tilde, {"xs": xs, "xd": xd, "s": s, "u": u}


def attention_normalize(block, a_tilde, mode="full-softmax", edge_q=None):
    """Normalise positive scores per destination.

    ``full-softmax``: divide by the row sum over sampled edges.
    ``bliss-feedback``: rescale the sampled softmax by ``sum_{S_i} q_ij``.
    """
    a_tilde = np.asarray(a_tilde, dtype=np.float64)
    if np.any(a_tilde <= 0):
        raise ValueError("attention scores must be positive")
    counts = np.bincount(block.edge_dst, minlength=block.num_dst)
    if np.any(counts == 0):
        raise ValueError("destination without sampled neighbours")
    if mode == "full-softmax":
        tot = np.bincount(block.edge_dst, weights=a_tilde, minlength=block.num_dst)
        return a_tilde / tot[block.edge_dst]
    if mode == "bliss-feedback":
        q = block.edge_q if edge_q is None else edge_q
        if q is None:
            raise ValueError("bliss-feedback attention needs per-edge bandit probabilities")
        return feedback_attention_edges(block.edge_dst, q, a_tilde, block.num_dst)
    raise ValueError(f"unknown attention mode {mode!r}")


def _row_scale(block, mode):
    if mode == "full-softmax":
        return np.ones(block.num_dst)
    return np.bincount(block.edge_dst, weights=block.edge_q, minlength=block.num_dst)


def gatv2_layer_forward(block, h_src, W, W_dst, a, bias, act: Activation = RELU,
                        attn_mode="full-softmax", slope=0.2):
    """GATv2 aggregation ``sum_j w_ij alpha_ij (h_j W)``.

    ``w_ij = 1`` under ``full-softmax``; under ``bliss-feedback`` the feedback
    attention enters a Horvitz-Thompson sum, ``w_ij = 1 / q_used``.
    """
    h_src = np.asarray(h_src, dtype=np.float64)
    if h_src.shape[0] != block.num_src or h_src.shape[1] != W.shape[0]:
        raise ValueError(f"shape mismatch: h_src {h_src.shape}, block sources {block.num_src}, W {W.shape}")
    dpos = block.dst_in_src
    h_dst = h_src[dpos]
    e, a_tilde, sc = gatv2_scores(block, h_dst, h_src, W, W_dst, a, slope)
    alpha = attention_normalize(block, a_tilde, attn_mode)
    ht = np.ones(alpha.size) if attn_mode == "full-softmax" else 1.0 / block.q_used
    A = _agg_matrix(block.edge_dst, block.edge_src, alpha * ht, block.num_dst, block.num_src)
    z = A @ sc["xs"] + bias
    cache = dict(sc, z=z, alpha=alpha, ht=ht, h_src=h_src, h_dst=h_dst, dpos=dpos, W=W, W_dst=W_dst,
                 a=a, act=act, slope=slope, A=A, block=block, scale=_row_scale(block, attn_mode))
    return act(z), cache


def gatv2_layer_backward(cache, dout):
    block = cache["block"]
    ed, es = block.edge_dst, block.edge_src
    dz = dout * cache["act"].grad(cache["z"])
    grads = {"b": dz.sum(0)}
    xs, alpha = cache["xs"], cache["alpha"]
    dxs = cache["A"].T @ dz
    dalpha = cache["ht"] * np.einsum("ij,ij->i", dz[ed], xs[es])
    # alpha = c_i * softmax(e)_ij  =>  de = alpha * (dalpha - sum_row softmax * dalpha)
    c = cache["scale"][ed]
    soft = alpha / c
    row = np.bincount(ed, weights=soft * dalpha, minlength=block.num_dst)
    de = alpha * (dalpha - row[ed])
    grads["a"] = cache["u"].T @ de
    ds = np.outer(de, cache["a"]) * np.where(cache["s"] > 0, 1.0, cache["slope"])
    n_dst, n_src = block.num_dst, block.num_src
    E = ed.size
    ones = np.ones(E)
    Dm = sp.csr_matrix((ones, (ed, np.arange(E))), shape=(n_dst, E))
    Sm = sp.csr_matrix((ones, (es, np.arange(E))), shape=(n_src, E))
    dxd = Dm @ ds
    dxs = dxs + Sm @ ds
    grads["W"] = cache["h_src"].T @ dxs
    grads["W_dst"] = cache["h_dst"].T @ dxd
    dh_src = dxs @ cache["W"].T
    np.add.at(dh_src, cache["dpos"], dxd @ cache["W_dst"].T)
    return grads, dh_src


@dataclass(eq=False)
class ForwardCache:
    arch: str
    layers: list
    h_in: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    attention: list = field(default_factory=list)


def model_forward(blocks, x, params: GnnParams, attn_mode="full-softmax", hidden_act=RELU):
    """Run all layers; returns logits for ``blocks[-1].dst_ids`` and a cache.

    ``blocks`` are ordered input -> output and ``x`` is the full feature
    matrix (rows indexed by global node id).
    """
    if len(blocks) != params.num_layers:
        raise ValueError(f"{len(blocks)} blocks for a {params.num_layers}-layer model")
    h = np.asarray(x, dtype=np.float64)[blocks[0].src_ids]
    cache = ForwardCache(params.arch, [])
    for l, block in enumerate(blocks):
        if l > 0 and not np.array_equal(blocks[l - 1].dst_ids, block.src_ids):
            raise ValueError(f"block {l} sources do not match block {l - 1} destinations")
        act = IDENTITY if l == len(blocks) - 1 else hidden_act
        p = params.layer(l)
        cache.h_in.append(h)
        if params.arch == "SAGE":
            h, c = sage_layer_forward(block, h, p["W"], p["b"], act)
            cache.attention.append(None)
        else:
            h, c = gatv2_layer_forward(block, h, p["W"], p["W_dst"], p["a"], p["b"], act, attn_mode)
            cache.attention.append(c["alpha"])
        cache.pre.append(c["z"])
        cache.layers.append(c)
    return h, cache


def model_backward(cache: ForwardCache, dlogits):
    grads = {}
    d = dlogits
    for l in range(len(cache.layers) - 1, -1, -1):
        if cache.arch == "SAGE":
            g, d = sage_layer_backward(cache.layers[l], d)
        else:
            g, d = gatv2_layer_backward(cache.layers[l], d)
        for k, v in g.items():
            grads[f"l{l}.{k}"] = v
    return grads


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of ``labels`` and its gradient w.r.t. ``logits``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, C = logits.shape
    if labels.shape != (n,):
        raise ValueError("one label per logit row required")
    if np.any(labels >= C) or np.any(labels < 0):
        raise ValueError(f"label out of range for {C} classes")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - logz[:, None]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


@dataclass(eq=False)
class AdamState:
    lr: float = 0.002
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: GnnParams, grads: dict, state: AdamState):
    """One bias-corrected Adam update of ``params`` in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.arrays.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def micro_f1(predictions, labels, mask=None):
    """Micro-averaged F1; for single-label multiclass this is accuracy."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        predictions, labels = predictions[mask], labels[mask]
    if labels.size == 0:
        raise ValueError("empty evaluation mask")
    tp = np.count_nonzero(predictions == labels)
    fp = fn = labels.size - tp
    return 2 * tp / (2 * tp + fp + fn)


def save_params(params: GnnParams, path):
    header = {"kind": "gnn", "arch": params.arch, "dims": params.dims, "num_layers": params.num_layers}
    write_arrays(path, header, params.arrays)


def load_params(path) -> GnnParams:
    header, arrays = read_arrays(path)
    if header.get("kind") != "gnn":
        raise ValueError(f"{path} is not a model checkpoint")
    return GnnParams(header["arch"], header["dims"], {k: v.copy() for k, v in arrays.items()})
