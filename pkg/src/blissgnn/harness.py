"""Experiment orchestration: configs, seeded training runs, evaluation, variance benchmarks.

A training run draws a batch of train nodes per step, samples one block per
layer with the configured sampler, runs forward/backward, applies Adam and,
for BLISS, feeds the per-edge rewards back into the bandit.  Metrics go to a
CSV with header ``seed,step,split,loss,f1,seconds``; a JSON summary holds the
full-neighbourhood scores of the final parameters.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bandit as bd
from . import nn
from .estimator import NodeDistribution, exact_mu, monte_carlo_variance
from .graph import DatasetBundle, edge_coefficients, load_dataset, synthetic_skewed
from .samplers import (
    ThinningConfig,
    frontier,
    full_block,
    ladies_probs,
    ladies_sample_pipeline,
    poisson_inclusion_probs,
    uniform_probs,
)

__all__ = [
    "ConfigError",
    "RunError",
    "ExperimentConfig",
    "BenchConfig",
    "MetricsRow",
    "RunResult",
    "load_config",
    "resolve_dataset",
    "run_experiment",
    "train_seed",
    "evaluate",
    "full_logits",
    "write_metrics",
    "read_metrics",
    "export_plots",
    "layer_inclusion",
    "bench_variance",
    "frozen_embedding_instance",
]

ARCHS = ("SAGE", "GATV2")
SAMPLERS = ("BLISS", "PLADIES", "LADIES", "UNIFORM")
SPLITS = ("train", "val", "test")
METRICS_HEADER = ("seed", "step", "split", "loss", "f1", "seconds")
PLOTS_HEADER = ("step", "split", "mean_f1", "std_f1", "mean_loss", "std_loss")

PROFILES = {
    "desk": {"hidden_dim": 64, "steps": 300, "batch_size": 32, "fanouts": [512, 256, 128]},
    "full": {"hidden_dim": 256, "steps": 1000, "batch_size": 32, "fanouts": [512, 256, 128]},
}


class ConfigError(ValueError):
    pass


class RunError(RuntimeError):
    def __init__(self, seed, step, cause):
        super().__init__(f"seed {seed} failed at step {step}: {type(cause).__name__}: {cause}")
        self.seed = seed
        self.step = step


def resolve_dataset(spec, base=None) -> DatasetBundle:
    """Load a dataset from a directory path or a ``{"synthetic_skewed": {...}}`` spec."""
    if isinstance(spec, DatasetBundle):
        return spec
    if isinstance(spec, dict):
        if set(spec) != {"synthetic_skewed"}:
            raise ConfigError(f"unknown dataset spec keys {sorted(spec)}")
        kw = dict(spec["synthetic_skewed"])
        try:
            return synthetic_skewed(kw.pop("num_nodes"), kw.pop("avg_degree"), kw.pop("norm_skew"),
                                    kw.pop("seed", 0), **kw)
        except KeyError as exc:
            raise ConfigError(f"synthetic_skewed spec is missing {exc.args[0]!r}") from None
    path = Path(spec)
    if base is not None and not path.is_absolute():
        path = Path(base) / path
    return load_dataset(path)


def _check_fields(cls, data):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")


@dataclass
class ExperimentConfig:
    dataset: object
    arch: str = "SAGE"
    sampler: str = "BLISS"
    profile: str = "desk"
    batch_size: int | None = None
    fanouts: list | None = None
    steps: int | None = None
    hidden_dim: int | None = None
    lr: float = 0.002
    eta: float = 0.4
    delta: float | None = None
    epsilon: float = 0.99
    n_ref: int = 20
    seeds: list = field(default_factory=lambda: [0])
    eval_every: int = 50
    reweight: str = "auto"
    attention: str = "auto"
    single_division: bool = False
    reward_embedding: str = "post-activation"
    coefficients: str = "SAGE"
    record_timing: bool = False
    workers: int = 1
    out_dir: str | None = None
    save_checkpoints: bool = False
    base_dir: str | None = None

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {sorted(PROFILES)}")
        for key, val in PROFILES[self.profile].items():
            if getattr(self, key) is None:
                setattr(self, key, list(val) if isinstance(val, list) else val)
        self.arch = str(self.arch).upper()
        self.sampler = str(self.sampler).upper()
        if self.arch not in ARCHS:
            raise ConfigError(f"arch must be SAGE or GATv2, got {self.arch!r}")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        self.fanouts = [int(k) for k in self.fanouts]
        if not self.fanouts or min(self.fanouts) < 1:
            raise ConfigError("fanouts must be a non-empty list of positive budgets")
        if int(self.batch_size) < 1:
            raise ConfigError("batch_size must be >= 1")
        if int(self.steps) < 1:
            raise ConfigError("steps must be >= 1")
        if int(self.hidden_dim) < 1 or int(self.eval_every) < 1:
            raise ConfigError("hidden_dim and eval_every must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        self.seeds = [int(s) for s in self.seeds]
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.sampler == "BLISS" and self.reweight not in ("auto", "HT"):
            raise ConfigError("BLISS uses the HT estimator; reweight must be 'auto' or 'HT'")
        if self.attention not in ("auto", "full-softmax", "bliss-feedback"):
            raise ConfigError(f"unknown attention mode {self.attention!r}")
        if self.attention == "bliss-feedback" and self.sampler != "BLISS":
            raise ConfigError("bliss-feedback attention needs the BLISS sampler")
        if not 0 < self.eta <= 1:
            raise ConfigError("eta must lie in (0, 1]")
        if self.reward_embedding not in ("post-activation", "pre-activation"):
            raise ConfigError(f"unknown reward_embedding {self.reward_embedding!r}")
        try:
            ThinningConfig(self.epsilon, self.n_ref)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def num_layers(self):
        return len(self.fanouts)

    @property
    def attention_mode(self):
        if self.attention != "auto":
            return self.attention
        return "bliss-feedback" if self.sampler == "BLISS" and self.arch == "GATV2" else "full-softmax"

    @property
    def reweight_scheme(self):
        if self.reweight != "auto":
            return self.reweight
        return "LADIES-rownorm" if self.sampler == "LADIES" else "HT"

    @property
    def thinning(self):
        return ThinningConfig(self.epsilon, self.n_ref)

    @classmethod
    def from_dict(cls, data, base_dir=None):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        _check_fields(cls, data)
        if "dataset" not in data:
            raise ConfigError("config is missing 'dataset'")
        data = dict(data)
        if base_dir is not None and data.get("base_dir") is None:
            data["base_dir"] = str(base_dir)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d


@dataclass
class BenchConfig:
    dataset: object
    samplers: list = field(default_factory=lambda: ["UNIFORM", "LADIES", "PLADIES", "BLISS"])
    fanout: int = 10
    num_targets: int = 10
    targets: list | None = None
    rounds: list = field(default_factory=lambda: [0, 100, 500])
    n_trials: int = 100_000
    seed: int = 0
    eta: float = 0.4
    delta: float | None = None
    epsilon: float = 0.99
    n_ref: int = 20
    coefficients: str = "SAGE"
    out: str | None = None
    base_dir: str | None = None

    def __post_init__(self):
        self.samplers = [str(s).upper() for s in self.samplers]
        bad = [s for s in self.samplers if s not in SAMPLERS + ("SKETCH",)]
        if bad:
            raise ConfigError(f"unknown sampler(s) {bad}")
        if self.fanout < 1 or self.n_trials < 2 or self.num_targets < 1:
            raise ConfigError("fanout, num_targets must be >= 1 and n_trials >= 2")
        self.rounds = sorted({int(t) for t in self.rounds})
        if self.rounds and self.rounds[0] < 0:
            raise ConfigError("rounds must be non-negative")

    @classmethod
    def from_dict(cls, data, base_dir=None):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        _check_fields(cls, data)
        if "dataset" not in data:
            raise ConfigError("config is missing 'dataset'")
        data = dict(data)
        if base_dir is not None and data.get("base_dir") is None:
            data["base_dir"] = str(base_dir)
        return cls(**data)


def load_config(path, kind="train"):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    cls = ExperimentConfig if kind == "train" else BenchConfig
    return cls.from_dict(data, base_dir=path.parent)


@dataclass(frozen=True)
class MetricsRow:
    seed: int
    step: int
    split: str
    loss: float
    f1: float
    seconds: float = 0.0

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if not 0.0 <= self.f1 <= 1.0:
            raise ValueError("f1 must lie in [0, 1]")

    def as_strings(self):
        return [str(self.seed), str(self.step), self.split, repr(float(self.loss)),
                repr(float(self.f1)), repr(float(self.seconds))]


@dataclass
class RunResult:
    rows: list
    summary: dict
    params: dict
    states: dict


# -- evaluation ---------------------------------------------------------------

def full_logits(params: nn.GnnParams, data: DatasetBundle, alpha=None):
    """Logits of every node from full-neighbourhood blocks (one shared block per layer)."""
    alpha = edge_coefficients(data.graph, "SAGE") if alpha is None else alpha
    nodes = np.arange(data.num_nodes)
    block = full_block(nodes, alpha)
    logits, _ = nn.model_forward([block] * params.num_layers, data.features, params, "full-softmax")
    return logits


def _split_scores(logits, data, split):
    nodes = data.split_nodes(split)
    if nodes.size == 0:
        raise ValueError(f"split {split!r} is empty")
    y = data.labels[nodes]
    loss, _ = nn.cross_entropy(logits[nodes], y)
    f1 = nn.micro_f1(np.argmax(logits[nodes], axis=1), y)
    return loss, f1


def evaluate(params: nn.GnnParams, data: DatasetBundle, split, arch=None, alpha=None):
    """Full-neighbourhood ``(loss, f1)`` of ``params`` on one split."""
    if arch is not None and str(arch).upper() != params.arch:
        raise ValueError(f"params are {params.arch}, not {arch}")
    return _split_scores(full_logits(params, data, alpha), data, split)


# -- training -----------------------------------------------------------------

def _sample_blocks(cfg, alpha, batch, state, rng):
    if cfg.sampler == "BLISS":
        return bd.bliss_sample_layers(alpha, batch, cfg.fanouts, state, cfg.thinning, rng)
    variant = "UNIFORM" if cfg.sampler == "UNIFORM" else cfg.sampler
    blocks = ladies_sample_pipeline(batch, alpha, cfg.fanouts, variant=variant, rng=rng,
                                    cfg=cfg.thinning, scheme=cfg.reweight_scheme)
    return bd.SampleRecord(blocks, list(cfg.fanouts))


def _check_bandit(state, record):
    state.check()
    g = state.graph
    for b in record.blocks:
        floor = state.eta / g.degrees[b.dst_ids[b.edge_dst]]
        if np.any(b.edge_q < floor * (1 - 1e-12)):
            raise AssertionError("bandit probability fell below the exploration floor")


def train_seed(cfg: ExperimentConfig, data: DatasetBundle, seed, out_dir=None):
    """One seeded run; returns ``(rows, final_params, bandit_state, summary_entry)``."""
    alpha = edge_coefficients(data.graph, cfg.coefficients)
    dims = [data.num_features] + [cfg.hidden_dim] * (cfg.num_layers - 1) + [data.num_classes]
    params = nn.init_params(cfg.arch, dims, seed=seed)
    adam = nn.AdamState(lr=cfg.lr)
    state = bd.init_state(data.graph, cfg.num_layers, cfg.eta, cfg.delta) if cfg.sampler == "BLISS" else None
    rng = np.random.default_rng([seed, 1])
    train_nodes = data.split_nodes("train")
    if train_nodes.size == 0:
        raise ValueError("train split is empty")
    bs = min(cfg.batch_size, train_nodes.size)
    attn = cfg.attention_mode
    rows = []
    step = 0
    try:
        for step in range(1, cfg.steps + 1):
            t0 = time.perf_counter()
            batch = np.sort(rng.choice(train_nodes, size=bs, replace=False))
            record = _sample_blocks(cfg, alpha, batch, state, rng)
            logits, cache = nn.model_forward(record.blocks, data.features, params, attn)
            y = data.labels[record.blocks[-1].dst_ids]
            loss, dlogits = nn.cross_entropy(logits, y)
            f1 = nn.micro_f1(np.argmax(logits, axis=1), y)
            grads = nn.model_backward(cache, dlogits)
            if state is not None:
                coeff = cache.attention if params.arch == "GATV2" else [b.alpha for b in record.blocks]
                h = cache.h_in
                if cfg.reward_embedding == "pre-activation":
                    h = [cache.h_in[0]] + cache.pre[:-1]
                rw = bd.compute_rewards(record, h, coeff)
                rw = bd.estimated_rewards(rw, record, single_division=cfg.single_division)
                bd.exp3_update(state, rw)
                _check_bandit(state, record)
            nn.adam_step(params, grads, adam)
            secs = time.perf_counter() - t0 if cfg.record_timing else 0.0
            rows.append(MetricsRow(seed, step, "train", loss, f1, secs))
            if step % cfg.eval_every == 0 or step == cfg.steps:
                logits_all = full_logits(params, data, alpha)
                for split in ("val", "test"):
                    l, f = _split_scores(logits_all, data, split)
                    rows.append(MetricsRow(seed, step, split, l, f, 0.0))
    except Exception as exc:
        raise RunError(seed, step, exc) from exc

    logits_all = full_logits(params, data, alpha)
    entry = {"seed": seed}
    for split in SPLITS:
        l, f = _split_scores(logits_all, data, split)
        entry[f"{split}_loss"] = l
        entry[f"{split}_f1"] = f
    if out_dir is not None and cfg.save_checkpoints:
        nn.save_params(params, Path(out_dir) / f"model_seed{seed}.bin")
        if state is not None:
            bd.save_state(state, Path(out_dir) / f"bandit_seed{seed}.bin")
    return rows, params, state, entry


def _train_seed_job(args):
    cfg, data, seed, out_dir = args
    return train_seed(cfg, data, seed, out_dir)


def run_experiment(cfg: ExperimentConfig, out_dir=None, data=None) -> RunResult:
    """Train every seed of ``cfg``; write ``metrics.csv`` and ``summary.json`` when ``out_dir`` is set."""
    if data is None:
        data = resolve_dataset(cfg.dataset, cfg.base_dir)
    if out_dir is None and cfg.out_dir is not None:
        out_dir = Path(cfg.base_dir or ".") / cfg.out_dir
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, data, s, out_dir) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_train_seed_job, jobs))
    else:
        results = [_train_seed_job(j) for j in jobs]

    rows, params, states, entries = [], {}, {}, []
    for seed, (r, p, st, entry) in zip(cfg.seeds, results):
        rows.extend(r)
        params[seed] = p
        states[seed] = st
        entries.append(entry)
    test = np.array([e["test_f1"] for e in entries])
    summary = {
        "dataset": data.name,
        "arch": cfg.arch,
        "sampler": cfg.sampler,
        "steps": cfg.steps,
        "seeds": cfg.seeds,
        "per_seed": entries,
        "test_f1_mean": float(test.mean()),
        "test_f1_std": float(test.std()),
        "config": {k: v for k, v in cfg.to_dict().items() if k != "dataset"},
    }
    if out_dir is not None:
        write_metrics(rows, out_dir / "metrics.csv")
        (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return RunResult(rows, summary, params, states)


# -- metrics files ------------------------------------------------------------

def write_metrics(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for row in rows:
            w.writerow(row.as_strings())


def read_metrics(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != METRICS_HEADER:
            raise ValueError(f"{path}: expected header {','.join(METRICS_HEADER)}")
        rows = []
        for n, rec in enumerate(reader, start=2):
            if len(rec) != len(METRICS_HEADER):
                raise ValueError(f"{path}:{n}: expected {len(METRICS_HEADER)} fields")
            rows.append(MetricsRow(int(rec[0]), int(rec[1]), rec[2], float(rec[3]), float(rec[4]),
                                   float(rec[5])))
    return rows


def export_plots(metrics_path, out_path=None):
    """Per ``(step, split)`` mean and std of f1 and loss across seeds."""
    rows = read_metrics(metrics_path)
    groups = {}
    for r in rows:
        groups.setdefault((r.step, SPLITS.index(r.split)), []).append(r)
    table = []
    for (step, si) in sorted(groups):
        g = groups[(step, si)]
        f = np.array([r.f1 for r in g])
        l = np.array([r.loss for r in g])
        table.append((step, SPLITS[si], f.mean(), f.std(), l.mean(), l.std()))
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PLOTS_HEADER)
            for step, split, *vals in table:
                w.writerow([step, split] + [repr(float(v)) for v in vals])
    return table


# -- variance benchmark -------------------------------------------------------

def layer_inclusion(sampler, targets, alpha, k, thinning: ThinningConfig = ThinningConfig(),
                    state=None, layer=0) -> NodeDistribution:
    """Poisson inclusion probabilities a sampler assigns to the frontier of ``targets``."""
    targets = np.unique(np.asarray(targets, dtype=np.int64))
    cand, *_ = frontier(targets, alpha)
    forced = np.isin(cand, targets)
    sampler = sampler.upper()
    if sampler in ("LADIES", "PLADIES", "SKETCH"):
        scores = ladies_probs(targets, alpha, "SKETCH" if sampler == "SKETCH" else "LADIES").p
    elif sampler == "UNIFORM":
        scores = uniform_probs(targets, alpha).p
    elif sampler == "BLISS":
        if state is None:
            raise ValueError("BLISS inclusion probabilities need a bandit state")
        scores = bd.node_probability(bd.q_distribution(state, layer, targets), cand).p
    else:
        raise ValueError(f"unknown sampler {sampler!r}")
    p, _, _ = poisson_inclusion_probs(cand, scores, forced, k, thinning)
    return NodeDistribution(cand, p, "poisson")


def _bench_targets(cfg: BenchConfig, data):
    if cfg.targets is not None:
        return np.unique(np.asarray(cfg.targets, dtype=np.int64))
    rng = np.random.default_rng([cfg.seed, 0])
    n = min(cfg.num_targets, data.num_nodes)
    return np.sort(rng.choice(data.num_nodes, size=n, replace=False))


def bench_variance(cfg: BenchConfig, data=None, h=None, out_path=None):
    """Monte Carlo variance of the layer-1 estimator per sampler.

    Non-adaptive samplers are reported at ``T = 0``; BLISS is reported after
    each warm-up round count in ``cfg.rounds`` using frozen embeddings ``h``
    (the node features by default).  Returns rows
    ``(sampler, T, variance, stderr)``.
    """
    if data is None:
        data = resolve_dataset(cfg.dataset, cfg.base_dir)
    h = data.features if h is None else np.asarray(h, dtype=np.float64)
    alpha = edge_coefficients(data.graph, cfg.coefficients)
    targets = _bench_targets(cfg, data)
    thinning = ThinningConfig(cfg.epsilon, cfg.n_ref)
    mu = exact_mu(targets, alpha, h)

    def measure(q):
        v = monte_carlo_variance(targets, alpha, h, q, n_trials=cfg.n_trials, seed=cfg.seed, mu=mu)
        return v.total, v.total_stderr

    rows = []
    for name in cfg.samplers:
        if name != "BLISS":
            rows.append((name, 0, *measure(layer_inclusion(name, targets, alpha, cfg.fanout, thinning))))
            continue
        state = bd.init_state(data.graph, 1, cfg.eta, cfg.delta)
        rng = np.random.default_rng([cfg.seed, 2])
        done = 0
        for T in cfg.rounds or [0]:
            bd.frozen_rounds(state, alpha, targets, h, cfg.fanout, T - done, thinning, rng)
            done = T
            q = layer_inclusion("BLISS", targets, alpha, cfg.fanout, thinning, state)
            rows.append(("BLISS", T, *measure(q)))
    if out_path is None and cfg.out is not None:
        out_path = Path(cfg.base_dir or ".") / cfg.out
    if out_path is not None:
        with open(out_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("sampler", "T", "variance", "stderr"))
            for name, T, v, se in rows:
                w.writerow([name, T, repr(float(v)), repr(float(se))])
    return rows


def frozen_embedding_instance(num_neighbors=10, boost=100.0, dim=8, seed=0):
    """Star graph around node 0 with unit-norm neighbour embeddings, one of them boosted.

    Neighbour 1 has ``||h||^2 = boost`` and every other node has ``||h||^2 = 1``.
    Returns ``(bundle, target, heavy)``.
    """
    from .graph import DatasetBundle as _Bundle, from_edges

    rng = np.random.default_rng(seed)
    n = num_neighbors + 1
    src = np.arange(1, n)
    g = from_edges(n, src, np.zeros(num_neighbors, dtype=np.int64))
    h = rng.standard_normal((n, dim))
    h /= np.linalg.norm(h, axis=1, keepdims=True)
    h[1] *= np.sqrt(boost)
    mask = np.zeros(n, bool)
    train = mask.copy()
    train[0] = True
    bundle = _Bundle(g, h, np.zeros(n, np.int64), train, mask, mask.copy(), num_classes=1,
                     undirected=False, name=f"frozen_star({num_neighbors},{boost})")
    return bundle, 0, 1
