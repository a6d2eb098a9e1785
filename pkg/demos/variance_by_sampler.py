"""
How much noise does each sampler add?
=====================================

A layer-wise sampler replaces the full neighbourhood sum of a GNN layer by a
weighted sum over a sampled node set.  The estimate stays unbiased, but its
variance depends on how well the inclusion probabilities track the size of
each neighbour's contribution.  This walk-through measures it on a small
random graph with heavy-tailed feature norms.
"""

import numpy as np

from blissgnn import bandit as bd
from blissgnn.estimator import exact_mu, monte_carlo_variance, optimal_distribution
from blissgnn.graph import edge_coefficients, synthetic_skewed
from blissgnn.harness import layer_inclusion

###############################################################################
# A graph where a few nodes dominate
# ----------------------------------
# Feature norms follow a power law, so a handful of neighbours carry most of
# the signal of every aggregation.

data = synthetic_skewed(100, 5, 2.0, 1)
norms = np.linalg.norm(data.features, axis=1)
print(f"{data.num_nodes} nodes, norm ratio max/min = {norms.max() / norms.min():.0f}")

alpha = edge_coefficients(data.graph, "SAGE")
targets = np.sort(np.random.default_rng(0).choice(100, 10, replace=False))
mu = exact_mu(targets, alpha, data.features)

###############################################################################
# Static samplers
# ---------------
# UNIFORM ignores the graph, LADIES weighs nodes by their squared
# coefficients.  Neither looks at the embeddings.

k = 10
for name in ("UNIFORM", "LADIES", "SKETCH"):
    q = layer_inclusion(name, targets, alpha, k)
    v = monte_carlo_variance(targets, alpha, data.features, q, n_trials=50_000, mu=mu)
    print(f"{name:8s} variance {v.total:12.4g} +- {v.total_stderr:.2g}")

###############################################################################
# The bandit learns from the embeddings
# -------------------------------------
# With embeddings frozen, every round samples, observes the sampled
# neighbours' contributions and shifts weight toward the large ones.

state = bd.init_state(data.graph, 1)
rng = np.random.default_rng(1)
done = 0
for T in (0, 50, 100, 250, 500):
    bd.frozen_rounds(state, alpha, targets, data.features, k, T - done, rng=rng)
    done = T
    q = layer_inclusion("BLISS", targets, alpha, k, state=state)
    v = monte_carlo_variance(targets, alpha, data.features, q, n_trials=50_000, mu=mu)
    print(f"BLISS T={T:<4d} variance {v.total:12.4g} +- {v.total_stderr:.2g}")

###############################################################################
# What the best single-draw distribution would achieve
# ----------------------------------------------------
# The variance-minimising categorical distribution for a single draw; k
# independent draws from it divide that variance by k.  Poisson sampling
# without replacement can do better still, which the bandit exploits.

opt = optimal_distribution(targets, alpha, data.features)
print(f"optimal categorical, {k} draws: variance {opt.variance / k:.4g} "
      f"({opt.iterations} iterations)")
