"""
The bandit's step size on a toy star
====================================

One target aggregates ten neighbours; one of them has an embedding 100 times
larger in squared norm than the rest.  A good sampler should learn to pick
that neighbour more often.  How fast this happens is set by the EXP3 step
size ``delta``.
"""

import numpy as np

from blissgnn import bandit as bd
from blissgnn.graph import edge_coefficients
from blissgnn.harness import frozen_embedding_instance

data, target, heavy = frozen_embedding_instance(num_neighbors=10, boost=100.0)
alpha = edge_coefficients(data.graph, "SAGE")


def heavy_share(state):
    q = bd.q_distribution(state, 0, [target])
    return q.q[q.nbr == heavy][0]


###############################################################################
# Each round multiplies a sampled edge's weight by ``exp(delta * r_hat / deg)``.
# Rewards here are of order ``alpha^2 ||h||^2 / q^2``, a few hundred at most,
# so the default ``delta = eta / 1e6`` barely moves the weights in 500 rounds.

for delta in (0.4e-6, 0.4e-4, 0.4e-3, 4e-3):
    state = bd.init_state(data.graph, 1, eta=0.4, delta=delta)
    q0 = heavy_share(state)
    trace = []
    rng = np.random.default_rng(0)
    for _ in range(5):
        bd.frozen_rounds(state, alpha, [target], data.features, 2, 100, rng=rng)
        trace.append(heavy_share(state) / q0)
    print(f"delta={delta:<8.1e} q_heavy / q_initial every 100 rounds: "
          + " ".join(f"{r:.3f}" for r in trace))

###############################################################################
# The exploration floor ``eta / |N_i|`` still caps how lopsided the
# distribution may get: with ``eta = 0.4`` every neighbour keeps at least
# 0.4 / 11 of the mass.
