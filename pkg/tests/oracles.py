"""Independent reference implementations used by the harness and acceptance tests."""

import numpy as np
import torch

from blissgnn.graph import DatasetBundle, edge_coefficients, from_edges
from blissgnn.nn import init_params


def six_node_bundle(dim=3, seed=7):
    g = from_edges(6, [0, 0, 1, 2, 3, 4, 1], [1, 2, 3, 3, 4, 5, 5], undirected=True)
    x = np.random.default_rng(seed).standard_normal((6, dim))
    labels = np.array([0, 1, 0, 1, 1, 0])
    train = np.array([1, 1, 1, 1, 0, 0], bool)
    val = np.array([0, 0, 0, 0, 1, 0], bool)
    test = np.array([0, 0, 0, 0, 0, 1], bool)
    return DatasetBundle(g, x, labels, train, val, test, num_classes=2, name="six")


def dense_trajectory(data, arch, dims, seed, steps, lr=0.002, slope=0.2):
    """Full-batch training with torch autograd on dense matrices.

    Returns per-step losses and the final parameters as numpy arrays.
    """
    g = data.graph
    n = g.num_nodes
    A = np.zeros((n, n))
    A[g.rows, g.targets] = edge_coefficients(g, "SAGE").values
    mask = torch.tensor(A > 0)
    A = torch.tensor(A)
    x = torch.tensor(data.features)
    train = np.flatnonzero(data.train_mask)
    y = torch.tensor(data.labels[train])
    init = init_params(arch, dims, seed=seed)
    P = {k: torch.tensor(v.copy(), requires_grad=True) for k, v in init.arrays.items()}
    opt = torch.optim.Adam(list(P.values()), lr=lr, betas=(0.9, 0.999), eps=1e-8)
    L = len(dims) - 1

    def forward():
        h = x
        for l in range(L):
            W, b = P[f"l{l}.W"], P[f"l{l}.b"]
            if arch == "SAGE":
                z = A @ h @ W + b
            else:
                xs = h @ W
                xd = h @ P[f"l{l}.W_dst"]
                s = xd[:, None, :] + xs[None, :, :]
                e = torch.nn.functional.leaky_relu(s, slope) @ P[f"l{l}.a"]
                e = e.masked_fill(~mask, float("-inf"))
                z = torch.softmax(e, dim=1) @ xs + b
            h = z if l == L - 1 else torch.relu(z)
        return h

    losses = []
    for _ in range(steps):
        opt.zero_grad()
        loss = torch.nn.functional.cross_entropy(forward()[train], y)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    return np.array(losses), {k: v.detach().numpy() for k, v in P.items()}
