import numpy as np
import pytest

from pshgcn.graph import build_subgraphs


@pytest.fixture
def bipartite_ops():
    """Two operators on a 4-node author/paper style graph: type 0 -> 1 and
    type 1 -> 0, with no edges inside either type."""
    edges = [(0, 2, 0), (0, 3, 0), (1, 2, 0), (2, 0, 1), (2, 1, 1), (3, 1, 1)]
    graph = build_subgraphs(edges, 4, [0, 0, 1, 1], [(0, 1), (1, 0)])
    return graph, graph.shift_operators()


def random_hetero_graph(rng, signatures, nodes_per_type=(3, 8), edge_prob=0.45):
    num_types = max(max(s, t) for s, t in signatures) + 1
    sizes = rng.integers(nodes_per_type[0], nodes_per_type[1] + 1, num_types)
    node_type = np.repeat(np.arange(num_types), sizes)
    n = int(node_type.size)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    edges = []
    for etype, (s, t) in enumerate(signatures):
        for i in range(offsets[s], offsets[s + 1]):
            for j in range(offsets[t], offsets[t + 1]):
                if i != j and rng.random() < edge_prob:
                    edges.append((int(i), int(j), etype))
    return build_subgraphs(edges, n, node_type, signatures)


def random_signatures(rng, num_ops, num_types=3):
    return [
        (int(rng.integers(0, num_types)), int(rng.integers(0, num_types)))
        for _ in range(num_ops)
    ]
