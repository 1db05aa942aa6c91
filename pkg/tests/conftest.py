import networkx as nx
import numpy as np
import pytest
from scipy.spatial.distance import cdist


def brute_force_max_packing(points, separation):
    """Exact maximum strict packing: maximum clique of the '> separation' graph."""
    points = np.atleast_2d(points)
    dist = cdist(points, points)
    graph = nx.Graph()
    graph.add_nodes_from(range(len(points)))
    i, j = np.nonzero(np.triu(dist > separation, 1))
    graph.add_edges_from(zip(i.tolist(), j.tolist()))
    clique, _ = nx.max_weight_clique(graph, weight=None)
    return len(clique)


@pytest.fixture
def max_packing():
    return brute_force_max_packing
