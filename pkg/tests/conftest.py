import numpy as np
import pytest

from certattack import TrainConfig, split_nodes, synth_sbm, train


@pytest.fixture(scope="session")
def sbm_graph():
    """100-node two-block benchmark graph."""
    return synth_sbm(100, 2, 0.1, 0.01, 8, seed=0)


@pytest.fixture(scope="session")
def sbm_setup(sbm_graph):
    """(graph, split, trained params) on the benchmark graph."""
    split = split_nodes(sbm_graph, (0.1, 0.1, 0.8), seed=0)
    params = train(sbm_graph, split, sbm_graph.adjacency, TrainConfig(seed=1))
    return sbm_graph, split, params


@pytest.fixture(scope="session")
def tiny_graph():
    """Two 2-cliques: perfectly separable 4-node graph."""
    return synth_sbm(4, 2, 1.0, 0.0, 4, seed=0)


def random_binary_adjacency(rng: np.random.Generator, n: int,
                            p: float = 0.4) -> np.ndarray:
    upper = rng.random((n, n)) < p
    adj = np.triu(upper, k=1).astype(np.int8)
    return adj + adj.T
