from importlib.resources import files

import numpy as np
import pytest

from cablesoup.cable_graph import read_graph


@pytest.fixture(scope="session")
def five():
    return read_graph(files("cablesoup") / "data" / "five_vertex.graph")


def chain_graph_edges(lengths):
    """Path graph z0 - 1 - 2 - ... - z1 with the given edge lengths."""
    n = len(lengths)
    names = ["z0"] + list(range(1, n)) + ["z1"]
    return [(names[i], names[i + 1], L) for i, L in enumerate(lengths)], {"z0", "z1"}


def chain_green(lengths):
    """Green function of cable Brownian motion on [0, T] killed at both ends: 2 x (T - y) / T."""
    pos = np.cumsum(lengths)[:-1]
    T = float(np.sum(lengths))
    lo = np.minimum.outer(pos, pos)
    hi = np.maximum.outer(pos, pos)
    return 2.0 * lo * (T - hi) / T
