"""Loop soups on cable graphs: occupation fields, fast and quick points,
and local-time profiles of reflected Brownian motion."""

from .cable_graph import CableGraph, build_graph, green_matrix, jump_chain, parse_graph_text, read_graph
from .errors import CableSoupError
from .loop_soup import SoupConfig, sample_soup, sample_vertex_field
from .modulus import dimension_estimate, fast_points, modulus_scan, quick_points, u_of_h
from .occupation_field import decompose_against_loop, extend_to_edges, sample_field, simulate_cable_bm
from .rng import RngStream
from .stoch_core import DyadicPath, besq_bridge, besq_path, brownian_bridge, brownian_path

__version__ = "0.1.0"

__all__ = [
    "CableGraph",
    "CableSoupError",
    "DyadicPath",
    "RngStream",
    "SoupConfig",
    "besq_bridge",
    "besq_path",
    "brownian_bridge",
    "brownian_path",
    "build_graph",
    "decompose_against_loop",
    "dimension_estimate",
    "extend_to_edges",
    "fast_points",
    "green_matrix",
    "jump_chain",
    "modulus_scan",
    "parse_graph_text",
    "quick_points",
    "read_graph",
    "sample_field",
    "sample_soup",
    "sample_vertex_field",
    "simulate_cable_bm",
    "u_of_h",
]
