"""Exact and message-passing inference and control for ideal CSMA networks."""

from .graph import ContentionGraph, GraphError, GraphTooLargeError, build_graph
from .icn import RHO_0, exact_throughputs, partition_function

__all__ = [
    "ContentionGraph",
    "GraphError",
    "GraphTooLargeError",
    "RHO_0",
    "build_graph",
    "exact_throughputs",
    "partition_function",
]
