"""Coded-caching delivery lab.

Simulates the delivery phase of a cache-aided broadcast network at bit
granularity and compares delivery strategies: uncoded transmission, greedy
coded multicast, greedy and exact clique covers of the side-information
graph, and a trainable actor-critic agent that learns which bits to XOR
into each broadcast.
"""

__version__ = "0.1.0"

from codedcast.cache import (  # noqa: F401
    ProblemInstance,
    outstanding_bits,
    prune_to_requested,
    random_instance,
    random_prefetch,
    segment_prefetch,
)
