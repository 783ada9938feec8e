"""Non-learning delivery algorithms and the exact clique-cover oracle.

A schedule is a plain list of packets; a packet is a sorted tuple of global
bit indices whose XOR the server broadcasts.  All algorithms here emit the
whole schedule up front from the initial caches (no accumulating knowledge
during construction), and every schedule is replayable through the
environment's decode semantics.
"""

from dataclasses import dataclass

import numpy as np

from codedcast import kernels
from codedcast.cache import outstanding_bits


class GraphTooLarge(Exception):
    """Raised when the exact cover is asked for more vertices than its budget."""


DEFAULT_VERTEX_BUDGET = 14


@dataclass(frozen=True)
class SideInfoGraph:
    """Vertices are outstanding (user, bit) pairs; an edge means one XOR can serve both.

    Two pairs (i, b), (j, b') with i != j are adjacent iff they want the
    same bit, or user i knows b' and user j knows b (knowledge = initial
    cache).  Pairs of the same user are never adjacent: one XOR bit cannot
    deliver two bits to one user.
    """

    vertices: tuple              # ((user, bit), ...) ascending
    adjacency: np.ndarray        # (V, V) bool, symmetric, no self-loops


def build_side_info_graph(instance, cache, requests) -> SideInfoGraph:
    k = instance.num_users
    vertices = [
        (i, int(b)) for i in range(k) for b in np.flatnonzero(requests[:, i])
    ]
    nv = len(vertices)
    adjacency = np.zeros((nv, nv), dtype=bool)
    for u in range(nv):
        i, b = vertices[u]
        for v in range(u + 1, nv):
            j, b2 = vertices[v]
            if i == j:
                continue
            if b == b2 or (cache[b2, i] and cache[b, j]):
                adjacency[u, v] = adjacency[v, u] = True
    adjacency.setflags(write=False)
    return SideInfoGraph(tuple(vertices), adjacency)


def uncoded_delivery(instance, cache, demands):
    """One singleton packet per outstanding library row, ascending."""
    requests = outstanding_bits(instance, cache, demands)
    return [(int(b),) for b in np.flatnonzero(requests.any(axis=1))]


def gcm_delivery(instance, cache, demands):
    """Greedy coded multicast: subset-enumeration delivery for arbitrary caches.

    Each outstanding bit of user k is binned by the exact set of *other*
    users caching it.  For every user subset S (largest first) the per-user
    bins V_{k, S\\{k}} are lined up, zero-padded to the longest, and one
    packet per position XORs one bit from each non-exhausted bin.  User k
    can cancel every other member (cached at all of S minus its origin),
    leaving exactly its own bit.
    """
    requests = outstanding_bits(instance, cache, demands)
    k = instance.num_users
    groups = {}
    for i in range(k):
        for b in np.flatnonzero(requests[:, i]):
            b = int(b)
            cachers = frozenset(int(j) for j in np.flatnonzero(cache[b, :]))
            key = cachers | {i}
            groups.setdefault(key, {}).setdefault(i, []).append(b)
    packets = []
    for subset in sorted(groups, key=lambda s: (-len(s), tuple(sorted(s)))):
        bins = [sorted(bits) for _, bits in sorted(groups[subset].items())]
        longest = max(len(bin_) for bin_ in bins)
        for pos in range(longest):
            packet = sorted({bin_[pos] for bin_ in bins if pos < len(bin_)})
            packets.append(tuple(packet))
    return packets


def _clique_packet(graph, members):
    return tuple(sorted({graph.vertices[v][1] for v in members}))


def greedy_clique_cover(graph: SideInfoGraph):
    """Cover the graph by greedily grown maximal cliques; one packet per clique.

    Growth starts from the lowest uncovered vertex and repeatedly adds the
    candidate adjacent to the whole clique with the most uncovered
    neighbours (ties to the lowest vertex index).  Deterministic given the
    vertex order.
    """
    return [_clique_packet(graph, members) for members in _greedy_cover_members(graph)]


def exact_min_clique_cover(graph: SideInfoGraph, vertex_budget=DEFAULT_VERTEX_BUDGET):
    """Minimum-cardinality clique partition by exhaustive branch and bound.

    Vertices are assigned in index order to an existing compatible clique
    or to a new one; branches that already use at least as many cliques as
    the incumbent are cut.  Exponential worst case, hence the hard vertex
    budget; refuses larger graphs rather than guessing.
    """
    nv = len(graph.vertices)
    if nv > vertex_budget:
        raise GraphTooLarge(
            f"side-information graph has {nv} vertices, exceeds exact-cover budget {vertex_budget}"
        )
    if nv == 0:
        return []
    neighbor_mask = [0] * nv
    for u in range(nv):
        mask = 0
        for v in np.flatnonzero(graph.adjacency[u]):
            mask |= 1 << int(v)
        neighbor_mask[u] = mask

    best = _greedy_cover_members(graph)   # warm-start incumbent
    incumbent = len(best)
    clique_masks = []
    clique_members = []

    def extend(v):
        nonlocal best, incumbent
        if len(clique_masks) >= incumbent:
            return
        if v == nv:
            best = [members.copy() for members in clique_members]
            incumbent = len(best)
            return
        nb = neighbor_mask[v]
        for idx in range(len(clique_masks)):
            cmask = clique_masks[idx]
            if cmask & nb == cmask:
                clique_masks[idx] = cmask | (1 << v)
                clique_members[idx].append(v)
                extend(v + 1)
                clique_members[idx].pop()
                clique_masks[idx] = cmask
        if len(clique_masks) + 1 < incumbent:
            clique_masks.append(1 << v)
            clique_members.append([v])
            extend(v + 1)
            clique_members.pop()
            clique_masks.pop()

    extend(0)
    return [_clique_packet(graph, members) for members in best]


def _greedy_cover_members(graph):
    """greedy_clique_cover, but returning vertex index lists instead of packets."""
    nv = len(graph.vertices)
    adj = graph.adjacency
    available = np.ones(nv, dtype=bool)
    cliques = []
    for start in range(nv):
        if not available[start]:
            continue
        clique = [start]
        available[start] = False
        compatible = adj[start].copy()
        while True:
            candidates = np.flatnonzero(compatible & available)
            if candidates.size == 0:
                break
            scores = adj[candidates][:, available].sum(axis=1)
            pick = int(candidates[np.argmax(scores)])
            clique.append(pick)
            available[pick] = False
            compatible &= adj[pick]
        cliques.append(clique)
    return cliques


def replay_schedule(instance, cache, demands, schedule):
    """Feed a schedule through the environment's decode semantics.

    Knowledge accumulates across packets exactly as in the live episode.
    Returns (valid, delivered_count) where valid means every outstanding
    (user, bit) pair was delivered by the end.
    """
    requests = outstanding_bits(instance, cache, demands).copy()
    knowledge = cache.copy()
    nf = instance.library_bits
    delivered = 0
    for packet in schedule:
        mask = np.zeros(nf, dtype=np.uint8)
        mask[list(packet)] = 1
        decoded = kernels.decode_deliveries(mask, knowledge, requests)
        for user in range(instance.num_users):
            bit = int(decoded[user])
            if bit < 0:
                continue
            requests[bit, user] = 0
            knowledge[bit, user] = 1
            delivered += 1
    return (not requests.any(), delivered)


def schedule_delay(schedule, file_bits) -> float:
    """Normalized delay of a schedule: packets per file bit."""
    return len(schedule) / file_bits


def schedule_records(instance, cache, demands, schedule):
    """Trace records for a precomputed schedule (reward is not defined, emitted as null)."""
    requests = outstanding_bits(instance, cache, demands).copy()
    knowledge = cache.copy()
    nf = instance.library_bits
    for t, packet in enumerate(schedule, start=1):
        mask = np.zeros(nf, dtype=np.uint8)
        mask[list(packet)] = 1
        decoded = kernels.decode_deliveries(mask, knowledge, requests)
        deliveries = []
        for user in range(instance.num_users):
            bit = int(decoded[user])
            if bit < 0:
                continue
            requests[bit, user] = 0
            knowledge[bit, user] = 1
            deliveries.append([user, bit])
        yield {
            "t": t,
            "packet": list(packet),
            "deliveries": deliveries,
            "delivered": len(deliveries),
            "reward": None,
        }
