"""Episodic delivery-phase environment.

One episode = one delivery phase: given fixed caches and distinct demands,
the server repeatedly broadcasts one XOR-coded bit (the current action's
selected bit subset) until every outstanding (user, bit) pair is delivered
or the step cap is hit.  Users decode with accumulating side information:
their cache plus everything delivered to them earlier in the episode.

Observation layout (length 3*N*K*F, binary, float64): the (N*F, K) cache
matrix, then the request matrix, then the next-bit matrix, each flattened
row-major (bit-major, user-minor).  The next-bit matrix equals the request
matrix on the highlighted row and is zero elsewhere.
"""

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from codedcast import kernels
from codedcast.cache import ProblemInstance, _check_demands, _check_matrix, outstanding_bits

DEFAULT_EPISODE_CAP = 100


@dataclass
class StepOutcome:
    """What one broadcast achieved."""

    packet: tuple                # global bit indices XORed into the broadcast bit
    deliveries: list             # [(user, bit)] decoded this step
    delivered_count: int         # len(deliveries), summed over users
    reward: float
    done: bool


class DelayResult(NamedTuple):
    delay: float
    capped: bool


@dataclass
class EnvState:
    """Mutable episode state; owned by a single caller, advanced via step()."""

    instance: ProblemInstance
    cache: np.ndarray            # read-only (NF, K)
    requests: np.ndarray         # writable copy, entries only flip 1 -> 0
    delivered: np.ndarray        # (NF, K), 1 once a pair is delivered
    knowledge: np.ndarray        # cache | delivered, kept in sync for decoding
    next_bit: Optional[int]
    step_count: int
    episode_cap: int
    outstanding: int             # remaining (user, bit) pairs
    done: bool
    packets: list = field(default_factory=list)   # transmission log, one packet per step
    _cache_flat: np.ndarray = None


def reset(instance, cache, demands, rng, episode_cap=DEFAULT_EPISODE_CAP) -> EnvState:
    """Start one delivery episode.  Requires a pruned instance (num_files == num_users)."""
    if instance.num_files != instance.num_users:
        raise ValueError(
            "environment expects a pruned instance with num_files == num_users; "
            "run prune_to_requested first"
        )
    if episode_cap < 1:
        raise ValueError("episode_cap must be >= 1")
    cache = _check_matrix(instance, cache, "cache")
    demands = _check_demands(instance, demands, distinct=True)
    requests = outstanding_bits(instance, cache, demands).copy()
    state = EnvState(
        instance=instance,
        cache=cache,
        requests=requests,
        delivered=np.zeros_like(requests),
        knowledge=cache.copy(),
        next_bit=None,
        step_count=0,
        episode_cap=episode_cap,
        outstanding=int(requests.sum()),
        done=False,
    )
    state._cache_flat = cache.ravel().astype(np.float64)
    state.done = state.outstanding == 0
    if not state.done:
        state.next_bit = select_next_bit(state, rng)
    return state


def select_next_bit(state, rng) -> Optional[int]:
    """Uniform choice among library rows that still have an outstanding user."""
    rows = np.flatnonzero(state.requests.any(axis=1))
    if rows.size == 0:
        return None
    return int(rows[rng.integers(rows.size)])


def observe(state) -> np.ndarray:
    """Binary observation vector of length 3*N*K*F (cache, requests, next-bit blocks)."""
    if state.done:
        raise RuntimeError("observe() called on a finished episode")
    n = state.cache.size
    k = state.instance.num_users
    obs = np.empty(3 * n)
    obs[:n] = state._cache_flat
    obs[n:2 * n] = state.requests.ravel()
    obs[2 * n:] = 0.0
    if state.next_bit is not None:
        start = 2 * n + state.next_bit * k
        obs[start:start + k] = state.requests[state.next_bit]
    return obs


def step(state, selected, rng):
    """Broadcast the XOR of the selected bits and let every user try to decode.

    selected is a (N*F,) 0/1 vector (or anything array-coercible to one).
    Returns (state, StepOutcome); state is advanced in place.  Reward is
    log2(delivered count) when the highlighted next bit reached a user that
    needed it, else -1.  Every step costs one broadcast bit.
    """
    if state.done:
        raise RuntimeError("step() called on a finished episode")
    mask = np.ascontiguousarray(np.asarray(selected, dtype=np.uint8))
    if mask.shape != (state.instance.library_bits,):
        raise ValueError(
            f"action must have shape ({state.instance.library_bits},), got {mask.shape}"
        )
    decoded = kernels.decode_deliveries(mask, state.knowledge, state.requests)
    deliveries = []
    next_hit = False
    for user in range(state.instance.num_users):
        bit = int(decoded[user])
        if bit < 0:
            continue
        deliveries.append((user, bit))
        state.requests[bit, user] = 0
        state.delivered[bit, user] = 1
        state.knowledge[bit, user] = 1
        if bit == state.next_bit:
            next_hit = True
    count = len(deliveries)
    reward = math.log2(count) if next_hit else -1.0
    state.outstanding -= count
    state.step_count += 1
    state.packets.append(tuple(int(b) for b in np.flatnonzero(mask)))
    state.done = state.outstanding == 0 or state.step_count == state.episode_cap
    state.next_bit = None if state.done else select_next_bit(state, rng)
    outcome = StepOutcome(
        packet=state.packets[-1],
        deliveries=deliveries,
        delivered_count=count,
        reward=reward,
        done=state.done,
    )
    return state, outcome


def normalized_delay(state, uncoded_fallback=True) -> DelayResult:
    """Broadcast bits per file bit for a finished episode.

    A capped episode is completed by an imaginary uncoded tail (one extra
    broadcast per still-outstanding row) so means stay well defined; the
    result is flagged capped.  With uncoded_fallback=False the raw truncated
    count is returned instead (still flagged).
    """
    if not state.done:
        raise RuntimeError("normalized_delay() called before the episode finished")
    f = state.instance.file_bits
    if state.outstanding == 0:
        return DelayResult(state.step_count / f, False)
    if not uncoded_fallback:
        return DelayResult(state.step_count / f, True)
    remaining_rows = int(state.requests.any(axis=1).sum())
    return DelayResult((state.step_count + remaining_rows) / f, True)


def episode_records(outcomes):
    """Trace records for one episode, one dict per step."""
    for t, out in enumerate(outcomes, start=1):
        yield {
            "t": t,
            "packet": list(out.packet),
            "deliveries": [[user, bit] for user, bit in out.deliveries],
            "delivered": out.delivered_count,
            "reward": out.reward,
        }


def write_trace(path, records):
    """Write step records as line-delimited JSON."""
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
