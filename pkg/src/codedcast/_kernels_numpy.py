"""Numpy reference implementation of the per-step hot kernels.

Used directly when the compiled extension is unavailable (or disabled via
CODEDCAST_DISABLE_EXT); also serves as the behavioural reference the
compiled kernels are tested against.
"""

import numpy as np


def actor_probs(x, w1, b1, w2, b2, w3, b3):
    """Two tanh hidden layers, sigmoid output; one observation vector in."""
    h1 = np.tanh(x @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    z = h2 @ w3 + b3
    # sigmoid via tanh: stable for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def critic_value(x, w1, b1, w2, b2, w3, b3):
    """Two tanh hidden layers, scalar linear output."""
    h1 = np.tanh(x @ w1 + b1)
    h2 = np.tanh(h1 @ w2 + b2)
    return float(h2 @ w3[:, 0] + b3[0])


def decode_deliveries(packet, knowledge, requests):
    """Vectorised per-user decode of one XOR packet.

    packet: (NF,) uint8 membership mask; knowledge/requests: (NF, K) uint8.
    Returns a (K,) int64 array holding, per user, the decoded outstanding
    bit index, or -1 when the packet has != 1 unknown member or the single
    unknown is not outstanding for that user.
    """
    unknown = packet[:, None] & (1 - knowledge)
    counts = unknown.sum(axis=0)
    first = np.argmax(unknown, axis=0)
    users = np.arange(knowledge.shape[1])
    ok = (counts == 1) & (requests[first, users] == 1)
    return np.where(ok, first, -1).astype(np.int64)
