"""Synthetic benchmark: first-order Markov chains with a banded transition
structure and a long-tail length distribution.

Each item v moves to one of its three cyclic successors v+1, v+2, v+3
(mod the catalogue) with probabilities 0.6 / 0.3 / 0.1, so transition
plausibility of generated items is checkable against ground truth.
"""

import numpy as np

from .numerics import seed_stream

SUCCESSOR_PROBS = (0.6, 0.3, 0.1)


def successors(item, num_items):
    return tuple((item - 1 + k) % num_items + 1 for k in (1, 2, 3))


def transition_probability(cur, nxt, num_items):
    succ = successors(cur, num_items)
    return dict(zip(succ, SUCCESSOR_PROBS)).get(nxt, 0.0)


def _draw_length(rng, min_len, max_len, scale):
    # exponential tail shifted to min_len, clipped to max_len
    return min(min_len + int(rng.exponential(scale)), max_len)


def generate_interactions(num_users=500, num_items=50, seed=1, min_len=3, max_len=40,
                          length_scale=6.0):
    """Rows of (user, item, timestamp); timestamps are the walk positions."""
    rows = []
    for user in range(1, num_users + 1):
        rng = seed_stream(seed, "synth", user)
        length = _draw_length(rng, min_len, max_len, length_scale)
        item = int(rng.integers(1, num_items + 1))
        for pos in range(length):
            rows.append((user, item, pos))
            succ = successors(item, num_items)
            item = int(succ[rng.choice(3, p=SUCCESSOR_PROBS)])
    return rows


def write_interactions(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for user, item, ts in rows:
            f.write(f"{user}\t{item}\t{ts}\n")
