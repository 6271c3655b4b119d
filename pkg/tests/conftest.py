"""Shared brute-force oracles, kept deliberately independent of the
package implementations they check."""

import math

import numpy as np


def brute_force_mi(a, b) -> float:
    """Plug-in mutual information (nats) by explicit nested loops."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = len(a)
    total = 0.0
    for av in sorted(set(a.tolist())):
        for bv in sorted(set(b.tolist())):
            p_joint = float(np.sum((a == av) & (b == bv))) / n
            if p_joint == 0.0:
                continue
            p_a = float(np.sum(a == av)) / n
            p_b = float(np.sum(b == bv)) / n
            total += p_joint * math.log(p_joint / (p_a * p_b))
    return total


def brute_force_entropy(v) -> float:
    v = np.asarray(v)
    n = len(v)
    total = 0.0
    for value in sorted(set(v.tolist())):
        p = float(np.sum(v == value)) / n
        total -= p * math.log(p)
    return total


def normalized_mi(a, b) -> float:
    """MI normalized by the smaller marginal entropy, in [0, 1]."""
    h = min(brute_force_entropy(a), brute_force_entropy(b))
    if h == 0.0:
        return 0.0
    return brute_force_mi(a, b) / h
