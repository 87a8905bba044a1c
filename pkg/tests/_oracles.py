"""Brute-force oracles shared by the unit and acceptance tests.

Everything here is written from the definitions with explicit enumeration,
independently of the library's fast paths.
"""

import itertools
import math

import numpy as np


def kl_tables(p, q):
    p, q = np.ravel(p), np.ravel(q)
    total = 0.0
    for a, b in zip(p, q):
        if a > 0:
            if b <= 0:
                return math.inf
            total += a * math.log(a / b)
    return total


def product_of_marginals(joint):
    joint = np.asarray(joint)
    out = np.ones_like(joint)
    for idx in np.ndindex(joint.shape):
        v = 1.0
        for axis, i in enumerate(idx):
            other = tuple(a for a in range(joint.ndim) if a != axis)
            v *= joint.sum(axis=other)[i]
        out[idx] = v
    return out


def multi_information(joint):
    return kl_tables(joint, product_of_marginals(joint))


def markov_path_joint(Q, pi0, n):
    """Joint table of ``(X_1..X_n)`` by enumerating every path."""
    K = len(pi0)
    joint = np.zeros((K,) * n)
    for path in itertools.product(range(K), repeat=n):
        pr = pi0[path[0]]
        for a, b in zip(path[:-1], path[1:]):
            pr *= Q[a, b]
        joint[path] = pr
    return joint


def sub_joint(joint, positions):
    """Marginal table of the 1-based ``positions``."""
    keep = [p - 1 for p in positions]
    drop = tuple(a for a in range(joint.ndim) if a not in keep)
    return joint.sum(axis=drop) if drop else joint


def hmm_observation_joint(w, Q, E, n):
    """Joint of ``(Y_1..Y_n)`` for emission matrix ``E[k, y]``."""
    K, A = E.shape
    hidden = markov_path_joint(Q, w, n)
    joint = np.zeros((A,) * n)
    for hpath in itertools.product(range(K), repeat=n):
        ph = hidden[hpath]
        if ph == 0:
            continue
        for ypath in itertools.product(range(A), repeat=n):
            pr = ph
            for k, y in zip(hpath, ypath):
                pr *= E[k, y]
            joint[ypath] += pr
    return joint


def discrete_h2(p, q):
    return 1.0 - float(np.sum(np.sqrt(np.asarray(p) * np.asarray(q))))


def chain_table(w, Q, E, L):
    """Law of ``L`` consecutive HMM observations as an explicit table."""
    return hmm_observation_joint(np.asarray(w), np.asarray(Q), np.asarray(E), L)


def gaussian_h2(m1, s1, m2, s2):
    aff = math.sqrt(2 * s1 * s2 / (s1 ** 2 + s2 ** 2)) * math.exp(
        -((m1 - m2) ** 2) / (4 * (s1 ** 2 + s2 ** 2)))
    return 1.0 - aff


def random_stochastic(rng, K, rows=None):
    return rng.dirichlet(np.ones(K), size=rows or K)
