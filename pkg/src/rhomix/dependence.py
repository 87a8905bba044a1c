"""Seeded simulators and exact dependence diagnostics for finite chains.

Random streams are Philox generators keyed by ``(seed, *key)``, so every
replicate and every role (hidden path, emissions, contamination, ...) draws
from its own independent stream regardless of execution order.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import families
from .blocks import block_size
from .hmm import HmmParams, stationary_distribution, validate_transition, validate_weights

__all__ = [
    "stream",
    "simulate_markov",
    "simulate_hmm",
    "ContaminationSpec",
    "contaminate",
    "DiffusionSpec",
    "simulate_langevin",
    "coefficient_of_information",
    "markov_dependence_term",
    "hmm_dependence_bound",
    "beta_mixing_markov",
    "reverse_pinsker_gap",
    "joint_kl_from_independence",
]


def _key_part(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def stream(seed, *key):
    """Independent generator for ``seed`` and a derivation key of ints/strings."""
    ss = np.random.SeedSequence([int(seed)] + [_key_part(k) for k in key])
    return np.random.Generator(np.random.Philox(ss))


def simulate_markov(Q, pi0, n, rng):
    """States ``0..K-1`` of an ``n``-step chain with initial law ``pi0``."""
    Q = validate_transition(Q)
    pi0 = validate_weights(pi0)
    cum = np.cumsum(Q, axis=1)
    cum[:, -1] = 1.0
    u = rng.random(n)
    out = np.empty(n, dtype=np.int64)
    state = int(np.searchsorted(np.cumsum(pi0), u[0], side="right"))
    state = min(state, len(pi0) - 1)
    out[0] = state
    rows = [row for row in cum]
    for i in range(1, n):
        state = int(np.searchsorted(rows[state], u[i], side="right"))
        out[i] = state
    return out


def simulate_hmm(params, N, rng, return_hidden=False):
    """Observations ``Y_1..Y_N`` (and optionally the hidden path) of an HMM."""
    hidden = simulate_markov(params.Q, params.w, N, rng)
    y = np.empty(N)
    for k, e in enumerate(params.emissions):
        idx = np.flatnonzero(hidden == k)
        if idx.size:
            y[idx] = families.sample(e, idx.size, rng)
    return (y, hidden) if return_hidden else y


@dataclass(frozen=True)
class ContaminationSpec:
    """Huber contamination (``mode="huber"``, rate ``eps``) or a fixed outlier set.

    ``contaminant`` is a 1D family candidate (or a float for a point mass).
    """

    mode: str
    contaminant: object
    eps: float = 0.0
    indices: tuple = ()

    def __post_init__(self):
        if self.mode == "huber":
            if not 0.0 <= self.eps <= 1.0:
                raise ValueError("eps must lie in [0, 1]")
        elif self.mode != "outlier_set":
            raise ValueError(f"unknown contamination mode {self.mode!r}")


def contaminate(series, spec, rng):
    """``Y_i = E_i X_i + (1 - E_i) Z_i``; returns ``(contaminated, replaced_mask)``."""
    x = np.asarray(series, dtype=float).copy()
    n = len(x)
    if spec.mode == "huber":
        mask = rng.random(n) < spec.eps
    else:
        idx = np.asarray(spec.indices, dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValueError("outlier indices out of range")
        mask = np.zeros(n, dtype=bool)
        mask[idx] = True
    k = int(mask.sum())
    if k:
        if isinstance(spec.contaminant, (int, float)):
            x[mask] = float(spec.contaminant)
        else:
            x[mask] = families.sample(spec.contaminant, k, rng)
    return x, mask


@dataclass(frozen=True)
class DiffusionSpec:
    """Euler-Maruyama discretization of ``dY = dB - U'(Y) dt``.

    ``drift`` is ``-U'``; observations are kept every ``thin`` steps after
    ``burn_in`` discarded steps. The drift must be globally Lipschitz on the
    visited range for the scheme to be stable; that is the caller's concern.
    """

    drift: Callable
    dt: float
    burn_in: int = 0
    thin: int = 1
    y0: float = 0.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0 or self.burn_in < 0 or self.thin < 1:
            raise ValueError("need dt > 0, burn_in >= 0, thin >= 1")


def simulate_langevin(spec, n, rng):
    steps = spec.burn_in + n * spec.thin
    noise = rng.standard_normal(steps) * math.sqrt(spec.dt)
    y = float(spec.y0)
    out = np.empty(n)
    drift, dt = spec.drift, spec.dt
    j = 0
    for t in range(steps):
        y = y + drift(y) * dt + noise[t]
        if t >= spec.burn_in and (t - spec.burn_in + 1) % spec.thin == 0:
            out[j] = y
            j += 1
    return out


# -- exact diagnostics -----------------------------------------------------------

def _kl_table(p, q):
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    on = p > 0
    if np.any(on & (q <= 0)):
        return math.inf
    return float(np.sum(p[on] * (np.log(p[on]) - np.log(q[on]))))


def coefficient_of_information(joint):
    """``KL(joint || product of its marginals)`` in nats."""
    joint = np.asarray(joint, dtype=float)
    if np.any(joint < 0) or abs(joint.sum() - 1.0) > 1e-12:
        raise ValueError("joint table must be a probability table")
    return max(0.0, _kl_table(joint, np.outer(joint.sum(axis=1), joint.sum(axis=0))))


def markov_dependence_term(Q, pi0, n, s, b):
    """``sum_{i=2}^{n(s,b)} I(X^{(s,b)}_{i-1}, X^{(s,b)}_i)`` for a finite chain.

    ``X^{(s,b)}_i = X_{b + (i-1)(s+1)}``; marginals are ``pi0 Q^(t-1)`` and
    each coupling is ``diag(mu) Q^(s+1)``.
    """
    Q = validate_transition(Q)
    pi0 = validate_weights(pi0)
    m = block_size(n, s, b)
    step = np.linalg.matrix_power(Q, s + 1)
    mu = pi0 @ np.linalg.matrix_power(Q, b - 1)
    total = 0.0
    for _ in range(2, m + 1):
        total += coefficient_of_information(mu[:, None] * step)
        mu = mu @ step
    return total


def hmm_dependence_bound(params, n, s, b):
    """Hidden-chain information sum bounding the block dependence of an HMM."""
    return markov_dependence_term(params.Q, params.w, n, s, b)


def beta_mixing_markov(Q, t, pi=None):
    """``sum_i pi_i d_TV(Q^t_i., pi)`` for the stationary chain.

    ``pi`` defaults to the unique stationary law; reducible chains (such as
    the identity) need it passed explicitly, and it must satisfy ``pi Q = pi``.
    """
    if pi is None:
        pi = stationary_distribution(Q)
    else:
        pi = validate_weights(pi)
        if np.max(np.abs(pi @ np.asarray(Q, dtype=float) - pi)) > 1e-12:
            raise ValueError("pi is not stationary for Q")
    Qt = np.linalg.matrix_power(np.asarray(Q, dtype=float), int(t))
    return float(np.sum(pi * 0.5 * np.abs(Qt - pi[None, :]).sum(axis=1)))


def reverse_pinsker_gap(joint):
    """``(KL(joint || product), 2 sum_a d_TV(L(B | A=a), L(B)))``."""
    joint = np.asarray(joint, dtype=float)
    kl = coefficient_of_information(joint)
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    bound = 0.0
    for a in range(joint.shape[0]):
        if pa[a] > 0:
            bound += 0.5 * np.abs(joint[a] / pa[a] - pb).sum()
    return kl, 2.0 * bound


def joint_kl_from_independence(joint):
    """``KL(L(X_1..X_n) || prod L(X_i))`` for an explicit n-dimensional table."""
    joint = np.asarray(joint, dtype=float)
    prod = np.ones_like(joint)
    for axis in range(joint.ndim):
        other = tuple(a for a in range(joint.ndim) if a != axis)
        marg = joint.sum(axis=other)
        shape = [1] * joint.ndim
        shape[axis] = -1
        prod = prod * marg.reshape(shape)
    return _kl_table(joint, prod)
