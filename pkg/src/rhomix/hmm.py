"""Hidden Markov model laws of L consecutive observations and finite grids of them.

The law of ``(Y_i, ..., Y_{i+L-1})`` for an HMM with initial law ``w``,
transition matrix ``Q`` and emission densities ``f_1..f_K`` is

    sum_{k_1..k_L} w_{k_1} Q_{k_1 k_2} ... Q_{k_{L-1} k_L} f_{k_1}(x_1) ... f_{k_L}(x_L),

evaluated here by the forward recursion in log space (``O(K^2 L)`` per point).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import families
from .measure import DensityCandidate, FiniteModel, SampleSpace, vc_index_finite
from .rho import Sample

__all__ = [
    "HmmParams",
    "WindowedSample",
    "HmmModel",
    "ModelBudgetError",
    "validate_weights",
    "validate_transition",
    "window",
    "product_chain_density",
    "chain_density_bruteforce",
    "stationary_distribution",
    "simplex_grid",
    "transition_grid",
    "default_step",
    "delta_for",
    "vbar_for_nets",
    "vbar_exponential_family",
    "build_hmm_model",
    "param_error",
    "model_to_json",
    "model_from_json",
]

ROW_TOL = 1e-12
MAX_PERMUTATION_K = 6


class ModelBudgetError(ValueError):
    pass


def validate_weights(w):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or np.any(w < 0) or abs(w.sum() - 1.0) > ROW_TOL:
        raise ValueError(f"not a probability vector: {w}")
    return w


def validate_transition(Q):
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError("transition matrix must be square")
    if np.any(Q < 0) or np.any(np.abs(Q.sum(axis=1) - 1.0) > ROW_TOL):
        raise ValueError("transition rows must be probability vectors")
    return Q


@dataclass(frozen=True, eq=False)
class HmmParams:
    """``(K, w, Q, F)``; ``emissions`` are 1D density candidates."""

    w: np.ndarray
    Q: np.ndarray
    emissions: tuple

    def __post_init__(self):
        object.__setattr__(self, "w", validate_weights(self.w))
        object.__setattr__(self, "Q", validate_transition(self.Q))
        object.__setattr__(self, "emissions", tuple(self.emissions))
        K = len(self.w)
        if K < 1 or self.Q.shape != (K, K) or len(self.emissions) != K:
            raise ValueError("inconsistent HMM dimensions")
        spaces = {e.space for e in self.emissions}
        if len(spaces) != 1:
            raise ValueError("emissions must share a space")

    @property
    def K(self):
        return len(self.w)

    @property
    def base_space(self):
        return self.emissions[0].space

    def thetas(self):
        return [np.asarray(e.metadata["params"], dtype=float) for e in self.emissions]

    def families(self):
        return [e.metadata["family"] for e in self.emissions]

    def stationary(self):
        """Same chain started from its invariant law."""
        return HmmParams(stationary_distribution(self.Q), self.Q, self.emissions)

    def to_json(self):
        return {"w": self.w.tolist(), "Q": self.Q.tolist(),
                "emissions": [families.descriptor(e) for e in self.emissions]}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["w"], dtype=float), np.asarray(obj["Q"], dtype=float),
                   tuple(families.from_descriptor(d) for d in obj["emissions"]))


@dataclass(frozen=True)
class WindowedSample:
    N: int
    L: int
    sample: Sample

    @property
    def n(self):
        return self.sample.n


def window(series, L, base_space=None):
    """Overlapping ``L``-tuples ``(Y_i, ..., Y_{i+L-1})``, ``i = 1..N+1-L``."""
    y = np.asarray(series, dtype=float).ravel()
    N = len(y)
    if not 2 <= L <= N // 2:
        raise ValueError(f"window length L={L} must satisfy 2 <= L <= floor(N/2) = {N // 2}")
    tuples = np.lib.stride_tricks.sliding_window_view(y, L).copy()
    if base_space is None:
        base_space = SampleSpace.continuous()
    return WindowedSample(N, L, Sample(SampleSpace.product(base_space, L), tuples))


def _lse(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(np.sum(np.exp(a - safe), axis=axis, keepdims=True)) + safe
    out = np.where(np.isposinf(m), np.inf, out)
    out = np.where(np.isneginf(m), -np.inf, out)
    return np.squeeze(out, axis=axis)


def _emission_logs(params, points):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.stack([e.logpdf(pts) for e in params.emissions], axis=-1)  # (n, L, K)


def _forward(log_w, log_Q, E):
    alpha = log_w[None, :] + E[:, 0, :]
    for l in range(1, E.shape[1]):
        alpha = _lse(alpha[:, :, None] + log_Q[None, :, :], axis=1) + E[:, l, :]
    return _lse(alpha, axis=1)


def product_chain_density(params, L, id=None):
    """Density of ``L`` consecutive observations as a candidate on ``base^L``."""
    if L < 1:
        raise ValueError("L must be >= 1")
    with np.errstate(divide="ignore"):
        log_w = np.log(params.w)
        log_Q = np.log(params.Q)
    emissions = params.emissions

    def log_density(points):
        pts = np.asarray(points, dtype=float).reshape(-1, L)
        E = np.stack([e.logpdf(pts) for e in emissions], axis=-1)
        return _forward(log_w, log_Q, E)

    if id is None:
        id = "hmm(" + json.dumps(params.to_json(), sort_keys=True) + f",L={L})"
    return DensityCandidate(id, SampleSpace.product(params.base_space, L), log_density,
                            metadata={"family": "hmm_chain", "L": L, "params": params},
                            components=tuple(emissions))


def chain_density_bruteforce(params, L, points):
    """Explicit ``K^L`` sum of the chain density (test oracle, not log-stabilized)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, L)
    f = np.exp(_emission_logs(params, pts))
    total = np.zeros(len(pts))
    for path in itertools.product(range(params.K), repeat=L):
        weight = params.w[path[0]]
        for a, b in zip(path[:-1], path[1:]):
            weight *= params.Q[a, b]
        prod = np.full(len(pts), weight)
        for l, k in enumerate(path):
            prod = prod * f[:, l, k]
        total += prod
    return total


def _is_primitive(Q):
    K = len(Q)
    P = (Q > 0).astype(float)
    M = P.copy()
    for _ in range(K * K):
        if np.all(M > 0):
            return True
        M = ((M @ P) > 0).astype(float)
    return bool(np.all(M > 0))


def stationary_distribution(Q):
    """Invariant law of an irreducible aperiodic chain, from ``pi (Q - I) = 0, sum pi = 1``."""
    Q = validate_transition(Q)
    if not _is_primitive(Q):
        raise ValueError("transition matrix is not irreducible and aperiodic")
    K = len(Q)
    A = np.vstack([(Q - np.eye(K)).T, np.ones((1, K))])
    rhs = np.zeros(K + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    # one refinement step tightens the fixed-point residual
    pi = pi @ Q
    pi /= pi.sum()
    return pi


def _as_fraction(x):
    return x if isinstance(x, Fraction) else Fraction(str(x)) if isinstance(x, float) else Fraction(x)


def default_step(delta):
    """Coarsest pitch ``1/m`` not exceeding ``sqrt(delta)``."""
    return Fraction(1, math.ceil(1.0 / math.sqrt(delta) - 1e-12))


def _compositions(total, parts, lo, bounds=None):
    """Lexicographic tuples of ``parts`` integers ``>= lo`` summing to ``total``."""
    if parts == 1:
        ok = total >= lo and (bounds is None or bounds[0][0] <= total <= bounds[0][1])
        if ok:
            yield (total,)
        return
    first_lo = lo
    first_hi = total - lo * (parts - 1)
    if bounds is not None:
        first_lo = max(first_lo, bounds[0][0])
        first_hi = min(first_hi, bounds[0][1])
    for first in range(first_lo, first_hi + 1):
        for rest in _compositions(total - first, parts - 1, lo,
                                  None if bounds is None else bounds[1:]):
            yield (first,) + rest


def simplex_grid(K, delta, step, bounds=None, exact=False):
    """Probability vectors with entries in ``{j * step >= delta}``.

    ``step`` must be ``1/m`` for an integer ``m``; ``delta`` in ``(0, 1/K]``
    only floors the entries. ``bounds`` optionally restricts entry ``k`` to
    ``[lo_k, hi_k]``. Sums are exact in rational arithmetic; set ``exact`` to
    get the :class:`~fractions.Fraction` vectors.
    """
    if not 0 < delta <= 1.0 / K + 1e-15:
        raise ValueError("delta must lie in (0, 1/K]")
    step = _as_fraction(step)
    m = 1 / step
    if m.denominator != 1:
        raise ValueError("step must be 1/m for an integer m")
    m = int(m)
    jmin = max(1, math.ceil(_as_fraction(delta) / step))
    ib = None
    if bounds is not None:
        ib = [(math.ceil(_as_fraction(lo) / step), math.floor(_as_fraction(hi) / step))
              for lo, hi in bounds]
    out = []
    for comp in _compositions(m, K, jmin, ib):
        vec = tuple(Fraction(j, m) for j in comp)
        assert sum(vec) == 1
        out.append(vec if exact else np.array([float(v) for v in vec]))
    return out


def transition_grid(K, delta, step, row_bounds=None):
    """K-fold product of row grids, rows varying lexicographically (first row slowest)."""
    rows = [simplex_grid(K, delta, step, None if row_bounds is None else row_bounds[k])
            for k in range(K)]
    return [np.vstack(choice) for choice in itertools.product(*rows)]


def delta_for(vbar, n_s1, K):
    """``min(vbar / (n_s1 (K - 1)), 1 / K)``."""
    if vbar <= 0 or n_s1 < 1 or K < 2:
        raise ValueError("need vbar > 0, n_s1 >= 1 and K >= 2")
    return min(vbar / (n_s1 * (K - 1)), 1.0 / K)


def vbar_for_nets(net_sizes, L):
    """Sum over state tuples ``(k_1..k_L)`` of ``1 + sum_l log2 m_{k_l}``."""
    if any(m < 1 for m in net_sizes):
        raise ValueError("net sizes must be >= 1")
    logs = [vc_index_finite(m) - 1.0 for m in net_sizes]
    return float(sum(1.0 + sum(logs[k] for k in ks)
                     for ks in itertools.product(range(len(net_sizes)), repeat=L)))


def vbar_exponential_family(dims, L):
    """``3 K^L + L K^(L-1) (d_1 + ... + d_K)`` for exponential-family emissions."""
    K = len(dims)
    return float(3 * K ** L + L * K ** (L - 1) * sum(dims))


class HmmModel:
    """A :class:`FiniteModel` of chain densities plus the parameters behind each id."""

    def __init__(self, model, params, description):
        self.model = model
        self.params = params
        self.description = description

    def __len__(self):
        return len(self.model)

    def params_of(self, cid):
        return self.params[self.model.index_of(cid)]


def build_hmm_model(emission_nets, K, L, delta, step=None, w_grid=None, q_grid=None,
                    w_mode="grid", q_bounds=None, w_bounds=None, budget=20000, check=True):
    """Finite model of chain densities over a parameter grid.

    Parameters
    ----------
    emission_nets : list of list of DensityCandidate
        One net per hidden state.
    delta, step : float
        Entry floor and grid pitch (``step`` defaults to :func:`default_step`).
    w_grid, q_grid : list of arrays, optional
        Explicit grids; built from ``delta``/``step`` when omitted.
    w_mode : {"grid", "stationary"}
        ``"stationary"`` ties ``w`` to the invariant law of each ``Q``.
    q_bounds, w_bounds : optional
        Per-entry ``[lo, hi]`` ranges restricting the generated grids.
    budget : int
        Maximal number of candidates.

    Candidate ids are the decimal lexicographic indices over
    ``(w, Q, emission tuple)``.
    """
    if len(emission_nets) != K:
        raise ValueError("need one emission net per hidden state")
    if step is None:
        step = default_step(delta)
    if w_mode not in ("grid", "stationary"):
        raise ValueError(f"unknown w_mode {w_mode!r}")
    if q_grid is None:
        q_grid = transition_grid(K, delta, step, q_bounds)
    if w_mode == "grid" and w_grid is None:
        w_grid = simplex_grid(K, delta, step, w_bounds)
    n_w = 1 if w_mode == "stationary" else len(w_grid)
    count = n_w * len(q_grid) * math.prod(len(net) for net in emission_nets)
    if count > budget:
        raise ModelBudgetError(f"model would have {count} candidates, budget is {budget}")
    if count == 0:
        raise ValueError("empty parameter grid")
    candidates, params = [], []
    combos = list(itertools.product(*emission_nets))
    w_iter = [None] if w_mode == "stationary" else w_grid
    for w in w_iter:
        for Q in q_grid:
            ww = stationary_distribution(Q) if w is None else w
            for F in combos:
                p = HmmParams(ww, Q, F)
                params.append(p)
                candidates.append(product_chain_density(p, L, id=str(len(candidates))))
    model = FiniteModel(candidates, check=check)
    description = {
        "kind": "hmm",
        "K": K,
        "L": L,
        "delta": float(delta),
        "step": str(_as_fraction(step)),
        "w_mode": w_mode,
        "w_grid": None if w_mode == "stationary" else [np.asarray(w).tolist() for w in w_grid],
        "q_grid": [np.asarray(Q).tolist() for Q in q_grid],
        "emission_families": [[families.descriptor(e) for e in net] for net in emission_nets],
        "candidate_count": len(candidates),
    }
    return HmmModel(model, params, description)


def model_to_json(hmm_model):
    return json.dumps(hmm_model.description, indent=2, sort_keys=True)


def model_from_json(text, check=True):
    d = json.loads(text) if isinstance(text, str) else text
    nets = [[families.from_descriptor(x) for x in net] for net in d["emission_families"]]
    hm = build_hmm_model(
        nets, d["K"], d["L"], d["delta"], Fraction(d["step"]),
        w_grid=None if d["w_grid"] is None else [np.asarray(w) for w in d["w_grid"]],
        q_grid=[np.asarray(Q) for Q in d["q_grid"]], w_mode=d.get("w_mode", "grid"),
        budget=max(d["candidate_count"], 1), check=check)
    if len(hm) != d["candidate_count"]:
        raise ValueError("candidate_count does not match the grids")
    return hm


def param_error(est, truth):
    """Permutation-aligned parameter error between two HMMs.

    ``min_sigma |w_sigma - w_est|^2 + |Q_sigma - Q_est|^2
    + sum_k min(|theta_sigma(k) - theta_est_k|^2, 1)``, where ``sigma``
    relabels the hidden states of ``truth`` (rows and columns of ``Q``).
    """
    if est.K != truth.K or est.families() != truth.families():
        raise ValueError("parameter sets differ in K or emission families")
    K = truth.K
    if K > MAX_PERMUTATION_K:
        raise ValueError(f"permutation alignment limited to K <= {MAX_PERMUTATION_K}")
    th_est, th_true = est.thetas(), truth.thetas()
    best = math.inf
    for sigma in itertools.permutations(range(K)):
        s = list(sigma)
        err = float(np.sum((truth.w[s] - est.w) ** 2))
        err += float(np.sum((truth.Q[np.ix_(s, s)] - est.Q) ** 2))
        for k in range(K):
            err += min(float(np.sum((th_true[s[k]] - th_est[k]) ** 2)), 1.0)
        best = min(best, err)
    return best
