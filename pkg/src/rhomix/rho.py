"""rho-estimation over a finite model.

For a sample ``x_1..x_n`` and densities ``q, q'`` the pairwise test is

    T(x, q, q') = sum_i psi(sqrt(q'(x_i) / q(x_i))),   psi(u) = (u - 1) / (u + 1),

with ``0/0 = 1`` and ``a/0 = inf``. Writing ``d = log q' - log q`` one has
``psi(exp(d / 2)) = tanh(d / 4)``, which is how the terms are evaluated:
no division, infinities handled by ``tanh(+-inf) = +-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .measure import SpaceMismatchError

__all__ = ["Sample", "RhoScoreTable", "DEFAULT_SLACK", "psi", "psi_terms",
           "t_statistic", "upsilon", "rho_estimate", "log_density_matrix"]

DEFAULT_SLACK = 11.36


@dataclass(frozen=True)
class Sample:
    space: object
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if self.space.kind == "product":
            pts = pts.reshape(-1, self.space.arity)
        if len(pts) < 1:
            raise ValueError("a sample needs at least one point")
        object.__setattr__(self, "points", pts)

    @property
    def n(self):
        return len(self.points)

    def subsample(self, indices):
        """Points at 0-based ``indices``."""
        return Sample(self.space, self.points[np.asarray(indices, dtype=int)])


@dataclass
class RhoScoreTable:
    model_ids: list
    upsilon: dict
    chosen_id: str
    chosen_index: int
    slack_used: float
    near_minimizers: list
    t_matrix: dict | None = field(default=None, repr=False)

    def to_json(self, include_t=False):
        out = {
            "model_ids": list(self.model_ids),
            "upsilon": {k: float(v) for k, v in self.upsilon.items()},
            "chosen_id": self.chosen_id,
            "chosen_index": self.chosen_index,
            "slack_used": self.slack_used,
            "near_minimizers": list(self.near_minimizers),
            "tie_break": "lowest model index",
        }
        if include_t and self.t_matrix is not None:
            out["t_matrix"] = {f"{a}|{b}": float(v) for (a, b), v in self.t_matrix.items()}
        return out


def psi(x):
    """``(x - 1) / (x + 1)`` on ``[0, inf]`` with ``psi(inf) = 1``."""
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise ValueError("psi is defined on [0, +inf]")
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(x), 1.0, (x - 1.0) / (x + 1.0))
    return float(out) if out.ndim == 0 else out


def psi_terms(log_q, log_qp):
    """Per-point ``psi(sqrt(q'/q))`` from log-densities.

    ``(-inf) - (-inf)`` is ratio ``0/0 = 1`` (term 0); a common ``+inf``
    (both densities singular at the point) is treated the same way.
    """
    with np.errstate(invalid="ignore"):
        d = np.subtract(log_qp, log_q)
    d = np.where(np.isnan(d), 0.0, d)
    return np.tanh(0.25 * d)


def _check(sample, *cands):
    for c in cands:
        if c.space != sample.space:
            raise SpaceMismatchError("space mismatch")


def t_statistic(sample, q, qp):
    _check(sample, q, qp)
    return float(np.sum(psi_terms(q.logpdf(sample.points), qp.logpdf(sample.points))))


def log_density_matrix(sample, model):
    """Log-densities at the sample, shape ``(|M|, n)`` with one contiguous row per candidate."""
    _check(sample, *model.candidates)
    return np.ascontiguousarray(np.stack([c.logpdf(sample.points) for c in model.candidates]))


def upsilon(sample, q, model):
    """``max over q' in model of T(x, q, q')`` by direct evaluation."""
    _check(sample, q)
    lq = q.logpdf(sample.points)
    best = 0.0
    for qp in model:
        _check(sample, qp)
        best = max(best, float(np.sum(psi_terms(lq, qp.logpdf(sample.points)))))
    return best


_DENSE_LIMIT = 1 << 21


def _t_from_matrix(logs):
    """All pairwise T values from a log-density matrix.

    Row ``j`` of the result is ``T(x, q_j, .)``. Only ``k > j`` is reduced;
    the lower triangle is filled by exact antisymmetry. Short samples are
    reduced in one dense call, which sums each pair in the same order.
    """
    m, n = logs.shape
    t = np.zeros((m, m))
    if m * m * n <= _DENSE_LIMIT:
        full = np.sum(psi_terms(logs[:, None, :], logs[None, :, :]), axis=2)
        upper = np.triu(full, 1)
        return upper - upper.T
    for j in range(m - 1):
        terms = psi_terms(logs[j], logs[j + 1:])
        t[j, j + 1:] = np.sum(terms, axis=1)
        t[j + 1:, j] = -t[j, j + 1:]
    return t


def rho_estimate(sample, model, slack=DEFAULT_SLACK, keep_t=False, logs=None):
    """rho-estimator over a finite model.

    Returns a :class:`RhoScoreTable`; the chosen candidate minimizes
    ``upsilon`` with ties going to the lowest model index, and
    ``near_minimizers`` lists every candidate within ``slack`` of the minimum.
    ``logs`` may carry a precomputed :func:`log_density_matrix` of ``sample``.
    """
    if len(model) == 0:
        raise ValueError("empty model")
    if not 0.0 < slack <= DEFAULT_SLACK:
        raise ValueError(f"slack must lie in (0, {DEFAULT_SLACK}]")
    if logs is None:
        logs = log_density_matrix(sample, model)
    elif logs.shape != (len(model), sample.n):
        raise ValueError("log-density matrix does not match sample and model")
    t = _t_from_matrix(np.ascontiguousarray(logs))
    ups = np.maximum(t.max(axis=1), 0.0)
    best = int(np.argmin(ups))
    ids = model.ids
    near = [ids[i] for i in np.flatnonzero(ups < ups[best] + slack)]
    t_map = None
    if keep_t:
        t_map = {(ids[a], ids[b]): float(t[a, b]) for a in range(len(ids)) for b in range(len(ids))}
    return RhoScoreTable(ids, dict(zip(ids, map(float, ups))), ids[best], best,
                         float(slack), near, t_map)
