"""Sample spaces, density candidates and the divergence engine.

Densities are always handled through their logarithm. Discrete spaces are
integrated by exact summation over atoms, continuous 1D spaces by adaptive
composite Gauss-Legendre quadrature, and product spaces by the tensor
product of their base rule.
"""

from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .quadrature import QuadratureError, build_rule, tensor_rule

__all__ = [
    "SpaceMismatchError",
    "NormalizationError",
    "QuadratureError",
    "SampleSpace",
    "DensityCandidate",
    "FiniteModel",
    "integration_rule",
    "hellinger2",
    "total_variation",
    "kl_divergence",
    "finite_model_dimension",
    "vc_index_finite",
]

NORMALIZATION_TOL = 1e-6
# upper bound on tensor-rule size kept in memory at once
_CHUNK = 1 << 21
# largest |M| x nodes square-root density matrix kept per model
_SQRT_CACHE_LIMIT = 1 << 24


class SpaceMismatchError(ValueError):
    pass


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class SampleSpace:
    """Where observations live.

    ``kind`` is ``"discrete"`` (finite atom list, counting measure),
    ``"continuous1d"`` (interval, Lebesgue measure) or ``"product"``
    (``arity``-fold power of ``base``, product measure).
    """

    kind: str
    atoms: tuple = ()
    support: tuple = (-math.inf, math.inf)
    base: "SampleSpace | None" = None
    arity: int = 1
    nodes_per_panel: int = 64

    def __post_init__(self):
        if self.kind == "discrete":
            if len(set(self.atoms)) != len(self.atoms) or not self.atoms:
                raise ValueError("discrete atoms must be distinct and non-empty")
        elif self.kind == "continuous1d":
            lo, hi = self.support
            if not lo < hi:
                raise ValueError(f"empty support {self.support}")
        elif self.kind == "product":
            if self.base is None or self.base.kind == "product":
                raise ValueError("product space needs a non-product base")
            if self.arity < 1:
                raise ValueError("product arity must be >= 1")
        else:
            raise ValueError(f"unknown space kind {self.kind!r}")

    @classmethod
    def discrete(cls, atoms):
        return cls("discrete", atoms=tuple(atoms))

    @classmethod
    def continuous(cls, lo=-math.inf, hi=math.inf, nodes_per_panel=64):
        return cls("continuous1d", support=(float(lo), float(hi)),
                   nodes_per_panel=nodes_per_panel)

    @classmethod
    def product(cls, base, arity):
        return cls("product", base=base, arity=int(arity))

    @property
    def reference_measure(self):
        if self.kind == "discrete":
            return "counting"
        if self.kind == "continuous1d":
            return "lebesgue"
        return f"{self.base.reference_measure}^{self.arity}"

    @property
    def is_discrete(self):
        return self.kind == "discrete" or (self.kind == "product" and self.base.kind == "discrete")

    def contains(self, points):
        """Boolean mask of points lying in the space."""
        pts = np.asarray(points)
        if self.kind == "discrete":
            return np.isin(pts, np.asarray(self.atoms))
        if self.kind == "continuous1d":
            lo, hi = self.support
            return (pts >= lo) & (pts <= hi)
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.arity:
            return np.zeros(pts.shape[0], dtype=bool)
        return np.all(self.base.contains(pts), axis=1)


@dataclass(frozen=True, eq=False)
class DensityCandidate:
    """An evaluable density with quadrature hints.

    ``log_density`` maps an array of points (1D for discrete/continuous
    spaces, shape ``(n, L)`` for product spaces) to log-densities; ``-inf``
    is allowed anywhere, ``+inf`` only at points listed in ``singularities``.

    Quadrature hints for continuous spaces: ``window`` is a finite interval
    outside of which the mass is negligible, ``scale`` a length below which
    the density may vary, ``breakpoints`` points of non-smoothness and
    ``singularities`` pairs ``(z, gamma)`` for a ``|x - z| ** gamma`` blow-up.
    Product-space candidates list the 1D densities they are built from in
    ``components`` so the base rule can be planned from them.
    """

    id: str
    space: SampleSpace
    log_density: Callable[[np.ndarray], np.ndarray]
    metadata: Mapping = field(default_factory=dict)
    window: tuple | None = None
    scale: float | None = None
    breakpoints: tuple = ()
    singularities: tuple = ()
    components: tuple = ()

    def logpdf(self, points):
        return np.asarray(self.log_density(np.asarray(points, dtype=float)), dtype=float)

    def pdf(self, points):
        return np.exp(self.logpdf(points))

    def total_mass(self):
        pts, w = integration_rule(self.space, [self])
        return float(w @ np.exp(self.logpdf(pts)))

    def check_normalization(self, tol=NORMALIZATION_TOL):
        mass = self.total_mass()
        if not abs(mass - 1.0) <= tol:
            raise NormalizationError(f"candidate {self.id!r} integrates to {mass!r}")
        return mass

    def __repr__(self):
        return f"DensityCandidate(id={self.id!r}, space={self.space.kind})"


def _base_hints(candidates):
    out = []
    for c in candidates:
        if c.space.kind == "product":
            if not c.components:
                raise ValueError(f"product candidate {c.id!r} declares no components")
            out.extend(c.components)
        else:
            out.append(c)
    return out


def _rule_1d(space, candidates):
    lo, hi = space.support
    wins = [c.window for c in candidates if c.window is not None]
    if wins:
        a = max(lo, min(w[0] for w in wins))
        b = min(hi, max(w[1] for w in wins))
    else:
        a, b = lo, hi
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("continuous candidates on an unbounded support must declare a window")
    cuts = sorted({float(x) for c in candidates for x in c.breakpoints})
    sing = [s for c in candidates for s in c.singularities]
    scales = [c.scale for c in candidates if c.scale]
    max_panel = 4.0 * min(scales) if scales else None

    def integrands(x):
        rows = np.stack([c.logpdf(x) for c in candidates])
        return np.exp(0.5 * rows)

    return build_rule((a, b), integrands, cuts=cuts, singularities=sing,
                      n=space.nodes_per_panel, max_panel=max_panel)


def integration_rule(space, candidates):
    """Points and weights integrating every candidate of ``candidates``.

    Discrete spaces get their atoms with unit weights, product spaces the
    tensor power of the base rule.
    """
    if space.kind == "discrete":
        atoms = np.asarray(space.atoms, dtype=float)
        return atoms, np.ones(atoms.size)
    if space.kind == "continuous1d":
        return _rule_1d(space, list(candidates))
    base = space.base
    if base.kind == "discrete":
        atoms = np.asarray(base.atoms, dtype=float)
        pts = np.array(list(itertools.product(atoms, repeat=space.arity)), dtype=float)
        return pts.reshape(-1, space.arity), np.ones(len(pts))
    nodes, weights = _rule_1d(base, _base_hints(candidates))
    return tensor_rule(nodes, weights, space.arity)


def _same_space(p, q):
    if p.space != q.space:
        raise SpaceMismatchError("space mismatch")


def _log_affinity_terms(lp, lq):
    s = 0.5 * (lp + lq)
    # -inf + finite -> -inf (exact zero affinity); -inf + inf cannot occur
    # because +inf is only allowed at declared singular points, which are
    # never quadrature nodes.
    return np.exp(s)


def hellinger2(p, q):
    """Squared Hellinger distance ``1/2 * int (sqrt p - sqrt q)^2``.

    Examples
    --------
    >>> S = SampleSpace.discrete([0, 1])
    >>> from rhomix.families import categorical
    >>> round(hellinger2(categorical(S, [0.5, 0.5]), categorical(S, [0.9, 0.1])), 6)
    0.105573
    """
    _same_space(p, q)
    if p is q:
        return 0.0
    pts, w = integration_rule(p.space, [p, q])
    total = 0.0
    for sl in _chunks(len(w)):
        total += float(w[sl] @ _log_affinity_terms(p.logpdf(pts[sl]), q.logpdf(pts[sl])))
    return float(min(1.0, max(0.0, 1.0 - total)))


def total_variation(p, q):
    _same_space(p, q)
    if p is q:
        return 0.0
    pts, w = integration_rule(p.space, [p, q])
    total = 0.0
    for sl in _chunks(len(w)):
        total += float(w[sl] @ np.abs(p.pdf(pts[sl]) - q.pdf(pts[sl])))
    return float(min(1.0, max(0.0, 0.5 * total)))


def kl_divergence(p, q):
    """``int p log(p/q)``; ``inf`` when ``p`` charges a region where ``q`` vanishes."""
    _same_space(p, q)
    if p is q:
        return 0.0
    pts, w = integration_rule(p.space, [p, q])
    total = 0.0
    for sl in _chunks(len(w)):
        lp, lq = p.logpdf(pts[sl]), q.logpdf(pts[sl])
        charged = lp > -np.inf
        if np.any(charged & (lq == -np.inf) & (w[sl] > 0)):
            return math.inf
        d = np.where(charged, lp - np.where(charged, lq, 0.0), 0.0)
        total += float(w[sl] @ (np.exp(np.where(charged, lp, -np.inf)) * d))
    return max(0.0, total)


def _chunks(size, chunk=_CHUNK):
    for start in range(0, size, chunk):
        yield slice(start, min(size, start + chunk))


def finite_model_dimension(m):
    """Dimension bound ``9 log(2 m)`` of a finite model with ``m`` elements."""
    if m < 1:
        raise ValueError("model size must be >= 1")
    return 9.0 * math.log(2 * m)


def vc_index_finite(m):
    """VC-index bound ``1 + log2(m)`` of a finite function class."""
    if m < 1:
        raise ValueError("class size must be >= 1")
    return 1.0 + math.log2(m)


class FiniteModel:
    """An ordered, non-empty list of candidates on one space.

    Candidates are normalization-checked on construction (``check=True``).
    Squared Hellinger distances between members are computed on a shared
    rule and cached row by row.
    """

    def __init__(self, candidates: Sequence[DensityCandidate], dimension_bound=None,
                 check=True):
        candidates = list(candidates)
        if not candidates:
            raise ValueError("empty model")
        space = candidates[0].space
        for c in candidates:
            if c.space != space:
                raise SpaceMismatchError("space mismatch")
        ids = [c.id for c in candidates]
        if len(set(ids)) != len(ids):
            raise ValueError("candidate ids must be unique")
        self.space = space
        self.candidates = candidates
        self.dimension_bound = (finite_model_dimension(len(candidates))
                                if dimension_bound is None else float(dimension_bound))
        if self.dimension_bound <= 0:
            raise ValueError("dimension bound must be positive")
        self._index = {cid: i for i, cid in enumerate(ids)}
        self._rule = None
        self._h2_rows = {}
        self._sqrt = None
        # caches are shared by harness worker threads
        self._lock = threading.RLock()
        if check:
            self.check_normalization()

    def __len__(self):
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)

    def __getitem__(self, i):
        return self.candidates[i]

    @property
    def ids(self):
        return [c.id for c in self.candidates]

    def index_of(self, cid):
        return self._index[cid]

    def rule(self):
        with self._lock:
            if self._rule is None:
                self._rule = integration_rule(self.space, self.candidates)
            return self._rule

    def check_normalization(self, tol=NORMALIZATION_TOL):
        pts, w = self.rule()
        if len(self) * len(w) <= _SQRT_CACHE_LIMIT:
            masses = (self._sqrt_matrix() ** 2) @ w
        else:
            masses = np.zeros(len(self))
            for sl in _chunks(len(w), _CHUNK // 4):
                for i, c in enumerate(self.candidates):
                    masses[i] += w[sl] @ c.pdf(pts[sl])
        bad = np.flatnonzero(~(np.abs(masses - 1.0) <= tol))
        if bad.size:
            i = int(bad[0])
            raise NormalizationError(
                f"candidate {self.candidates[i].id!r} integrates to {masses[i]!r}")
        return masses

    def _sqrt_matrix(self):
        with self._lock:
            if self._sqrt is None:
                pts, _ = self.rule()
                self._sqrt = np.exp(0.5 * np.stack([c.logpdf(pts) for c in self.candidates]))
            return self._sqrt

    def hellinger2_rows(self, indices):
        """Squared Hellinger distances from ``indices`` to every member, shape (len(indices), |M|)."""
        indices = [int(i) for i in indices]
        with self._lock:
            return self._h2_rows_locked(indices)

    def _h2_rows_locked(self, indices):
        missing = sorted({i for i in indices if i not in self._h2_rows})
        if missing:
            pts, w = self.rule()
            if len(self) * len(w) <= _SQRT_CACHE_LIMIT:
                sq = self._sqrt_matrix()
                aff = (sq[missing] * w) @ sq.T
            else:
                aff = np.zeros((len(missing), len(self)))
                for sl in _chunks(len(w), _CHUNK // 4):
                    sq = np.exp(0.5 * np.stack([c.logpdf(pts[sl]) for c in self.candidates]))
                    aff += (sq[missing] * w[sl]) @ sq.T
            for row, i in zip(aff, missing):
                h2 = np.clip(1.0 - row, 0.0, 1.0)
                h2[i] = 0.0
                self._h2_rows[i] = h2
        return np.stack([self._h2_rows[i] for i in indices])
