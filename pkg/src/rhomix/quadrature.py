"""Composite Gauss-Legendre rules on the real line.

Rules are plain ``(nodes, weights)`` pairs so that ``weights @ f(nodes)``
approximates an integral. Panels adjacent to a declared power singularity
``|x - z| ** gamma`` (``-1 < gamma < 0``) are geometrically graded towards
``z`` and the innermost panel uses a Gauss-Jacobi rule whose weight function
is ``|x - z| ** gamma``, folded into the returned weights.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

__all__ = ["QuadratureError", "Panel", "build_rule", "tensor_rule", "gauss_legendre"]

GRADING_RATIO = 0.15
GRADING_LEVELS = 12
MAX_BISECTIONS = 40
MAX_PANELS = 20000
# innermost graded width never drops below this fraction of |z|; nodes closer
# to z than a few ulps of z lose all relative precision in x - z
GRADING_FLOOR = 1e-9


class QuadratureError(RuntimeError):
    """Adaptive refinement did not meet its tolerance."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


@lru_cache(maxsize=None)
def gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=None)
def _gauss_jacobi(n, a, b):
    t, w = roots_jacobi(n, a, b)
    return np.asarray(t), np.asarray(w)


class Panel:
    """One integration panel ``[a, b]``.

    ``singular`` is ``None`` for a plain Legendre panel, or ``("left", gamma)``
    / ``("right", gamma)`` for a Jacobi panel with the weight singularity at
    that end. Singular panels are never bisected.
    """

    __slots__ = ("a", "b", "singular")

    def __init__(self, a, b, singular=None):
        self.a = float(a)
        self.b = float(b)
        self.singular = singular

    def rule(self, n):
        h = self.b - self.a
        if self.singular is None:
            t, w = gauss_legendre(n)
            return self.a + 0.5 * h * (t + 1.0), 0.5 * h * w
        side, gamma = self.singular
        if side == "left":
            t, w = _gauss_jacobi(n, 0.0, gamma)
            x = self.a + 0.5 * h * (1.0 + t)
            d = x - self.a
        else:
            t, w = _gauss_jacobi(n, gamma, 0.0)
            x = self.b - 0.5 * h * (1.0 - t)
            d = self.b - x
        # Fold the weight back in using the offset of the stored node, not the
        # ideal one: near z = 0.3 a node is only good to ulp(z), which would
        # otherwise be amplified by |d|^gamma on the nodes closest to z.
        eff = 0.5 * h * w * (2.0 * d / h) ** (-gamma)
        return x, eff

    def __repr__(self):
        return f"Panel({self.a!r}, {self.b!r}, singular={self.singular!r})"


def _graded(a, b, z_side, gamma):
    """Panels on ``[a, b]`` graded towards the singular end ``z_side``."""
    h = b - a
    floor = GRADING_FLOOR * abs(a if z_side == "left" else b)
    levels = 0
    while levels < GRADING_LEVELS and h * GRADING_RATIO ** (levels + 1) >= floor:
        levels += 1
    widths = [h * GRADING_RATIO ** k for k in range(levels + 1)]
    panels = []
    if z_side == "left":
        for k in range(levels):
            panels.append(Panel(a + widths[k + 1], a + widths[k]))
        panels.append(Panel(a, a + widths[-1], ("left", gamma)))
    else:
        for k in range(levels):
            panels.append(Panel(b - widths[k], b - widths[k + 1]))
        panels.append(Panel(b - widths[-1], b, ("right", gamma)))
    return panels


def initial_panels(window, cuts=(), singularities=()):
    """Split ``window`` at ``cuts`` and grade towards ``singularities``.

    ``singularities`` is an iterable of ``(z, gamma)``; when several share a
    location the most negative exponent is kept.
    """
    lo, hi = window
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValueError(f"quadrature window must be a finite interval, got {window}")
    sing = {}
    for z, gamma in singularities:
        if lo <= z <= hi:
            sing[float(z)] = min(gamma, sing.get(float(z), 0.0))
    points = {lo, hi}
    points.update(float(c) for c in cuts if lo < c < hi)
    points.update(sing)
    points = sorted(points)
    panels = []
    for a, b in zip(points[:-1], points[1:]):
        if b - a <= 0:
            continue
        left, right = sing.get(a), sing.get(b)
        if left is not None and right is not None:
            mid = 0.5 * (a + b)
            panels += _graded(a, mid, "left", left) + _graded(mid, b, "right", right)
        elif left is not None:
            panels += _graded(a, b, "left", left)
        elif right is not None:
            panels += _graded(a, b, "right", right)
        else:
            panels.append(Panel(a, b))
    return panels


def build_rule(window, integrands, cuts=(), singularities=(), n=64, tol=1e-11,
               max_panel=None):
    """Adaptive composite rule resolving every row of ``integrands``.

    Parameters
    ----------
    window : (float, float)
        Finite integration interval.
    integrands : callable
        Maps a 1D array of nodes to an array of shape ``(m, len(nodes))``;
        a panel is accepted once the ``n``-point and ``n // 2``-point rules
        agree within ``tol`` for every row.
    n : int
        Nodes per panel.
    max_panel : float, optional
        Upper bound on the width of non-singular panels.

    Returns
    -------
    nodes, weights : ndarray
    """
    stack = initial_panels(window, cuts, singularities)
    if max_panel is not None:
        split = []
        for p in stack:
            if p.singular is None and p.b - p.a > max_panel:
                k = int(np.ceil((p.b - p.a) / max_panel))
                edges = np.linspace(p.a, p.b, k + 1)
                split += [Panel(u, v) for u, v in zip(edges[:-1], edges[1:])]
            else:
                split.append(p)
        stack = split
    stack = [(p, 0) for p in reversed(stack)]
    accepted = []
    worst = 0.0
    evaluated = 0
    while stack:
        panel, depth = stack.pop()
        evaluated += 1
        x, w = panel.rule(n)
        if panel.singular is not None:
            accepted.append((x, w))
            continue
        xh, wh = panel.rule(n // 2)
        fine = np.atleast_2d(integrands(x)) @ w
        coarse = np.atleast_2d(integrands(xh)) @ wh
        err = float(np.max(np.abs(fine - coarse))) if fine.size else 0.0
        if not np.isfinite(err):
            raise QuadratureError("non-finite integrand on a regular panel", np.inf)
        if err <= tol:
            accepted.append((x, w))
        elif evaluated >= MAX_PANELS:
            raise QuadratureError(f"panel budget of {MAX_PANELS} exhausted", err)
        elif depth >= MAX_BISECTIONS:
            worst = max(worst, err)
            accepted.append((x, w))
        else:
            mid = 0.5 * (panel.a + panel.b)
            stack.append((Panel(mid, panel.b), depth + 1))
            stack.append((Panel(panel.a, mid), depth + 1))
    if worst > 0.0:
        raise QuadratureError("adaptive bisection limit reached", worst)
    nodes = np.concatenate([x for x, _ in accepted])
    weights = np.concatenate([w for _, w in accepted])
    order = np.argsort(nodes, kind="stable")
    return nodes[order], weights[order]


def tensor_rule(nodes, weights, arity):
    """``arity``-fold tensor product of a 1D rule; nodes have shape (G**L, L)."""
    grids = np.meshgrid(*([nodes] * arity), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*([weights] * arity), indexing="ij")
    w = np.ones(pts.shape[0])
    for g in wgrids:
        w = w * g.ravel()
    return pts, w
