"""Concrete density families and finite nets of them.

Every constructor returns a :class:`~rhomix.measure.DensityCandidate` whose
``metadata`` holds a serializable descriptor ``{"family": ..., "params": ...}``
(see :func:`descriptor` and :func:`from_descriptor`).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .measure import DensityCandidate, SampleSpace, integration_rule

__all__ = [
    "ExpFamilySpec",
    "EXPONENTIAL",
    "expfam_log_density",
    "expfam_candidate",
    "categorical",
    "sample",
    "exponential",
    "gaussian",
    "falpha",
    "falpha_log_density",
    "exponential_net",
    "gaussian_location_net",
    "gaussian_scale_location_net",
    "log_concave_candidate",
    "log_concave_net_1d",
    "descriptor",
    "from_descriptor",
]

HALF_LINE = SampleSpace.continuous(0.0, math.inf)
REAL_LINE = SampleSpace.continuous()

# window half-widths in units of the scale; tails beyond are below 1e-16
_GAUSS_WIDTH = 12.0
_EXP_WIDTH = 40.0


def _fmt(x):
    return format(float(x), ".12g")


# -- categorical ---------------------------------------------------------------

def categorical(space, probs, id=None):
    """Probability vector ``probs`` over the atoms of a discrete ``space``."""
    if space.kind != "discrete":
        raise ValueError("categorical densities live on discrete spaces")
    probs = np.asarray(probs, dtype=float)
    if probs.shape != (len(space.atoms),) or np.any(probs < 0):
        raise ValueError("probs must be a non-negative vector over the atoms")
    atoms = np.asarray(space.atoms, dtype=float)
    order = np.argsort(atoms)
    sorted_atoms = atoms[order]
    with np.errstate(divide="ignore"):
        logp = np.log(probs)[order]

    def log_density(x):
        x = np.asarray(x, dtype=float)
        pos = np.clip(np.searchsorted(sorted_atoms, x), 0, len(sorted_atoms) - 1)
        hit = sorted_atoms[pos] == x
        return np.where(hit, logp[pos], -np.inf)

    if id is None:
        id = "cat(" + ",".join(_fmt(p) for p in probs) + ")"
    return DensityCandidate(id, space, log_density,
                            metadata={"family": "categorical", "params": [float(p) for p in probs],
                                      "atoms": [float(a) for a in space.atoms]})


# -- exponential families ------------------------------------------------------

@dataclass(frozen=True)
class ExpFamilySpec:
    """Densities ``exp(<eta(theta), T(x)> + A(theta) + B(x))``.

    ``A`` may be omitted, in which case it is computed by quadrature (cached
    per ``theta``) over ``window(theta)``. ``B`` returns ``-inf`` off the
    support.
    """

    name: str
    dim: int
    eta: Callable
    T: Callable
    B: Callable
    theta_domain: tuple
    space: SampleSpace = REAL_LINE
    A: Callable | None = None
    window: Callable | None = None
    scale: Callable | None = None
    breakpoints: tuple = ()
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def in_domain(self, theta):
        th = np.atleast_1d(np.asarray(theta, dtype=float))
        box = np.asarray(self.theta_domain, dtype=float).reshape(-1, 2)
        return bool(np.all((th >= box[:, 0]) & (th <= box[:, 1])))

    def log_normalizer(self, theta):
        if self.A is not None:
            return float(self.A(theta))
        key = tuple(np.atleast_1d(np.asarray(theta, dtype=float)).tolist())
        if key not in self._cache:
            unnorm = _expfam_candidate(self, theta, 0.0)
            pts, w = integration_rule(self.space, [unnorm])
            self._cache[key] = -math.log(float(w @ unnorm.pdf(pts)))
        return self._cache[key]


def _inner(eta, t, dim):
    """``<eta, T(x)>``; for ``dim > 1``, ``T`` stacks its components on axis 0."""
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    t = np.asarray(t, dtype=float)
    if dim == 1:
        return eta[0] * t
    return np.tensordot(eta, t, axes=(0, 0))


def expfam_log_density(spec, theta, x):
    """Log-density ``<eta(theta), T(x)> + A(theta) + B(x)``, ``-inf`` off support."""
    if not spec.in_domain(theta):
        raise ValueError(f"theta={theta!r} outside {spec.name} domain {spec.theta_domain}")
    x = np.asarray(x, dtype=float)
    b = np.asarray(spec.B(x), dtype=float)
    on = b > -np.inf
    xs = np.where(on, x, 0.0)
    val = _inner(spec.eta(theta), spec.T(xs), spec.dim) + spec.log_normalizer(theta) + np.where(on, b, 0.0)
    return np.where(on, val, -np.inf)


def _expfam_candidate(spec, theta, log_norm, id=None):
    eta = spec.eta(theta)

    def log_density(x):
        b = np.asarray(spec.B(x), dtype=float)
        on = b > -np.inf
        xs = np.where(on, x, 0.0)
        return np.where(on, _inner(eta, spec.T(xs), spec.dim) + log_norm + np.where(on, b, 0.0), -np.inf)

    th = np.atleast_1d(np.asarray(theta, dtype=float))
    if id is None:
        id = f"{spec.name}(" + ",".join(_fmt(t) for t in th) + ")"
    return DensityCandidate(
        id, spec.space, log_density,
        metadata={"family": spec.name, "params": [float(t) for t in th]},
        window=spec.window(theta) if spec.window else None,
        scale=spec.scale(theta) if spec.scale else None,
        breakpoints=tuple(spec.breakpoints),
    )


def expfam_candidate(spec, theta, id=None):
    if not spec.in_domain(theta):
        raise ValueError(f"theta={theta!r} outside {spec.name} domain {spec.theta_domain}")
    return _expfam_candidate(spec, theta, spec.log_normalizer(theta), id=id)


def _exp_B(x):
    return np.where(np.asarray(x) >= 0, 0.0, -np.inf)


EXPONENTIAL = ExpFamilySpec(
    name="exponential",
    dim=1,
    eta=lambda th: -float(np.atleast_1d(th)[0]),
    T=lambda x: x,
    B=_exp_B,
    A=lambda th: math.log(float(np.atleast_1d(th)[0])),
    theta_domain=((1e-12, 1e12),),
    space=HALF_LINE,
    window=lambda th: (0.0, _EXP_WIDTH / float(np.atleast_1d(th)[0])),
    breakpoints=(0.0,),
)


def exponential(theta, space=HALF_LINE):
    """Exponential density ``theta * exp(-theta x)`` on ``x >= 0``."""
    spec = EXPONENTIAL if space == HALF_LINE else _replace_space(EXPONENTIAL, space)
    return expfam_candidate(spec, float(theta))


def _replace_space(spec, space):
    return ExpFamilySpec(spec.name, spec.dim, spec.eta, spec.T, spec.B, spec.theta_domain,
                         space, spec.A, spec.window, spec.scale, spec.breakpoints)


def gaussian(mean, sigma, space=REAL_LINE, id=None):
    """Normal density with the given mean and standard deviation."""
    mean, sigma = float(mean), float(sigma)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    c = -0.5 * math.log(2 * math.pi * sigma * sigma)

    def log_density(x):
        z = (np.asarray(x, dtype=float) - mean) / sigma
        return c - 0.5 * z * z

    if id is None:
        id = f"gauss({_fmt(mean)},{_fmt(sigma)})"
    return DensityCandidate(id, space, log_density,
                            metadata={"family": "gaussian", "params": [mean, sigma]},
                            window=(mean - _GAUSS_WIDTH * sigma, mean + _GAUSS_WIDTH * sigma),
                            scale=sigma)


# -- singular translate family ---------------------------------------------------

def falpha_log_density(alpha, z, x):
    """Log of ``(1 - alpha)/2 * |x - z|^(-alpha)`` on ``|x - z| <= 1``.

    ``+inf`` at ``x == z`` and ``-inf`` off the unit ball around ``z``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    x = np.asarray(x, dtype=float)
    u = np.abs(x - z)
    inside = u <= 1.0
    with np.errstate(divide="ignore"):
        val = math.log((1.0 - alpha) / 2.0) - alpha * np.log(np.where(inside, u, 1.0))
    return np.where(inside, val, -np.inf)


def falpha(alpha, z, space=REAL_LINE, id=None):
    alpha, z = float(alpha), float(z)
    if id is None:
        id = f"falpha({_fmt(alpha)},{_fmt(z)})"
    return DensityCandidate(id, space, lambda x: falpha_log_density(alpha, z, x),
                            metadata={"family": "falpha", "params": [alpha, z]},
                            window=(z - 1.0, z + 1.0), breakpoints=(z - 1.0, z + 1.0),
                            singularities=((z, -alpha),))


# -- nets ------------------------------------------------------------------------

def exponential_net(theta_min, theta_max, count, space=HALF_LINE):
    """Log-uniform grid of ``count`` exponential densities on ``[theta_min, theta_max]``."""
    if not 0 < theta_min < theta_max:
        raise ValueError("need 0 < theta_min < theta_max")
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        thetas = [math.sqrt(theta_min * theta_max)]
    else:
        thetas = np.exp(np.linspace(math.log(theta_min), math.log(theta_max), count))
        thetas[0], thetas[-1] = theta_min, theta_max
    return [exponential(t, space) for t in thetas]


def _uniform_grid(lo, hi, count):
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        return [0.5 * (lo + hi)]
    return list(np.linspace(lo, hi, count))


def gaussian_location_net(sigma, z_min, z_max, count):
    """Gaussians with common scale ``sigma`` and means uniform on ``[z_min, z_max]``."""
    return [gaussian(z, sigma) for z in _uniform_grid(z_min, z_max, count)]


def gaussian_scale_location_net(z_min, z_max, z_count, sigma_min, sigma_max, sigma_count):
    """Uniform mean grid times log-uniform scale grid, means varying fastest."""
    if sigma_count == 1:
        sigmas = [math.sqrt(sigma_min * sigma_max)]
    else:
        sigmas = list(np.exp(np.linspace(math.log(sigma_min), math.log(sigma_max), sigma_count)))
    return [gaussian(z, s) for s in sigmas for z in _uniform_grid(z_min, z_max, z_count)]


def piecewise_linear_log_density(knots, slopes, offset=0.0):
    """Evaluator of the continuous piecewise-linear ``g`` with ``g(knots[0]) = offset``."""
    knots = np.asarray(knots, dtype=float)
    slopes = np.asarray(slopes, dtype=float)
    heights = offset + np.concatenate([[0.0], np.cumsum(slopes * np.diff(knots))])

    def g(x):
        x = np.asarray(x, dtype=float)
        i = np.clip(np.searchsorted(knots, x, side="right") - 1, 0, len(slopes) - 1)
        val = heights[i] + slopes[i] * (x - knots[i])
        return np.where((x >= knots[0]) & (x <= knots[-1]), val, -np.inf)

    return g, heights


def log_concave_candidate(knots, slopes, space=REAL_LINE):
    """``exp(g - log Z)`` for the piecewise-linear ``g`` with the given slopes.

    ``Z`` is computed by quadrature. Slopes must be non-increasing so that
    ``g`` is concave.
    """
    knots = np.asarray(knots, dtype=float)
    slopes = [float(s) for s in slopes]
    if len(slopes) != len(knots) - 1:
        raise ValueError("need one slope per knot interval")
    if any(s1 < s2 for s1, s2 in zip(slopes, slopes[1:])):
        raise ValueError("slopes must be non-increasing")
    a, b = float(knots[0]), float(knots[-1])
    g, _ = piecewise_linear_log_density(knots, slopes)
    unnorm = DensityCandidate("unnormalized", space, g, window=(a, b), breakpoints=tuple(knots))
    pts, w = integration_rule(space, [unnorm])
    log_z = math.log(float(w @ unnorm.pdf(pts)))
    return DensityCandidate(
        "logconcave(" + ",".join(_fmt(s) for s in slopes) + ")",
        space,
        lambda x: g(x) - log_z,
        metadata={"family": "logconcave_pl", "params": slopes, "knots": knots.tolist(),
                  "log_normalizer": log_z, "certified_net": False},
        window=(a, b), breakpoints=tuple(knots))


def log_concave_net_1d(support, knot_count, slope_grid):
    """Densities ``exp(g)`` with ``g`` concave and piecewise linear on equispaced knots.

    One candidate per non-increasing slope sequence drawn from ``slope_grid``.
    This is a practical finite stand-in for a log-concave net, not a
    certified epsilon-net; every candidate's metadata says so.
    """
    if knot_count < 2:
        raise ValueError("knot_count must be >= 2")
    knots = np.linspace(float(support[0]), float(support[1]), knot_count)
    values = sorted(set(float(s) for s in slope_grid), reverse=True)
    return [log_concave_candidate(knots, slopes)
            for slopes in itertools.combinations_with_replacement(values, knot_count - 1)]


# -- serialization -----------------------------------------------------------------

def descriptor(candidate):
    """JSON-ready ``{"family": ..., "params": [...]}`` for a family candidate."""
    meta = candidate.metadata
    out = {"family": meta["family"], "params": list(meta["params"])}
    if meta["family"] == "categorical":
        out["atoms"] = list(meta["atoms"])
    if meta["family"] == "logconcave_pl":
        out["knots"] = list(meta["knots"])
    return out


def from_descriptor(desc):
    fam, params = desc["family"], desc["params"]
    if fam == "categorical":
        return categorical(SampleSpace.discrete(desc["atoms"]), params)
    if fam == "exponential":
        (theta,) = params
        return exponential(theta)
    if fam == "gaussian":
        return gaussian(*params)
    if fam == "falpha":
        return falpha(*params)
    if fam == "logconcave_pl":
        return log_concave_candidate(desc["knots"], params)
    raise ValueError(f"unknown family {fam!r}")


# -- sampling ----------------------------------------------------------------------

def sample(candidate, size, rng):
    """Draw ``size`` i.i.d. points from a 1D family candidate."""
    meta = candidate.metadata
    fam, params = meta["family"], meta["params"]
    if fam == "categorical":
        return rng.choice(np.asarray(meta["atoms"], dtype=float), size=size,
                          p=np.asarray(params, dtype=float))
    if fam == "exponential":
        return rng.exponential(1.0 / params[0], size=size)
    if fam == "gaussian":
        return rng.normal(params[0], params[1], size=size)
    if fam == "falpha":
        alpha, z = params
        u = rng.random(size) ** (1.0 / (1.0 - alpha))
        return z + np.where(rng.random(size) < 0.5, -u, u)
    if fam == "logconcave_pl":
        # inverse CDF on a fine grid; adequate for simulation, not for oracles
        knots = np.asarray(meta["knots"], dtype=float)
        x = np.linspace(knots[0], knots[-1], 20001)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (candidate.pdf(x[1:]) + candidate.pdf(x[:-1]))
                                               * np.diff(x))])
        return np.interp(rng.random(size) * cdf[-1], cdf, x)
    raise ValueError(f"no sampler for family {fam!r}")
