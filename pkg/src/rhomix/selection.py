"""Hold-out selection of the spacing parameter."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .blocks import estimate_with_spacing, s_max
from .hmm import HmmParams
from .measure import FiniteModel
from .rho import DEFAULT_SLACK, rho_estimate

__all__ = ["SGrid", "make_s_grid", "select_s", "SelectionResult"]


@dataclass(frozen=True)
class SGrid:
    tau: float
    J: int
    values: tuple


def make_s_grid(n1, tau=math.e):
    """``{0} U {ceil(tau^j) : j = 0..J}`` with ``J = floor(log_tau(s_max(n1)))``."""
    if n1 < 4:
        raise ValueError("need n1 >= 4")
    if tau < math.e:
        raise ValueError("tau must be >= e")
    top = s_max(n1)
    J = 0
    # integer walk avoids log round-off at exact powers
    while tau ** (J + 1) <= top * (1 + 1e-12):
        J += 1
    values = sorted({0} | {math.ceil(tau ** j - 1e-9) for j in range(J + 1)})
    values = [v for v in values if v <= top]
    return SGrid(float(tau), J, tuple(values))


@dataclass
class SelectionResult:
    s_hat: int
    density: object
    table: object
    stage1: dict
    stage2_s: list


def select_s(sample1, sample2, model_per_s, grid, iota=1.0, slack=DEFAULT_SLACK, threads=1):
    """Two-stage spacing selection.

    Stage 1 runs :func:`estimate_with_spacing` on ``sample1`` for every ``s``
    in ``grid`` (``model_per_s(s)`` supplies the model). Stage 2 runs the
    rho-estimator on ``sample2`` over the distinct stage-1 outputs, each
    labelled with the smallest ``s`` that produced it. The two samples are
    assumed independent; nothing here can check that. Stage 1 runs on
    ``threads`` worker threads; the result does not depend on the count.
    """
    values = list(grid.values if isinstance(grid, SGrid) else grid)
    if not values:
        raise ValueError("empty spacing grid")
    values = sorted(values)

    def fit(s):
        return estimate_with_spacing(sample1, model_per_s(s), s, iota=iota, slack=slack)

    if threads > 1 and len(values) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(fit, values))
    else:
        fits = [fit(s) for s in values]
    stage1 = {}
    outputs = []
    by_key = {}
    for s, (cand, diag) in zip(values, fits):
        stage1[s] = (cand, diag)
        key = _density_key(cand)
        if key not in by_key:
            by_key[key] = s
            outputs.append((s, cand))
    stage2 = FiniteModel([replace(c, id=f"s={s}") for s, c in outputs], check=False)
    table = rho_estimate(sample2, stage2, slack=slack)
    s_hat, density = outputs[table.chosen_index]
    return SelectionResult(s_hat, density, table, stage1, [s for s, _ in outputs])


def _density_key(cand):
    """Identity of the density behind a candidate, independent of its model id."""
    meta = cand.metadata
    params = meta.get("params")
    if isinstance(params, HmmParams):
        return json.dumps({"L": meta["L"], **params.to_json()}, sort_keys=True)
    if "family" in meta:
        return json.dumps({"family": meta["family"], "params": list(params)}, sort_keys=True)
    return cand.id
