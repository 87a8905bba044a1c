"""Configuration-driven experiments: simulate, estimate, select, report.

A config is a JSON object with a ``version`` field; unknown fields are
rejected. Rows of the report are ordered by ``(replicate, n, s)`` whatever
the number of worker threads, and every random draw comes from a stream
keyed by ``(seed, replicate, n, role)``, so the report only depends on the
config.
"""

from __future__ import annotations

import csv
import io
import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import families
from .blocks import block_size, estimate_with_spacing, s_max
from .dependence import ContaminationSpec, DiffusionSpec, contaminate, simulate_hmm, \
    simulate_langevin, stream
from .hmm import HmmParams, build_hmm_model, delta_for, param_error, product_chain_density, \
    stationary_distribution, vbar_for_nets, window
from .measure import FiniteModel, SampleSpace, hellinger2
from .rho import Sample
from .selection import make_s_grid, select_s

__all__ = ["ConfigError", "ExperimentConfig", "ReportRow", "RiskReport", "REPORT_COLUMNS",
           "CHOICE_COLUMNS", "load_config", "run_experiment", "fit_rate_slope", "summarize",
           "random_categorical_model"]

CONFIG_VERSION = 1
REPORT_COLUMNS = ["scenario", "replicate", "n", "s_used", "h2", "param_err", "ms", "seed"]
SCENARIOS = ("iid_recovery", "hmm_rate", "contamination", "spacing_selection",
             "langevin_invariant")
_FIELDS = {"version", "scenario", "truth", "model", "n", "s_policy", "replicates", "seed",
           "contamination", "output", "holdout_n", "record_timing", "iota"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    scenario: str
    truth: dict
    model: dict
    n: list
    s_policy: dict
    replicates: int
    seed: int
    contamination: dict | None = None
    output: str | None = None
    holdout_n: int | None = None
    record_timing: bool = False
    iota: float = 1.0
    version: int = CONFIG_VERSION

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(d) - _FIELDS)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        for req in ("version", "scenario", "truth", "model", "n", "s_policy", "replicates", "seed"):
            if req not in d:
                raise ConfigError(f"missing config field {req!r}")
        if d["version"] != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {d['version']!r}")
        if d["scenario"] not in SCENARIOS:
            raise ConfigError(f"field 'scenario': unknown scenario {d['scenario']!r}")
        ns = d["n"] if isinstance(d["n"], list) else [d["n"]]
        if not ns or not all(isinstance(x, int) and x >= 4 for x in ns):
            raise ConfigError("field 'n': expected integers >= 4")
        if not isinstance(d["replicates"], int) or d["replicates"] < 1:
            raise ConfigError("field 'replicates': expected an integer >= 1")
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            raise ConfigError("field 'seed': expected a non-negative integer")
        pol = d["s_policy"]
        if not isinstance(pol, dict) or pol.get("kind") not in ("fixed", "grid", "oracle_scan"):
            raise ConfigError("field 's_policy': expected kind fixed | grid | oracle_scan")
        if pol["kind"] == "fixed" and not (isinstance(pol.get("s"), int) and pol["s"] >= 0):
            raise ConfigError("field 's_policy.s': expected a non-negative integer")
        if pol["kind"] == "grid" and float(pol.get("tau", math.e)) < math.e:
            raise ConfigError("field 's_policy.tau': must be >= e")
        if d["scenario"] == "spacing_selection" and pol["kind"] != "grid":
            raise ConfigError("scenario spacing_selection needs s_policy kind 'grid'")
        return cls(scenario=d["scenario"], truth=d["truth"], model=d["model"], n=list(ns),
                   s_policy=dict(pol), replicates=d["replicates"], seed=d["seed"],
                   contamination=d.get("contamination"), output=d.get("output"),
                   holdout_n=d.get("holdout_n"), record_timing=bool(d.get("record_timing", False)),
                   iota=float(d.get("iota", 1.0)))

    def to_dict(self):
        out = {"version": self.version, "scenario": self.scenario, "truth": self.truth,
               "model": self.model, "n": self.n, "s_policy": self.s_policy,
               "replicates": self.replicates, "seed": self.seed}
        for key in ("contamination", "output", "holdout_n"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.record_timing:
            out["record_timing"] = True
        if self.iota != 1.0:
            out["iota"] = self.iota
        return out


def load_config(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return ExperimentConfig.from_dict(d)


@dataclass
class ReportRow:
    scenario: str
    replicate: int
    n: int
    s_used: int | None
    h2: float | None
    param_err: float | None
    ms: float | None
    seed: int
    chosen_id: str | None = None
    model_file: str | None = None

    def cells(self):
        def num(x):
            return "" if x is None else format(float(x), ".17g")
        return [self.scenario, str(self.replicate), str(self.n),
                "" if self.s_used is None else str(self.s_used), num(self.h2),
                num(self.param_err), "" if self.ms is None else f"{self.ms:.3f}", str(self.seed)]


CHOICE_COLUMNS = ["scenario", "replicate", "n", "s_used", "chosen_id", "model_file"]


@dataclass
class RiskReport:
    rows: list
    summary: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)
    # model file name -> model object, for the rows' ``model_file`` references
    models: dict = field(default_factory=dict)

    def choices_csv(self):
        """Chosen candidate of every row, so each ``h2`` can be recomputed."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CHOICE_COLUMNS)
        for r in self.rows:
            w.writerow([r.scenario, r.replicate, r.n, "" if r.s_used is None else r.s_used,
                        r.chosen_id or "", r.model_file or ""])
        return buf.getvalue()

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow(r.cells())
        return buf.getvalue()

    def summary_json(self):
        return json.dumps({"summary": self.summary, "errors": self.errors},
                          indent=2, sort_keys=True) + "\n"


# -- builders ------------------------------------------------------------------------

def _h2_discrete(p, q):
    return max(0.0, 1.0 - float(np.sum(np.sqrt(np.asarray(p) * np.asarray(q)))))


def random_categorical_model(count, atoms, min_h, seed, max_tries=100000):
    """``count`` categorical laws on ``atoms`` points, pairwise Hellinger ``>= min_h``.

    Draws flat Dirichlet vectors from a seeded stream and keeps those far
    enough from every vector kept so far.
    """
    rng = stream(seed, "random_categorical")
    kept = []
    tries = 0
    while len(kept) < count:
        tries += 1
        if tries > max_tries:
            raise ConfigError(f"could not draw {count} laws with pairwise h >= {min_h}")
        p = rng.dirichlet(np.ones(atoms))
        p = np.round(p, 12)
        p = p / p.sum()
        if all(math.sqrt(_h2_discrete(p, q)) >= min_h for q in kept):
            kept.append(p)
    space = SampleSpace.discrete(range(atoms))
    return FiniteModel([families.categorical(space, p, id=f"c{i}") for i, p in enumerate(kept)])


def _net(spec, n=None):
    kind = spec.get("family")
    if kind == "exponential":
        return families.exponential_net(spec["theta_min"], spec["theta_max"], spec["count"])
    if kind == "exponential_centered":
        # geometric grid of 2*half+1 rates centred at `center` with log-pitch `log_step`
        c, half = spec["center"], spec["half"]
        if "log_step_scale" in spec:
            # pitch shrinks like n^-1/2, the scale of the sampling error
            if n is None:
                raise ConfigError("log_step_scale needs the sample size")
            step = spec["log_step_scale"] / math.sqrt(n)
        else:
            step = spec["log_step"]
        return [families.exponential(c * math.exp(step * j)) for j in range(-half, half + 1)]
    if kind == "gaussian_location":
        return families.gaussian_location_net(spec["sigma"], spec["z_min"], spec["z_max"],
                                              spec["count"])
    if kind == "gaussian_scale_location":
        return families.gaussian_scale_location_net(spec["z_min"], spec["z_max"], spec["z_count"],
                                                    spec["sigma_min"], spec["sigma_max"],
                                                    spec["sigma_count"])
    if kind == "log_concave":
        return families.log_concave_net_1d(spec["support"], spec["knot_count"], spec["slope_grid"])
    if kind == "descriptors":
        return [families.from_descriptor(x) for x in spec["candidates"]]
    raise ConfigError(f"unknown net family {kind!r}")


def _hmm_truth(truth):
    try:
        emissions = [families.from_descriptor(e) for e in truth["emissions"]]
        Q = np.asarray(truth["Q"], dtype=float)
        w = np.asarray(truth["w"], dtype=float) if "w" in truth else stationary_distribution(Q)
        return HmmParams(w, Q, emissions)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"field 'truth': {exc}") from None


class _ModelCache:
    """Per-(n, s) models shared read-only across replicates."""

    def __init__(self, build):
        self._build = build
        self._models = {}
        self._lock = threading.Lock()

    def get(self, *key):
        with self._lock:
            if key not in self._models:
                self._models[key] = self._build(*key)
            return self._models[key]


def _hmm_model_builder(spec, K):
    L = spec["L"]
    q_grid = None if "q_grid" not in spec else [np.asarray(q, dtype=float) for q in spec["q_grid"]]
    n_scaled = any("log_step_scale" in x for x in spec["emission_nets"])
    built = {}

    def build(n, s):
        nets = [_net(x, n) for x in spec["emission_nets"]]
        delta = spec.get("delta", "auto")
        if delta == "auto":
            vbar = vbar_for_nets([len(net) for net in nets], L)
            delta = delta_for(vbar, block_size(n, s, 1), K)
        step = spec.get("step")
        # the grid only depends on (delta, n-scaled nets); reuse identical models across s
        key = (float(delta), n if n_scaled else None)
        if key not in built:
            built[key] = build_hmm_model(
                nets, K, L, float(delta), step=None if step is None else _fraction(step),
                q_grid=q_grid, w_mode=spec.get("w_mode", "grid"), q_bounds=spec.get("q_bounds"),
                w_bounds=spec.get("w_bounds"), budget=spec.get("budget", 20000))
        return built[key]

    return build


def _fraction(x):
    from fractions import Fraction
    return Fraction(x) if isinstance(x, str) else Fraction(str(x))


# -- scenarios -----------------------------------------------------------------------

class _Scenario:
    """Simulation and model plumbing for one config."""

    def __init__(self, cfg):
        self.cfg = cfg
        kind = cfg.scenario
        self.contam = _contamination(cfg.contamination)
        if kind == "iid_recovery":
            self.model = self._iid_model(cfg.model)
            t = cfg.truth
            if "model_index" in t:
                self.truth_density = self.model[int(t["model_index"])]
            else:
                self.truth_density = families.from_descriptor(t)
            self.models = _ModelCache(lambda n, s: self.model)
        elif kind in ("hmm_rate", "contamination", "spacing_selection"):
            self.truth = _hmm_truth(cfg.truth)
            self.L = int(cfg.model["L"])
            self.truth_density = product_chain_density(self.truth.stationary(), self.L)
            self.hmm_models = _ModelCache(_hmm_model_builder(cfg.model, self.truth.K))
            self.models = _ModelCache(lambda n, s: self.hmm_models.get(n, s).model)
        elif kind == "langevin_invariant":
            t = cfg.truth
            if t.get("potential") != "quadratic":
                raise ConfigError("field 'truth.potential': only 'quadratic' is supported")
            a = float(t.get("a", 1.0))
            self.diffusion = DiffusionSpec(lambda y: -a * y, float(t["dt"]),
                                           burn_in=int(t.get("burn_in", 1000)),
                                           thin=int(round(float(t["delta_t"]) / float(t["dt"]))))
            # invariant law exp(-2U) with U = a x^2 / 2 is N(0, 1/(2a))
            self.truth_density = families.gaussian(0.0, math.sqrt(1.0 / (2.0 * a)))
            self.model = self._iid_model(cfg.model)
            self.models = _ModelCache(lambda n, s: self.model)

    @staticmethod
    def _iid_model(spec):
        kind = spec.get("kind", spec.get("family", "descriptors"))
        if kind == "random_categorical":
            return random_categorical_model(spec["count"], spec["atoms"], spec["min_h"],
                                            spec.get("seed", 0))
        return FiniteModel(_net({**spec, "family": kind}))

    def simulate(self, replicate, n, run=0):
        """Sample of ``n`` points (windowed for HMMs) for ``(replicate, n, run)``."""
        cfg = self.cfg
        key = (cfg.seed, "rep", replicate, "n", n, "run", run)
        if cfg.scenario == "iid_recovery":
            y = families.sample(self.truth_density, n, stream(*key, "data"))
            y = self._contaminate(y, key)
            return Sample(self.truth_density.space, y)
        if cfg.scenario == "langevin_invariant":
            y = simulate_langevin(self.diffusion, n, stream(*key, "data"))
            y = self._contaminate(y, key)
            return Sample(self.truth_density.space, y)
        # n windowed points need N = n + L - 1 observations
        N = n + self.L - 1
        y = simulate_hmm(self.truth.stationary(), N, stream(*key, "data"))
        y = self._contaminate(y, key)
        return window(y, self.L, self.truth.base_space).sample

    def _contaminate(self, y, key):
        if self.contam is None:
            return y
        out, _ = contaminate(y, self.contam, stream(*key, "contamination"))
        return out

    def param_err(self, n, s, cand):
        if not hasattr(self, "hmm_models"):
            return None
        hm = self.hmm_models.get(n, s)
        return param_error(hm.params_of(cand.id), self.truth.stationary())

    def h2(self, cand):
        return hellinger2(self.truth_density, cand)

    def persistable_model(self, n, s):
        if hasattr(self, "hmm_models"):
            return self.hmm_models.get(n, s)
        return self.models.get(n, s)


def _contamination(spec):
    if spec is None:
        return None
    try:
        c = spec["contaminant"]
        contaminant = float(c) if isinstance(c, (int, float)) else families.from_descriptor(c)
        return ContaminationSpec(spec["mode"], contaminant, eps=float(spec.get("eps", 0.0)),
                                 indices=tuple(spec.get("indices", ())))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"field 'contamination': {exc}") from None


def _replicate(scn, r):
    """All rows (and errors) of one replicate, ordered by (n, s)."""
    cfg = scn.cfg
    rows, errors = [], []
    pol = cfg.s_policy
    for n in cfg.n:
        t0 = time.perf_counter()
        try:
            sample = scn.simulate(r, n)
            if pol["kind"] == "fixed":
                s = pol["s"]
                cand, _ = estimate_with_spacing(sample, scn.models.get(n, s), s, iota=cfg.iota)
                out = [(cfg.scenario, s, cand)]
            elif pol["kind"] == "oracle_scan":
                out = []
                for s in make_s_grid(n, float(pol.get("tau", math.e))).values:
                    cand, _ = estimate_with_spacing(sample, scn.models.get(n, s), s, iota=cfg.iota)
                    out.append((cfg.scenario, s, cand))
            else:
                n2 = cfg.holdout_n or n
                holdout = scn.simulate(r, n2, run=1)
                grid = make_s_grid(n, float(pol.get("tau", math.e)))
                res = select_s(sample, holdout, lambda s: scn.models.get(n, s), grid, iota=cfg.iota)
                out = [(cfg.scenario, res.s_hat, res.density)]
                if cfg.scenario == "spacing_selection":
                    out += [(f"{cfg.scenario}:fixed", s, c) for s, (c, _) in sorted(res.stage1.items())]
            for label, s, cand in out:
                rows.append(ReportRow(label, r, n, s, scn.h2(cand), scn.param_err(n, s, cand),
                                      None, cfg.seed, chosen_id=cand.id))
        except Exception as exc:  # recorded per replicate, never swallowed silently
            errors.append({"replicate": r, "n": n, "error": f"{type(exc).__name__}: {exc}"})
            rows.append(ReportRow(cfg.scenario, r, n, None, None, None, None, cfg.seed))
        if cfg.record_timing:
            ms = 1000.0 * (time.perf_counter() - t0)
            for row in rows:
                if row.n == n and row.ms is None:
                    row.ms = ms
    return rows, errors


def run_experiment(cfg, threads=1):
    """Run every replicate of ``cfg``; returns a :class:`RiskReport`."""
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    scn = _Scenario(cfg)
    reps = range(cfg.replicates)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda r: _replicate(scn, r), reps))
    else:
        results = [_replicate(scn, r) for r in reps]
    rows = [row for rr, _ in results for row in rr]
    errors = [e for _, ee in results for e in ee]
    models, names = {}, {}
    for row in rows:
        if row.chosen_id is None:
            continue
        model = scn.persistable_model(row.n, row.s_used)
        if id(model) not in names:
            names[id(model)] = f"model_{len(names)}.json"
            models[names[id(model)]] = model
        row.model_file = names[id(model)]
    report = RiskReport(rows, errors=errors, models=models)
    report.summary = summarize(rows)
    return report


# -- analysis ------------------------------------------------------------------------

def fit_rate_slope(rows):
    """Least-squares fit of ``log(median h2)`` against ``log(n)``.

    ``rows`` are :class:`ReportRow` objects or ``(n, h2)`` pairs.
    Returns ``(slope, intercept, r2)``.
    """
    by_n = {}
    for r in rows:
        n, h2 = (r.n, r.h2) if isinstance(r, ReportRow) else r
        if h2 is not None and not (isinstance(h2, float) and math.isnan(h2)):
            by_n.setdefault(int(n), []).append(float(h2))
    if len(by_n) < 3:
        raise ValueError("need at least 3 distinct n values")
    ns = np.array(sorted(by_n), dtype=float)
    med = np.array([np.median(by_n[int(n)]) for n in ns])
    if np.any(med <= 0):
        raise ValueError("median h2 is zero for some n; log-log fit undefined")
    x, y = np.log(ns), np.log(med)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def summarize(rows):
    """Per-(scenario, s) groups with per-n medians and a rate fit when possible."""
    groups = {}
    for r in rows:
        if r.h2 is None:
            continue
        groups.setdefault((r.scenario, r.s_used), []).append(r)
    out = []
    for (label, s), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], -1 if kv[0][1] is None else kv[0][1])):
        per_n = []
        for n in sorted({r.n for r in rs}):
            h = np.array([r.h2 for r in rs if r.n == n])
            pe = [r.param_err for r in rs if r.n == n and r.param_err is not None]
            per_n.append({"n": n, "count": int(h.size), "median_h2": float(np.median(h)),
                          "mean_h2": float(np.mean(h)), "q25_h2": float(np.quantile(h, 0.25)),
                          "q75_h2": float(np.quantile(h, 0.75)),
                          "median_param_err": float(np.median(pe)) if pe else None})
        entry = {"scenario": label, "s_used": s, "per_n": per_n}
        try:
            slope, intercept, r2 = fit_rate_slope(rs)
            entry["slope"] = {"slope": slope, "intercept": intercept, "r2": r2}
        except ValueError as exc:
            entry["slope"] = {"unavailable": str(exc)}
        out.append(entry)
    return {"groups": out}
