"""Command line entry point ``rhomix``.

Exit codes: 0 success, 2 configuration or file-format error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import io as rio
from .blocks import estimate_with_spacing
from .harness import REPORT_COLUMNS, ConfigError, fit_rate_slope, \
    load_config, run_experiment, _Scenario
from .hmm import window
from .dependence import simulate_hmm, simulate_langevin, stream
from . import families
from .rho import Sample
from .selection import make_s_grid, select_s

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class IndependenceError(ValueError):
    """Both hold-out inputs carry the same provenance tag."""


def _seed(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _parser():
    p = argparse.ArgumentParser(prog="rhomix", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="write one simulated series CSV from a config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--seed", type=_seed)
    sim.add_argument("--n", type=int, help="series length (default: first n of the config)")
    sim.add_argument("--run", type=int, default=0, help="independent run index")
    sim.add_argument("--out", required=True)

    est = sub.add_parser("estimate", help="rho-estimate on spaced blocks")
    est.add_argument("--series", required=True)
    est.add_argument("--model", required=True)
    est.add_argument("--s", type=int, default=0)
    est.add_argument("--iota", type=float, default=1.0)
    est.add_argument("--tables", action="store_true", help="include the Upsilon and h2 tables")
    est.add_argument("--out", required=True)

    sel = sub.add_parser("select-s", help="hold-out selection of the spacing")
    sel.add_argument("--series", nargs=2, required=True, metavar=("FIT", "HOLDOUT"))
    sel.add_argument("--model", required=True)
    sel.add_argument("--tau", type=float, default=float(np.e))
    sel.add_argument("--iota", type=float, default=1.0)
    sel.add_argument("--out", required=True)

    exp = sub.add_parser("experiment", help="run a config end to end")
    exp.add_argument("--config", required=True)
    exp.add_argument("--seed", type=_seed)
    exp.add_argument("--threads", type=int, default=1)
    exp.add_argument("--out", required=True)

    rep = sub.add_parser("report", help="plot-ready summary CSV from a report CSV")
    rep.add_argument("--input", required=True)
    rep.add_argument("--out", required=True)
    return p


def _write(path, text):
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _config_with_seed(path, seed):
    cfg = load_config(path)
    if seed is not None:
        cfg.seed = int(seed)
    return cfg


# -- subcommands ---------------------------------------------------------------------

def cmd_simulate(args):
    cfg = _config_with_seed(args.config, args.seed)
    scn = _Scenario(cfg)
    n = args.n or cfg.n[0]
    rng = stream(cfg.seed, "cli-simulate", "run", args.run)
    hidden = None
    if cfg.scenario == "iid_recovery":
        y = families.sample(scn.truth_density, n, rng)
    elif cfg.scenario == "langevin_invariant":
        y = simulate_langevin(scn.diffusion, n, rng)
    else:
        y, hidden = simulate_hmm(scn.truth.stationary(), n, rng, return_hidden=True)
    if scn.contam is not None:
        y = scn._contaminate(y, (cfg.seed, "cli-simulate", "run", args.run))
    os.makedirs(args.out, exist_ok=True)
    tag = f"{cfg.scenario}:seed{cfg.seed}:run{args.run}"
    rio.write_series(os.path.join(args.out, "series.csv"), y, hidden=hidden, provenance=tag,
                     seed=cfg.seed)
    if cfg.scenario in ("iid_recovery", "langevin_invariant"):
        model = scn.models.get(n, 0)
    else:
        model = scn.hmm_models.get(n, 0)
    _write(os.path.join(args.out, "model.json"), rio.dump_json(rio.model_to_dict(model)))
    return EXIT_OK


def _load_sample(series_path, model):
    y, _, meta = rio.read_series(series_path)
    if hasattr(model, "description"):
        hm = model
        return window(y, hm.description["L"], hm.params[0].base_space).sample, meta
    return Sample(model.space, y), meta


def _finite(model):
    return model.model if hasattr(model, "description") else model


def cmd_estimate(args):
    model = rio.load_model(args.model)
    sample, meta = _load_sample(args.series, model)
    fm = _finite(model)
    cand, diag = estimate_with_spacing(sample, fm, args.s, iota=args.iota)
    out = {"chosen_id": cand.id, "s": args.s, "iota": args.iota, "n": sample.n,
           "block_sizes": diag["block_sizes"], "block_choices": diag["block_choices"],
           "provenance": meta.get("provenance")}
    if hasattr(model, "description"):
        out["params"] = model.params_of(cand.id).to_json()
    if args.tables:
        out["objective"] = diag["objective"]
        out["upsilon"] = [t.to_json()["upsilon"] for t in diag["block_tables"]]
        out["h2_to_chosen"] = {fm[i].id: float(v) for i, v in
                               enumerate(fm.hellinger2_rows([fm.index_of(cand.id)])[0])}
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "result.json"), rio.dump_json(out))
    return EXIT_OK


def cmd_select_s(args):
    path1, path2 = args.series
    model = rio.load_model(args.model)
    s1, m1 = _load_sample(path1, model)
    s2, m2 = _load_sample(path2, model)
    tag1, tag2 = m1.get("provenance"), m2.get("provenance")
    if tag1 is None or tag2 is None:
        raise IndependenceError("both series need a provenance tag to certify independent runs")
    if tag1 == tag2:
        raise IndependenceError(
            f"both series carry provenance {tag1!r}; the hold-out step assumes two independent "
            "runs, not pieces of one dependent series")
    fm = _finite(model)
    grid = make_s_grid(s1.n, args.tau)
    res = select_s(s1, s2, lambda s: fm, grid, iota=args.iota)
    out = {"s_hat": res.s_hat, "chosen_id": res.density.id, "grid": list(grid.values),
           "stage2_s": res.stage2_s,
           "stage1": {str(s): c.id for s, (c, _) in sorted(res.stage1.items())},
           "stage2_upsilon": res.table.to_json()["upsilon"]}
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "selection.json"), rio.dump_json(out))
    return EXIT_OK


def cmd_experiment(args):
    cfg = _config_with_seed(args.config, args.seed)
    report = run_experiment(cfg, threads=max(1, args.threads))
    os.makedirs(args.out, exist_ok=True)
    _write(os.path.join(args.out, "report.csv"), report.to_csv())
    _write(os.path.join(args.out, "summary.json"), report.summary_json())
    _write(os.path.join(args.out, "config.json"), rio.dump_json(cfg.to_dict()))
    _write(os.path.join(args.out, "choices.csv"), report.choices_csv())
    for name, model in report.models.items():
        _write(os.path.join(args.out, "models", name), rio.dump_json(rio.model_to_dict(model)))
    for e in report.errors:
        print(f"replicate {e['replicate']} n={e['n']}: {e['error']}", file=sys.stderr)
    return EXIT_OK if not report.errors else EXIT_RUNTIME


SUMMARY_COLUMNS = ["scenario", "s_used", "n", "count", "median_h2", "mean_h2", "q25_h2",
                   "q75_h2", "median_param_err", "slope", "intercept", "r2"]


def read_report(path):
    """Rows of a report CSV as ``(scenario, s_used, n, h2, param_err)`` tuples."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise rio.FormatError(f"{path}: empty report") from None
        if header != REPORT_COLUMNS:
            raise rio.FormatError(f"{path}:1: expected header {','.join(REPORT_COLUMNS)}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(REPORT_COLUMNS):
                raise rio.FormatError(f"{path}:{lineno}: expected {len(REPORT_COLUMNS)} fields")
            rec = dict(zip(REPORT_COLUMNS, row))
            try:
                rows.append((rec["scenario"], rec["s_used"], int(rec["n"]),
                             float(rec["h2"]) if rec["h2"] else None,
                             float(rec["param_err"]) if rec["param_err"] else None))
            except ValueError as exc:
                raise rio.FormatError(f"{path}:{lineno}: {exc}") from None
    return rows


def cmd_report(args):
    rows = read_report(args.input)
    groups = {}
    for scen, s, n, h2, pe in rows:
        if h2 is not None:
            groups.setdefault((scen, s), []).append((n, h2, pe))
    lines = []
    for (scen, s), recs in sorted(groups.items(), key=lambda kv: (kv[0][0], int(kv[0][1] or -1))):
        try:
            slope, intercept, r2 = fit_rate_slope([(n, h) for n, h, _ in recs])
            fit = [repr(slope), repr(intercept), repr(r2)]
        except ValueError:
            fit = ["", "", ""]
        for n in sorted({r[0] for r in recs}):
            h = np.array([r[1] for r in recs if r[0] == n])
            pe = [r[2] for r in recs if r[0] == n and r[2] is not None]
            lines.append([scen, s, n, h.size, repr(float(np.median(h))), repr(float(h.mean())),
                          repr(float(np.quantile(h, 0.25))), repr(float(np.quantile(h, 0.75))),
                          repr(float(np.median(pe))) if pe else ""] + fit)
    path = args.out if args.out.endswith(".csv") else os.path.join(args.out, "summary.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerows(lines)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "select-s": cmd_select_s,
            "experiment": cmd_experiment, "report": cmd_report}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, rio.FormatError, IndependenceError) as exc:
        print(f"rhomix {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"rhomix {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"rhomix {args.command}: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
