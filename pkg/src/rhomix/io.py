"""File formats: series CSV, model JSON and estimate results."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import replace

import numpy as np

from . import families
from .hmm import model_from_json
from .measure import FiniteModel

__all__ = ["FormatError", "write_series", "read_series", "model_to_dict", "model_from_dict",
           "load_model", "dump_json"]


class FormatError(ValueError):
    """Malformed input file; the message names the offending line or field."""


def _num(x):
    return format(float(x), ".17g")


def write_series(path, y, hidden=None, provenance=None, seed=None):
    """One observation per row, column ``y`` and optionally ``h``.

    Provenance and seed go into a leading ``#`` comment line.
    """
    buf = io.StringIO()
    if provenance is not None or seed is not None:
        parts = []
        if provenance is not None:
            if any(c in str(provenance) for c in " \n="):
                raise ValueError("provenance tags may not contain spaces, '=' or newlines")
            parts.append(f"provenance={provenance}")
        if seed is not None:
            parts.append(f"seed={int(seed)}")
        buf.write("# " + " ".join(parts) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    if hidden is None:
        writer.writerow(["y"])
        writer.writerows([_num(v)] for v in y)
    else:
        writer.writerow(["y", "h"])
        writer.writerows([_num(v), int(h)] for v, h in zip(y, hidden))
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_series(path):
    """Returns ``(y, hidden_or_None, meta)``; raises :class:`FormatError` with line numbers."""
    meta = {}
    y, h = [], []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    header = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if "=" in tok:
                    k, v = tok.split("=", 1)
                    meta[k] = v
            continue
        row = next(csv.reader([line]))
        if header is None:
            header = [c.strip() for c in row]
            if header not in (["y"], ["y", "h"]):
                raise FormatError(f"{path}:{lineno}: expected header 'y' or 'y,h', got {line!r}")
            continue
        if len(row) != len(header):
            raise FormatError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            y.append(float(row[0]))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: field 'y' is not a number: {row[0]!r}") from None
        if not math.isfinite(y[-1]):
            raise FormatError(f"{path}:{lineno}: field 'y' is not finite")
        if len(header) == 2:
            try:
                h.append(int(row[1]))
            except ValueError:
                raise FormatError(f"{path}:{lineno}: field 'h' is not an integer: {row[1]!r}") from None
    if header is None:
        raise FormatError(f"{path}: no header line")
    if not y:
        raise FormatError(f"{path}: no observations")
    return np.asarray(y), (np.asarray(h) if header == ["y", "h"] else None), meta


def model_to_dict(model):
    """Serializable description of a model built from family candidates or an HMM grid."""
    if hasattr(model, "description"):
        return dict(model.description)
    return {"kind": "family_list",
            "candidates": [{"id": c.id, **families.descriptor(c)} for c in model.candidates]}


def model_from_dict(d, check=True):
    """Returns a :class:`FiniteModel` or an :class:`~rhomix.hmm.HmmModel`."""
    if not isinstance(d, dict) or "kind" not in d:
        raise FormatError("model JSON: missing field 'kind'")
    kind = d["kind"]
    try:
        if kind == "family_list":
            cands = [_with_id(families.from_descriptor(x), x.get("id")) for x in d["candidates"]]
            return FiniteModel(cands, check=check)
        if kind == "hmm":
            return model_from_json(d, check=check)
    except KeyError as exc:
        raise FormatError(f"model JSON: missing field {exc.args[0]!r}") from None
    raise FormatError(f"model JSON: unknown kind {kind!r}")


def _with_id(cand, cid):
    return cand if cid is None else replace(cand, id=str(cid))


def load_model(path, check=True):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return model_from_dict(d, check=check)


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"
