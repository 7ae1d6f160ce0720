"""Trace capture, trace CSV I/O, and correlation analysis.

Trace CSV (one header line, comma separated)::

    step,layer,token_index,token_class,similarity,computed,branch,feature_diff,value_diff,final_diff

Two row kinds share the schema:

* ``layer == "3"``: one row per (cached step, branch run through the token
  cache, token). ``similarity`` is the raw cosine similarity the selection
  used; ``computed`` is 1 if the token was recomputed. ``feature_diff`` and
  ``value_diff`` are cosine distances (``1 - cos``) between this step's
  layer-3 features / value rows and the cached ones; ``final_diff`` is the
  cosine distance between the true (fully computed) output row and the
  cached output row.
* ``layer == "out"``: one row per step ``k >= 2`` and branch in
  ``cond``/``uncond``/``residual``, ``token_index = -1``; ``final_diff``
  holds the MSE between the true outputs of steps ``k`` and ``k - 1``
  (``residual`` is cond minus uncond). Other fields are empty.
"""
import csv
import math

import numpy as np

from .cache import TokenClass
from .errors import TraceParseError, UndefinedCorrelationError
from .tensor import cosine_rows

TRACE_FIELDS = (
    "step", "layer", "token_index", "token_class", "similarity", "computed",
    "branch", "feature_diff", "value_diff", "final_diff",
)
TOKEN_LAYER = "3"
STEP_LAYER = "out"


def pearson(xs, ys):
    """Sample Pearson correlation coefficient."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two equal-length 1-D sequences")
    if x.size < 2:
        raise UndefinedCorrelationError("pearson needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant sequence")
    return float(np.dot(dx, dy)) / math.sqrt(sxx * syy)


def capture_rows(step, branch, classes, res, true_output):
    """Layer-3 trace rows for one branch of one cached step."""
    computed = np.zeros(classes.shape[0], dtype=bool)
    computed[res.compute_index] = True
    feat = 1.0 - cosine_rows(res.feat3, res.cached_feat3)
    val = 1.0 - cosine_rows(res.v3, res.cached_v3)
    fin = 1.0 - cosine_rows(true_output, res.cached_final)
    rows = []
    for i in range(classes.shape[0]):
        rows.append({
            "step": step,
            "layer": TOKEN_LAYER,
            "token_index": i,
            "token_class": TokenClass(classes[i]).name.lower(),
            "similarity": float(res.scores[i]),
            "computed": int(computed[i]),
            "branch": branch,
            "feature_diff": float(feat[i]),
            "value_diff": float(val[i]),
            "final_diff": float(fin[i]),
        })
    return rows


def step_rows(step, stats):
    return [
        {"step": step, "layer": STEP_LAYER, "token_index": -1, "token_class": "",
         "similarity": "", "computed": "", "branch": b, "feature_diff": "",
         "value_diff": "", "final_diff": stats[b]}
        for b in ("cond", "uncond", "residual")
    ]


def generation_trace(gen):
    rows = []
    for r in gen.records:
        rows.extend(r.trace)
        if r.analysis is not None:
            rows.extend(step_rows(r.step, r.analysis))
    return rows


def _fmt(v):
    # repr of a Python float round-trips exactly; numpy scalars repr differently
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_trace(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in TRACE_FIELDS])


def _parse_float(value, line, name):
    if value == "":
        return None
    try:
        return float(value)
    except ValueError:
        raise TraceParseError(f"field {name!r} is not a number: {value!r}", line) from None


def read_trace(path):
    rows = []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceParseError("empty trace file", 1) from None
        if tuple(header) != TRACE_FIELDS:
            raise TraceParseError(f"unexpected header {header}", 1)
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(TRACE_FIELDS):
                raise TraceParseError(
                    f"expected {len(TRACE_FIELDS)} fields, got {len(rec)}", lineno
                )
            r = dict(zip(TRACE_FIELDS, rec))
            try:
                r["step"] = int(r["step"])
                r["token_index"] = int(r["token_index"])
            except ValueError:
                raise TraceParseError("step/token_index must be integers", lineno) from None
            if r["layer"] not in (TOKEN_LAYER, STEP_LAYER):
                raise TraceParseError(f"unknown layer {r['layer']!r}", lineno)
            for name in ("similarity", "feature_diff", "value_diff", "final_diff"):
                r[name] = _parse_float(r[name], lineno, name)
            if r["layer"] == TOKEN_LAYER:
                s = r["similarity"]
                if s is not None and not math.isnan(s) and not -1.0 <= s <= 1.0:
                    raise TraceParseError(f"similarity {s} outside [-1, 1]", lineno)
                r["computed"] = int(r["computed"])
            rows.append(r)
    return rows


def _finite(*vals):
    return all(v is not None and math.isfinite(v) for v in vals)


def analyze(rows):
    """Correlations and ratios from trace rows (possibly from several files)."""
    token_rows = [r for r in rows if r["layer"] == TOKEN_LAYER]
    samples = [r for r in token_rows
               if _finite(r["feature_diff"], r["value_diff"], r["final_diff"])]
    report = {
        "token_rows": len(token_rows),
        "samples": len(samples),
        "cached_steps": len({(r["step"], r["branch"]) for r in token_rows}),
    }
    fx = [r["feature_diff"] for r in samples]
    vx = [r["value_diff"] for r in samples]
    fy = [r["final_diff"] for r in samples]
    for key, xs in (("rho_feature", fx), ("rho_value", vx)):
        try:
            report[key] = pearson(xs, fy)
        except UndefinedCorrelationError:
            report[key] = None

    by_class = {}
    for r in token_rows:
        s = r["similarity"]
        if s is None or math.isnan(s):
            continue
        by_class.setdefault(r["token_class"], []).append(1.0 - s)
    report["mean_cosine_distance_by_class"] = {
        c: float(np.mean(v)) for c, v in sorted(by_class.items())
    }

    steps = {}
    for r in rows:
        if r["layer"] == STEP_LAYER:
            steps.setdefault(r["step"], {})[r["branch"]] = r["final_diff"]
    ratios = []
    for k in sorted(steps):
        st = steps[k]
        entry = {"step": k, **{b: st.get(b) for b in ("cond", "uncond", "residual")}}
        res = st.get("residual")
        if res:
            entry["cond_over_residual"] = st["cond"] / res
            entry["uncond_over_residual"] = st["uncond"] / res
        ratios.append(entry)
    report["residual_ratio"] = ratios
    vals = [e["uncond_over_residual"] for e in ratios if "uncond_over_residual" in e]
    report["mean_uncond_over_residual"] = float(np.mean(vals)) if vals else None
    vals = [e["cond_over_residual"] for e in ratios if "cond_over_residual" in e]
    report["mean_cond_over_residual"] = float(np.mean(vals)) if vals else None
    return report


def analyze_files(paths):
    rows = []
    for p in paths:
        rows.extend(read_trace(p))
    return analyze(rows)
