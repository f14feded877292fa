"""CSV and JSON serialization.

CSV files are UTF-8 and comma-separated, with a header row and LF line
endings.  Floats are written with ``repr``, the shortest string that
round-trips.  A missing value is an empty field.  Reading a file back and
writing it again gives identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from datetime import datetime
from pathlib import Path

import numpy as np

from .errors import ParseError
from .loss import COMPONENTS, LossBreakdown, LossCurve
from .sdg import SeriesPanel

CURVE_COLUMNS = ("owner", "provenance", "H", "S") + COMPONENTS + ("total",)
_TIME_NAMES = {"t", "time", "timestamp", "date", "datetime"}


def fmt_float(v) -> str:
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


def _write_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    data = buf.getvalue()
    if path is None:
        return data
    Path(path).write_text(data, encoding="utf-8", newline="")
    return data


def _read_rows(path_or_text, from_text=False):
    text = path_or_text if from_text else Path(path_or_text).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text, newline="")))
    if not rows:
        raise ParseError("empty file", line=1)
    return rows[0], rows[1:]


def write_series_csv(panel: SeriesPanel, path=None) -> str:
    """Columns ``t, feature_0 .. feature_{F-1}``; unobserved features are empty."""
    F = panel.feature_count
    header = ["t"] + [f"feature_{f}" for f in range(F)]
    rows = []
    for i, t in enumerate(panel.times):
        rows.append([str(int(t))] + [fmt_float(panel.values[f, i]) for f in range(F)])
    return _write_rows(path, header, rows)


def _parse_float(s, line, col):
    if s == "":
        return math.nan
    try:
        v = float(s)
    except ValueError:
        raise ParseError(f"column {col!r}: not a number: {s!r}", line=line) from None
    if not math.isfinite(v):
        raise ParseError(f"column {col!r}: non-finite value {s!r}", line=line)
    return v


def _parse_time(s, line):
    try:
        return float(int(s))
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(s).timestamp()
    except ValueError:
        raise ParseError(f"unparseable timestamp {s!r}", line=line) from None


def read_series_csv(path=None, client_id: str = None, text: str = None, time_column="auto") -> SeriesPanel:
    """Parse a series file into a panel.

    A timestamp column (first column, named t/time/timestamp/date/datetime)
    is optional.  When present the sampling must be regular: gaps are
    rejected.  A feature column that is entirely empty is an unobserved
    feature.  An empty cell inside an observed column is an error.
    """
    header, body = _read_rows(text if text is not None else path, from_text=text is not None)
    if not header or any(h.strip() == "" for h in header):
        raise ParseError("header has empty column names", line=1)
    has_time = header[0].strip().lower() in _TIME_NAMES if time_column == "auto" else bool(time_column)
    feat_names = header[1:] if has_time else header
    if not feat_names:
        raise ParseError("no feature columns", line=1)
    if not body:
        raise ParseError("no data rows", line=2)
    width = len(header)
    times, cols = [], [[] for _ in feat_names]
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != width:
            raise ParseError(f"expected {width} fields, got {len(row)}", line=line)
        if has_time:
            times.append(_parse_time(row[0].strip(), line))
            row = row[1:]
        for j, s in enumerate(row):
            cols[j].append(_parse_float(s.strip(), line, feat_names[j]))

    values = np.array(cols, dtype=float)
    observed = []
    for j, name in enumerate(feat_names):
        miss = np.isnan(values[j])
        if miss.all():
            observed.append(False)
        elif miss.any():
            bad = int(np.flatnonzero(miss)[0]) + 2
            raise ParseError(f"column {name!r}: missing value in an observed feature", line=bad)
        else:
            observed.append(True)

    t_origin = 1
    if has_time:
        tt = np.asarray(times)
        if tt.size > 1:
            step = tt[1] - tt[0]
            if step <= 0:
                raise ParseError("timestamps must increase", line=3)
            d = np.diff(tt)
            bad = np.flatnonzero(np.abs(d - step) > 1e-9 * max(1.0, abs(step)))
            if bad.size:
                raise ParseError(f"irregular sampling (step {d[bad[0]]!r}, expected {step!r})", line=int(bad[0]) + 3)
        if header[0].strip().lower() == "t" and float(tt[0]).is_integer():
            t_origin = int(tt[0])
    cid = client_id or (Path(path).stem if path is not None else "series")
    return SeriesPanel(values, cid, t_origin=t_origin, observed=tuple(observed))


def write_curves_csv(curves, path=None) -> str:
    """Long-format loss curves: one row per (owner, H); unknown components empty."""
    rows = []
    for cv in curves:
        for H, b in zip(cv.horizons, cv.values):
            rows.append(
                [cv.owner, cv.provenance, str(int(H)), str(int(cv.s_steps))]
                + [fmt_float(getattr(b, c)) for c in COMPONENTS + ("total",)]
            )
    return _write_rows(path, CURVE_COLUMNS, rows)


def read_curves_csv(path=None, text: str = None) -> list:
    header, body = _read_rows(text if text is not None else path, from_text=text is not None)
    if tuple(header) != CURVE_COLUMNS:
        raise ParseError(f"unexpected curve header {header}", line=1)
    groups = {}
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != len(CURVE_COLUMNS):
            raise ParseError(f"expected {len(CURVE_COLUMNS)} fields, got {len(row)}", line=line)
        owner, prov = row[0], row[1]
        try:
            H, S = int(row[2]), int(row[3])
        except ValueError:
            raise ParseError("H and S must be integers", line=line) from None
        nums = [float(s) if s != "" else math.nan for s in row[4:]]
        key = (owner, prov, S)
        groups.setdefault(key, []).append((H, LossBreakdown(*nums)))
    out = []
    for (owner, prov, S), items in groups.items():
        out.append(LossCurve([h for h, _ in items], [b for _, b in items], S, prov, owner))
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not math.isfinite(v) else v
    return obj


def dump_json(obj, path=None) -> str:
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8", newline="")
    return text
