"""CSV input/output with locale-independent parsing and atomic writes."""

from __future__ import annotations

import csv
import io
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import InputFormatError
from .meta import StudySummary
from .survival import SurvivalSample

__all__ = [
    "fmt_float",
    "atomic_write_text",
    "rows_to_csv",
    "read_subject_csv",
    "read_study_csv",
    "studies_to_csv",
]

SUBJECT_COLUMNS = ("time", "event", "score")
STUDY_COLUMNS = ("study_id", "tau", "c_hat", "var_hat", "n")


def fmt_float(x) -> str:
    """Shortest round-tripping representation; empty string for None."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _read_table(path, required, optional=()):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise InputFormatError(f"{path}: empty file")
            names = [f.strip() for f in reader.fieldnames]
            missing = [c for c in required if c not in names]
            if missing:
                raise InputFormatError(f"{path}: missing column(s) {', '.join(missing)}")
            unknown = [c for c in names if c not in required and c not in optional]
            if unknown:
                raise InputFormatError(f"{path}: unexpected column(s) {', '.join(unknown)}")
            rows = [{k.strip(): (v or "").strip() for k, v in row.items()} for row in reader]
    except OSError as exc:
        raise InputFormatError(f"{path}: {exc.strerror}") from exc
    if not rows:
        raise InputFormatError(f"{path}: no data rows")
    return rows


def _num(value, path, line, column, kind=float):
    try:
        if kind is int:
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        return float(value)
    except (TypeError, ValueError):
        raise InputFormatError(f"{path}:{line}: invalid {column} value {value!r}") from None


def read_subject_csv(path) -> SurvivalSample:
    """Subject-level data with header ``time,event,score``."""
    rows = _read_table(path, SUBJECT_COLUMNS)
    t, e, s = [], [], []
    for i, row in enumerate(rows, start=2):
        t.append(_num(row["time"], path, i, "time"))
        e.append(_num(row["event"], path, i, "event", int))
        s.append(_num(row["score"], path, i, "score"))
    return SurvivalSample(np.array(t), np.array(e), np.array(s))


def read_study_csv(path) -> list:
    """Study summaries with header ``study_id,tau,c_hat,var_hat[,n]``."""
    rows = _read_table(path, STUDY_COLUMNS[:4], STUDY_COLUMNS[4:])
    out = []
    for i, row in enumerate(rows, start=2):
        n = row.get("n", "")
        out.append(
            StudySummary(
                row["study_id"],
                _num(row["tau"], path, i, "tau"),
                _num(row["c_hat"], path, i, "c_hat"),
                _num(row["var_hat"], path, i, "var_hat"),
                _num(n, path, i, "n", int) if n != "" else None,
            )
        )
    return out


def studies_to_csv(studies) -> str:
    return rows_to_csv(
        STUDY_COLUMNS,
        ([s.study_id, s.tau, s.c_hat, s.var_hat, "" if s.n is None else s.n] for s in studies),
    )
