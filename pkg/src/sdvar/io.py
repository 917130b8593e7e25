"""CSV ingestion and export with exact float round-tripping."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["DataError", "Dataset", "ingest", "export_dataset", "write_csv", "sha256_file",
           "format_number"]

_MISSING = {"", "na", "nan", "null", "none", "."}


class DataError(ValueError):
    """Malformed input file; ``row`` is the 1-based line number in the file."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


@dataclass
class Dataset:
    """Observations with their dates, names and the subtracted means."""

    dates: list
    values: np.ndarray
    names: list
    means: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def T(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]

    @property
    def raw(self):
        return self.values + self.means


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_date(text):
    text = text.strip()
    try:
        if len(text) == 7 and text[4] == "-":
            return _dt.date(int(text[:4]), int(text[5:]), 1)
        return _dt.date.fromisoformat(text)
    except ValueError:
        pass
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"unrecognized date {text!r} (expected YYYY-MM-DD, YYYY-MM or an integer)")


def ingest(path, center=True):
    """Read a CSV whose first column is a date and the rest numeric series.

    Raises
    ------
    DataError
        On missing or non-numeric cells, ragged rows or dates that do not
        strictly increase; the message names the offending line.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError("file is empty")
        if len(header) < 2:
            raise DataError("need a date column and at least one series", row=1)
        names = [h.strip() for h in header[1:]]
        dates, rows = [], []
        for line_no, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"expected {len(header)} cells, found {len(rec)}", row=line_no)
            try:
                d = _parse_date(rec[0])
            except ValueError as err:
                raise DataError(str(err), row=line_no)
            if dates and (type(d) is not type(dates[-1]) or d <= dates[-1]):
                raise DataError(f"date {rec[0]!r} does not follow {dates[-1]}", row=line_no)
            vals = []
            for col, cell in zip(names, rec[1:]):
                c = cell.strip()
                if c.lower() in _MISSING:
                    raise DataError(f"missing value in column {col!r}", row=line_no)
                try:
                    x = float(c)
                except ValueError:
                    raise DataError(f"non-numeric value {c!r} in column {col!r}", row=line_no)
                if not math.isfinite(x):
                    raise DataError(f"non-finite value in column {col!r}", row=line_no)
                vals.append(x)
            dates.append(d)
            rows.append(vals)
    if not rows:
        raise DataError("no observations")
    values = np.array(rows, dtype=float)
    means = values.mean(axis=0) if center else np.zeros(values.shape[1])
    prov = {"path": str(path), "sha256": sha256_file(path), "centered": bool(center),
            "means": means.tolist(), "rows": len(rows)}
    return Dataset(dates, values - means, names, means, prov)


def format_number(x):
    """Shortest decimal string that reads back to the same double."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _format_date(d):
    return d.isoformat() if isinstance(d, _dt.date) else str(d)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else format_number(c) for c in row])


def export_dataset(ds, path, raw=False):
    """Write ``ds`` (centered values, or the original ones with ``raw=True``)."""
    vals = ds.raw if raw else ds.values
    write_csv(path, ["date"] + list(ds.names),
              ([_format_date(d)] + list(v) for d, v in zip(ds.dates, vals)))
