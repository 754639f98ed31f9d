"""Per-round convergence telemetry and its CSV / JSON-lines persistence."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import astuple, dataclass, fields
from pathlib import Path


@dataclass
class TraceRecord:
    round: int
    f_gap_last: float
    f_gap_avg: float
    dist_sq_v: float
    dist_sq_x: float
    lambda_used: float
    s_used: int
    cum_comm_rounds: int
    cum_vectors: int
    cum_oracle_total: int
    cum_oracle_parallel: int
    potential_sdane: float | None = None
    potential_acc: float | None = None


FIELDS = tuple(f.name for f in fields(TraceRecord))
INT_FIELDS = frozenset({"round", "s_used", "cum_comm_rounds", "cum_vectors", "cum_oracle_total", "cum_oracle_parallel"})
HEADER = ",".join(FIELDS)


def _fmt(value, name: str) -> str | None:
    if value is None:
        return None
    if name in INT_FIELDS:
        return str(int(value))
    value = float(value)
    if not math.isfinite(value):
        return repr(value)
    return format(value, ".17g")


def _parse(text: str | None, name: str):
    if text is None or text == "":
        return None
    return int(text) if name in INT_FIELDS else float(text)


def format_csv(records) -> str:
    buf = io.StringIO()
    buf.write(HEADER + "\n")
    for rec in records:
        cells = [_fmt(v, k) for k, v in zip(FIELDS, astuple(rec))]
        buf.write(",".join("" if c is None else c for c in cells) + "\n")
    return buf.getvalue()


def format_jsonl(records) -> str:
    lines = []
    for rec in records:
        parts = []
        for k, v in zip(FIELDS, astuple(rec)):
            c = _fmt(v, k)
            if c is None:
                c = "null"
            elif c in ("inf", "-inf", "nan"):
                c = {"inf": "Infinity", "-inf": "-Infinity", "nan": "NaN"}[c]
            parts.append(f'"{k}": {c}')
        lines.append("{" + ", ".join(parts) + "}\n")
    return "".join(lines)


def write_trace(records, path, format: str | None = None) -> None:
    """Write records as CSV or JSON lines (format inferred from the suffix if omitted)."""
    fmt = format or ("jsonl" if str(path).endswith(".jsonl") else "csv")
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown trace format {fmt!r}")
    text = format_csv(records) if fmt == "csv" else format_jsonl(records)
    # newline="" keeps the bytes identical across platforms
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_trace(path, format: str | None = None) -> list[TraceRecord]:
    path = Path(path)
    fmt = format or ("jsonl" if path.suffix == ".jsonl" else "csv")
    text = path.read_text()
    if fmt == "jsonl":
        out = []
        for line in text.splitlines():
            if line.strip():
                doc = json.loads(line)
                out.append(TraceRecord(**{k: doc.get(k) for k in FIELDS}))
        return out
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header != list(FIELDS):
        raise ValueError(f"{path}: unexpected trace header {header}")
    return [TraceRecord(*[_parse(c, k) for k, c in zip(FIELDS, row)]) for row in reader if row]
