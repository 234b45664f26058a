"""Append-only CSV log of per-iteration losses and scheduled evaluations."""
from __future__ import annotations

import csv
import io
import math

COLUMNS = (
    "iteration", "il", "rl", "speaker", "cycle_A", "cycle_X", "cycle_Au", "cf_A", "cf_X",
    "cf_task", "creator", "lambda_l2", "disc", "beta", "b_f", "b_s",
    "SR", "NE", "OR", "SPL", "Bleu-1", "Bleu-4", "CIDEr", "Rouge",
)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return str(v)


class RunLog:
    def __init__(self, rows: list[dict] | None = None):
        self.rows: list[dict] = list(rows or [])

    def append(self, row: dict) -> None:
        unknown = set(row) - set(COLUMNS)
        if unknown:
            raise KeyError(f"unknown log columns {sorted(unknown)}")
        self.rows.append(dict(row))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([_cell(r.get(c)) for c in COLUMNS])
        return buf.getvalue()

    @staticmethod
    def parse(text: str) -> list[dict]:
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != COLUMNS:
            raise ValueError("run log header does not match the expected columns")
        return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in reader]
