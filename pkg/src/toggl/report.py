"""Report emission: every table is written as JSON and as aligned TSV."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    if value is None:
        return "-"
    return str(value)


def format_tsv(rows: Sequence[dict], columns: Sequence[str] | None = None) -> str:
    """Tab-separated table whose cells are padded to a common width per column."""
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    cells = [columns] + [[_cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(line[i]) for line in cells) for i in range(len(columns))]
    return "".join("\t".join(c.ljust(w) for c, w in zip(line, widths)).rstrip() + "\n" for line in cells)


def write_report(out_dir: str | Path, name: str, rows: Sequence[dict], meta: dict | None = None,
                 columns: Sequence[str] | None = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path, tsv_path = out_dir / f"{name}.json", out_dir / f"{name}.tsv"
    payload = {"rows": list(rows)}
    if meta:
        payload["meta"] = meta
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    tsv_path.write_text(format_tsv(rows, columns))
    return json_path, tsv_path
