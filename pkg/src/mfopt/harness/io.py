"""CSV/JSON output of run records."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .config import RunConfig
from .runner import RECORD_COLUMNS, RunRecord

SCATTER_COLUMNS = ("seed", "round", "kind", "criterion_reduction", "zstar_reduction")


def _columns(rows: list[dict]) -> list[str]:
    cols: list[str] = []
    for row in rows:
        cols.extend(k for k in row if k not in cols)
    # keep the documented order first
    ordered = [c for c in ("batch_size", "seed", *RECORD_COLUMNS) if c in cols]
    return ordered + [c for c in cols if c not in ordered]


def write_csv(path: Path, rows: list[dict], columns: list[str] | tuple[str, ...]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "") for c in columns})


def write_outputs(record: RunRecord, cfg: RunConfig, out_dir: str | Path) -> dict[str, Path]:
    """Writes ``record.csv``, ``config.resolved.json`` and, when relevant, ``scatter.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"record": out / "record.csv", "config": out / "config.resolved.json"}
    write_csv(paths["record"], record.rows, _columns(record.rows) if record.rows else RECORD_COLUMNS)
    payload = {"config": cfg.to_dict(), "meta": record.meta}
    paths["config"].write_text(json.dumps(payload, indent=2, sort_keys=True, default=float))
    if cfg.study == "oed-vs-random" or record.scatter:
        paths["scatter"] = out / "scatter.csv"
        write_csv(paths["scatter"], record.scatter, SCATTER_COLUMNS)
    return paths


def read_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
