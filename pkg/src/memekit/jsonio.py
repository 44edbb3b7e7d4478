"""Canonical JSON writers so identical runs produce identical bytes."""

from __future__ import annotations

import json
from typing import Iterable, Optional


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def write_jsonl(path, rows: Iterable[dict], header: Optional[dict] = None) -> None:
    """One object per line; an optional ``{"_run": ...}`` header leads."""
    with open(path, "w", encoding="utf-8") as fh:
        if header is not None:
            fh.write(dumps({"_run": header}))
            fh.write("\n")
        for row in rows:
            fh.write(dumps(row))
            fh.write("\n")


def read_jsonl(path) -> tuple[Optional[dict], list[dict]]:
    """(header or None, rows) for a possibly headered JSONL file."""
    header = None
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if i == 0 and isinstance(obj, dict) and set(obj) == {"_run"}:
                header = obj["_run"]
                continue
            rows.append(obj)
    return header, rows
