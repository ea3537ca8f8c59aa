"""JSON-lines dataset I/O with line-accurate error reporting."""

from __future__ import annotations

import json
from typing import Iterable


class DataError(Exception):
    """A data file is malformed; carries the file path and 1-based line number."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


def read_jsonl(path: str, required: tuple[str, ...] = ()) -> list[dict]:
    """Read one JSON object per line, validating required string fields."""
    records: list[dict] = []
    try:
        f = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(str(exc), path=path)
    with f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed JSON ({exc.msg})", path=path, line=lineno)
            if not isinstance(obj, dict):
                raise DataError("expected a JSON object", path=path, line=lineno)
            for key in required:
                if not isinstance(obj.get(key), str):
                    raise DataError(f"missing or non-string field {key!r}",
                                    path=path, line=lineno)
            records.append(obj)
    if not records:
        raise DataError("file contains no records", path=path)
    return records


def write_jsonl(path: str, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
