"""Small shared helpers for text output."""

from __future__ import annotations

import json
from contextlib import contextmanager


@contextmanager
def open_text(path_or_file, mode: str = "w"):
    """Yield a writable text handle from a path or an already-open file."""
    if hasattr(path_or_file, "write"):
        yield path_or_file
    else:
        with open(path_or_file, mode, encoding="utf-8") as fh:
            yield fh


def dump_json(obj, path_or_file) -> None:
    with open_text(path_or_file) as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
