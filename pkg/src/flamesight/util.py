"""Small shared helpers: atomic file writes and worker-count resolution."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file + rename.

    An interrupted run never leaves a partial file behind: either the old
    content survives or the new content is fully in place.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def worker_count() -> int:
    """Worker cap from the FF_THREADS environment variable.

    0 or unset means auto (one worker per CPU). Values below zero or
    unparsable strings fall back to auto. All current kernels run
    single-threaded, so this acts as an upper bound for future pools.
    """
    raw = os.environ.get("FF_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        return os.cpu_count() or 1
    return n
