"""Small filesystem helpers used by the pipeline stages."""
from __future__ import annotations

import os
import tempfile
from pathlib import Path

from .errors import IoError


def fmt_g9(value: float) -> str:
    """Format a float with nine significant digits, compactly."""
    return format(float(value), ".9g")


def read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write a file via a temp sibling and rename, so readers never see a
    partial file."""
    path = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            os.unlink(tmp)
            raise
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from exc


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def ensure_dir(path: str | Path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create directory {path}: {exc.strerror or exc}") from exc
    return path
