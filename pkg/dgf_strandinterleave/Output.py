from __future__ import annotations

from csv import DictWriter
from hashlib import sha256
from io import StringIO
from json import dumps
from logging import getLogger
from os import replace
from pathlib import Path
from tempfile import NamedTemporaryFile
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence
    from typing import Any

logger = getLogger(__name__)


def canonical_json(data: Any) -> str:
    return dumps(data, sort_keys=True, indent=2) + "\n"


def config_hash(data: Any) -> str:
    return sha256(dumps(data, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write into a temporary file next to `path`, then move it into place"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with NamedTemporaryFile("w", dir=path.parent, prefix=f".{path.name}.", delete=False, encoding="utf-8") as f:
        f.write(text)
        tmpname = f.name
    try:
        replace(tmpname, path)
    except OSError:
        Path(tmpname).unlink(missing_ok=True)
        raise
    logger.debug(f"Wrote {path}")
    return path


def write_json(path: str | Path, data: Any) -> Path:
    return atomic_write_text(path, canonical_json(data))


def csv_text(rows: Iterable[Mapping[str, Any]], fieldnames: Sequence[str]) -> str:
    buffer = StringIO()
    writer = DictWriter(buffer, fieldnames=list(fieldnames), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buffer.getvalue()


def write_csv(path: str | Path, rows: Iterable[Mapping[str, Any]], fieldnames: Sequence[str]) -> Path:
    return atomic_write_text(path, csv_text(rows, fieldnames))
