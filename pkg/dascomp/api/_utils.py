"""
Shared utilities for unit conversion and artifact writing.

Common helpers used across scenario.py, evaluation.py and experiment.py.
"""

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence, Union

import numpy as np

PathLike = Union[str, Path]


def dbm_to_watt(dbm: float) -> float:
    """
    Convert a power level in dBm to Watts.

      - 30 dBm → 1 W
      - 20 dBm → 0.1 W
    """
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    if watt <= 0:
        raise ValueError(f"power must be positive to express in dBm, got {watt}")
    return 10.0 * math.log10(watt) + 30.0


def db_to_linear(db: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Power ratio for a dB value; works elementwise on arrays."""
    return 10.0 ** (db / 10.0)


def linear_to_db(value: float) -> float:
    return 10.0 * math.log10(value)


def format_float(value: Any) -> str:
    """Shortest round-tripping repr for floats, so equal runs give equal files."""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_atomic(path: PathLike, data: Union[str, bytes]):
    """Write through a temporary file in the same directory, then rename into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    """Comma-delimited, header row first, LF line endings."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_float(row.get(col)) for col in columns])
    return buf.getvalue()


def write_csv(path: PathLike, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    write_atomic(path, csv_text(columns, rows))
    return Path(path)


def read_csv(path: PathLike) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_json(path: PathLike, payload: Any) -> Path:
    write_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return Path(path)


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
