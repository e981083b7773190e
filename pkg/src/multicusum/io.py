"""CSV/JSON writers: 17 significant digits, ``.`` decimal separator, RFC-4180 quoting."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np


def fmt(x: Any) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return ""
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence[Any]] | np.ndarray,
              comment: str | None = None) -> Path:
    """Write a CSV file; ``comment`` becomes a leading ``# ...`` provenance line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x) or math.isinf(x):
            return fmt(x) or None
        return _Float17(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class _Float17(float):
    def __repr__(self):
        text = format(float(self), ".17g")
        return text if any(c in text for c in ".e") else text + ".0"


class _Encoder(json.JSONEncoder):
    def iterencode(self, o, _one_shot=False):
        # float subclasses are routed through float.__repr__ by the C encoder; force
        # the pure-Python path so _Float17.__repr__ applies.
        return json.encoder._make_iterencode(
            {}, self.default, json.encoder.py_encode_basestring, self.indent,
            lambda f: repr(f) if isinstance(f, _Float17) else float.__repr__(f),
            self.key_separator, self.item_separator, self.sort_keys, self.skipkeys, _one_shot,
        )(o, 0)


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, cls=_Encoder)


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n")
    return path


def config_hash(config: dict) -> str:
    return hashlib.sha256(dumps(config).encode()).hexdigest()[:16]
