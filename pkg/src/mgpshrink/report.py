"""Run manifests and CSV/JSON writers.

CSV files start with ``# key: value`` manifest lines (values JSON-encoded),
followed by an ordinary header + rows block. ``read_csv`` restores ints,
floats (``repr`` precision), bools, ``None`` and strings, so a table written
at full precision parses back to the same rows.
"""

from __future__ import annotations

import csv
import io
import json
import math
import platform
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["RunManifest", "to_jsonable", "write_csv", "read_csv", "write_json", "read_json", "format_cell"]


def _version() -> str:
    try:
        from importlib.metadata import version

        return version("artifact")
    except Exception:  # pragma: no cover - running from a source tree
        return "0.1.0"


@dataclass
class RunManifest:
    command: str
    params: dict
    seed: int | None = None
    samples: int | None = None
    version: str = field(default_factory=_version)
    python: str = field(default_factory=platform.python_version)
    wall_clock_s: float = 0.0
    outputs: list = field(default_factory=list)
    _t0: float = field(default_factory=time.perf_counter, repr=False, compare=False)

    def stop(self) -> "RunManifest":
        self.wall_clock_s = round(time.perf_counter() - self._t0, 3)
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("_t0")
        return to_jsonable(d)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        keys = ("command", "params", "seed", "samples", "version", "python", "wall_clock_s", "outputs")
        return cls(**{k: d[k] for k in keys if k in d})


def to_jsonable(x):
    """Recursively convert numpy scalars/arrays and non-finite floats for JSON."""
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def format_cell(v, decimals: int | None = None) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if decimals is not None and math.isfinite(v):
            return f"{v:.{decimals}f}"
        return repr(v)
    return str(v)


def _parse_cell(text: str):
    if text == "":
        return None
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _ensure_parent(path: Path):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory for {path}: {exc}") from exc


def write_csv(path, rows: list[dict], manifest: RunManifest | None = None, columns=None, decimals: int | None = None) -> Path:
    path = Path(path)
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    if manifest is not None:
        for k, v in manifest.to_dict().items():
            buf.write(f"# {k}: {json.dumps(v, sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([format_cell(row.get(c), decimals) for c in columns])
    _ensure_parent(path)
    try:
        path.write_text(buf.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_csv(path) -> tuple[dict, list[dict]]:
    """Return ``(manifest_dict, rows)``."""
    manifest, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            key, _, value = line[2:].partition(": ")
            manifest[key] = json.loads(value)
        else:
            body.append(line)
    reader = csv.reader(body)
    try:
        header = next(reader)
    except StopIteration:
        return manifest, []
    return manifest, [{c: _parse_cell(v) for c, v in zip(header, rec)} for rec in reader]


def write_json(path, payload, manifest: RunManifest | None = None) -> Path:
    path = Path(path)
    doc = {"manifest": manifest.to_dict() if manifest else None, "payload": to_jsonable(payload)}
    _ensure_parent(path)
    try:
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_json(path) -> tuple[dict, object]:
    doc = json.loads(Path(path).read_text())
    return doc.get("manifest"), doc.get("payload")
