"""Dataset CSVs, manifests and JSON reports."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from . import __version__
from .dgp import Dataset, Latent
from .errors import ConfigInvalid, DataError, LengthMismatch

SCHEMA_VERSION = "1"


class IoError(DataError):
    pass


def _fmt(x: float) -> str:
    return repr(float(x))


def write_dataset(data: Dataset, out_dir, latent: bool = True) -> dict:
    """data.csv (and latent.csv) under out_dir; returns {file name: sha256}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    path = out / "data.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y", "t", "z"])
        for y, t, z in zip(data.y.tolist(), data.t.tolist(), data.z.tolist()):
            w.writerow([_fmt(y), t, z])
    files[path.name] = file_sha256(path)
    if latent and data.latent is not None:
        lat = data.latent
        k1, m = lat.y.shape[1], lat.t_pot.shape[1]
        path = out / "latent.csv"
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"u{t}" for t in range(k1)] + [f"y{t}" for t in range(k1)]
                       + [f"t_z{j}" for j in range(m)])
            for u, y, tp in zip(lat.u.tolist(), lat.y.tolist(), lat.t_pot.tolist()):
                w.writerow([_fmt(v) for v in u] + [_fmt(v) for v in y] + tp)
        files[path.name] = file_sha256(path)
    return files


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _parse_labels(raw: list[str], labels) -> tuple[np.ndarray, tuple[str, ...]]:
    """Instrument column to indices; integers pass through unless labels are declared."""
    if labels:
        labels = tuple(str(s) for s in labels)
        index = {s: i for i, s in enumerate(labels)}
        try:
            return np.array([index[v] if v in index else int(v) for v in raw], dtype=np.int64), labels
        except ValueError as exc:
            raise IoError(f"instrument value not among declared labels {labels}: {exc}") from None
    try:
        z = np.array([int(v) for v in raw], dtype=np.int64)
    except ValueError:
        found = tuple(sorted(set(raw)))
        index = {s: i for i, s in enumerate(found)}
        return np.array([index[v] for v in raw], dtype=np.int64), found
    if z.size and z.min() < 0:
        raise IoError("instrument indices must be non-negative")
    m = int(z.max()) + 1 if z.size else 0
    return z, tuple(str(i) for i in range(m))


def read_dataset(path, k: int | None = None, labels=None, latent_path=None) -> Dataset:
    """CSV with header y,t,z.  ``labels`` maps instrument labels to indices."""
    path = Path(path)
    if not path.is_file():
        raise IoError(f"dataset {path} not found")
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0][:3]] != ["y", "t", "z"]:
        raise IoError(f"{path}: header must be 'y,t,z'")
    body = rows[1:]
    if any(len(r) < 3 for r in body):
        raise IoError(f"{path}: every row needs y, t and z")
    try:
        y = np.array([float(r[0]) for r in body])
        t = np.array([int(r[1]) for r in body], dtype=np.int64)
    except ValueError as exc:
        raise IoError(f"{path}: {exc}") from None
    z, zl = _parse_labels([r[2].strip() for r in body], labels)
    if t.size and t.min() < 0:
        raise IoError("treatments must be non-negative integers")
    kk = int(t.max()) if k is None else int(k)
    if t.size and t.max() > kk:
        raise IoError(f"treatment {int(t.max())} exceeds k={kk}")
    lat = read_latent(latent_path, kk, len(zl)) if latent_path else None
    if lat is not None and lat.y.shape[0] != y.size:
        raise LengthMismatch("latent.csv and data.csv have different row counts")
    return Dataset(y, t, z, kk, zl, lat)


def read_latent(path, k: int, m: int) -> Latent:
    path = Path(path)
    if not path.is_file():
        raise IoError(f"latent file {path} not found")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    k1 = k + 1
    if arr.shape[1] != 2 * k1 + m:
        raise IoError(f"{path}: expected {2 * k1 + m} columns, found {arr.shape[1]}")
    return Latent(arr[:, :k1], arr[:, k1:2 * k1], arr[:, 2 * k1:].astype(np.int64))


# ---------------------------------------------------------------------------
# JSON


def to_jsonable(obj):
    """numpy, tuples and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"schema_version": SCHEMA_VERSION, "mtiv_version": __version__}
    body.update(payload)
    path.write_text(json.dumps(to_jsonable(body), indent=2, sort_keys=False) + "\n",
                    encoding="utf-8")


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigInvalid(f"config file {path} not found")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None


def write_table_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
