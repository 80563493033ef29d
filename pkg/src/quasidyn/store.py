"""Result persistence: CSV tables, the JSON manifest and a content-addressed cache."""
from __future__ import annotations

import hashlib
import json
import math
import os
import time
from pathlib import Path

import numpy as np

CACHE_ENV = "QUASIDYN_CACHE"
CACHE_LIMIT_BYTES = 512 * 2 ** 20


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    x = float(v)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".16e")


def write_csv(path, header, rows):
    """Comma-separated, 17 significant digits, LF line endings.

    ``header`` entries are ``(name, unit, description)``; the header row reads
    ``name [unit] description`` so a column carries its unit in plain text.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = ",".join(f"{n} [{u}] {d}".strip() for n, u, d in header)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(head + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def read_csv(path):
    """Column names (first token of each header cell) and rows as strings."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    names = [c.split(" ")[0] for c in lines[0].split(",")]
    return names, [ln.split(",") for ln in lines[1:] if ln]


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Run metadata written next to the CSV files."""

    def __init__(self, command, run_id, version, config):
        self.data = {"command": command, "run_id": run_id, "version": version, "config": config,
                     "files": {}, "timings": {}, "notes": []}
        self._t0 = time.perf_counter()

    def add_file(self, path):
        self.data["files"][Path(path).name] = sha256_file(path)

    def time(self, stage, seconds):
        self.data["timings"][stage] = seconds

    def note(self, text):
        self.data["notes"].append(text)

    def write(self, directory):
        self.data["timings"]["total"] = time.perf_counter() - self._t0
        path = Path(directory) / f"manifest_{self.data['command']}.json"
        path.write_text(json.dumps(self.data, indent=2, sort_keys=True, default=_json_default) + "\n")
        return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


class Cache:
    """``npz`` files keyed by a hash of the inputs, evicted oldest-first past ``limit`` bytes."""

    def __init__(self, directory=None, limit=CACHE_LIMIT_BYTES):
        directory = directory or os.environ.get(CACHE_ENV)
        self.dir = Path(directory) if directory else None
        self.limit = limit
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(*parts):
        h = hashlib.sha256()
        for p in parts:
            if isinstance(p, np.ndarray):
                h.update(str(p.dtype).encode() + str(p.shape).encode())
                h.update(np.ascontiguousarray(p).tobytes())
            else:
                h.update(repr(p).encode())
            h.update(b"|")
        return h.hexdigest()

    def get_or_compute(self, key, fn):
        """``fn()`` returns a dict of arrays; stored and reloaded bit for bit."""
        if self.dir is None:
            return fn()
        path = self.dir / f"{key}.npz"
        if path.exists():
            with np.load(path) as z:
                os.utime(path)
                return {k: z[k] for k in z.files}
        out = fn()
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, **out)
        os.replace(tmp, path)
        self._evict()
        return out

    def _evict(self):
        files = sorted(self.dir.glob("*.npz"), key=lambda p: p.stat().st_mtime)
        total = sum(p.stat().st_size for p in files)
        while files and total > self.limit:
            victim = files.pop(0)
            total -= victim.stat().st_size
            victim.unlink(missing_ok=True)
