"""Deterministic CSV/JSON writers and the run manifest."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__


def fmt(x) -> str:
    """Shortest round-trip text for numbers; identical values give identical bytes."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def jsonable(x):
    if isinstance(x, dict):
        return {str(k): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else fmt(x)
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def json_text(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Manifest:
    """Inventory of one CLI run; written even when a stage fails."""

    directory: str
    command: str
    config_hash: Optional[str] = None
    stages: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    exit_code: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        os.makedirs(self.directory, exist_ok=True)
        self._t0 = {}

    def start(self, stage: str):
        self._t0[stage] = time.perf_counter()

    def stop(self, stage: str):
        self.stages[stage] = time.perf_counter() - self._t0.pop(stage)

    def write_text(self, name: str, text: str) -> str:
        path = os.path.join(self.directory, name)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        self.files[name] = sha256_file(path)
        return path

    def check(self, name: str, passed: bool, detail=None):
        self.checks.append({"name": name, "passed": bool(passed), "detail": detail})

    def save(self) -> str:
        body = {
            "command": self.command,
            "code_version": __version__,
            "config_hash": self.config_hash,
            "stage_wall_times": self.stages,
            "files": dict(sorted(self.files.items())),
            "checks": self.checks,
            "errors": self.errors,
            "exit_code": self.exit_code,
        }
        body.update(self.extra)
        path = os.path.join(self.directory, "manifest.json")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json_text(body))
        return path


def verify_manifest(directory: str) -> dict:
    """``{file: checksum matches}`` for every file listed in the manifest."""
    with open(os.path.join(directory, "manifest.json"), encoding="utf-8") as fh:
        man = json.load(fh)
    return {name: os.path.exists(os.path.join(directory, name))
            and sha256_file(os.path.join(directory, name)) == digest
            for name, digest in man["files"].items()}
