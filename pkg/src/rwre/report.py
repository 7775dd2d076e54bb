"""Deterministic JSON/CSV artifacts.

Artifacts are byte-stable: keys are sorted, floats use repr, and anything
that varies between identical runs (wall-clock) goes to a ``.timing.json``
sidecar instead of the artifact itself.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__


def jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(_key(k)): jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return x


def _key(k):
    if isinstance(k, tuple):
        return " ".join(str(c) for c in k)
    return k


def dumps(doc: dict) -> str:
    return json.dumps(jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass
class Artifact:
    """Collects one subcommand's output and writes it on ``save``."""

    subcommand: str
    config: dict
    config_hash: str
    seeds: dict
    result: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    csv_files: dict = field(default_factory=dict)
    started: float = field(default_factory=time.time)

    @property
    def passed(self) -> bool:
        return all(bool(v) for v in self.checks.values())

    def document(self) -> dict:
        return {"subcommand": self.subcommand, "code_version": __version__,
                "config_hash": self.config_hash, "config": self.config, "seeds": self.seeds,
                "checks": self.checks, "passed": self.passed, "result": self.result}

    def save(self, out_dir: Path) -> list[Path]:
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = self.subcommand.replace("-", "_")
        paths = [out_dir / f"{stem}.json"]
        paths[0].write_text(dumps(self.document()))
        for name, text in sorted(self.csv_files.items()):
            p = out_dir / name
            p.write_text(text)
            paths.append(p)
        end = time.time()
        timing = {"subcommand": self.subcommand, "config_hash": self.config_hash,
                  "started_unix": self.started, "finished_unix": end,
                  "wall_clock_seconds": end - self.started}
        (out_dir / f"{stem}.timing.json").write_text(dumps(timing))
        return paths
