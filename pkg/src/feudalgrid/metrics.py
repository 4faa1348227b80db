"""Append-only JSON-lines metrics and step-named checkpoints.

Metric records carry no wall-clock fields, so two runs of the same
(config, seed) produce byte-identical streams.  Checkpoints are named
by step; a small ``latest`` file (written atomically via rename) points
at the most recent one.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .optim import ParameterStore, save_checkpoint

__all__ = ["MetricsWriter", "frame_windows", "write_step_checkpoint",
           "read_latest_checkpoint"]


class MetricsWriter:
    """One JSON object per line, keys sorted, flushed on every write."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")

    def write(self, record: dict) -> None:
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def frame_windows(records: list[dict], value_key: str,
                  frame_key: str = "frames", width: int = 10_000) -> list[dict]:
    """Group records into fixed frame intervals and average the value.

    Mirrors the reporting style of grouping log points per 10,000-frame
    window.
    """
    buckets: dict[int, list[float]] = {}
    for rec in records:
        if frame_key not in rec or value_key not in rec:
            continue
        buckets.setdefault(int(rec[frame_key]) // width, []).append(float(rec[value_key]))
    return [{"window_start": k * width, "window_end": (k + 1) * width,
             "mean": sum(v) / len(v), "points": len(v)}
            for k, v in sorted(buckets.items())]


def write_step_checkpoint(store: ParameterStore, directory, name: str, step: int,
                          dtype: str = "float64", meta: dict | None = None) -> Path:
    """Save ``<name>-step<step>.ckpt`` and atomically update ``latest``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    filename = f"{name}-step{step}.ckpt"
    meta = dict(meta or {})
    meta["step"] = step
    save_checkpoint(store, directory / filename, dtype=dtype, meta=meta)
    tmp = directory / f".latest-{name}.tmp"
    tmp.write_text(filename + "\n", encoding="utf-8")
    os.replace(tmp, directory / f"latest-{name}")
    return directory / filename


def read_latest_checkpoint(directory, name: str) -> Path:
    directory = Path(directory)
    pointer = directory / f"latest-{name}"
    target = directory / pointer.read_text(encoding="utf-8").strip()
    if not target.exists():
        raise FileNotFoundError(f"latest checkpoint {target} is missing")
    return target
