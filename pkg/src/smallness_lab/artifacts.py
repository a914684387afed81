"""Deterministic CSV/SVG output and the hashed file manifest."""
from __future__ import annotations

import csv
import hashlib
import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

plt.rcParams["svg.hashsalt"] = "smallness-lab"
plt.rcParams["svg.fonttype"] = "none"

__all__ = ["OutputDir", "sha256_file"]


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.12e}"
    return str(v)


class OutputDir:
    """Collects the files written by one experiment run."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def _register(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.path / name

    def csv(self, name: str, header, rows) -> Path:
        p = self._register(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
        return p

    def adopt(self, name: str) -> Path:
        """Register a file written by some other routine (e.g. a ``to_csv``)."""
        return self._register(name)

    def svg(self, name: str, fig) -> Path:
        p = self._register(name)
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        return p

    def manifest(self, extra: dict | None = None) -> Path:
        entries = {name: sha256_file(self.path / name) for name in sorted(self.files)}
        data = {"files": entries}
        if extra:
            data.update(extra)
        p = self.path / "manifest.json"
        with open(p, "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return p


def figure(width: float = 5.0, height: float = 3.5):
    fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def worker_count() -> int:
    """Pool size from ``SMALLNESS_THREADS`` (default 1)."""
    raw = os.environ.get("SMALLNESS_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SMALLNESS_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("SMALLNESS_THREADS must be >= 1")
    return n
