"""Result emission: CSV/JSON writers and the run manifest.

Floats are written with 17 significant digits so every value round-trips
exactly; each CSV carries a header row and ends with a comment line naming
the manifest, which downstream readers must skip.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

MANIFEST_NAME = "run_manifest.json"


def format_value(v) -> str:
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def write_table(path: Path, header, rows, fmt: str = "csv") -> Path:
    """Write rows (sequences aligned with header) as CSV or JSON records."""
    path = Path(path)
    if fmt == "json":
        path = path.with_suffix(".json")
        records = [dict(zip(header, row)) for row in rows]
        payload = dict(columns=list(header), rows=records, manifest=MANIFEST_NAME)
        path.write_text(json.dumps(payload, indent=1, default=format_value) + "\n",
                        encoding="utf-8")
        return path
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    lines.append(f"# manifest: {MANIFEST_NAME}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_table(path):
    """Read one of our CSVs back: (header, list of string rows)."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    rows = [ln for ln in lines if ln and not ln.startswith("#")]
    header = rows[0].split(",")
    return header, [ln.split(",") for ln in rows[1:]]


class RunManifest:
    """Records what a run produced and how long each stage took."""

    def __init__(self, cfg_hash: str, seed: int, version: str):
        self.data = dict(config_hash=cfg_hash, seed=seed, artifact_version=version,
                         stages={}, outputs=[])
        self._t0 = None
        self._stage = None

    def start(self, stage: str):
        self._stage = stage
        self._t0 = time.monotonic()

    def finish(self, stage: str):
        assert stage == self._stage
        self.data["stages"][stage] = round(time.monotonic() - self._t0, 3)

    def add_output(self, path) -> None:
        self.data["outputs"].append(Path(path).name)

    def write(self, out_dir) -> Path:
        self.data["outputs"] = sorted(self.data["outputs"])
        path = Path(out_dir) / MANIFEST_NAME
        path.write_text(json.dumps(self.data, indent=1, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path
