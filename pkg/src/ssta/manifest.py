"""JSON run manifests: resolved config, per-image records and their aggregate.

Manifests carry no timestamps or host details, so two runs with the same
inputs write byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from . import __version__
from .errors import FormatError
from .metrics import METRICS

SCHEMA = "ssta-manifest/1"


def _mean(values):
    values = [v for v in values if v is not None]
    if not values:
        return None
    return math.fsum(values) / len(values)


def aggregate(records) -> dict:
    """Success rate over all records and metric means over the fooled ones.

    Metrics that are undefined for a record (``None``, e.g. the PSNR of an
    untouched image) are left out of that metric's mean.
    """
    records = list(records)
    fooled = [r for r in records if r["success"]]
    out = {
        "total": len(records),
        "successes": len(fooled),
        "asr": len(fooled) / len(records) if records else None,
        "mean_iterations": _mean([r["iterations"] for r in fooled]),
    }
    out["metrics"] = {name: _mean([r["metrics"].get(name) for r in fooled]) for name in METRICS}
    return out


def build_manifest(command: str, config: dict, records=None, extra=None) -> dict:
    """Assemble a manifest; ``aggregate`` is filled in when ``records`` is given."""
    doc = {"schema": SCHEMA, "tool_version": __version__, "command": command, "config": config}
    if records is not None:
        doc["records"] = list(records)
        doc["aggregate"] = aggregate(doc["records"])
    if extra:
        doc.update(extra)
    return doc


def write_manifest(doc: dict, path) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n")


def load_manifest(path) -> dict:
    """Read a manifest and check that its aggregates match its records.

    Raises
    ------
    FormatError
        On invalid JSON, an unknown schema, or aggregates that cannot be
        recomputed from the records.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    if doc.get("schema") != SCHEMA:
        raise FormatError(f"{path}: unknown schema {doc.get('schema')!r}, expected {SCHEMA!r}")
    if "records" in doc:
        if aggregate(doc["records"]) != doc.get("aggregate"):
            raise FormatError(f"{path}: aggregate does not match the per-image records")
        for key, block in doc.get("baselines", {}).items():
            if aggregate(block["records"]) != block.get("aggregate"):
                raise FormatError(f"{path}: {key} aggregate does not match its records")
    return doc
