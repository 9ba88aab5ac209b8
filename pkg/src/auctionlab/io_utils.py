"""Delimited output with schema-version headers, and run manifests.

Every CSV written by the package starts with a line "# schema=<name>/<ver>".
Readers reject files whose major version does not match what they expect.
"""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import pandas as pd


class SchemaError(ValueError):
    pass


def _split_schema(tag: str):
    name, _, ver = tag.partition("/")
    major = ver.split(".")[0]
    return name, major


def write_table(path, frame: pd.DataFrame, schema: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# schema={schema}\n")
        frame.to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")


def read_table(path, expected_schema: str) -> pd.DataFrame:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema="):
            raise SchemaError(f"{path}: missing schema header line")
        tag = first.removeprefix("# schema=")
        name, major = _split_schema(tag)
        exp_name, exp_major = _split_schema(expected_schema)
        if name != exp_name or major != exp_major:
            raise SchemaError(f"{path}: schema {tag!r}, expected {expected_schema!r}")
        return pd.read_csv(fh)


def config_digest(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_manifest(path, subcommand: str, config: dict, seed, outputs,
                   wall_time_s: float):
    from . import __version__

    manifest = {
        "schema": "auctionlab.manifest/1.0",
        "subcommand": subcommand,
        "config": config,
        "config_sha256": config_digest(config),
        "seed": seed,
        "outputs": [str(p) for p in outputs],
        "wall_time_s": wall_time_s,
        "versions": {
            "auctionlab": __version__,
            "numpy": np.__version__,
            "pandas": pd.__version__,
            "python": platform.python_version(),
        },
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_manifest(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    name, major = _split_schema(manifest.get("schema", ""))
    if name != "auctionlab.manifest" or major != "1":
        raise SchemaError(f"{path}: not a recognized manifest")
    return manifest
