"""Dataset and model file formats.

Datasets are two CSVs: ``patches.csv`` holds one row per
(sample, pixel row, pixel col, channel) with the full time series in value
columns, and ``labels.csv`` holds ``sample_id,label,severity``.  Model
parameters go into a little-endian binary container with an embedded JSON
header (format version, model kind, config snapshot, array manifest);
loading refuses any other format version.  All writers emit deterministic
bytes for identical inputs.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .errors import InputDataError
from .model import StressClass, build_model
from .synth import SynthSample, stack_patches
from .vi import AgentPatch

__all__ = [
    "write_dataset",
    "load_dataset",
    "save_model",
    "load_model",
    "MODEL_MAGIC",
    "MODEL_FORMAT_VERSION",
]

MODEL_MAGIC = b"FFCM"
MODEL_FORMAT_VERSION = 1

_CHANNELS = ("lai", "lcc")


def write_dataset(directory, samples) -> dict:
    """Write patches.csv + labels.csv; returns {name: path}."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    patches, labels, severities = stack_patches(samples)
    n, k, _, t, _ = patches.shape

    patches_path = directory / "patches.csv"
    with patches_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "row", "col", "channel"]
                        + [f"t{j}" for j in range(t)])
        for i in range(n):
            for r in range(k):
                for c in range(k):
                    for ci, channel in enumerate(_CHANNELS):
                        writer.writerow(
                            [i, r, c, channel]
                            + [format(v, ".12g") for v in patches[i, r, c, :, ci]]
                        )

    labels_path = directory / "labels.csv"
    with labels_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sample_id", "label", "severity"])
        for i in range(n):
            writer.writerow([i, StressClass(labels[i]).label, format(severities[i], ".12g")])

    return {"patches": patches_path, "labels": labels_path}


def load_dataset(directory) -> tuple:
    """Read a dataset directory back to (patches, labels, severities)."""
    directory = Path(directory)
    patches_path = directory / "patches.csv"
    labels_path = directory / "labels.csv"
    for p in (patches_path, labels_path):
        if not p.exists():
            raise InputDataError(f"missing dataset file: {p}")

    rows = []
    with patches_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:4] != ["sample_id", "row", "col", "channel"]:
            raise InputDataError(f"{patches_path}:1: bad patches header")
        t = len(header) - 4
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != t + 4:
                raise InputDataError(f"{patches_path}:{lineno}: expected {t + 4} columns")
            rows.append(row)
    if not rows:
        raise InputDataError(f"{patches_path}: no data rows")

    n = max(int(r[0]) for r in rows) + 1
    k = max(int(r[1]) for r in rows) + 1
    patches = np.full((n, k, k, t, 2), np.nan)
    for row in rows:
        i, r, c = int(row[0]), int(row[1]), int(row[2])
        channel = row[3].strip().lower()
        if channel not in _CHANNELS:
            raise InputDataError(f"{patches_path}: unknown channel {row[3]!r}")
        patches[i, r, c, :, _CHANNELS.index(channel)] = [float(v) for v in row[4:]]
    if np.any(np.isnan(patches)):
        raise InputDataError(f"{patches_path}: incomplete dataset (missing rows)")

    labels = np.zeros(n, dtype=np.intp)
    severities = np.zeros(n, dtype=np.float64)
    seen = np.zeros(n, dtype=bool)
    with labels_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sample_id", "label", "severity"]:
            raise InputDataError(f"{labels_path}:1: bad labels header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise InputDataError(f"{labels_path}:{lineno}: expected 3 columns")
            i = int(row[0])
            if i < 0 or i >= n:
                raise InputDataError(f"{labels_path}:{lineno}: sample_id {i} out of range")
            labels[i] = int(StressClass.from_label(row[1]))
            severities[i] = float(row[2])
            seen[i] = True
    if not np.all(seen):
        raise InputDataError(f"{labels_path}: labels missing for some samples")
    return patches, labels, severities


def samples_from_arrays(patches, labels, severities) -> list:
    return [
        SynthSample(AgentPatch(patches[i]), StressClass(int(labels[i])), float(severities[i]))
        for i in range(len(labels))
    ]


# ---------------------------------------------------------------------------
# model container


def save_model(path, model, config: PipelineConfig) -> None:
    arrays = model.state_items()
    manifest = []
    blobs = []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.complex128:
            dtype = "c16"
        elif arr.dtype == np.float64:
            dtype = "f8"
        else:
            arr = arr.astype(np.float64)
            dtype = "f8"
        blob = arr.astype("<" + dtype, copy=False).tobytes()
        manifest.append({"name": name, "dtype": dtype, "shape": list(arr.shape),
                         "nbytes": len(blob)})
        blobs.append(blob)

    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "seed": config.seed,
        "config": config.to_dict(),
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(MODEL_FORMAT_VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_model(path):
    """Rebuild a model from its container; returns (model, config)."""
    path = Path(path)
    if not path.exists():
        raise InputDataError(f"no such model file: {path}")
    raw = path.read_bytes()
    if raw[:4] != MODEL_MAGIC:
        raise InputDataError(f"{path}: not a model container (bad magic)")
    version = int.from_bytes(raw[4:8], "little")
    if version != MODEL_FORMAT_VERSION:
        raise InputDataError(
            f"{path}: format version {version} unsupported "
            f"(this build reads version {MODEL_FORMAT_VERSION})"
        )
    header_len = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    config = PipelineConfig(**header["config"]).validate()

    arrays = {}
    offset = 16 + header_len
    for entry in header["arrays"]:
        nbytes = entry["nbytes"]
        blob = raw[offset:offset + nbytes]
        if len(blob) != nbytes:
            raise InputDataError(f"{path}: truncated array {entry['name']}")
        arr = np.frombuffer(blob, dtype="<" + entry["dtype"]).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()
        offset += nbytes

    model = build_model(header["kind"], config)
    model.load_state(arrays)
    return model, config
