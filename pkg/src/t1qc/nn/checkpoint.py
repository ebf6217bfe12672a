"""Versioned single-file model container: JSON header + raw parameter segments.

Layout: 8-byte magic, u32 format version, u64 header length, UTF-8 JSON
header, then the concatenated little-endian array segments in header order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import NetworkSpec
from .train import TrainConfig, TrainedModel

MAGIC = b"T1QCNET\x00"
FORMAT_VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def save_model(model: TrainedModel, path: str | Path) -> None:
    segments = []
    blobs = []
    offset = 0
    for name in sorted(model.params):
        arr = model.params[name]
        dtype = "<f8" if arr.dtype == np.float64 else "<f4"
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes()
        segments.append(
            {"name": name, "shape": list(arr.shape), "dtype": dtype, "offset": offset, "nbytes": len(raw)}
        )
        blobs.append(raw)
        offset += len(raw)
    header = {
        "spec": model.spec.to_dict(),
        "config": model.config.to_dict(),
        "input_shape": list(model.input_shape),
        "task": model.task,
        "fold_index": model.fold_index,
        "best_validation_loss": model.best_validation_loss,
        "epochs_run": model.epochs_run,
        "class_weights": list(model.class_weights),
        "loss_trace": [{"train": t, "validation": v} for t, v in model.loss_trace],
        "segments": segments,
    }
    payload = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(payload)))
        f.write(payload)
        for raw in blobs:
            f.write(raw)


def load_model(path: str | Path) -> TrainedModel:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: not a model container (bad magic)")
    version, header_len = struct.unpack_from("<IQ", buf, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    header = json.loads(buf[20 : 20 + header_len].decode("utf-8"))
    base = 20 + header_len
    params: dict[str, np.ndarray] = {}
    for seg in header["segments"]:
        dtype = _DTYPES[seg["dtype"]]
        start = base + seg["offset"]
        arr = np.frombuffer(buf, dtype=dtype, count=seg["nbytes"] // dtype.itemsize, offset=start)
        params[seg["name"]] = arr.reshape(seg["shape"]).copy()
    return TrainedModel(
        spec=NetworkSpec.from_dict(header["spec"]),
        params=params,
        input_shape=tuple(header["input_shape"]),
        task=header["task"],
        fold_index=int(header["fold_index"]),
        best_validation_loss=float(header["best_validation_loss"]),
        epochs_run=int(header["epochs_run"]),
        class_weights=tuple(header["class_weights"]),
        loss_trace=tuple((e["train"], e["validation"]) for e in header["loss_trace"]),
        config=TrainConfig.from_dict(header["config"]),
    )
