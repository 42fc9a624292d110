"""Checkpoint container, dataset files and CSV emission.

Checkpoint layout (all integers little-endian)::

    offset 0   8 bytes   magic b"CHAINCST"
    offset 8   u32       format version
    offset 12  u32       header length H
    offset 16  H bytes   UTF-8 JSON header (sorted keys): architecture, n0,
                         n_params, metadata
    16+H       8*n_params  float64 LE parameters: each cell's flat vector in
                         layer order (W_all, U_all, b_all; row-major, gates
                         stacked), then predictor W (row-major) and b
    end-4      u32       CRC-32 of every preceding byte
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
import struct
import zlib
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cells import CellKind, CellParams, PredictorParams, param_count
from .chain import ChainModel
from .train import DatasetSpec, Segment

MAGIC = b"CHAINCST"
FORMAT_VERSION = 1
DATASET_HEADER = "# chaincast dataset v1"


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(model: ChainModel, metadata: dict | None = None) -> bytes:
    header = {
        "architecture": [
            {"kind": c.kind.value, "n_in": c.n_in, "n_r": c.n_r} for c in model.cells
        ],
        "n0": model.n0,
        "n_params": model.n_params,
        "metadata": metadata or {},
    }
    hdr = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    params = model.flat_params().astype("<f8").tobytes()
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(hdr)) + hdr + params
    return body + struct.pack("<I", zlib.crc32(body))


def checkpoint_save(path: str | Path, model: ChainModel, metadata: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model, metadata))
    return path


def parse_checkpoint(data: bytes) -> tuple[ChainModel, dict]:
    if len(data) < 16:
        raise CheckpointError(f"truncated checkpoint: {len(data)} bytes, header needs 16 (offset {len(data)})")
    if data[:8] != MAGIC:
        raise CheckpointError("not a chaincast checkpoint: bad magic at offset 0")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION}); offset 8"
        )
    if len(data) < 16 + hlen:
        raise CheckpointError(f"truncated checkpoint: header ends at offset {16 + hlen}, file has {len(data)} bytes")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
        arch = [(CellKind(a["kind"]), int(a["n_in"]), int(a["n_r"])) for a in header["architecture"]]
        n0 = int(header["n0"])
        n_params = int(header["n_params"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint header at offset 16: {exc}") from None

    expected = sum(param_count(kind, n_in, n_r) for kind, n_in, n_r in arch) + n0 * (arch[-1][2] + 1)
    if expected != n_params:
        raise CheckpointError(
            f"header declares {n_params} parameters but the architecture needs {expected} (offset 16)"
        )
    start = 16 + hlen
    end = start + 8 * n_params
    if len(data) < end + 4:
        raise CheckpointError(
            f"truncated checkpoint: parameters/CRC need bytes up to offset {end + 4}, file ends at offset {len(data)}"
        )
    if len(data) > end + 4:
        raise CheckpointError(f"unexpected trailing data at offset {end + 4}")
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[:end]):
        raise CheckpointError(f"CRC mismatch at offset {end}: checkpoint is corrupt")

    theta = np.frombuffer(data, dtype="<f8", count=n_params, offset=start).astype(np.float64)
    cells, pos, prev = [], 0, n0
    for r, (kind, n_in, n_r) in enumerate(arch, start=1):
        if n_in != prev:
            raise CheckpointError(f"layer {r} input dim {n_in} does not match previous dim {prev} (offset 16)")
        cnt = param_count(kind, n_in, n_r)
        cells.append(CellParams(kind, n_in, n_r, theta[pos : pos + cnt].copy()))
        pos += cnt
        prev = n_r
    nw = n0 * prev
    pred = PredictorParams(theta[pos : pos + nw].reshape(n0, prev).copy(), theta[pos + nw :].copy())
    return ChainModel(tuple(cells), pred), header.get("metadata", {})


def checkpoint_load(path: str | Path) -> tuple[ChainModel, dict]:
    return parse_checkpoint(Path(path).read_bytes())


def _fmt(x: float) -> str:
    return repr(float(x))


def timestamp_line() -> str:
    return "# generated " + _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_dataset(path: str | Path, segments: Sequence[Segment], spec: DatasetSpec | None = None,
                  timestamp: bool = False) -> Path:
    """One segment per line: ``m,x_1,...,x_m,target`` (n0 = 1)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [DATASET_HEADER]
    if timestamp:
        lines.append(timestamp_line())
    if spec is not None:
        d = dict(spec.__dict__, waveform=spec.waveform.value)
        lines.append("# spec " + json.dumps(d, sort_keys=True))
    for s in segments:
        if s.inputs.shape[1] != 1:
            raise ValueError("dataset files hold scalar (n0 = 1) series only")
        vals = [str(s.m)] + [_fmt(v) for v in s.inputs[:, 0]] + [_fmt(s.target[0])]
        lines.append(",".join(vals))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_dataset(path: str | Path) -> list[Segment]:
    segs = []
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
        if first != DATASET_HEADER:
            raise ValueError(f"{path}: not a chaincast dataset file (line 1 is {first!r})")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split(",")
            try:
                m = int(fields[0])
                vals = np.array([float(v) for v in fields[1:]])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if vals.size != m + 1:
                raise ValueError(f"{path}:{lineno}: declared length {m} but found {vals.size - 1} inputs")
            segs.append(Segment(vals[:m].reshape(m, 1), vals[m:]))
    return segs


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence],
              timestamp: bool = False, footer: Iterable[Sequence] = ()) -> Path:
    """Write a CSV with floats in shortest round-trip form; blanks for ``None``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if timestamp:
            fh.write(timestamp_line() + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in list(rows) + list(footer):
            w.writerow(["" if v is None else _fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Read a CSV written by ``write_csv``, skipping ``#`` comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]
