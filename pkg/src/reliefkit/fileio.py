"""Small file helpers shared by the I/O modules: atomic writes, CSV, PGM."""
from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import DataError

FLOAT_FMT = "%.17g"


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def format_rows(arr: np.ndarray, fmt: str) -> str:
    buf = io.StringIO()
    if len(arr):
        np.savetxt(buf, arr, fmt=fmt)
    return buf.getvalue()


def write_matrix_csv(path, header: list[str], row_ids: list[str], values: np.ndarray,
                     fmt: str = FLOAT_FMT) -> Path:
    lines = [",".join(header)]
    for rid, row in zip(row_ids, values):
        lines.append(",".join([rid] + [fmt % x for x in row]))
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_matrix_csv(path) -> tuple[list[str], list[str], np.ndarray]:
    """Read a CSV with a header of column ids and a leading row-id column."""
    try:
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty matrix file")
    cols = lines[0].split(",")[1:]
    rows, vals = [], []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(cols) + 1:
            raise DataError(f"{path}: row {parts[0]!r} has {len(parts) - 1} values, expected {len(cols)}")
        rows.append(parts[0])
        try:
            vals.append([float(x) for x in parts[1:]])
        except ValueError as exc:
            raise DataError(f"{path}: non-numeric entry in row {parts[0]!r}") from exc
    return rows, cols, np.array(vals, dtype=np.float64).reshape(len(rows), len(cols))


def write_pgm(path, image: np.ndarray, maxval: int = 255) -> Path:
    """Binary PGM (P5); ``image`` values are expected in [0, 1], NaN -> 0."""
    img = np.nan_to_num(np.asarray(image, dtype=np.float64), nan=0.0)
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = q.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    return atomic_write_bytes(path, header + q.astype(dtype).tobytes())


def read_pgm(path) -> np.ndarray:
    """Read ASCII (P2) or binary (P5) PGM, returning values scaled to [0, 1]."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and chr(data[pos]).isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not chr(data[pos]).isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos].decode("ascii"))
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic == "P5":
        dtype = ">u2" if maxval > 255 else "u1"
        raw = np.frombuffer(data[pos + 1:], dtype=dtype, count=w * h)
    elif magic == "P2":
        raw = np.array(data[pos:].split()[: w * h], dtype=np.int64)
    else:
        raise DataError(f"{path}: not a PGM file")
    if raw.size != w * h:
        raise DataError(f"{path}: expected {w * h} samples, found {raw.size}")
    return raw.reshape(h, w).astype(np.float64) / maxval
