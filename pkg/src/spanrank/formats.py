"""Readers and writers for the on-disk formats used by the CLI."""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import UnsupportedFormat
from .scatter import LabeledInstanceSet

FLIM_MAGIC = b"FLIM"


# ---------------------------------------------------------------- instances

def write_instances_csv(path, x: LabeledInstanceSet):
    with open(path, "w", newline="") as fh:
        fh.write(",".join([f"f{k}" for k in range(x.d)] + ["label"]) + "\n")
        for row, y in zip(x.data, x.labels):
            fh.write(",".join(format_float(v) for v in row) + f",{int(y)}\n")


def read_instances_csv(path, num_classes: int | None = None) -> LabeledInstanceSet:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-1].strip() != "label":
            raise UnsupportedFormat(f"{path}: header must end with 'label'")
        d = len(header) - 1
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != d + 1:
                raise UnsupportedFormat(f"{path}:{lineno}: expected {d + 1} fields")
            rows.append([float(v) for v in rec[:d]])
            labels.append(int(rec[d]))
    data = np.array(rows, dtype=np.float64).reshape(len(rows), d)
    labels = np.array(labels, dtype=np.int64)
    c = num_classes if num_classes is not None else int(labels.max()) + 1 if labels.size else 1
    return LabeledInstanceSet(data, labels, c)


def write_instances_binary(path, x: LabeledInstanceSet):
    with open(path, "wb") as fh:
        fh.write(FLIM_MAGIC)
        fh.write(struct.pack("<QQQ", x.n, x.d, x.num_classes))
        fh.write(np.ascontiguousarray(x.data, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(x.labels, dtype="<u4").tobytes())


def read_instances_binary(path) -> LabeledInstanceSet:
    raw = Path(path).read_bytes()
    if raw[:4] != FLIM_MAGIC or len(raw) < 28:
        raise UnsupportedFormat(f"{path}: not a FLIM file")
    n, d, c = struct.unpack("<QQQ", raw[4:28])
    need = 28 + 8 * n * d + 4 * n
    if len(raw) != need:
        raise UnsupportedFormat(f"{path}: expected {need} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f8", count=n * d, offset=28).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=28 + 8 * n * d)
    return LabeledInstanceSet(data.astype(np.float64), labels.astype(np.int64), int(c))


def read_instances(path, num_classes: int | None = None) -> LabeledInstanceSet:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == FLIM_MAGIC:
        return read_instances_binary(path)
    return read_instances_csv(path, num_classes)


# ----------------------------------------------------------------- matrices

def format_float(v: float) -> str:
    return f"{float(v):.17g}"


def write_matrix_csv(path, m: np.ndarray, header=None):
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in m:
            fh.write(",".join(format_float(v) for v in row) + "\n")


def read_matrix_csv(path, header: bool = False) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if header:
        rows = rows[1:]
    rows = [r for r in rows if r]
    if not rows:
        raise UnsupportedFormat(f"{path}: empty matrix")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise UnsupportedFormat(f"{path}: ragged rows")
    return np.array([[float(v) for v in r] for r in rows], dtype=np.float64)


# ------------------------------------------------------------------ netpbm

def _pnm_tokens(buf: bytes, count: int, pos: int):
    out = []
    while len(out) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise UnsupportedFormat("truncated netpbm header")
        out.append(buf[start:pos])
    return out, pos


def read_pnm(path) -> np.ndarray:
    """Read a binary 8-bit PGM (P5) or PPM (P6) into an H x W x 3 uint8 array."""
    buf = Path(path).read_bytes()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"{path}: only binary P5/P6 images are supported")
    (w, h, maxval), pos = _pnm_tokens(buf, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 256:
        raise UnsupportedFormat(f"{path}: only 8-bit samples are supported (maxval {maxval})")
    pos += 1  # single whitespace after maxval
    ch = 1 if magic == b"P5" else 3
    size = w * h * ch
    pix = np.frombuffer(buf, dtype=np.uint8, count=size, offset=pos) if len(buf) >= pos + size else None
    if pix is None:
        raise UnsupportedFormat(f"{path}: truncated pixel data")
    img = pix.reshape(h, w, ch)
    if maxval != 255:
        img = np.round(img.astype(np.float64) * (255.0 / maxval)).astype(np.uint8)
    if ch == 1:
        img = np.repeat(img, 3, axis=2)
    return np.ascontiguousarray(img)


def write_pnm(path, img: np.ndarray):
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise UnsupportedFormat("only 8-bit images can be written")
    if img.ndim == 2:
        head = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n"
    else:
        head = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n"
    with open(path, "wb") as fh:
        fh.write(head.encode("ascii"))
        fh.write(np.ascontiguousarray(img).tobytes())


# ---------------------------------------------------------------- manifest

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    split: str


def read_manifest(path) -> list:
    """Parse a ``path,label,split`` manifest; relative paths resolve against its directory."""
    base = Path(path).resolve().parent
    entries = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["path", "label", "split"]:
            raise UnsupportedFormat(f"{path}: header must be 'path,label,split'")
        for rec in reader:
            split = rec["split"].strip()
            if split not in ("train", "test"):
                raise UnsupportedFormat(f"{path}: unknown split {split!r}")
            p = Path(rec["path"].strip())
            if not p.is_absolute():
                p = base / p
            entries.append(ManifestEntry(str(p), int(rec["label"]), split))
    return entries


def write_manifest(path, entries):
    with open(path, "w", newline="") as fh:
        fh.write("path,label,split\n")
        for e in entries:
            fh.write(f"{e.path},{e.label},{e.split}\n")


# ------------------------------------------------------------------ config

def dump_config(cfg: dict) -> str:
    """Serialise a flat mapping as ``key = value`` lines, sorted by key."""
    buf = io.StringIO()
    for key in sorted(cfg):
        val = cfg[key]
        if isinstance(val, (list, tuple)):
            val = ",".join(str(v) for v in val)
        elif isinstance(val, float):
            val = repr(val)
        buf.write(f"{key} = {val}\n")
    return buf.getvalue()


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines. Values stay strings; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UnsupportedFormat(f"config line {lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out
