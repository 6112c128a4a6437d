"""Binary and text file formats.

``.tns``   b"TNS1", u32 ndim, ndim x u32 dims, prod(dims) x f32 values (all LE, row-major).
``.msk``   b"MSK1", u32 H, u32 W, H*W u8 labels.
``.pgm``   binary P5 greyscale, maxval 255.
checkpoint: text header ``NBSAUNET v1`` plus ``key=value`` config lines,
           terminated by an empty line; then u32 entry count, the name table
           (u32 name length, UTF-8 name, u64 payload length per entry) and
           the ``.tns`` payloads concatenated in table order.
"""

from __future__ import annotations

import csv
import io
import struct
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = "NBSAUNET v1"


class FormatError(ValueError):
    pass


def tns_bytes(array) -> bytes:
    a = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    head = b"TNS1" + struct.pack("<I", a.ndim) + struct.pack(f"<{a.ndim}I", *a.shape)
    return head + a.tobytes()


def tns_from_bytes(buf: bytes) -> np.ndarray:
    if buf[:4] != b"TNS1":
        raise FormatError("bad .tns magic")
    (ndim,) = struct.unpack_from("<I", buf, 4)
    dims = struct.unpack_from(f"<{ndim}I", buf, 8)
    off = 8 + 4 * ndim
    n = int(np.prod(dims, dtype=np.int64))
    if len(buf) != off + 4 * n:
        raise FormatError(f".tns payload holds {len(buf) - off} bytes, expected {4 * n}")
    return np.frombuffer(buf, dtype="<f4", count=n, offset=off).astype(np.float64).reshape(dims)


def write_tns(path, array) -> None:
    Path(path).write_bytes(tns_bytes(array))


def read_tns(path) -> np.ndarray:
    return tns_from_bytes(Path(path).read_bytes())


def write_msk(path, mask) -> None:
    m = np.asarray(mask)
    if m.ndim != 2 or m.min(initial=0) < 0 or m.max(initial=0) > 255:
        raise FormatError("masks must be 2-d with labels in [0, 255]")
    Path(path).write_bytes(b"MSK1" + struct.pack("<II", *m.shape) + m.astype(np.uint8).tobytes())


def read_msk(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != b"MSK1":
        raise FormatError("bad .msk magic")
    H, W = struct.unpack_from("<II", buf, 4)
    if len(buf) != 12 + H * W:
        raise FormatError(".msk size mismatch")
    return np.frombuffer(buf, dtype=np.uint8, offset=12).reshape(H, W).copy()


def write_pgm(path, image) -> None:
    img = np.asarray(image, dtype=np.uint8)
    H, W = img.shape
    Path(path).write_bytes(f"P5\n{W} {H}\n255\n".encode() + img.tobytes())


def read_pgm(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while buf[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not buf[pos : pos + 1].isspace():
            pos += 1
        fields.append(buf[start:pos])
    pos += 1  # single whitespace byte before the raster
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise FormatError("only binary P5 PGM with maxval 255 is supported")
    W, H = int(fields[1]), int(fields[2])
    return np.frombuffer(buf, dtype=np.uint8, count=W * H, offset=pos).reshape(H, W).copy()


def checkpoint_bytes(config_lines: list[str], params: dict[str, np.ndarray]) -> bytes:
    head = "\n".join([CHECKPOINT_MAGIC, *config_lines]) + "\n\n"
    payloads = [tns_bytes(v) for v in params.values()]
    table = struct.pack("<I", len(params))
    for name, blob in zip(params, payloads):
        raw = name.encode()
        table += struct.pack("<I", len(raw)) + raw + struct.pack("<Q", len(blob))
    return head.encode() + table + b"".join(payloads)


def parse_checkpoint(buf: bytes) -> tuple[list[str], dict[str, np.ndarray]]:
    end = buf.find(b"\n\n")
    if end < 0:
        raise FormatError("checkpoint header not terminated")
    lines = buf[:end].decode().split("\n")
    if lines[0] != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {lines[0]!r}")
    off = end + 2
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    table = []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, off)
        name = buf[off + 4 : off + 4 + n].decode()
        (size,) = struct.unpack_from("<Q", buf, off + 4 + n)
        table.append((name, size))
        off += 4 + n + 8
    params = {}
    for name, size in table:
        params[name] = tns_from_bytes(buf[off : off + size])
        off += size
    if off != len(buf):
        raise FormatError("trailing bytes after checkpoint payloads")
    return lines[1:], params


def write_checkpoint(path, config_lines, params) -> None:
    Path(path).write_bytes(checkpoint_bytes(config_lines, params))


def read_checkpoint(path):
    return parse_checkpoint(Path(path).read_bytes())


def write_csv(path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else v for v in (r if isinstance(r, (list, tuple)) else [r.get(h) for h in header])])
    Path(path).write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
