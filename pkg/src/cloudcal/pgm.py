"""Binary PGM (P5) reader and writer.

Only the binary grayscale flavor is supported: maxval up to 255 stores one
byte per sample, larger maxvals two bytes most-significant-byte first.
The writer emits a canonical header ("P5\\n<w> <h>\\n<maxval>\\n") so that
identical arrays always produce identical bytes; the reader additionally
accepts arbitrary whitespace and '#' comments in the header.
"""
from __future__ import annotations

import numpy as np

from .errors import DatasetError


def _read_header_token(raw: bytes, pos: int, path) -> tuple[bytes, int]:
    n = len(raw)
    while pos < n:
        c = raw[pos:pos + 1]
        if c == b"#":
            while pos < n and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            break
    if pos >= n:
        raise DatasetError(f"{path}: truncated PGM header")
    start = pos
    while pos < n and not raw[pos:pos + 1].isspace():
        pos += 1
    return raw[start:pos], pos


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a P5 file; returns (2-d array of raw samples, maxval).

    The dtype is uint8 for maxval <= 255 and uint16 otherwise (big-endian
    sample pairs decoded to native order).
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] != b"P5":
        raise DatasetError(f"{path}: not a binary PGM (missing P5 magic)")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _read_header_token(raw, pos, path)
        try:
            fields.append(int(token))
        except ValueError:
            raise DatasetError(f"{path}: bad PGM header token {token!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DatasetError(f"{path}: bad PGM dimensions {width}x{height}")
    if not (0 < maxval < 65536):
        raise DatasetError(f"{path}: bad PGM maxval {maxval}")
    pos += 1  # single whitespace byte separates header from samples
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height
    expected = count * dtype.itemsize
    body = raw[pos:pos + expected]
    if len(body) != expected:
        raise DatasetError(f"{path}: expected {expected} sample bytes, found {len(body)}")
    samples = np.frombuffer(body, dtype=dtype).reshape(height, width)
    if samples.max(initial=0) > maxval:
        raise DatasetError(f"{path}: sample exceeds declared maxval {maxval}")
    return samples.astype(samples.dtype.newbyteorder("=")), maxval


def write_pgm(path, samples: np.ndarray, maxval: int) -> None:
    """Write a 2-d array of integer samples as canonical P5 bytes."""
    samples = np.asarray(samples)
    if samples.ndim != 2:
        raise DatasetError(f"{path}: PGM samples must be 2-d, got shape {samples.shape}")
    if not (0 < maxval < 65536):
        raise DatasetError(f"{path}: bad PGM maxval {maxval}")
    if samples.min(initial=0) < 0 or samples.max(initial=0) > maxval:
        raise DatasetError(f"{path}: samples outside [0, {maxval}]")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    height, width = samples.shape
    header = f"P5\n{width} {height}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(samples.astype(dtype).tobytes())
