"""Image files: binary PGM/PPM (8 or 16 bit) in and out, PNG in.

Samples are returned as floats in ``[0, 1]`` with shape ``(height, width, channels)``.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np


def _pnm_tokens(data: bytes, count: int) -> tuple[list, int]:
    """First ``count`` whitespace-separated header tokens (skipping comments) and the data offset."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b"\r", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1  # exactly one whitespace byte before the raster


def read_pnm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError(f"{path}: only binary PGM (P5) and PPM (P6) are supported")
    (_, w, h, maxval), off = _pnm_tokens(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad maxval {maxval}")
    ch = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    raw = np.frombuffer(data, dtype=dtype, count=w * h * ch, offset=off)
    return raw.reshape(h, w, ch).astype(float) / maxval


def write_pgm(path, samples: np.ndarray, bits: int = 8) -> None:
    """Write a ``(h, w)`` or ``(h, w, 1|3)`` array in ``[0, 1]`` as P5/P6 (values are clipped)."""
    s = np.asarray(samples, dtype=float)
    if s.ndim == 2:
        s = s[:, :, None]
    h, w, ch = s.shape
    if ch not in (1, 3):
        raise ValueError("one or three channels expected")
    maxval = 255 if bits == 8 else 65535
    q = np.rint(np.clip(s, 0.0, 1.0) * maxval)
    raster = q.astype(np.uint8 if bits == 8 else ">u2").tobytes()
    magic = b"P5" if ch == 1 else b"P6"
    Path(path).write_bytes(magic + f"\n{w} {h}\n{maxval}\n".encode() + raster)


def _paeth(a, b, c):
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def _unfilter(raw: bytes, h: int, stride: int, bpp: int) -> np.ndarray:
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    pos = 0
    for y in range(h):
        ftype = raw[pos]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=pos + 1).astype(np.int32)
        pos += stride + 1
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            cur = line.copy()
            for x in range(stride):
                a = cur[x - bpp] if x >= bpp else 0
                if ftype == 1:
                    cur[x] = (cur[x] + a) & 0xFF
                elif ftype == 3:
                    cur[x] = (cur[x] + ((a + prev[x]) >> 1)) & 0xFF
                else:
                    c = prev[x - bpp] if x >= bpp else 0
                    cur[x] = (cur[x] + _paeth(a, prev[x], c)) & 0xFF
        else:
            raise ValueError(f"bad PNG filter type {ftype}")
        out[y] = cur
        prev = cur
    return out


def read_png(path) -> np.ndarray:
    """Minimal non-interlaced PNG decoder (gray, gray+alpha, RGB, RGBA, palette; 1 to 16 bit)."""
    data = Path(path).read_bytes()
    if data[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError(f"{path}: not a PNG file")
    pos, idat, palette = 8, [], None
    while pos < len(data):
        length, ctype = struct.unpack(">I4s", data[pos:pos + 8])
        body = data[pos + 8:pos + 8 + length]
        pos += 12 + length
        if ctype == b"IHDR":
            w, h, depth, color, _, _, interlace = struct.unpack(">IIBBBBB", body)
        elif ctype == b"PLTE":
            palette = np.frombuffer(body, dtype=np.uint8).reshape(-1, 3)
        elif ctype == b"IDAT":
            idat.append(body)
        elif ctype == b"IEND":
            break
    if interlace:
        raise ValueError(f"{path}: interlaced PNG is not supported")
    chans = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}[color]
    if depth < 8 and color not in (0, 3):
        raise ValueError(f"{path}: bit depth {depth} is not supported")
    if depth not in (1, 2, 4, 8, 16) or (color == 3 and depth == 16):
        raise ValueError(f"{path}: bit depth {depth} is not supported")
    if depth < 8:
        stride = (w * depth + 7) // 8
        rows = _unfilter(zlib.decompress(b"".join(idat)), h, stride, 1)
        bits = np.unpackbits(rows, axis=1).reshape(h, stride * 8 // depth, depth)[:, :w]
        idx = (bits * (1 << np.arange(depth - 1, -1, -1))).sum(axis=2)
        if color == 3:
            return palette[idx].astype(float) / 255
        return (idx.astype(float) / ((1 << depth) - 1))[:, :, None]
    bpp = chans * depth // 8
    rows = _unfilter(zlib.decompress(b"".join(idat)), h, w * bpp, bpp)
    if depth == 16:
        px = rows.view(">u2").reshape(h, w, chans).astype(float) / 65535
    else:
        px = rows.reshape(h, w, chans).astype(float)
        if color == 3:
            return palette[rows.reshape(h, w).astype(int)].astype(float) / 255
        px /= 255
    if color in (4, 6):
        px = px[:, :, :-1]  # drop alpha
    return px


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(b"\x89PNG"):
        return read_png(path)
    return read_pnm(path)
