"""Binary PGM (P5) and PPM (P6) images, 8-bit, mapped to [0, 1] float32 (C, H, W) arrays."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np


class ImageFormatError(ValueError):
    pass


_HEADER = re.compile(rb"\A(P[56])(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)(?:\s+|#[^\n]*\n)+(\d+)\s")


def decode_image(raw: bytes) -> np.ndarray:
    m = _HEADER.match(raw)
    if not m:
        raise ImageFormatError("not a binary PGM/PPM file")
    magic, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit images are supported (maxval {maxval})")
    c = 1 if magic == b"P5" else 3
    body = raw[m.end():]
    if len(body) != w * h * c:
        raise ImageFormatError("pixel data length does not match the header")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(h, w, c)
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def encode_image(img: np.ndarray) -> bytes:
    """(1|3, H, W) or (H, W) values in [0, 1] -> PGM/PPM bytes (clamped, rounded)."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ImageFormatError(f"cannot encode an array of shape {arr.shape} as an image")
    if not np.isfinite(arr).all():
        raise ImageFormatError("image contains non-finite values")
    c, h, w = arr.shape
    q = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + q.transpose(1, 2, 0).tobytes()


def read_image(path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


def write_image(path, img) -> None:
    Path(path).write_bytes(encode_image(img))
