"""Binary PGM (P5) / PPM (P6) reading and PGM writing, 8-bit only."""
from __future__ import annotations

import numpy as np


class PNMError(ValueError):
    pass


def _tokens(data: bytes, count: int, pos: int):
    out = []
    n = len(data)
    while len(out) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PNMError("truncated header")
        out.append(data[start:pos])
    return out, pos


def read_pnm(data: bytes) -> np.ndarray:
    """Decode P5/P6 bytes to a float64 ``(channels, h, w)`` array in [0, 1]."""
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise PNMError(f"unsupported image format: magic bytes {magic!r} (need P5 or P6)")
    fields, pos = _tokens(data, 3, 2)
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError:
        raise PNMError(f"malformed header fields {fields!r}") from None
    if width < 1 or height < 1:
        raise PNMError(f"bad image size {width}x{height}")
    if not 0 < maxval < 256:
        raise PNMError(f"only 8-bit images are supported, maxval is {maxval}")
    pos += 1  # single whitespace byte before the raster
    size = width * height * channels
    raster = np.frombuffer(data, dtype=np.uint8, count=size, offset=pos) if len(data) - pos >= size else None
    if raster is None:
        raise PNMError(f"raster truncated: need {size} bytes, have {len(data) - pos}")
    img = raster.reshape(height, width, channels).transpose(2, 0, 1)
    return img.astype(np.float64) / maxval


def load_pnm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_pnm(fh.read())


def encode_pgm(img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    return b"P5\n%d %d\n255\n" % (w, h) + img.tobytes()


def encode_ppm(img: np.ndarray) -> bytes:
    """``img`` is ``(3, h, w)`` uint8."""
    img = np.asarray(img, dtype=np.uint8)
    _, h, w = img.shape
    return b"P6\n%d %d\n255\n" % (w, h) + img.transpose(1, 2, 0).tobytes()
