"""Image file import and export.

8-bit formats (PNG, PGM) map ``[0, 255]`` linearly onto ``[0, 1]`` on read
and clamp then round half-to-even on write. PFM stores little-endian
32-bit floats and is used for lossless intermediate states.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image as PILImage

from .core import Image
from .errors import FormatError, NumericOverflowError

__all__ = ["read_image", "write_image", "read_pfm", "write_pfm", "to_uint8"]


def to_uint8(x):
    """Clamp to ``[0, 1]`` and quantise with round-half-to-even."""
    data = np.clip(x.data, 0.0, 1.0) * 255.0
    return np.rint(data).astype(np.uint8)


def read_image(path):
    """Read a PNG, PGM/PPM or PFM file into an :class:`Image`."""
    path = os.fspath(path)
    if path.lower().endswith(".pfm"):
        return read_pfm(path)
    try:
        with PILImage.open(path) as im:
            if im.mode in ("L", "P", "1", "I;16", "I"):
                im = im.convert("L")
            elif im.mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64)
    except OSError as exc:
        raise FormatError(f"cannot read image {path!r}: {exc}") from exc
    return Image(arr / 255.0, copy=False)


def write_image(path, x):
    """Write ``x`` as 8-bit PNG/PGM or as float PFM, chosen by extension."""
    path = os.fspath(path)
    if path.lower().endswith(".pfm"):
        return write_pfm(path, x)
    q = to_uint8(x)
    if x.channels == 1:
        im = PILImage.fromarray(q[:, :, 0], mode="L")
    elif x.channels == 3:
        im = PILImage.fromarray(q, mode="RGB")
    else:
        raise FormatError(f"8-bit export supports 1 or 3 channels, got {x.channels}")
    im.save(path)


def write_pfm(path, x):
    if x.channels not in (1, 3):
        raise FormatError(f"PFM supports 1 or 3 channels, got {x.channels}")
    if np.max(np.abs(x.data)) > np.finfo(np.float32).max:
        raise NumericOverflowError("image values exceed the 32-bit float range of PFM")
    header = "Pf" if x.channels == 1 else "PF"
    # PFM scanlines run bottom to top
    rows = np.ascontiguousarray(x.data[::-1], dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{x.width} {x.height}\n-1.0\n".encode("ascii"))
        fh.write(rows.tobytes())


def read_pfm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        parts = raw.split(b"\n", 3)
        kind = parts[0].strip()
        width, height = (int(v) for v in parts[1].split())
        scale = float(parts[2])
        payload = parts[3]
    except (IndexError, ValueError) as exc:
        raise FormatError(f"malformed PFM header in {path!r}") from exc
    if kind not in (b"PF", b"Pf"):
        raise FormatError(f"not a PFM file: {path!r}")
    channels = 3 if kind == b"PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    if len(payload) < 4 * count:
        raise FormatError(f"truncated PFM payload in {path!r}")
    arr = np.frombuffer(payload[: 4 * count], dtype=dtype).reshape(height, width, channels)
    return Image(arr[::-1].astype(np.float64), copy=False)
