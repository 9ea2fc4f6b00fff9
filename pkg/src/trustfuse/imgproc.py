"""Grayscale image helpers: homography warping, bilinear resize, range
normalization and binary PGM (P5) reading/writing.

Images are 2-D float64 arrays indexed ``[row, col]`` (``height x width``)
with values in [0, 1]. Pixel ``(x, y)`` means column ``x``, row ``y``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import SingularHomography


def as_gray(img) -> np.ndarray:
    """Validate and convert to a float64 gray image."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"expected a nonempty 2-D image, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("image contains non-finite values")
    return a


@dataclass(frozen=True)
class Homography:
    """Projective map of pixel coordinates, normalized so ``h[2, 2] == 1``."""

    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=np.float64).reshape(3, 3)
        if abs(np.linalg.det(h)) <= 1e-12 or abs(h[2, 2]) <= 1e-12:
            raise SingularHomography(f"homography is not invertible:\n{h}")
        h = h / h[2, 2]
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def apply(self, x, y):
        """Map pixel coordinates ``(x, y)`` (arrays) through the homography."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        h = self.h
        w = h[2, 0] * x + h[2, 1] * y + h[2, 2]
        return ((h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w,
                (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w)

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.h.ravel())


def sample_bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample at fractional pixel positions; outside the grid reads as 0."""
    h, w = img.shape
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    out = np.zeros(np.broadcast(x, y).shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = np.where(ok, img[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)], 0.0)
            out += wx * wy * vals
    return out


def warp(img, h: Homography, out_w: int, out_h: int) -> np.ndarray:
    """Warp ``img`` by ``h`` (source -> destination) into an ``out_h x out_w`` grid.

    Each output pixel is pulled from the source through ``h^-1``.
    """
    img = as_gray(img)
    if not isinstance(h, Homography):
        h = Homography(h)
    inv = h.inverse()
    yy, xx = np.mgrid[0:out_h, 0:out_w].astype(np.float64)
    sx, sy = inv.apply(xx, yy)
    bad = ~(np.isfinite(sx) & np.isfinite(sy))
    sx[bad] = -10.0
    sy[bad] = -10.0
    return np.clip(sample_bilinear(img, sx, sy), 0.0, 1.0)


def resize(img, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling (corners map onto corners)."""
    img = as_gray(img)
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    h, w = img.shape
    if (w, h) == (out_w, out_h):
        return img.copy()
    xs = np.linspace(0.0, w - 1, out_w) if out_w > 1 else np.array([(w - 1) / 2.0])
    ys = np.linspace(0.0, h - 1, out_h) if out_h > 1 else np.array([(h - 1) / 2.0])
    # separable interpolation; indices always stay on-grid here
    x0 = np.minimum(np.floor(xs).astype(np.int64), w - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fx = xs - x0
    y0 = np.minimum(np.floor(ys).astype(np.int64), h - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fy = (ys - y0)[:, None]
    rows = img[y0] * (1.0 - fy) + img[y1] * fy
    out = rows[:, x0] * (1.0 - fx) + rows[:, x1] * fx
    return np.clip(out, 0.0, 1.0)


def normalize_range(img) -> np.ndarray:
    """Affinely map min -> 0 and max -> 1; a flat image becomes all zeros."""
    a = np.asarray(img, dtype=np.float64)
    lo = a.min()
    span = a.max() - lo
    if span <= 0:
        return np.zeros_like(a)
    return (a - lo) / span


# --- PGM (P5) ----------------------------------------------------------------

def quantize(img, bits: int = 8) -> np.ndarray:
    """Round a [0, 1] image to 8- or 16-bit integers."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = (1 << bits) - 1
    q = np.rint(np.clip(as_gray(img), 0.0, 1.0) * maxval)
    return q.astype(np.uint8 if bits == 8 else np.uint16)


def dequantize(q: np.ndarray) -> np.ndarray:
    maxval = 255 if q.dtype == np.uint8 else 65535
    return q.astype(np.float64) / maxval


def write_pgm(path, img) -> None:
    """Write a P5 PGM. ``uint8``/``uint16`` arrays are written as-is, floats as 8-bit."""
    a = np.asarray(img)
    if a.dtype not in (np.uint8, np.uint16):
        a = quantize(a, 8)
    h, w = a.shape
    maxval = 255 if a.dtype == np.uint8 else 65535
    data = a.astype(">u2").tobytes() if maxval == 65535 else a.tobytes()
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(data)


def _pgm_tokens(buf: bytes, count: int):
    """Parse ``count`` whitespace-separated header tokens, skipping comments."""
    tokens = []
    i = 0
    n = len(buf)
    while len(tokens) < count:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i:i + 1].isspace():
            i += 1
        if start == i:
            raise ValueError("truncated PGM header")
        tokens.append(buf[start:i])
    return tokens, i + 1  # exactly one whitespace byte follows maxval


def read_pgm_raw(path) -> np.ndarray:
    """Read a P5 PGM as ``uint8`` or ``uint16`` (maxval 255 / 65535)."""
    with open(path, "rb") as f:
        buf = f.read()
    tokens, offset = _pgm_tokens(buf, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"{os.fspath(path)}: not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval < 256:
        dtype, nbytes = np.uint8, 1
    else:
        dtype, nbytes = np.dtype(">u2"), 2
    need = w * h * nbytes
    data = buf[offset:offset + need]
    if len(data) != need:
        raise ValueError(f"{os.fspath(path)}: truncated pixel data")
    a = np.frombuffer(data, dtype=dtype).reshape(h, w)
    if maxval not in (255, 65535):
        # rescale nonstandard depths onto the nearest standard one
        big = nbytes == 2
        a = np.rint(a.astype(np.float64) * ((65535 if big else 255) / maxval))
        return a.astype(np.uint16 if big else np.uint8)
    return a.astype(np.uint16) if nbytes == 2 else a.copy()


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM into a float image in [0, 1]."""
    return dequantize(read_pgm_raw(path))
