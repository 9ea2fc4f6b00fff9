"""Feature extractors: HOG for RGB (luminance) and tiled raw geometric moments
for depth and pressure maps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from .core import Channel, Modality, View
from .errors import ConfigMismatch, ImageTooSmall
from .imgproc import Homography, as_gray, resize, warp


@dataclass(frozen=True)
class HogConfig:
    n_orientations: int = 4
    cell_px: int = 16
    block_cells: int = 2
    work_size: tuple[int, int] = (320, 320)  # (w, h)
    block_stride_cells: int = 1
    eps: float = 1e-6

    def check(self) -> None:
        w, h = self.work_size
        if w % self.cell_px or h % self.cell_px:
            raise ConfigMismatch(f"work size {self.work_size} is not divisible by cell size {self.cell_px}")
        if min(self.n_cells) < self.block_cells:
            raise ConfigMismatch("block larger than the cell grid")

    @property
    def n_cells(self) -> tuple[int, int]:
        return self.work_size[0] // self.cell_px, self.work_size[1] // self.cell_px

    @property
    def n_blocks(self) -> tuple[int, int]:
        cx, cy = self.n_cells
        s = self.block_stride_cells
        return (cx - self.block_cells) // s + 1, (cy - self.block_cells) // s + 1

    @property
    def length(self) -> int:
        bx, by = self.n_blocks
        return bx * by * self.block_cells ** 2 * self.n_orientations


# (p, q) = (x power, y power), in descriptor order
MOMENT_ORDERS = ((0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (3, 0))


@dataclass(frozen=True)
class GmomConfig:
    tiles: tuple[int, int] = (6, 6)  # (rows, cols)
    max_order: int = 3

    @property
    def orders(self) -> tuple[tuple[int, int], ...]:
        if self.max_order == 3:
            return MOMENT_ORDERS
        return tuple((p, q) for p in range(self.max_order + 1)
                     for q in range(self.max_order + 1 - p))

    @property
    def length(self) -> int:
        return self.tiles[0] * self.tiles[1] * len(self.orders)


def hog(img, cfg: HogConfig = HogConfig()) -> np.ndarray:
    """Histogram of oriented gradients over the resized working image.

    Unsigned orientations in [0, 180) are hard-binned and voted by gradient
    magnitude into cells; overlapping blocks of cells are L2-normalized
    (``v / sqrt(|v|^2 + eps^2)``) and concatenated in row-major block order.
    """
    cfg.check()
    w, h = cfg.work_size
    im = resize(as_gray(img), w, h)

    gx = np.zeros_like(im)
    gy = np.zeros_like(im)
    gx[:, 1:-1] = im[:, 2:] - im[:, :-2]
    gy[1:-1, :] = im[2:, :] - im[:-2, :]
    mag = np.hypot(gx, gy)
    ang = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    nb = cfg.n_orientations
    bins = np.floor(ang * (nb / 180.0)).astype(np.int64) % nb

    ncx, ncy = cfg.n_cells
    c = cfg.cell_px
    cell_y = np.arange(h) // c
    cell_x = np.arange(w) // c
    flat = ((cell_y[:, None] * ncx + cell_x[None, :]) * nb + bins).ravel()
    hist = np.bincount(flat, weights=mag.ravel(), minlength=ncy * ncx * nb).reshape(ncy, ncx, nb)

    nbx, nby = cfg.n_blocks
    bc, s = cfg.block_cells, cfg.block_stride_cells
    parts = [hist[dy:dy + s * (nby - 1) + 1:s, dx:dx + s * (nbx - 1) + 1:s]
             for dy in range(bc) for dx in range(bc)]
    blocks = np.stack(parts, axis=2).reshape(nby, nbx, -1)
    norm = np.sqrt(np.sum(blocks ** 2, axis=2, keepdims=True) + cfg.eps ** 2)
    return (blocks / norm).ravel()


def gmom(img, cfg: GmomConfig = GmomConfig()) -> np.ndarray:
    """Raw spatial moments ``sum x^p y^q I(x, y)`` per tile, for all ``p + q <= max_order``.

    Tile-local coordinates sit at pixel centers scaled into (0, 1). Leftover
    rows/columns go to the last tile. Pixel values are used as-is, so the
    descriptor is linear in intensity.
    """
    im = as_gray(img)
    rows, cols = cfg.tiles
    h, w = im.shape
    if h < rows or w < cols:
        raise ImageTooSmall(f"{w}x{h} image cannot be split into {rows}x{cols} tiles")
    ys = [i * (h // rows) for i in range(rows)] + [h]
    xs = [j * (w // cols) for j in range(cols)] + [w]
    k = cfg.max_order + 1
    orders = cfg.orders
    out = np.empty((rows, cols, len(orders)))
    for i in range(rows):
        for j in range(cols):
            tile = im[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
            th, tw = tile.shape
            xp = ((np.arange(tw) + 0.5) / tw)[:, None] ** np.arange(k)
            yp = ((np.arange(th) + 0.5) / th)[:, None] ** np.arange(k)
            m = yp.T @ tile @ xp  # m[q, p]
            out[i, j] = [m[q, p] for p, q in orders]
    return out.ravel()


def extract_all(images: Mapping[Channel, np.ndarray], hog_cfg: HogConfig = HogConfig(),
                gmom_cfg: GmomConfig = GmomConfig()) -> dict[Channel, np.ndarray]:
    """HOG for RGB channels, gMOM for depth and pressure; keys are preserved."""
    if not images:
        raise ValueError("no images given")
    out = {}
    for key, img in images.items():
        ch = Channel(*key)
        out[ch] = hog(img, hog_cfg) if ch.modality is Modality.R else gmom(img, gmom_cfg)
    return out


def register(img, to_top: Optional[Homography]) -> np.ndarray:
    """Warp a view image into the top-view frame (same pixel grid)."""
    img = as_gray(img)
    if to_top is None:
        return img
    h, w = img.shape
    return warp(img, to_top, w, h)


def extract_registered(images: Mapping[Channel, np.ndarray],
                       homographies: Mapping[View, Homography],
                       hog_cfg: HogConfig = HogConfig(),
                       gmom_cfg: GmomConfig = GmomConfig()) -> dict[Channel, np.ndarray]:
    """Register each view image to the top frame, then run :func:`extract_all`."""
    reg = {}
    for key, img in images.items():
        ch = Channel(*key)
        reg[ch] = img if ch.view is None else register(img, homographies.get(ch.view))
    return extract_all(reg, hog_cfg, gmom_cfg)
