import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.ndimage import gaussian_filter

from trustfuse.core import Channel, Modality, View
from trustfuse.errors import ConfigMismatch, ImageTooSmall
from trustfuse.features import (MOMENT_ORDERS, GmomConfig, HogConfig, extract_all,
                                extract_registered, gmom, hog)
from trustfuse.imgproc import Homography, normalize_range


def textured(w, h, seed=0, sigma=3.0):
    rng = np.random.default_rng(seed)
    return normalize_range(gaussian_filter(rng.random((h, w)), sigma))


def naive_hog(img, n_orient, cell, block):
    """Loop-based HOG on an image already at working size."""
    h, w = img.shape
    ncy, ncx = h // cell, w // cell
    hist = np.zeros((ncy, ncx, n_orient))
    for y in range(h):
        for x in range(w):
            gx = img[y, x + 1] - img[y, x - 1] if 0 < x < w - 1 else 0.0
            gy = img[y + 1, x] - img[y - 1, x] if 0 < y < h - 1 else 0.0
            mag = math.hypot(gx, gy)
            ang = math.degrees(math.atan2(gy, gx)) % 180.0
            b = int(ang * n_orient / 180.0) % n_orient
            hist[y // cell, x // cell, b] += mag
    out = []
    for by in range(ncy - block + 1):
        for bx in range(ncx - block + 1):
            v = np.concatenate([hist[by + dy, bx + dx] for dy in range(block) for dx in range(block)])
            out.append(v / math.sqrt(v @ v + 1e-12))
    return np.concatenate(out)


def naive_gmom(img, rows, cols):
    h, w = img.shape
    th, tw = h // rows, w // cols
    out = []
    for i in range(rows):
        for j in range(cols):
            y0, y1 = i * th, (h if i == rows - 1 else (i + 1) * th)
            x0, x1 = j * tw, (w if j == cols - 1 else (j + 1) * tw)
            for p, q in MOMENT_ORDERS:
                total = 0.0
                for y in range(y0, y1):
                    for x in range(x0, x1):
                        xn = (x - x0 + 0.5) / (x1 - x0)
                        yn = (y - y0 + 0.5) / (y1 - y0)
                        total += xn ** p * yn ** q * img[y, x]
                out.append(total)
    return np.array(out)


class TestHogConstants:
    @pytest.mark.parametrize("shape", [(480, 640), (120, 160), (320, 320), (7, 3)])
    def test_default_length(self, shape):
        assert hog(textured(shape[1], shape[0])).shape == (5776,)
        assert HogConfig().length == 5776

    def test_config_mismatch(self):
        with pytest.raises(ConfigMismatch):
            hog(np.zeros((10, 10)), HogConfig(work_size=(330, 320)))


class TestHogBehavior:
    def test_matches_loop_oracle(self):
        img = textured(48, 40, seed=4, sigma=2.0)
        cfg = HogConfig(cell_px=8, work_size=(48, 40))
        assert np.allclose(hog(img, cfg), naive_hog(img, 4, 8, 2), atol=1e-9)

    def test_constant_image_is_zero(self):
        assert np.all(hog(np.full((60, 80), 0.4)) == 0.0)

    def test_vertical_step_edge_uses_zero_degree_bin(self):
        img = np.zeros((320, 320))
        img[:, 160:] = 1.0
        d = hog(img).reshape(-1, 4)
        assert d[:, 1:].sum() < 0.01 * d.sum()

    def test_block_norms_bounded(self):
        d = hog(textured(160, 120)).reshape(19 * 19, 16)
        assert np.all(np.linalg.norm(d, axis=1) <= 1.0 + 1e-6)

    @settings(max_examples=15, deadline=None)
    @given(st.floats(0.3, 1.0), st.floats(0.0, 0.7))
    def test_affine_intensity_invariance(self, a, b):
        img = textured(96, 96, seed=2)
        scaled = a * img + b * (1.0 - a)
        assert np.allclose(hog(scaled), hog(img), atol=1e-4)


class TestGmom:
    @pytest.mark.parametrize("shape", [(480, 640), (24, 64), (6, 6), (13, 29)])
    def test_default_length(self, shape):
        assert gmom(textured(shape[1], shape[0], sigma=1.0)).shape == (360,)
        assert GmomConfig().length == 360

    def test_orders(self):
        assert GmomConfig().orders == MOMENT_ORDERS
        assert len(MOMENT_ORDERS) == 10

    def test_matches_loop_oracle_with_remainder(self):
        img = textured(29, 20, seed=5, sigma=1.0)
        assert np.allclose(gmom(img), naive_gmom(img, 6, 6), atol=1e-12)

    def test_zero_image(self):
        assert np.all(gmom(np.zeros((24, 64))) == 0.0)

    def test_uniform_tile_centroid(self):
        d = gmom(np.ones((30, 30)), GmomConfig(tiles=(1, 1))).tolist()
        m = dict(zip(MOMENT_ORDERS, d))
        assert m[(0, 0)] == 900.0
        assert m[(1, 0)] / m[(0, 0)] == pytest.approx(0.5, abs=1 / 60)
        assert m[(0, 1)] / m[(0, 0)] == pytest.approx(0.5, abs=1 / 60)

    def test_image_too_small(self):
        with pytest.raises(ImageTooSmall):
            gmom(np.ones((5, 10)))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (12, 18), elements=st.floats(0.0, 1.0, allow_nan=False)),
           st.floats(0.0, 1.0))
    def test_linear_in_intensity(self, img, alpha):
        assert np.allclose(gmom(alpha * img), alpha * gmom(img), atol=1e-12)


class TestExtraction:
    def test_modality_routing(self):
        feats = extract_all({Channel(Modality.R, View.TOP): textured(160, 120),
                             Channel(Modality.D, View.TOP): textured(160, 120),
                             Channel(Modality.P): textured(64, 24, sigma=1.0)})
        assert {c.code: v.size for c, v in feats.items()} == {"R-t": 5776, "D-t": 360, "P": 360}

    def test_partial_key_preserved(self):
        feats = extract_all({Channel(Modality.D, View.SIDE): textured(40, 30)})
        assert list(feats) == [Channel(Modality.D, View.SIDE)]

    def test_seven_channels(self):
        imgs = {Channel(m, v): textured(80, 60, seed=int(m) * 3 + int(v))
                for m in (Modality.R, Modality.D) for v in View}
        imgs[Channel(Modality.P)] = textured(64, 24, sigma=1.0)
        homs = {v: Homography.identity() for v in View}
        feats = extract_registered(imgs, homs)
        assert len(feats) == 7
        assert np.array_equal(feats[Channel(Modality.D, View.SIDE)],
                              gmom(imgs[Channel(Modality.D, View.SIDE)]))
