"""Deterministic synthetic multimodal, multiview sleep-pose data.

Bodies are unions of ellipses laid out in bed coordinates: ``s`` runs along
the bed from the head end (0) to the foot end (1), ``t`` across it, both in
units of bed length. Right/left pose pairs are mirror images in ``t``.

Each scene yields a top-frame render that is then distorted by a fixed
per-view homography:

* RGB (luminance): albedo image scaled by the illumination gain plus sensor
  noise. A blanket replaces the body below the head with soft shading.
* Depth: height field above the floor; a blanket blurs it mildly, a pillow
  raises the head end. Illumination has no effect.
* Pressure (viewless): contact load per body part plus pressure points; a
  pillow damps and spreads the head and upper-back load.

Random streams are derived from ``(seed, actor, session, label, scene)``
so each point is reproducible on its own.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import (ALL_SCENES, LABEL_NAMES, Channel, DataPoint, Dataset, DatasetConfig,
                   Illumination, Modality, Occlusion, PoseLabel, SceneCondition, View,
                   channels_for)
from .errors import ManifestMismatch, MissingFile
from .features import GmomConfig, HogConfig, extract_registered
from .imgproc import Homography, dequantize, quantize, read_pgm_raw, warp, write_pgm

# view image <- top frame; the top view is the reference frame
DEFAULT_VIEW_DISTORTION = {
    View.TOP: (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
    View.SIDE: (0.92, 0.0, 6.0, 0.04, 0.8, 14.0, 0.0, 0.0011, 1.0),
    View.HEAD: (0.82, 0.0, 18.0, 0.0, 0.92, 5.0, 0.0012, 0.0, 1.0),
}

PIXEL_BITS = {Modality.R: 8, Modality.D: 16, Modality.P: 16}


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 7
    n_actors: int = 2
    sessions_per_actor: int = 2
    image_size: tuple[int, int] = (160, 120)      # (w, h) of camera images
    pressure_size: tuple[int, int] = (64, 24)     # (w, h): along x across the bed
    noise_sigma: float = 0.035                     # RGB sensor noise
    depth_noise: float = 0.1
    pressure_noise: float = 0.1
    pressure_drift: float = 0.25                   # smooth calibration drift of the mat
    drift_scale: float = 3.0                      # drift correlation length, in mat cells
    illumination_gains: dict = field(default_factory=lambda: {
        "Bright": 1.0, "Medium": 0.55, "Dark": 0.25})
    blanket_coverage: float = 0.9
    blanket_relief: float = 25.0                  # shading gain of body slopes under a blanket
    blanket_blur: float = 4.0                     # depth blur under a blanket, in pixels
    pillow_extent: float = 0.3                    # pillow reaches from the head end to this s
    pillow_attenuation: float = 0.35
    pose_jitter: float = 0.01
    angle_jitter: float = 3.0                     # degrees
    views: tuple[View, ...] = (View.TOP, View.SIDE, View.HEAD)
    modalities: tuple[Modality, ...] = (Modality.R, Modality.D, Modality.P)
    threads: int = 1

    def __post_init__(self):
        g = self.illumination_gains
        if not g["Bright"] > g["Medium"] > g["Dark"] > 0:
            raise ValueError("illumination gains must decrease Bright > Medium > Dark > 0")
        if not 0 < self.blanket_coverage <= 1:
            raise ValueError("blanket coverage must lie in (0, 1]")
        if self.n_actors < 1 or self.sessions_per_actor < 1:
            raise ValueError("need at least one actor and one session")

    def gain(self, illumination: Illumination) -> float:
        return float(self.illumination_gains[("Bright", "Medium", "Dark")[illumination]])

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("threads")  # a runtime knob, not a property of the data
        d["views"] = [View(v).code for v in self.views]
        d["modalities"] = [Modality(m).code for m in self.modalities]
        d["image_size"] = list(self.image_size)
        d["pressure_size"] = list(self.pressure_size)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d["views"] = tuple(View.parse(v) for v in d["views"])
        d["modalities"] = tuple(Modality.parse(m) for m in d["modalities"])
        d["image_size"] = tuple(d["image_size"])
        d["pressure_size"] = tuple(d["pressure_size"])
        return cls(**d)


# --- body model --------------------------------------------------------------

@dataclass(frozen=True)
class Part:
    s: float
    t: float
    a: float          # semi-axis along the part's direction
    b: float          # semi-axis across it
    angle: float = 0.0  # degrees from the s axis toward +t
    height: float = 0.1
    load: float = 0.5   # contact pressure per unit footprint
    albedo: float = 0.85

    def mirrored(self) -> "Part":
        return replace(self, t=-self.t, angle=-self.angle)


@dataclass(frozen=True)
class PoseTemplate:
    label: PoseLabel
    parts: tuple[Part, ...] = ()
    # extra pressure points (s, t, radius, load)
    hotspots: tuple[tuple[float, float, float, float], ...] = ()
    # head markings drawn on top of the body (s, t, a, b, albedo)
    marks: tuple[tuple[float, float, float, float, float], ...] = ()
    mirrored_flag: bool = False

    def mirrored(self, label: PoseLabel) -> "PoseTemplate":
        return PoseTemplate(label, tuple(p.mirrored() for p in self.parts),
                            tuple((s, -t, r, w) for s, t, r, w in self.hotspots),
                            tuple((s, -t, a, b, al) for s, t, a, b, al in self.marks),
                            not self.mirrored_flag)

    def posed(self, scale: float, shift: tuple[float, float], turn: float,
              limb_turns: np.ndarray) -> "PoseTemplate":
        """Apply an actor scale, a small rigid motion and per-part angle jitter."""
        if not self.parts:
            return self
        c, sn = np.cos(np.radians(turn)), np.sin(np.radians(turn))
        pivot = (0.45, 0.0)

        def move(s, t):
            ds, dt = (s - pivot[0]) * scale, (t - pivot[1]) * scale
            return (pivot[0] + c * ds - sn * dt + shift[0], pivot[1] + sn * ds + c * dt + shift[1])

        parts = []
        for p, dj in zip(self.parts, limb_turns):
            s, t = move(p.s, p.t)
            parts.append(replace(p, s=s, t=t, a=p.a * scale, b=p.b * scale,
                                 angle=p.angle + turn + (dj if p.a < 0.17 else 0.0)))
        hot = tuple((*move(s, t), r * scale, w) for s, t, r, w in self.hotspots)
        marks = tuple((*move(s, t), a * scale, b * scale, al) for s, t, a, b, al in self.marks)
        return PoseTemplate(self.label, tuple(parts), hot, marks, self.mirrored_flag)


SKIN, CLOTH, HAIR, BACK = 0.72, 0.92, 0.22, 0.55


def _supine() -> tuple:
    return (
        Part(0.10, 0.0, 0.055, 0.045, 0, 0.12, 0.45, SKIN),
        Part(0.33, 0.0, 0.17, 0.085, 0, 0.16, 0.9, CLOTH),
        Part(0.34, 0.118, 0.155, 0.022, 3, 0.06, 0.25, SKIN),
        Part(0.34, -0.118, 0.155, 0.022, -3, 0.06, 0.25, SKIN),
        Part(0.72, 0.042, 0.23, 0.034, 2, 0.09, 0.45, CLOTH),
        Part(0.72, -0.042, 0.23, 0.034, -2, 0.09, 0.45, CLOTH),
    )


def _templates() -> dict[PoseLabel, PoseTemplate]:
    L = PoseLabel
    soldier_u = PoseTemplate(
        L.SOLDIER_U, _supine(),
        hotspots=((0.07, 0.0, 0.03, 0.8), (0.24, 0.05, 0.035, 0.6), (0.24, -0.05, 0.035, 0.6),
                  (0.46, 0.0, 0.05, 1.4), (0.93, 0.04, 0.02, 0.9), (0.93, -0.04, 0.02, 0.9)),
        marks=((0.095, 0.02, 0.011, 0.011, 0.15), (0.095, -0.02, 0.011, 0.011, 0.15),
               (0.127, 0.0, 0.008, 0.02, 0.3)),
    )
    prone = list(_supine())
    prone[0] = Part(0.10, 0.012, 0.05, 0.05, 0, 0.11, 0.5, HAIR)
    prone[1] = replace(prone[1], albedo=BACK)  # the back of the garment is darker
    prone[2] = Part(0.33, 0.125, 0.155, 0.024, 12, 0.06, 0.3, SKIN)
    prone[3] = Part(0.33, -0.125, 0.155, 0.024, -12, 0.06, 0.3, SKIN)
    soldier_d = PoseTemplate(
        L.SOLDIER_D, tuple(prone),
        hotspots=((0.10, 0.03, 0.03, 0.5), (0.27, 0.045, 0.04, 1.0), (0.27, -0.045, 0.04, 1.0),
                  (0.69, 0.04, 0.025, 1.0), (0.69, -0.04, 0.025, 1.0),
                  (0.95, 0.04, 0.015, 0.5), (0.95, -0.04, 0.015, 0.5)),
    )
    # lying on the right side, facing +t; the back is toward -t
    face = ((0.10, 0.03, 0.018, 0.012, 0.55),)
    hair = Part(0.095, -0.012, 0.045, 0.028, 0, 0.125, 0.0, HAIR)
    head = Part(0.10, 0.0, 0.052, 0.04, 0, 0.12, 0.35, SKIN)
    torso = Part(0.33, -0.02, 0.17, 0.058, 0, 0.22, 1.0, CLOTH)
    side_hot = ((0.23, -0.03, 0.035, 1.0), (0.47, -0.03, 0.045, 1.3))
    log_r = PoseTemplate(
        L.LOG_R,
        (head, hair, torso,
         Part(0.35, 0.03, 0.155, 0.021, 2, 0.26, 0.05, SKIN),
         Part(0.72, -0.015, 0.23, 0.045, 0, 0.15, 0.6, CLOTH)),
        hotspots=side_hot + ((0.92, -0.015, 0.025, 0.7),), marks=face)
    yearner_r = PoseTemplate(
        L.YEARNER_R,
        (head, hair, torso,
         Part(0.21, 0.105, 0.13, 0.021, 55, 0.10, 0.25, SKIN),
         Part(0.26, 0.12, 0.13, 0.021, 68, 0.08, 0.25, SKIN),
         Part(0.60, 0.005, 0.13, 0.045, 12, 0.14, 0.6, CLOTH),
         Part(0.83, 0.02, 0.13, 0.035, -6, 0.12, 0.5, CLOTH)),
        hotspots=side_hot + ((0.90, 0.02, 0.025, 0.6),), marks=face)
    faller_r = PoseTemplate(
        L.FALLER_R,
        (head, hair, torso,
         Part(0.27, 0.14, 0.13, 0.021, 86, 0.08, 0.3, SKIN),
         Part(0.03, 0.05, 0.09, 0.02, -25, 0.10, 0.25, SKIN),
         Part(0.60, 0.06, 0.14, 0.042, 35, 0.16, 0.5, CLOTH),
         Part(0.76, 0.13, 0.13, 0.033, -25, 0.13, 0.45, CLOTH),
         Part(0.72, -0.03, 0.23, 0.04, 0, 0.10, 0.55, CLOTH)),
        hotspots=side_hot + ((0.68, 0.11, 0.025, 0.7), (0.93, -0.03, 0.02, 0.6)), marks=face)
    fetal_r = PoseTemplate(
        L.FETAL_R,
        (Part(0.14, 0.035, 0.05, 0.04, 15, 0.12, 0.35, SKIN),
         Part(0.13, 0.02, 0.045, 0.028, 15, 0.125, 0.0, HAIR),
         Part(0.33, -0.01, 0.15, 0.06, -12, 0.23, 1.0, CLOTH),
         Part(0.27, 0.075, 0.085, 0.021, 40, 0.20, 0.2, SKIN),
         Part(0.49, 0.075, 0.12, 0.048, 62, 0.19, 0.6, CLOTH),
         Part(0.59, 0.11, 0.12, 0.036, -48, 0.14, 0.5, CLOTH)),
        hotspots=((0.25, -0.025, 0.035, 1.0), (0.45, -0.01, 0.045, 1.2), (0.55, 0.16, 0.03, 0.8)),
        marks=((0.155, 0.07, 0.018, 0.012, 0.55),))
    out = {
        L.BACKGROUND: PoseTemplate(L.BACKGROUND),
        L.SOLDIER_U: soldier_u,
        L.SOLDIER_D: soldier_d,
        L.FALLER_R: faller_r,
        L.LOG_R: log_r,
        L.YEARNER_R: yearner_r,
        L.FETAL_R: fetal_r,
    }
    out[L.FALLER_L] = faller_r.mirrored(L.FALLER_L)
    out[L.LOG_L] = log_r.mirrored(L.LOG_L)
    out[L.YEARNER_L] = yearner_r.mirrored(L.YEARNER_L)
    out[L.FETAL_L] = fetal_r.mirrored(L.FETAL_L)
    return out


TEMPLATES = _templates()


# --- rendering ---------------------------------------------------------------

@dataclass(frozen=True)
class _Frame:
    """Pixel grid <-> bed coordinates for an image of size (w, h)."""

    w: int
    h: int
    x0: float
    length_px: float

    @classmethod
    def camera(cls, w: int, h: int) -> "_Frame":
        return cls(w, h, 0.075 * w, 0.85 * w)

    @classmethod
    def mat(cls, w: int, h: int) -> "_Frame":
        return cls(w, h, 0.0, float(w))

    def grid(self):
        yy, xx = np.mgrid[0:self.h, 0:self.w].astype(np.float64)
        s = (xx - self.x0) / self.length_px
        t = (yy - (self.h - 1) / 2.0) / self.length_px
        return s, t

    @property
    def half_width(self) -> float:
        # bed spans this many bed-length units either side of the centerline
        return 0.27 if self.x0 > 0 else (self.h / 2.0) / self.length_px


def _ellipse_r(s, t, p: Part):
    c, sn = np.cos(np.radians(p.angle)), np.sin(np.radians(p.angle))
    ds, dt = s - p.s, t - p.t
    u = (c * ds + sn * dt) / p.a
    v = (-sn * ds + c * dt) / p.b
    return np.sqrt(u * u + v * v)


def _coverage(r, minor_px):
    """Antialiased ellipse coverage given normalized radius ``r``."""
    return np.clip(0.5 + (1.0 - r) * minor_px, 0.0, 1.0)


def _body_fields(tpl: PoseTemplate, frame: _Frame):
    """Height field and albedo/coverage layers in top-frame pixels."""
    s, t = frame.grid()
    height = np.zeros((frame.h, frame.w))
    albedo = np.zeros_like(height)
    cover = np.zeros_like(height)
    for p in tpl.parts:
        r = _ellipse_r(s, t, p)
        height = np.maximum(height, p.height * np.sqrt(np.clip(1.0 - r * r, 0.0, None)))
        cov = _coverage(r, p.b * frame.length_px)
        albedo = albedo * (1.0 - cov) + p.albedo * cov
        cover = np.maximum(cover, cov)
    for ms, mt, ma, mb, mal in tpl.marks:
        r = _ellipse_r(s, t, Part(ms, mt, ma, mb))
        cov = _coverage(r, mb * frame.length_px) * cover
        albedo = albedo * (1.0 - cov) + mal * cov
    return s, t, height, albedo, cover


def _bed_mask(s, t, frame: _Frame):
    return ((s >= 0.0) & (s <= 1.0) & (np.abs(t) <= frame.half_width)).astype(np.float64)


def _pillow_mask(s, t, cfg: GeneratorConfig):
    return ((s >= -0.02) & (s <= cfg.pillow_extent * 0.6) & (np.abs(t) <= 0.17)).astype(np.float64)


def _blanket_mask(s, t, cfg: GeneratorConfig):
    body_start, body_end = 0.05, 0.97
    start = body_end - cfg.blanket_coverage * (body_end - body_start)
    start = max(start, 0.16)
    return ((s >= start) & (s <= 1.0) & (np.abs(t) <= 0.24)).astype(np.float64)


def _top_frame(tpl: PoseTemplate, scene: SceneCondition, cfg: GeneratorConfig):
    """Noise-free RGB albedo and depth height maps in the top frame."""
    w, h = cfg.image_size
    frame = _Frame.camera(w, h)
    s, t, height, albedo, cover = _body_fields(tpl, frame)
    bed = _bed_mask(s, t, frame)
    blanket = scene.occlusion in (Occlusion.BLANKET, Occlusion.BLANKET_PILLOW)
    pillow = scene.occlusion in (Occlusion.PILLOW, Occlusion.BLANKET_PILLOW)

    rgb = 0.12 + 0.43 * bed
    depth_h = 0.30 * bed
    if pillow:
        pm = gaussian_filter(_pillow_mask(s, t, cfg), 1.0)
        rgb = rgb * (1.0 - pm) + 0.8 * pm
        depth_h = depth_h + 0.07 * pm
    if blanket:
        bm = gaussian_filter(_blanket_mask(s, t, cfg), 0.8)
        soft = gaussian_filter(height, cfg.blanket_blur)
        # the blanket shows the body only as a blurred bump lit from one side
        gy, gx = np.gradient(soft)
        shade = np.clip(cfg.blanket_relief * (gx + 0.5 * gy), -0.5, 0.5)
        quilt = 0.40 + 0.18 * np.clip(soft / 0.15, 0.0, 1.0) + 0.3 * shade
        under = rgb * (1.0 - cover) + albedo * cover
        rgb = under * (1.0 - bm) + quilt * bm
        body_h = height * (1.0 - bm) + (soft + 0.025 * (height > 0)) * bm
        depth = depth_h + np.maximum(body_h, 0.02 * bm * bed)
    else:
        rgb = rgb * (1.0 - cover) + albedo * cover
        depth = depth_h + height
    return np.clip(rgb, 0, 1), np.clip(depth, 0, 1)


def view_homography(view: View, cfg: GeneratorConfig) -> Homography:
    return Homography(np.array(DEFAULT_VIEW_DISTORTION[View(view)]).reshape(3, 3))


def render_scene(tpl: PoseTemplate, scene: SceneCondition, view: View, cfg: GeneratorConfig,
                 rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """RGB (luminance) and depth images of one posed body as seen from ``view``.

    Depth noise is drawn before RGB noise so the depth render does not depend
    on illumination for a given generator state.
    """
    rgb, depth = _top_frame(tpl, scene, cfg)
    w, h = cfg.image_size
    hv = view_homography(view, cfg)
    if view is not View.TOP:
        rgb = warp(rgb, hv, w, h)
        depth = warp(depth, hv, w, h)
    depth = depth + rng.normal(0.0, cfg.depth_noise, depth.shape)
    rgb = cfg.gain(scene.illumination) * rgb + rng.normal(0.0, cfg.noise_sigma, rgb.shape)
    return np.clip(rgb, 0.0, 1.0), np.clip(depth, 0.0, 1.0)


def render_pressure(tpl: PoseTemplate, scene: SceneCondition, cfg: GeneratorConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """Pressure-mat load image; only pillows change it."""
    w, h = cfg.pressure_size
    frame = _Frame.mat(w, h)
    s, t = frame.grid()
    load = np.zeros((h, w))
    for p in tpl.parts:
        if p.load <= 0:
            continue
        r = _ellipse_r(s, t, p)
        load += p.load * np.clip(1.0 - r * r, 0.0, None)
    for hs, ht, hr, hw in tpl.hotspots:
        load += hw * np.exp(-((s - hs) ** 2 + (t - ht) ** 2) / (2.0 * hr * hr))
    if scene.occlusion in (Occlusion.PILLOW, Occlusion.BLANKET_PILLOW):
        region = gaussian_filter((s <= cfg.pillow_extent).astype(np.float64), 1.0)
        damped = gaussian_filter(load, 1.5) * cfg.pillow_attenuation
        load = load * (1.0 - region) + damped * region
    load = gaussian_filter(load, 0.7)
    load = load + rng.normal(0.0, cfg.pressure_noise, load.shape)
    if cfg.pressure_drift > 0:
        field = gaussian_filter(rng.normal(0.0, 1.0, load.shape), cfg.drift_scale)
        load = load + cfg.pressure_drift * field / max(float(field.std()), 1e-12)
    return np.clip(load / 2.5, 0.0, 1.0)


# --- dataset generation ------------------------------------------------------

def point_seed(cfg: GeneratorConfig, actor: int, session: int, label: int, scene: SceneCondition):
    return np.random.SeedSequence([cfg.seed, actor, session, label, scene.index])


def actor_scale(cfg: GeneratorConfig, actor: int) -> float:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, actor, 999_983]))
    return float(rng.uniform(0.9, 1.1))


def pose_instance(cfg: GeneratorConfig, actor: int, label: PoseLabel, rng: np.random.Generator) -> PoseTemplate:
    tpl = TEMPLATES[PoseLabel(label)]
    shift = tuple(rng.normal(0.0, cfg.pose_jitter, 2))
    turn = float(rng.normal(0.0, cfg.angle_jitter / 2.0))
    limbs = rng.normal(0.0, cfg.angle_jitter, max(len(tpl.parts), 1))
    return tpl.posed(actor_scale(cfg, actor), shift, turn, limbs)


def render_point(cfg: GeneratorConfig, actor: int, session: int, label: PoseLabel,
                 scene: SceneCondition) -> dict[Channel, np.ndarray]:
    """Quantized sensor images for one point, keyed by channel."""
    ss = point_seed(cfg, actor, session, int(label), scene)
    pose_ss, press_ss, *view_ss = ss.spawn(2 + len(View))
    tpl = pose_instance(cfg, actor, label, np.random.default_rng(pose_ss))
    images = {}
    mods = set(cfg.modalities)
    for v in sorted(set(cfg.views)):
        if mods & {Modality.R, Modality.D}:
            rgb, depth = render_scene(tpl, scene, v, cfg, np.random.default_rng(view_ss[int(v)]))
            if Modality.R in mods:
                images[Channel(Modality.R, v)] = quantize(rgb, PIXEL_BITS[Modality.R])
            if Modality.D in mods:
                images[Channel(Modality.D, v)] = quantize(depth, PIXEL_BITS[Modality.D])
    if Modality.P in mods:
        p = render_pressure(tpl, scene, cfg, np.random.default_rng(press_ss))
        images[Channel(Modality.P)] = quantize(p, PIXEL_BITS[Modality.P])
    return images


def registration_homographies(cfg: GeneratorConfig) -> dict[View, Homography]:
    return {v: view_homography(v, cfg).inverse() for v in cfg.views}


def dataset_config(cfg: GeneratorConfig, hog_cfg: HogConfig = HogConfig(),
                   gmom_cfg: GmomConfig = GmomConfig()) -> DatasetConfig:
    dims = {c: (hog_cfg.length if c.modality is Modality.R else gmom_cfg.length)
            for c in channels_for(cfg.modalities, cfg.views)}
    homs = {v: h.as_tuple() for v, h in registration_homographies(cfg).items()}
    return DatasetConfig(cfg.modalities, cfg.views, dims, homs)


def _point_from_images(images, label, scene, actor, session, homs, hog_cfg, gmom_cfg, keep_images):
    feats = extract_registered({c: dequantize(q) for c, q in images.items()}, homs, hog_cfg, gmom_cfg)
    return DataPoint(feats, label, scene, actor, session, images if keep_images else None)


def point_keys(cfg: GeneratorConfig):
    for a in range(cfg.n_actors):
        for sess in range(cfg.sessions_per_actor):
            for scene in ALL_SCENES:
                for label in PoseLabel:
                    yield a, sess, label, scene


def generate(cfg: GeneratorConfig = GeneratorConfig(), hog_cfg: HogConfig = HogConfig(),
             gmom_cfg: GmomConfig = GmomConfig(), keep_images: bool = True) -> Dataset:
    """Full factorial dataset: actors x sessions x scenes x labels."""
    homs = registration_homographies(cfg)

    def make(key):
        a, sess, label, scene = key
        images = render_point(cfg, a, sess, label, scene)
        return _point_from_images(images, label, scene, a, sess, homs, hog_cfg, gmom_cfg, keep_images)

    keys = list(point_keys(cfg))
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            points = list(ex.map(make, keys))
    else:
        points = [make(k) for k in keys]
    return Dataset(tuple(points), dataset_config(cfg, hog_cfg, gmom_cfg))


# --- persistence ---------------------------------------------------------------

MANIFEST = "manifest.json"
DATASET_FORMAT = 1


def image_filename(actor: int, session: int, scene: SceneCondition, label: PoseLabel, ch: Channel) -> str:
    view = "none" if ch.view is None else ch.view.code
    return f"a{actor}_s{session}_c{scene.index}_l{int(label)}_{ch.modality.code}_{view}.pgm"


def save_dataset(ds: Dataset, directory, generator: Optional[GeneratorConfig] = None,
                 hog_cfg: HogConfig = HogConfig(), gmom_cfg: GmomConfig = GmomConfig()) -> Path:
    """Write one PGM per (point, channel) plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    records = []
    for p in ds.points:
        if p.images is None:
            raise ValueError("dataset points carry no images; generate with keep_images=True")
        for ch in ds.config.channels:
            write_pgm(d / image_filename(p.actor_id, p.session_id, p.scene, p.label, ch), p.images[ch])
        records.append([p.actor_id, p.session_id, p.scene.index, int(p.label)])
    per_scene: dict[str, int] = {}
    for p in ds.points:
        per_scene[p.scene.name] = per_scene.get(p.scene.name, 0) + 1
    manifest = {
        "format": DATASET_FORMAT,
        "labels": list(LABEL_NAMES),
        "modalities": [m.code for m in ds.config.modalities],
        "views": [v.code for v in ds.config.views],
        "bits": {m.code: PIXEL_BITS[m] for m in ds.config.modalities},
        "homographies": {v.code: list(h) for v, h in sorted(ds.config.homographies.items())},
        "hog": asdict(hog_cfg),
        "gmom": asdict(gmom_cfg),
        "seed": None if generator is None else generator.seed,
        "generator": None if generator is None else generator.to_json(),
        "counts": {"points": len(ds), "per_scene": dict(sorted(per_scene.items())),
                   "images": len(ds) * len(ds.config.channels)},
        "points": records,
    }
    with open(d / MANIFEST, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")
    return d


def load_dataset(directory, threads: int = 1, keep_images: bool = True) -> Dataset:
    d = Path(directory)
    try:
        with open(d / MANIFEST, encoding="utf-8") as f:
            m = json.load(f)
    except FileNotFoundError:
        raise MissingFile(f"{d / MANIFEST} not found") from None
    except json.JSONDecodeError as e:
        raise ManifestMismatch(f"manifest is not valid JSON: {e}") from None
    if m.get("format") != DATASET_FORMAT:
        raise ManifestMismatch(f"unsupported dataset format {m.get('format')!r}")
    if m.get("labels") != list(LABEL_NAMES):
        raise ManifestMismatch("manifest label list does not match the pose label set")
    try:
        modalities = tuple(Modality.parse(x) for x in m["modalities"])
        views = tuple(View.parse(x) for x in m["views"])
        hog_cfg = HogConfig(**{**m["hog"], "work_size": tuple(m["hog"]["work_size"])})
        gmom_cfg = GmomConfig(**{**m["gmom"], "tiles": tuple(m["gmom"]["tiles"])})
        homs_t = {View.parse(k): tuple(v) for k, v in m["homographies"].items()}
        records = m["points"]
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestMismatch(f"manifest is missing or has malformed fields: {e}") from None
    if m.get("counts", {}).get("points") != len(records):
        raise ManifestMismatch("manifest point count does not match its point list")
    chans = channels_for(modalities, views)
    homs = {v: Homography(np.array(h).reshape(3, 3)) for v, h in homs_t.items()}

    def load(rec):
        a, sess, c, l = rec
        scene, label = SceneCondition.from_index(c), PoseLabel(l)
        images = {}
        for ch in chans:
            path = d / image_filename(a, sess, scene, label, ch)
            if not path.exists():
                raise MissingFile(f"missing image for point a{a}_s{sess}_c{c}_l{l} channel {ch.code}: {path.name}")
            q = read_pgm_raw(path)
            want = np.uint8 if PIXEL_BITS[ch.modality] == 8 else np.uint16
            if q.dtype != want:
                raise ManifestMismatch(f"{path.name}: unexpected bit depth")
            images[ch] = q
        return _point_from_images(images, label, scene, a, sess, homs, hog_cfg, gmom_cfg, keep_images)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            points = list(ex.map(load, records))
    else:
        points = [load(r) for r in records]
    dims = {c: (hog_cfg.length if c.modality is Modality.R else gmom_cfg.length) for c in chans}
    return Dataset(tuple(points), DatasetConfig(modalities, views, dims, homs_t))


def generator_from_manifest(directory) -> Optional[GeneratorConfig]:
    with open(Path(directory) / MANIFEST, encoding="utf-8") as f:
        g = json.load(f).get("generator")
    return None if g is None else GeneratorConfig.from_json(g)
