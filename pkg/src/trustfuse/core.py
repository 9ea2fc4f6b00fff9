"""Domain vocabulary: pose labels, scene conditions, modalities, views, datasets."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .errors import InsufficientSamples, ShapeMismatch


class PoseLabel(IntEnum):
    BACKGROUND = 0
    SOLDIER_U = 1
    SOLDIER_D = 2
    FALLER_R = 3
    FALLER_L = 4
    LOG_R = 5
    LOG_L = 6
    YEARNER_R = 7
    YEARNER_L = 8
    FETAL_R = 9
    FETAL_L = 10

    @property
    def title(self) -> str:
        return LABEL_NAMES[self.value]

    @classmethod
    def from_name(cls, name: str) -> "PoseLabel":
        try:
            return cls(LABEL_NAMES.index(name))
        except ValueError:
            raise KeyError(f"unknown pose label {name!r}") from None


LABEL_NAMES = (
    "Background", "SoldierU", "SoldierD", "FallerR", "FallerL",
    "LogR", "LogL", "YearnerR", "YearnerL", "FetalR", "FetalL",
)
N_LABELS = len(LABEL_NAMES)


class Illumination(IntEnum):
    BRIGHT = 0
    MEDIUM = 1
    DARK = 2


class Occlusion(IntEnum):
    CLEAR = 0
    BLANKET = 1
    PILLOW = 2
    BLANKET_PILLOW = 3


_ILLUM_NAMES = ("Bright", "Medium", "Dark")
_OCCL_NAMES = ("Clear", "Blanket", "Pillow", "BlanketPillow")


@dataclass(frozen=True, order=True)
class SceneCondition:
    """One illumination x occlusion combination. Orders by (illumination, occlusion)."""

    illumination: Illumination
    occlusion: Occlusion

    @property
    def index(self) -> int:
        return int(self.illumination) * len(Occlusion) + int(self.occlusion)

    @property
    def name(self) -> str:
        return f"{_ILLUM_NAMES[self.illumination]}-{_OCCL_NAMES[self.occlusion]}"

    @classmethod
    def from_index(cls, index: int) -> "SceneCondition":
        if not 0 <= index < N_SCENES:
            raise KeyError(f"scene index out of range: {index}")
        return cls(Illumination(index // len(Occlusion)), Occlusion(index % len(Occlusion)))

    @classmethod
    def from_name(cls, name: str) -> "SceneCondition":
        try:
            illum, occl = name.split("-")
            return cls(Illumination(_ILLUM_NAMES.index(illum)), Occlusion(_OCCL_NAMES.index(occl)))
        except ValueError:
            raise KeyError(f"unknown scene {name!r}") from None

    def __str__(self) -> str:
        return self.name


ALL_SCENES = tuple(SceneCondition(i, o) for i in Illumination for o in Occlusion)
N_SCENES = len(ALL_SCENES)


class Modality(IntEnum):
    R = 0  # RGB, handled as luminance
    D = 1  # depth
    P = 2  # pressure mat, viewless

    @property
    def code(self) -> str:
        return self.name

    @classmethod
    def parse(cls, s: str) -> "Modality":
        return cls[s.strip().upper()]


class View(IntEnum):
    TOP = 0
    SIDE = 1
    HEAD = 2

    @property
    def code(self) -> str:
        return "tsh"[self.value]

    @classmethod
    def parse(cls, s: str) -> "View":
        s = s.strip().lower()
        if len(s) == 1:
            return cls("tsh".index(s))
        return cls[s.upper()]


class Channel(NamedTuple):
    """A (modality, view) source of one feature vector. Pressure has ``view=None``."""

    modality: Modality
    view: Optional[View] = None

    @property
    def code(self) -> str:
        if self.view is None:
            return self.modality.code
        return f"{self.modality.code}-{self.view.code}"

    @classmethod
    def parse(cls, s: str) -> "Channel":
        mod, _, view = s.partition("-")
        m = Modality.parse(mod)
        if m is Modality.P:
            return cls(m, None)
        return cls(m, View.parse(view))

    def sort_key(self) -> tuple:
        return (int(self.modality), -1 if self.view is None else int(self.view))


def channels_for(modalities: Iterable[Modality], views: Iterable[View]) -> tuple[Channel, ...]:
    """Channels in fixed order: modality-major, view-minor; pressure contributes one channel."""
    views = sorted(set(views))
    out = []
    for m in sorted(set(modalities)):
        if m is Modality.P:
            out.append(Channel(m, None))
        else:
            out.extend(Channel(m, v) for v in views)
    return tuple(out)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.flags.writeable:
        a = a.copy()
        a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataPoint:
    features: Mapping[Channel, np.ndarray]
    label: PoseLabel
    scene: SceneCondition
    actor_id: int = 0
    session_id: int = 0
    # quantized sensor images (uint8 / uint16) kept for persistence
    images: Optional[Mapping[Channel, np.ndarray]] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        feats = {Channel(*k): _frozen(v) for k, v in self.features.items()}
        for k, v in feats.items():
            if v.ndim != 1 or not np.all(np.isfinite(v)):
                raise ValueError(f"feature vector for {k.code} must be 1-D and finite")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", PoseLabel(self.label))

    def restrict(self, channels: Iterable[Channel]) -> "DataPoint":
        chans = list(channels)
        images = None if self.images is None else {c: self.images[c] for c in chans if c in self.images}
        return DataPoint({c: self.features[c] for c in chans}, self.label, self.scene,
                         self.actor_id, self.session_id, images)


@dataclass(frozen=True)
class DatasetConfig:
    modalities: tuple[Modality, ...]
    views: tuple[View, ...]
    dims: Mapping[Channel, int]
    # row-major 3x3 registration homographies (view image -> top frame), keyed by view
    homographies: Mapping[View, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(sorted(set(Modality(m) for m in self.modalities))))
        object.__setattr__(self, "views", tuple(sorted(set(View(v) for v in self.views))))
        missing = set(self.channels) - set(self.dims)
        if missing:
            raise ShapeMismatch(f"no feature dimension for {sorted(c.code for c in missing)}")

    @property
    def channels(self) -> tuple[Channel, ...]:
        return channels_for(self.modalities, self.views)

    def restrict(self, modalities: Iterable[Modality], views: Iterable[View]) -> "DatasetConfig":
        modalities = tuple(modalities)
        views = tuple(views)
        if not set(modalities) <= set(self.modalities) or not set(views) <= set(self.views):
            raise ShapeMismatch("requested modalities/views are not present in the dataset")
        chans = channels_for(modalities, views)
        return DatasetConfig(modalities, views, {c: self.dims[c] for c in chans},
                             {v: h for v, h in self.homographies.items() if v in views})


@dataclass(frozen=True)
class Dataset:
    points: tuple[DataPoint, ...]
    config: DatasetConfig
    _cache: dict = field(default_factory=dict, init=False, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise ValueError("dataset must contain at least one point")
        want = set(self.config.channels)
        for i, p in enumerate(self.points):
            if set(p.features) != want:
                raise ShapeMismatch(f"point {i} channels do not match dataset configuration")
            for c in want:
                if p.features[c].shape[0] != self.config.dims[c]:
                    raise ShapeMismatch(f"point {i} channel {c.code} has wrong length")

    def __len__(self) -> int:
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def labels(self) -> np.ndarray:
        if "labels" not in self._cache:
            self._cache["labels"] = np.array([int(p.label) for p in self.points], dtype=np.int64)
        return self._cache["labels"]

    @property
    def scenes(self) -> list[SceneCondition]:
        return [p.scene for p in self.points]

    def feature_matrix(self, channel: Channel) -> np.ndarray:
        """Stack one channel's features into a (K, d) array."""
        key = ("X", channel)
        if key not in self._cache:
            self._cache[key] = np.stack([p.features[channel] for p in self.points])
        return self._cache[key]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.points[i] for i in indices), self.config)

    def restrict(self, modalities: Iterable[Modality], views: Iterable[View]) -> "Dataset":
        cfg = self.config.restrict(modalities, views)
        return Dataset(tuple(p.restrict(cfg.channels) for p in self.points), cfg)


def partition_by_scene(ds: Dataset) -> dict[SceneCondition, Dataset]:
    groups: dict[SceneCondition, list[int]] = defaultdict(list)
    for i, p in enumerate(ds.points):
        groups[p.scene].append(i)
    return {s: ds.subset(groups[s]) for s in sorted(groups)}


def fold_assignment(labels: Sequence[int], n_folds: int, seed: int) -> np.ndarray:
    """Label-stratified fold index per point.

    Within each label the points are shuffled by ``seed`` and dealt to folds
    round-robin. The dealing offset carries over between labels, so fold sizes
    differ by at most one and each label's count per fold differs by at most one.
    """
    if n_folds < 2:
        raise ValueError("n_folds must be >= 2")
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.bincount(labels, minlength=N_LABELS)
    short = [LABEL_NAMES[l] for l in np.flatnonzero((counts > 0) & (counts < n_folds))]
    if short:
        raise InsufficientSamples(f"fewer than {n_folds} points for labels {short}")

    rng = np.random.default_rng(seed)
    fold_of = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for lab in range(counts.size):
        idx = np.flatnonzero(labels == lab)
        if idx.size == 0:
            continue
        idx = idx[rng.permutation(idx.size)]
        fold_of[idx] = (offset + np.arange(idx.size)) % n_folds
        offset = (offset + idx.size) % n_folds
    return fold_of


def stratified_folds(ds: Dataset, n_folds: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Split into ``n_folds`` (train, test) pairs; see :func:`fold_assignment`."""
    fold_of = fold_assignment(ds.labels, n_folds, seed)
    return [(ds.subset(np.flatnonzero(fold_of != f)), ds.subset(np.flatnonzero(fold_of == f)))
            for f in range(n_folds)]
