"""Shared fixtures: small hand-built feature datasets and rendered synthetic datasets."""

from __future__ import annotations

import time

import numpy as np
import pytest

from trustfuse.core import (ALL_SCENES, N_LABELS, DataPoint, Dataset, DatasetConfig, Modality,
                            View, channels_for)
from trustfuse.synthdata import GeneratorConfig, generate

ALL_MODALITIES = (Modality.R, Modality.D, Modality.P)
ALL_VIEWS = (View.TOP, View.SIDE, View.HEAD)


def make_feature_dataset(n_rep: int = 2, dim: int = 6, sep: float = 6.0, noise: float = 1.0,
                         seed: int = 0, modalities=ALL_MODALITIES, views=ALL_VIEWS,
                         scenes=ALL_SCENES, shuffle_labels: bool = False) -> Dataset:
    """Gaussian class clusters, one independent draw per channel.

    Every (label, scene) cell gets ``n_rep`` points. Class means are random
    directions scaled by ``sep``; ``shuffle_labels`` permutes the labels after
    drawing so the features carry no label information.
    """
    rng = np.random.default_rng(seed)
    chans = channels_for(modalities, views)
    means = {c: rng.normal(0.0, 1.0, (N_LABELS, dim)) * sep for c in chans}
    rows = []
    for rep in range(n_rep):
        for scene in scenes:
            for label in range(N_LABELS):
                feats = {c: means[c][label] + rng.normal(0.0, noise, dim) for c in chans}
                rows.append((feats, label, scene, rep))
    labels = [r[1] for r in rows]
    if shuffle_labels:
        labels = list(rng.permutation(labels))
    points = tuple(DataPoint(f, lab, s, 0, rep) for (f, _, s, rep), lab in zip(rows, labels))
    return Dataset(points, DatasetConfig(modalities, views, {c: dim for c in chans}))


@pytest.fixture(scope="session")
def small_generator() -> GeneratorConfig:
    return GeneratorConfig(n_actors=1, sessions_per_actor=1)


@pytest.fixture(scope="session")
def small_dataset(small_generator) -> Dataset:
    """132 rendered points (1 actor, 1 session) with their images kept."""
    return generate(small_generator, keep_images=True)


# wall-clock seconds spent building session fixtures, keyed by fixture name
FIXTURE_SECONDS: dict[str, float] = {}


@pytest.fixture(scope="session")
def default_dataset() -> Dataset:
    """The default 528-point synthetic dataset (2 actors x 2 sessions, seed 7)."""
    t0 = time.perf_counter()
    ds = generate(GeneratorConfig(), keep_images=False)
    FIXTURE_SECONDS["default_dataset"] = time.perf_counter() - t0
    return ds
