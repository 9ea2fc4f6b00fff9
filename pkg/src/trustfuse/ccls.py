"""Modality trust estimation by least squares on the probability simplex.

For a set of training points with per-modality label probabilities, the
design matrix ``A`` stacks one ``L x M`` score block per point (and per view),
and the oracle vector ``b`` holds, at each point's true-label row, the
fraction of modalities whose own argmax was correct. The trust vector is

    argmin_w  0.5 * ||A w - b||^2   s.t.  w >= 0,  sum(w) = 1.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.linalg import null_space

from .classifiers import score_dataset
from .core import Channel, Dataset, Modality, SceneCondition, View
from .errors import DegenerateSystem, ShapeMismatch

TIE_TOL = 1e-10
FEAS_TOL = 1e-10


@dataclass(frozen=True)
class DesignMatrix:
    a: np.ndarray  # (K * L * V, M)
    n_points: int
    n_labels: int
    n_views: int = 1

    @property
    def shape(self) -> tuple[int, int]:
        return self.a.shape


@dataclass(frozen=True)
class OracleVector:
    b: np.ndarray             # (rows,)
    per_modality: np.ndarray  # (rows, M): the unimodal oracle columns


@dataclass(frozen=True)
class TrustVector:
    w: np.ndarray
    modalities: tuple[Modality, ...] = (Modality.R, Modality.D, Modality.P)
    scene: Optional[SceneCondition] = field(default=None, compare=False)

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64).ravel()
        if w.size != len(self.modalities):
            raise ShapeMismatch(f"{w.size} weights for {len(self.modalities)} modalities")
        if np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-8:
            raise ValueError(f"trust vector is not on the simplex: {w}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "modalities", tuple(Modality(m) for m in self.modalities))

    def __getitem__(self, m: Modality) -> float:
        return float(self.w[self.modalities.index(m)])

    def as_dict(self) -> dict[Modality, float]:
        return {m: float(v) for m, v in zip(self.modalities, self.w)}


def _blocks_array(blocks) -> np.ndarray:
    s = np.asarray(blocks, dtype=np.float64)
    if s.ndim == 2:
        s = s[None]
    if s.ndim != 3 or s.shape[0] == 0:
        raise ShapeMismatch(f"score blocks must be a nonempty (K, L, M) stack, got {s.shape}")
    return s


def build_design(blocks) -> DesignMatrix:
    """Stack ``K`` score blocks: row ``k * L + l``, column ``m`` holds ``s[k, l, m]``."""
    s = _blocks_array(blocks)
    k, l, m = s.shape
    return DesignMatrix(s.reshape(k * l, m).copy(), k, l, 1)


def build_oracle(blocks, truth: Sequence[int]) -> OracleVector:
    """Uniform-vote oracle: each modality adds ``1/M`` at the true-label row when its argmax is right."""
    s = _blocks_array(blocks)
    truth = np.asarray(truth, dtype=np.int64).ravel()
    k, l, m = s.shape
    if truth.size != k:
        raise ShapeMismatch(f"{truth.size} labels for {k} score blocks")
    correct = np.argmax(s, axis=1) == truth[:, None]  # (K, M)
    bm = np.zeros((k, l, m))
    bm[np.arange(k), truth, :] = correct
    bm = bm.reshape(k * l, m)
    return OracleVector(bm.sum(axis=1) / m, bm)


def stack_views(per_view: Sequence[tuple[DesignMatrix, OracleVector]]) -> tuple[DesignMatrix, OracleVector]:
    """Concatenate per-view systems row-wise, in the given (view) order."""
    if not per_view:
        raise ShapeMismatch("no views to stack")
    d0 = per_view[0][0]
    for d, o in per_view:
        if (d.n_points, d.n_labels, d.a.shape[1]) != (d0.n_points, d0.n_labels, d0.a.shape[1]):
            raise ShapeMismatch("views disagree on K, L or M")
        if o.b.shape[0] != d.a.shape[0]:
            raise ShapeMismatch("oracle length does not match design rows")
    if len(per_view) == 1:
        return per_view[0]
    a = np.vstack([d.a for d, _ in per_view])
    b = np.concatenate([o.b for _, o in per_view])
    bm = np.vstack([o.per_modality for _, o in per_view])
    nv = sum(d.n_views for d, _ in per_view)
    return DesignMatrix(a, d0.n_points, d0.n_labels, nv), OracleVector(b, bm)


def objective(a, b, w) -> float:
    r = np.asarray(a) @ np.asarray(w) - np.asarray(b)
    return 0.5 * float(r @ r)


def _solve_face(a_s: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Least squares over the affine hull ``sum(w) = 1`` of one support.

    With ``w = w0 + N z`` (``w0`` uniform, ``N`` an orthonormal basis of the
    sum-zero subspace) the problem is unconstrained in ``z``; the minimum-norm
    ``z`` gives the minimum-norm ``w`` among all minimizers since ``w0 ⟂ N z``.
    """
    n = a_s.shape[1]
    w0 = np.full(n, 1.0 / n)
    if n == 1:
        return w0
    basis = null_space(np.ones((1, n)))
    red = a_s @ basis
    u, sv, vt = np.linalg.svd(red, full_matrices=False)
    # cutoff relative to A_S itself: directions that A_S cannot see are dropped
    scale = max(np.linalg.norm(a_s, 2), np.finfo(float).tiny)
    keep = sv > max(red.shape) * np.finfo(float).eps * scale * 16
    z = vt[keep].T @ ((u[:, keep].T @ (b - a_s @ w0)) / sv[keep])
    return w0 + basis @ z


def solve_trust(a, b, modalities: Optional[Sequence[Modality]] = None,
                scene: Optional[SceneCondition] = None) -> TrustVector:
    """Exact simplex-constrained least squares by enumerating all nonempty supports.

    Every support's face problem is solved through its equality-constrained
    normal equations; feasible candidates compete on objective value, and
    near-ties (within ``TIE_TOL``) go to the candidate with the smallest norm.
    Intended for a handful of modalities (2^M - 1 supports).
    """
    a = a.a if isinstance(a, DesignMatrix) else np.asarray(a, dtype=np.float64)
    b = b.b if isinstance(b, OracleVector) else np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.shape != (a.shape[0],):
        raise ShapeMismatch(f"design {a.shape} and oracle {b.shape} do not conform")
    m = a.shape[1]
    if a.shape[0] < m or not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DegenerateSystem("design needs at least M rows and finite entries")
    if modalities is None:
        modalities = tuple(Modality(i) for i in range(m))

    best = None
    for size in range(1, m + 1):
        for support in itertools.combinations(range(m), size):
            ws = _solve_face(a[:, support], b)
            if np.any(ws < -FEAS_TOL):
                continue
            w = np.zeros(m)
            w[list(support)] = np.maximum(ws, 0.0)
            w /= w.sum()
            cand = (objective(a, b, w), float(w @ w), w)
            if best is None or cand[0] < best[0] - TIE_TOL or (
                    abs(cand[0] - best[0]) <= TIE_TOL and cand[1] < best[1]):
                best = cand
    w = best[2]
    w[w < 1e-12] = 0.0
    return TrustVector(w / w.sum(), tuple(modalities), scene)


def trust_from_scores(scores, truth, views: Sequence[Optional[View]],
                      modalities: Sequence[Modality], scene=None) -> TrustVector:
    """Solve one scene's trust from a ChannelScores slice."""
    per_view = []
    if all(m is Modality.P for m in modalities):
        views = [None]
    for v in views:
        blocks = scores.view_block(v, modalities)
        per_view.append((build_design(blocks), build_oracle(blocks, truth)))
    a, b = stack_views(per_view)
    return solve_trust(a, b, modalities, scene)


def trust_table_from_scores(scores, labels, scenes: Sequence[SceneCondition],
                            views: Sequence[View], modalities: Sequence[Modality]
                            ) -> dict[SceneCondition, TrustVector]:
    labels = np.asarray(labels)
    modalities = tuple(sorted(set(modalities)))
    views = tuple(sorted(set(views)))
    table = {}
    for scene in sorted(set(scenes)):
        idx = np.array([i for i, s in enumerate(scenes) if s == scene])
        table[scene] = trust_from_scores(scores.subset(idx), labels[idx], views, modalities, scene)
    return table


def estimate_trust_table(ds: Dataset, clfs: Mapping[Channel, object],
                         views: Optional[Sequence[View]] = None,
                         modalities: Optional[Sequence[Modality]] = None
                         ) -> dict[SceneCondition, TrustVector]:
    """Per-scene trust vectors from classifier scores on ``ds``."""
    views = ds.config.views if views is None else tuple(views)
    modalities = ds.config.modalities if modalities is None else tuple(modalities)
    sub = ds.restrict(modalities, views)
    scores = score_dataset(clfs, sub)
    return trust_table_from_scores(scores, sub.labels, sub.scenes, views, modalities)
