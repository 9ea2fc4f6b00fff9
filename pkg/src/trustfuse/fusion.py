"""Trusted multimodal classifier: scene-conditioned fusion of unimodal scores,
trust redistribution for missing modalities, and the binary model file."""

from __future__ import annotations

import io
import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional

import numpy as np

from .ccls import TrustVector, trust_table_from_scores
from .classifiers import ChannelScores, LdaModel, LinearSvmModel, fit_classifier, score_dataset
from .core import (ALL_SCENES, LABEL_NAMES, N_LABELS, N_SCENES, Channel, DataPoint, Dataset,
                   Modality, PoseLabel, SceneCondition, View, channels_for, fold_assignment)
from .errors import (AllModalitiesMissing, CorruptModel, MissingClassifier, NoModalitiesAvailable, UnknownScene,
                     VersionMismatch)
from .features import GmomConfig, HogConfig


@dataclass(frozen=True)
class TrustedModel:
    classifiers: Mapping[Channel, object]
    trust_table: Mapping[SceneCondition, TrustVector]
    modalities: tuple[Modality, ...]
    views: tuple[View, ...]
    clf_kind: str = "lda"
    hog_cfg: HogConfig = field(default_factory=HogConfig)
    gmom_cfg: GmomConfig = field(default_factory=GmomConfig)
    homographies: Mapping[View, tuple[float, ...]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(sorted(set(self.modalities))))
        object.__setattr__(self, "views", tuple(sorted(set(self.views))))
        if set(self.classifiers) != set(self.channels):
            raise ValueError("classifier keys do not match the model's modalities and views")
        for s, tv in self.trust_table.items():
            if tv.modalities != self.modalities:
                raise ValueError(f"trust vector for {s} covers the wrong modalities")

    @property
    def channels(self) -> tuple[Channel, ...]:
        return channels_for(self.modalities, self.views)

    @property
    def feature_dims(self) -> dict[Channel, int]:
        return {c: self.classifiers[c].n_features for c in self.channels}

    def trust_for(self, scene: SceneCondition) -> TrustVector:
        try:
            return self.trust_table[scene]
        except KeyError:
            raise UnknownScene(f"no trust vector for scene {scene}") from None


def adjust_missing(w: TrustVector, missing: Iterable[Modality]) -> TrustVector:
    """Zero the trust of failed modalities and hand it to the survivors.

    Failures are removed one at a time in modality order; each survivor
    becomes ``w_m * (1 + |w_n - w_m| / W)`` with ``W`` the weight total before
    that removal. The result is renormalized onto the simplex. If every
    survivor had zero trust they share it equally.
    """
    missing = set(Modality(m) for m in missing)
    unknown = missing - set(w.modalities)
    if unknown:
        raise ValueError(f"modalities {sorted(m.code for m in unknown)} are not part of this trust vector")
    if missing >= set(w.modalities):
        raise AllModalitiesMissing("at least one modality must remain")
    cur = dict(zip(w.modalities, (float(x) for x in w.w)))
    for n in sorted(missing):
        total = sum(cur.values())
        wn = cur[n]
        if total > 0:
            for m in cur:
                if m != n:
                    cur[m] = cur[m] * (1.0 + abs(wn - cur[m]) / total)
        cur[n] = 0.0
    survivors = [m for m in w.modalities if m not in missing]
    s = sum(cur[m] for m in survivors)
    if s <= 0:
        out = [0.0 if m in missing else 1.0 / len(survivors) for m in w.modalities]
    else:
        out = [cur[m] / s for m in w.modalities]
    return TrustVector(np.array(out), w.modalities, w.scene)


def _resolve_available(model: TrustedModel, available) -> tuple[Modality, ...]:
    if available is None:
        return model.modalities
    avail = tuple(sorted(set(Modality(m) for m in available)))
    if not avail:
        raise NoModalitiesAvailable("no modalities available for prediction")
    extra = set(avail) - set(model.modalities)
    if extra:
        raise ValueError(f"model has no modality {sorted(m.code for m in extra)}")
    return avail


def effective_trust(model: TrustedModel, scene: SceneCondition, available) -> TrustVector:
    avail = _resolve_available(model, available)
    tv = model.trust_for(scene)
    missing = set(model.modalities) - set(avail)
    return adjust_missing(tv, missing) if missing else tv


def fuse(modality_scores: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Weighted sum over modalities.

    ``modality_scores`` is (K, L, M), ``weights`` (K, M). Returns the argmax
    label per point (lowest index on ties) and the fused vectors renormalized
    to sum to one.
    """
    fused = np.einsum("klm,km->kl", modality_scores, weights)
    labels = np.argmax(fused, axis=1)
    total = fused.sum(axis=1, keepdims=True)
    probs = np.divide(fused, total, out=np.full_like(fused, 1.0 / fused.shape[1]), where=total > 0)
    return labels, probs


def predict_scores(model: TrustedModel, scores: ChannelScores, scenes, available=None
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fused labels, probabilities and applied weights for pre-computed channel scores."""
    avail = _resolve_available(model, available)
    mod_scores = np.stack([scores.modality_scores(m) for m in avail], axis=2)
    cache: dict[SceneCondition, np.ndarray] = {}
    weights = np.empty((len(scenes), len(avail)))
    for i, s in enumerate(scenes):
        if s not in cache:
            tv = effective_trust(model, s, avail)
            cache[s] = np.array([tv[m] for m in avail])
        weights[i] = cache[s]
    labels, probs = fuse(mod_scores, weights)
    return labels, probs, weights


def channel_scores_for(model: TrustedModel, ds: Dataset, available=None) -> ChannelScores:
    avail = _resolve_available(model, available)
    sub = ds.restrict(avail, model.views) if set(avail) != set(ds.config.modalities) or \
        set(model.views) != set(ds.config.views) else ds
    return score_dataset(model.classifiers, sub)


def predict_dataset(model: TrustedModel, ds: Dataset, available=None):
    scores = channel_scores_for(model, ds, available)
    return predict_scores(model, scores, ds.scenes, available)


def predict_features(model: TrustedModel, features: Mapping[Channel, np.ndarray],
                     scene: SceneCondition, available=None) -> tuple[PoseLabel, np.ndarray, TrustVector]:
    """Label, fused probability vector and applied trust for one point's features.

    Scores of a modality's views are averaged before trust weighting; only
    channels of the available modalities are read from ``features``.
    """
    avail = _resolve_available(model, available)
    chans = channels_for(avail, model.views)
    absent = [c.code for c in chans if c not in features]
    if absent:
        raise MissingClassifier(f"no features for channels {absent}")
    vals = np.stack([np.asarray(model.classifiers[c].predict_proba(features[c]))[None]
                     for c in chans], axis=2)
    labels, probs, _ = predict_scores(model, ChannelScores(chans, vals), [scene], avail)
    return PoseLabel(int(labels[0])), probs[0], effective_trust(model, scene, avail)


def predict(model: TrustedModel, point: DataPoint, available=None) -> tuple[PoseLabel, np.ndarray]:
    """Label and fused probability vector for one point."""
    label, probs, _ = predict_features(model, point.features, point.scene, available)
    return label, probs


# --- training ----------------------------------------------------------------

def out_of_fold_scores(ds: Dataset, kind: str, n_folds: int, seed: int, clf_params=None) -> ChannelScores:
    """Scores for every point from classifiers that did not see it."""
    clf_params = clf_params or {}
    fold_of = fold_assignment(ds.labels, n_folds, seed)
    chans = ds.config.channels
    vals = np.zeros((len(ds), N_LABELS, len(chans)))
    for f in range(n_folds):
        tr = np.flatnonzero(fold_of != f)
        te = np.flatnonzero(fold_of == f)
        for j, c in enumerate(chans):
            X = ds.feature_matrix(c)
            clf = fit_classifier(kind, X[tr], ds.labels[tr], seed=seed, **clf_params)
            vals[te, :, j] = clf.predict_proba(X[te])
    return ChannelScores(chans, vals)


def train_model(ds: Dataset, modalities=None, views=None, clf_kind: str = "lda",
                trust_folds: int = 3, seed: int = 0, clf_params=None,
                hog_cfg: HogConfig = HogConfig(), gmom_cfg: GmomConfig = GmomConfig()) -> TrustedModel:
    """Fit unimodal classifiers on ``ds`` and estimate the per-scene trust table.

    Trust is estimated from out-of-fold scores (``trust_folds`` inner folds)
    so the classifiers' fit to their own training points does not inflate
    the oracle; ``trust_folds=0`` uses resubstitution scores instead.
    """
    modalities = ds.config.modalities if modalities is None else tuple(modalities)
    views = ds.config.views if views is None else tuple(views)
    sub = ds.restrict(modalities, views)
    clf_params = clf_params or {}
    clfs = {c: fit_classifier(clf_kind, sub.feature_matrix(c), sub.labels, seed=seed, **clf_params)
            for c in sub.config.channels}
    if trust_folds:
        scores = out_of_fold_scores(sub, clf_kind, trust_folds, seed, clf_params)
    else:
        scores = score_dataset(clfs, sub)
    table = trust_table_from_scores(scores, sub.labels, sub.scenes, sub.config.views, sub.config.modalities)
    return TrustedModel(clfs, table, sub.config.modalities, sub.config.views, clf_kind.lower(),
                        hog_cfg, gmom_cfg, dict(sub.config.homographies))


# --- model file --------------------------------------------------------------
#
# header : b"CCLS" u16 version u16 L u16 M u16 V u16 C, then C x (u8 modality, u8 view, u32 dim)
# body   : sections of (4-byte tag, u64 length, payload); tags META, CLF_, TRST, END_
# trailer: u32 CRC-32 of everything before it
# All integers and floats are little-endian.

MAGIC = b"CCLS"
FORMAT_VERSION = 1
_NO_VIEW = 255


def _pack_arrays(arrays: Mapping[str, np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<B", len(arrays)))
    for name, arr in arrays.items():
        a = np.asarray(arr)
        if a.dtype == bool:
            a, code = a.astype("u1"), b"u1"
        else:
            a, code = a.astype("<f8"), b"f8"
        nb = name.encode("ascii")
        out.write(struct.pack("<B", len(nb)) + nb + code + struct.pack("<B", a.ndim))
        out.write(struct.pack(f"<{a.ndim}I", *a.shape))
        out.write(np.ascontiguousarray(a).tobytes())
    return out.getvalue()


def _unpack_arrays(buf: bytes, pos: int) -> tuple[dict[str, np.ndarray], int]:
    (n,) = struct.unpack_from("<B", buf, pos)
    pos += 1
    arrays = {}
    for _ in range(n):
        (ln,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        name = buf[pos:pos + ln].decode("ascii")
        pos += ln
        code = buf[pos:pos + 2]
        pos += 2
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        dtype = {b"u1": np.dtype("u1"), b"f8": np.dtype("<f8")}[code]
        count = int(np.prod(shape)) if ndim else 1
        nbytes = count * dtype.itemsize
        if pos + nbytes > len(buf):
            raise CorruptModel("array data runs past the end of its section")
        a = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(shape).copy()
        arrays[name] = a.astype(bool) if code == b"u1" else a.astype(np.float64)
        pos += nbytes
    return arrays, pos


def _clf_arrays(clf) -> tuple[int, dict[str, np.ndarray]]:
    if isinstance(clf, LdaModel):
        return 0, {"class_means": clf.class_means, "variances": clf.variances,
                   "class_priors": clf.class_priors, "fitted": clf.fitted}
    if isinstance(clf, LinearSvmModel):
        return 1, {"mean": clf.mean, "scale": clf.scale, "weights": clf.weights, "bias": clf.bias,
                   "platt_a": clf.platt_a, "platt_b": clf.platt_b, "fitted": clf.fitted,
                   "c_param": np.array([clf.c_param])}
    raise TypeError(f"cannot serialize classifier of type {type(clf).__name__}")


def _clf_from_arrays(kind: int, a: dict[str, np.ndarray]):
    if kind == 0:
        return LdaModel(a["class_means"], a["variances"], a["class_priors"], a["fitted"])
    if kind == 1:
        return LinearSvmModel(a["mean"], a["scale"], a["weights"], a["bias"], a["platt_a"],
                              a["platt_b"], a["fitted"], float(a["c_param"][0]))
    raise CorruptModel(f"unknown classifier kind {kind}")


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def model_to_bytes(model: TrustedModel) -> bytes:
    chans = model.channels
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<5H", FORMAT_VERSION, N_LABELS, len(model.modalities),
                          len(model.views), len(chans)))
    dims = model.feature_dims
    for c in chans:
        out.write(struct.pack("<BBI", int(c.modality), _NO_VIEW if c.view is None else int(c.view), dims[c]))

    meta = {
        "labels": list(LABEL_NAMES),
        "modalities": [m.code for m in model.modalities],
        "views": [v.code for v in model.views],
        "clf_kind": model.clf_kind,
        "hog": {"n_orientations": model.hog_cfg.n_orientations, "cell_px": model.hog_cfg.cell_px,
                "block_cells": model.hog_cfg.block_cells, "work_size": list(model.hog_cfg.work_size),
                "block_stride_cells": model.hog_cfg.block_stride_cells, "eps": model.hog_cfg.eps},
        "gmom": {"tiles": list(model.gmom_cfg.tiles), "max_order": model.gmom_cfg.max_order},
        "homographies": {v.code: list(h) for v, h in sorted(model.homographies.items())},
    }
    out.write(_section(b"META", json.dumps(meta, sort_keys=True).encode("utf-8")))
    for c in chans:
        kind, arrays = _clf_arrays(model.classifiers[c])
        head = struct.pack("<BBB", int(c.modality), _NO_VIEW if c.view is None else int(c.view), kind)
        out.write(_section(b"CLF_", head + _pack_arrays(arrays)))
    table = np.full((N_SCENES, len(model.modalities)), np.nan)
    for s, tv in model.trust_table.items():
        table[s.index] = tv.w
    out.write(_section(b"TRST", table.astype("<f8").tobytes()))
    out.write(_section(b"END_", b""))
    body = out.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def model_from_bytes(buf: bytes) -> TrustedModel:
    try:
        return _parse_model(buf)
    except (struct.error, KeyError, IndexError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptModel(f"malformed model file: {e}") from None


def _parse_model(buf: bytes) -> TrustedModel:
    if len(buf) < 14 or buf[:4] != MAGIC:
        raise CorruptModel("not a model file (bad magic or truncated header)")
    version, n_labels, n_mod, n_views, n_chan = struct.unpack_from("<5H", buf, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format version {version}, reader supports {FORMAT_VERSION}")
    if len(buf) < 18:
        raise CorruptModel("truncated model file")
    body, (crc,) = buf[:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptModel("checksum mismatch (truncated or damaged model file)")
    if n_labels != N_LABELS:
        raise CorruptModel(f"model has {n_labels} labels, expected {N_LABELS}")

    pos = 14
    header_dims = {}
    for _ in range(n_chan):
        m, v, d = struct.unpack_from("<BBI", body, pos)
        pos += 6
        header_dims[Channel(Modality(m), None if v == _NO_VIEW else View(v))] = d

    meta = None
    clfs = {}
    table = None
    while True:
        tag = body[pos:pos + 4]
        (ln,) = struct.unpack_from("<Q", body, pos + 4)
        pos += 12
        payload = body[pos:pos + ln]
        if len(payload) != ln:
            raise CorruptModel(f"section {tag!r} is truncated")
        pos += ln
        if tag == b"META":
            meta = json.loads(payload.decode("utf-8"))
        elif tag == b"CLF_":
            m, v, kind = struct.unpack_from("<BBB", payload, 0)
            arrays, _ = _unpack_arrays(payload, 3)
            clfs[Channel(Modality(m), None if v == _NO_VIEW else View(v))] = _clf_from_arrays(kind, arrays)
        elif tag == b"TRST":
            table = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        elif tag == b"END_":
            break
        else:
            raise CorruptModel(f"unknown section {tag!r}")
    if meta is None or table is None:
        raise CorruptModel("model file lacks metadata or trust table")
    if meta["labels"] != list(LABEL_NAMES):
        raise CorruptModel("model label set does not match this build's labels")

    modalities = tuple(Modality.parse(m) for m in meta["modalities"])
    views = tuple(View.parse(v) for v in meta["views"])
    if (len(modalities), len(views)) != (n_mod, n_views):
        raise CorruptModel("header and metadata disagree on modalities/views")
    if table.size != N_SCENES * n_mod:
        raise CorruptModel("trust table has the wrong size")
    for c, clf in clfs.items():
        if header_dims.get(c) != clf.n_features:
            raise CorruptModel(f"feature dimension mismatch for channel {c.code}")
    if set(clfs) != set(header_dims):
        raise CorruptModel("classifier sections do not match the header channels")

    table = table.reshape(N_SCENES, n_mod)
    trust = {}
    for i, s in enumerate(ALL_SCENES):
        if not np.all(np.isnan(table[i])):
            trust[s] = TrustVector(table[i], modalities, s)
    h = meta["hog"]
    hog_cfg = HogConfig(h["n_orientations"], h["cell_px"], h["block_cells"], tuple(h["work_size"]),
                        h["block_stride_cells"], h["eps"])
    gmom_cfg = GmomConfig(tuple(meta["gmom"]["tiles"]), meta["gmom"]["max_order"])
    homs = {View.parse(k): tuple(v) for k, v in meta["homographies"].items()}
    try:
        return TrustedModel(clfs, trust, modalities, views, meta["clf_kind"], hog_cfg, gmom_cfg, homs)
    except ValueError as e:
        raise CorruptModel(str(e)) from None


def save_model(model: TrustedModel, path) -> None:
    with open(path, "wb") as f:
        f.write(model_to_bytes(model))


def load_model(path) -> TrustedModel:
    with open(path, "rb") as f:
        return model_from_bytes(f.read())
