"""Cross-validated evaluation of trusted fusion: per-scene accuracies per
configuration, per-scene confusion matrices, missing-modality runs and
CSV/SVG report files."""

from __future__ import annotations

import csv
import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .classifiers import score_dataset
from .core import (ALL_SCENES, LABEL_NAMES, N_LABELS, Channel, Dataset, Modality, SceneCondition, View,
                   fold_assignment)
from .errors import AllModalitiesMissing, LengthMismatch
from .fusion import predict_scores, train_model

R, D, P = Modality.R, Modality.D, Modality.P
T, S, H = View.TOP, View.SIDE, View.HEAD


@dataclass(frozen=True)
class ConfigurationSpec:
    name: str
    modalities: tuple[Modality, ...]
    views: tuple[View, ...]

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(sorted(set(Modality(m) for m in self.modalities))))
        object.__setattr__(self, "views", tuple(sorted(set(View(v) for v in self.views))))
        if not self.modalities:
            raise ValueError("configuration needs at least one modality")
        if not self.views and set(self.modalities) != {P}:
            raise ValueError("configuration needs at least one view for camera modalities")

    @classmethod
    def preset(cls, name: str, views: Optional[Iterable[View]] = None) -> "ConfigurationSpec":
        matches = [v for k, v in PRESETS.items() if k.lower() == name.strip().lower()]
        if not matches:
            raise KeyError(f"unknown configuration {name!r}; expected one of {sorted(PRESETS)}")
        base = matches[0]
        if views is not None:
            return cls(base.name, base.modalities, tuple(views))
        return base


PRESETS = {
    "MM": ConfigurationSpec("MM", (R, D, P), (T, S, H)),
    "MpM": ConfigurationSpec("MpM", (R, D, P), (T,)),
    "PMM": ConfigurationSpec("PMM", (R, D), (T, S, H)),
    "PMpM": ConfigurationSpec("PMpM", (R, D), (S, H)),
}


def confusion_matrix(preds: Sequence[int], truth: Sequence[int], n_labels: int = N_LABELS) -> np.ndarray:
    """Counts with rows = true label, columns = predicted label."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if preds.size != truth.size:
        raise LengthMismatch(f"{preds.size} predictions for {truth.size} labels")
    cm = np.zeros((n_labels, n_labels), dtype=np.int64)
    np.add.at(cm, (truth, preds), 1)
    return cm


def _accuracy(pred, truth) -> float:
    return float(np.mean(pred == truth)) if len(truth) else float("nan")


@dataclass
class ConfigResult:
    """Pooled out-of-fold predictions of one configuration."""

    spec: ConfigurationSpec
    missing: tuple[Modality, ...]
    truth: np.ndarray
    predicted: np.ndarray
    scene_index: np.ndarray
    fold: np.ndarray
    unimodal_predicted: dict[Modality, np.ndarray]
    trust_tables: list[dict[SceneCondition, np.ndarray]]
    channel_predicted: dict[Channel, np.ndarray] = field(default_factory=dict)

    @property
    def name(self) -> str:
        if not self.missing:
            return self.spec.name
        return f"{self.spec.name} missing={''.join(m.code for m in self.missing)}"

    @property
    def scenes(self) -> list[SceneCondition]:
        return [s for s in ALL_SCENES if np.any(self.scene_index == s.index)]

    @property
    def accuracy(self) -> float:
        return _accuracy(self.predicted, self.truth)

    def scene_accuracy(self, predicted: Optional[np.ndarray] = None) -> dict[SceneCondition, float]:
        pred = self.predicted if predicted is None else predicted
        return {s: _accuracy(pred[self.scene_index == s.index], self.truth[self.scene_index == s.index])
                for s in self.scenes}

    def unimodal_scene_accuracy(self) -> dict[Modality, dict[SceneCondition, float]]:
        return {m: self.scene_accuracy(p) for m, p in self.unimodal_predicted.items()}

    def channel_scene_accuracy(self) -> dict[Channel, dict[SceneCondition, float]]:
        """Per-scene accuracy of each single-view classifier on its own."""
        return {c: self.scene_accuracy(p) for c, p in self.channel_predicted.items()}

    def fold_accuracy(self) -> list[float]:
        return [_accuracy(self.predicted[self.fold == f], self.truth[self.fold == f])
                for f in range(int(self.fold.max()) + 1)]

    def confusion(self, scene: Optional[SceneCondition] = None) -> np.ndarray:
        sel = np.ones(self.truth.size, bool) if scene is None else self.scene_index == scene.index
        return confusion_matrix(self.predicted[sel], self.truth[sel])


@dataclass
class EvalReport:
    results: list[ConfigResult]
    metadata: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        return [r.name for r in self.results]

    @property
    def scenes(self) -> list[SceneCondition]:
        seen = set()
        for r in self.results:
            seen.update(r.scenes)
        return sorted(seen)

    def accuracy_matrix(self) -> np.ndarray:
        """(scenes x configurations) accuracy in [0, 1]."""
        out = np.full((len(self.scenes), len(self.results)), np.nan)
        for j, r in enumerate(self.results):
            acc = r.scene_accuracy()
            for i, s in enumerate(self.scenes):
                out[i, j] = acc.get(s, np.nan)
        return out

    def __getitem__(self, name: str) -> ConfigResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)


def merge_reports(reports: Iterable[EvalReport]) -> EvalReport:
    reports = list(reports)
    meta = dict(reports[0].metadata) if reports else {}
    meta["configurations"] = [n for r in reports for n in r.names]
    return EvalReport([res for r in reports for res in r.results], meta)


def _run_fold(ds: Dataset, spec: ConfigurationSpec, clf_kind: str, fold_of: np.ndarray, f: int,
              seed: int, trust_folds: int, missing: tuple[Modality, ...], clf_params):
    tr = np.flatnonzero(fold_of != f)
    te = np.flatnonzero(fold_of == f)
    train, test = ds.subset(tr), ds.subset(te)
    model = train_model(train, spec.modalities, spec.views, clf_kind, trust_folds, seed, clf_params)
    scores = score_dataset(model.classifiers, test)
    available = tuple(m for m in spec.modalities if m not in missing)
    pred, _, _ = predict_scores(model, scores, test.scenes, available)
    uni = {m: np.argmax(scores.modality_scores(m), axis=1) for m in spec.modalities}
    per_channel = {c: np.argmax(scores.values[:, :, j], axis=1) for j, c in enumerate(scores.channels)}
    trust = {s: tv.w.copy() for s, tv in model.trust_table.items()}
    return te, pred, uni, per_channel, trust


def run_cv(ds: Dataset, spec: ConfigurationSpec, clf_kind: str = "lda", n_folds: int = 5,
           seed: int = 0, missing: Iterable[Modality] = (), trust_folds: int = 3,
           threads: int = 1, clf_params=None) -> EvalReport:
    """Stratified k-fold evaluation of one configuration.

    Inside every fold the unimodal classifiers and the per-scene trust table
    are fit on the training part only; test points are fused with the trust
    vector of their own scene (adjusted when ``missing`` is nonempty).
    """
    missing = tuple(sorted(set(Modality(m) for m in missing)))
    if set(missing) >= set(spec.modalities):
        raise AllModalitiesMissing("cannot remove every modality of the configuration")
    if not set(missing) <= set(spec.modalities):
        raise ValueError("missing modalities must belong to the configuration")
    sub = ds.restrict(spec.modalities, spec.views)
    fold_of = fold_assignment(sub.labels, n_folds, seed)

    def job(f):
        return _run_fold(sub, spec, clf_kind, fold_of, f, seed, trust_folds, missing, clf_params)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            outs = list(ex.map(job, range(n_folds)))
    else:
        outs = [job(f) for f in range(n_folds)]

    k = len(sub)
    predicted = np.empty(k, dtype=np.int64)
    uni = {m: np.empty(k, dtype=np.int64) for m in spec.modalities}
    per_channel = {c: np.empty(k, dtype=np.int64) for c in sub.config.channels}
    tables = []
    for te, pred, u, pc, trust in outs:
        predicted[te] = pred
        for m in spec.modalities:
            uni[m][te] = u[m]
        for c in per_channel:
            per_channel[c][te] = pc[c]
        tables.append(trust)
    result = ConfigResult(spec, missing, sub.labels.copy(), predicted,
                          np.array([s.index for s in sub.scenes]), fold_of, uni, tables, per_channel)
    meta = {
        "seed": seed, "n_folds": n_folds, "clf": clf_kind, "trust_folds": trust_folds,
        "configurations": [result.name],
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    return EvalReport([result], meta)


def run_missing_modality(ds: Dataset, spec: ConfigurationSpec, clf_kind: str = "lda",
                         missing: Iterable[Modality] = (), n_folds: int = 5, seed: int = 0,
                         **kwargs) -> EvalReport:
    return run_cv(ds, spec, clf_kind, n_folds, seed, missing=missing, **kwargs)


# --- report files --------------------------------------------------------------

def _pct(x: float) -> str:
    return "" if np.isnan(x) else f"{100.0 * x:.1f}"


def _write_csv(path: Path, rows: list[list]) -> None:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\r\n").writerows(rows)
    path.write_bytes(buf.getvalue().encode("utf-8"))


def _svg_heatmap(title: str, rows: list[str], cols: list[str], values: np.ndarray) -> str:
    """Color-scaled cell grid, light (worst) to dark (best), values in [0, 1]."""
    cw, ch, left, top = 90, 24, 150, 50
    width = left + cw * len(cols) + 10
    height = top + ch * len(rows) + 10
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        'font-family="sans-serif" font-size="11">',
        f'<text x="{left}" y="16" font-size="13">{title}</text>',
    ]
    for j, c in enumerate(cols):
        out.append(f'<text x="{left + j * cw + cw / 2:.1f}" y="{top - 8}" text-anchor="middle">{c}</text>')
    for i, r in enumerate(rows):
        y = top + i * ch
        out.append(f'<text x="{left - 6}" y="{y + ch / 2 + 4:.1f}" text-anchor="end">{r}</text>')
        for j in range(len(cols)):
            v = values[i, j]
            if np.isnan(v):
                fill, label, dark = "#eeeeee", "n/a", False
            else:
                shade = int(round(235 - 200 * float(np.clip(v, 0, 1))))
                fill, label, dark = f"#{shade:02x}{shade:02x}{255:02x}", f"{100 * v:.1f}%", v > 0.55
            x = left + j * cw
            out.append(f'<rect class="cell" x="{x}" y="{y}" width="{cw}" height="{ch}" '
                       f'fill="{fill}" stroke="#ffffff"/>')
            color = "#ffffff" if dark else "#000000"
            out.append(f'<text x="{x + cw / 2:.1f}" y="{y + ch / 2 + 4:.1f}" text-anchor="middle" '
                       f'fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(report: EvalReport, directory, name: str = "accuracy") -> list[Path]:
    """Write accuracy/confusion CSVs, unimodal and fold tables, metadata and a heatmap."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    scenes = report.scenes
    names = report.names
    acc = report.accuracy_matrix()
    written = []

    rows = [["scene"] + names]
    rows += [[s.name] + [_pct(v) for v in acc[i]] for i, s in enumerate(scenes)]
    p = d / "accuracy_by_scene.csv"
    _write_csv(p, rows)
    written.append(p)

    for s in scenes:
        rows = [["configuration", "truth"] + list(LABEL_NAMES)]
        for r in report.results:
            if s not in r.scenes:
                continue
            cm = r.confusion(s)
            rows += [[r.name, LABEL_NAMES[i]] + [int(x) for x in cm[i]] for i in range(N_LABELS)]
        p = d / f"confusion_{s.name}.csv"
        _write_csv(p, rows)
        written.append(p)

    rows = [["configuration", "modality", "scene", "accuracy"]]
    for r in report.results:
        for m, per in r.unimodal_scene_accuracy().items():
            rows += [[r.name, m.code, s.name, _pct(v)] for s, v in per.items()]
    p = d / "unimodal_by_scene.csv"
    _write_csv(p, rows)
    written.append(p)

    rows = [["configuration", "fold", "accuracy"]]
    for r in report.results:
        rows += [[r.name, f, _pct(v)] for f, v in enumerate(r.fold_accuracy())]
    rows = [["configuration", "channel", "scene", "accuracy"]]
    for r in report.results:
        for c, per in r.channel_scene_accuracy().items():
            rows += [[r.name, c.code, s.name, _pct(v)] for s, v in per.items()]
    p = d / "channel_by_scene.csv"
    _write_csv(p, rows)
    written.append(p)

    p = d / "folds.csv"
    _write_csv(p, rows)
    written.append(p)

    p = d / f"heatmap_{name}.svg"
    p.write_text(_svg_heatmap("Percent accuracy by scene", [s.name for s in scenes], names, acc),
                 encoding="utf-8")
    written.append(p)

    meta = dict(report.metadata)
    meta["configurations"] = names
    meta["missing"] = {r.name: [m.code for m in r.missing] for r in report.results}
    p = d / "report.json"
    p.write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    written.append(p)
    return written
