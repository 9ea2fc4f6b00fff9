"""Probabilistic unimodal classifiers.

Two model families share one contract: ``predict_proba`` maps feature rows
to length-``n_labels`` probability vectors on the simplex.

* :class:`LdaModel` - class means with a pooled diagonal covariance; posteriors
  by Bayes' rule, evaluated in log space.
* :class:`LinearSvmModel` - one-vs-rest linear SVMs trained with Pegasos-style
  subgradient steps, each margin calibrated with a Platt sigmoid.

Labels never seen during fitting get probability 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import logsumexp

from .core import N_LABELS, Channel, Dataset, Modality, View
from .errors import DimensionMismatch, EmptyTrainingSet, MissingClassifier, SingleClassTraining


@runtime_checkable
class ProbabilisticClassifier(Protocol):
    n_features: int

    def predict_proba(self, X) -> np.ndarray: ...


def _as_rows(X, n_features: int | None = None) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2:
        raise DimensionMismatch(f"expected 1-D or 2-D features, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionMismatch(f"expected {n_features} features, got {X.shape[1]}")
    return X, single


def _check_training(X, y) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.int64).ravel()
    if len(y) == 0:
        raise EmptyTrainingSet("no training samples")
    try:
        X = np.asarray(X, dtype=np.float64)
    except ValueError:
        raise DimensionMismatch("feature vectors have unequal lengths") from None
    if X.ndim != 2:
        raise DimensionMismatch("feature vectors have unequal lengths")
    if X.shape[0] != y.size:
        raise DimensionMismatch(f"{X.shape[0]} feature rows but {y.size} labels")
    if y.min() < 0 or y.max() >= N_LABELS:
        raise ValueError("label out of range")
    return X, y


def _normalize_log(logp: np.ndarray) -> np.ndarray:
    """Row-wise softmax of log scores; ``-inf`` entries come out as exact zeros."""
    p = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    return p


# --- LDA ---------------------------------------------------------------------

@dataclass(frozen=True)
class LdaModel:
    class_means: np.ndarray   # (L, d); rows of unseen classes are zero
    variances: np.ndarray     # (d,) pooled within-class variance + ridge
    class_priors: np.ndarray  # (L,), zero for unseen classes
    fitted: np.ndarray        # (L,) bool

    @property
    def n_features(self) -> int:
        return self.variances.size

    @classmethod
    def fit(cls, X, y, ridge: float = 1e-3) -> "LdaModel":
        if ridge <= 0:
            raise ValueError("ridge must be positive")
        X, y = _check_training(X, y)
        counts = np.bincount(y, minlength=N_LABELS)
        fitted = counts > 0
        means = np.zeros((N_LABELS, X.shape[1]))
        np.add.at(means, y, X)
        means[fitted] /= counts[fitted, None]
        resid = X - means[y]
        dof = max(y.size - int(fitted.sum()), 1)
        var = np.einsum("ij,ij->j", resid, resid) / dof + ridge
        return cls(means, var, counts / counts.sum(), fitted)

    def log_joint(self, X) -> np.ndarray:
        """Class log-likelihood plus log prior, up to a per-row constant."""
        X, _ = _as_rows(X, self.n_features)
        inv = 1.0 / self.variances
        scaled = self.class_means * inv
        out = X @ scaled.T - 0.5 * np.einsum("ij,ij->i", scaled, self.class_means)
        with np.errstate(divide="ignore"):
            out = out + np.log(self.class_priors)
        out[:, ~self.fitted] = -np.inf
        return out

    def predict_proba(self, X) -> np.ndarray:
        X, single = _as_rows(X, self.n_features)
        p = _normalize_log(self.log_joint(X))
        return p[0] if single else p


def lda_fit(X, y, ridge: float = 1e-3) -> LdaModel:
    return LdaModel.fit(X, y, ridge)


def lda_predict_proba(model: LdaModel, f) -> np.ndarray:
    return model.predict_proba(f)


# --- Platt scaling -----------------------------------------------------------

def _platt_nll(f, t, a, b) -> float:
    z = a * f + b
    return float(np.sum(np.where(z >= 0, t * z + np.log1p(np.exp(-np.abs(z))),
                                 (t - 1.0) * z + np.log1p(np.exp(-np.abs(z))))))


def platt_fit(margins, positive, max_iter: int = 100) -> tuple[float, float]:
    """Fit ``P(y=1 | f) = 1 / (1 + exp(a*f + b))`` by damped Newton steps.

    Uses Platt's smoothed targets and the backtracking Newton method of
    Lin, Lin & Weng (2007).
    """
    f = np.asarray(margins, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n1 = int(pos.sum())
    n0 = pos.size - n1
    t = np.where(pos, (n1 + 1.0) / (n1 + 2.0), 1.0 / (n0 + 2.0))
    a, b = 0.0, float(np.log((n0 + 1.0) / (n1 + 1.0)))
    fval = _platt_nll(f, t, a, b)
    sigma, min_step, tol = 1e-12, 1e-10, 1e-5
    for _ in range(max_iter):
        z = a * f + b
        ez = np.exp(-np.abs(z))
        p = np.where(z >= 0, ez / (1.0 + ez), 1.0 / (1.0 + ez))
        q = 1.0 - p
        d2 = p * q
        h11 = sigma + np.dot(f * f, d2)
        h22 = sigma + d2.sum()
        h21 = np.dot(f, d2)
        d1 = t - p
        g1 = np.dot(f, d1)
        g2 = d1.sum()
        if abs(g1) < tol and abs(g2) < tol:
            break
        det = h11 * h22 - h21 * h21
        da = -(h22 * g1 - h21 * g2) / det
        db = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * da + g2 * db
        step = 1.0
        while step >= min_step:
            na, nb = a + step * da, b + step * db
            nf = _platt_nll(f, t, na, nb)
            if nf < fval + 1e-4 * step * gd:
                a, b, fval = na, nb, nf
                break
            step /= 2.0
        else:
            break
    return float(a), float(b)


# --- linear SVM --------------------------------------------------------------

@dataclass(frozen=True)
class LinearSvmModel:
    mean: np.ndarray      # (d,) standardization offset
    scale: np.ndarray     # (d,) standardization divisor
    weights: np.ndarray   # (L, d) one-vs-rest weights on standardized features
    bias: np.ndarray      # (L,)
    platt_a: np.ndarray   # (L,)
    platt_b: np.ndarray   # (L,)
    fitted: np.ndarray    # (L,) bool
    c_param: float = 0.5

    @property
    def n_features(self) -> int:
        return self.mean.size

    @classmethod
    def fit(cls, X, y, c_param: float = 0.5, epochs: int = 20, seed: int = 0) -> "LinearSvmModel":
        """One-vs-rest hinge loss, ``lambda = 1 / (C * K)``, step ``1 / (lambda * t)``.

        Features are standardized first; the bias is learned as the weight of a
        constant feature. Sample order per epoch comes from ``seed``.
        """
        X, y = _check_training(X, y)
        counts = np.bincount(y, minlength=N_LABELS)
        fitted = counts > 0
        if fitted.sum() < 2:
            raise SingleClassTraining("need at least two classes to train an SVM")
        if c_param <= 0 or epochs < 1:
            raise ValueError("c_param and epochs must be positive")

        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        scale[scale < 1e-12] = 1.0
        Z = np.hstack([(X - mean) / scale, np.ones((X.shape[0], 1))])
        cls_idx = np.flatnonzero(fitted)
        T = np.where(y[:, None] == cls_idx[None, :], 1.0, -1.0)  # (K, n_fitted)

        k = Z.shape[0]
        lam = 1.0 / (c_param * k)
        radius = 1.0 / np.sqrt(lam)
        W = np.zeros((cls_idx.size, Z.shape[1]))
        rng = np.random.default_rng(seed)
        t = 0
        for _ in range(epochs):
            for i in rng.permutation(k):
                t += 1
                eta = 1.0 / (lam * t)
                z = Z[i]
                viol = T[i] * (W @ z) < 1.0
                W *= 1.0 - eta * lam
                if viol.any():
                    W[viol] += (eta * T[i, viol])[:, None] * z
                norms = np.linalg.norm(W, axis=1)
                over = norms > radius
                if over.any():
                    W[over] *= (radius / norms[over])[:, None]

        margins = Z @ W.T
        weights = np.zeros((N_LABELS, X.shape[1]))
        bias = np.zeros(N_LABELS)
        pa = np.zeros(N_LABELS)
        pb = np.zeros(N_LABELS)
        weights[cls_idx] = W[:, :-1]
        bias[cls_idx] = W[:, -1]
        for j, c in enumerate(cls_idx):
            pa[c], pb[c] = platt_fit(margins[:, j], y == c)
        return cls(mean, scale, weights, bias, pa, pb, fitted, float(c_param))

    def decision_function(self, X) -> np.ndarray:
        X, _ = _as_rows(X, self.n_features)
        return ((X - self.mean) / self.scale) @ self.weights.T + self.bias

    def predict_proba(self, X) -> np.ndarray:
        X, single = _as_rows(X, self.n_features)
        z = self.platt_a * self.decision_function(X) + self.platt_b
        logp = -np.logaddexp(0.0, z)  # log sigmoid(-z)
        logp[:, ~self.fitted] = -np.inf
        p = _normalize_log(logp)
        return p[0] if single else p


def svm_fit(X, y, c_param: float = 0.5, epochs: int = 20, seed: int = 0) -> LinearSvmModel:
    return LinearSvmModel.fit(X, y, c_param, epochs, seed)


def svm_predict_proba(model: LinearSvmModel, f) -> np.ndarray:
    return model.predict_proba(f)


CLASSIFIER_KINDS = ("lda", "svc")


def fit_classifier(kind: str, X, y, seed: int = 0, **kwargs):
    kind = kind.lower()
    if kind == "lda":
        return LdaModel.fit(X, y, **kwargs)
    if kind == "svc":
        return LinearSvmModel.fit(X, y, seed=seed, **kwargs)
    raise ValueError(f"unknown classifier kind {kind!r}; expected one of {CLASSIFIER_KINDS}")


# --- dataset scoring ---------------------------------------------------------

@dataclass(frozen=True)
class ChannelScores:
    """Per-point score blocks: ``values[k, l, c]`` is the probability of label
    ``l`` for point ``k`` from channel ``channels[c]``."""

    channels: tuple[Channel, ...]
    values: np.ndarray  # (K, L, C)

    def __len__(self) -> int:
        return self.values.shape[0]

    def channel(self, ch: Channel) -> np.ndarray:
        return self.values[:, :, self.channels.index(ch)]

    def subset(self, idx) -> "ChannelScores":
        return ChannelScores(self.channels, self.values[np.asarray(idx)])

    @property
    def modalities(self) -> tuple[Modality, ...]:
        return tuple(sorted({c.modality for c in self.channels}))

    @property
    def views(self) -> tuple[View, ...]:
        return tuple(sorted({c.view for c in self.channels if c.view is not None}))

    def view_block(self, view: View, modalities: Sequence[Modality]) -> np.ndarray:
        """(K, L, M) scores seen from one view; viewless pressure is reused in every view."""
        cols = [self.channels.index(Channel(m, None if m is Modality.P else view)) for m in modalities]
        return self.values[:, :, cols]

    def modality_scores(self, modality: Modality, views: Sequence[View] | None = None) -> np.ndarray:
        """(K, L) scores of one modality, averaged uniformly over its views."""
        cols = [i for i, c in enumerate(self.channels)
                if c.modality is modality and (c.view is None or views is None or c.view in views)]
        if not cols:
            raise MissingClassifier(f"no scores for modality {modality.code}")
        return self.values[:, :, cols].mean(axis=2)


def score_dataset(clfs: Mapping[Channel, ProbabilisticClassifier], ds: Dataset) -> ChannelScores:
    chans = ds.config.channels
    missing = [c.code for c in chans if c not in clfs]
    if missing:
        raise MissingClassifier(f"no classifier for channels {missing}")
    vals = np.stack([np.asarray(clfs[c].predict_proba(ds.feature_matrix(c))) for c in chans], axis=2)
    return ChannelScores(chans, vals)
