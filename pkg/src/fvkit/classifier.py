"""One-vs-rest linear SVMs trained by dual coordinate descent, and evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import FisherVector, SvmModel
from .errors import DimensionError


@dataclass
class SvmTrainLog:
    """Per-class training traces; ``dual_objective`` is the minimised form 0.5||w||^2 - sum(alpha)."""

    epochs: list = field(default_factory=list)
    dual_objective: list = field(default_factory=list)
    duality_gap: list = field(default_factory=list)


@dataclass(frozen=True)
class Prediction:
    labels: np.ndarray
    scores: np.ndarray
    classes: np.ndarray


def _as_rows(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        X = np.asarray(vectors, dtype=np.float64)
    else:
        X = np.stack([v.values if isinstance(v, FisherVector) else np.asarray(v, dtype=np.float64).ravel()
                      for v in vectors])
    if X.ndim != 2:
        raise DimensionError(f"expected a 2-D stack of vectors, got shape {X.shape}")
    return X


def _augment(X):
    return np.ascontiguousarray(np.hstack([X, np.ones((X.shape[0], 1))]))


def primal_objective(w, Xa, y, C):
    margins = 1.0 - y * (Xa @ w)
    return 0.5 * float(w @ w) + C * float(np.maximum(margins, 0.0).sum())


def _train_binary(Xa, y, C, epochs, tol, rng, kern):
    n = Xa.shape[0]
    alpha = np.zeros(n)
    w = np.zeros(Xa.shape[1])
    qdiag = np.einsum("ij,ij->i", Xa, Xa)
    trace = []
    for ep in range(epochs):
        perm = rng.permutation(n).astype(np.int64)
        pg_max, pg_min = kern.svm_dual_epoch(Xa, y, alpha, w, qdiag, perm, C)
        trace.append(0.5 * float(w @ w) - float(alpha.sum()))
        if pg_max - pg_min < tol:
            break
    gap = primal_objective(w, Xa, y, C) + trace[-1]
    return w, trace, gap, ep + 1


def svm_train(vectors, labels, C: float = 1.0, epochs: int = 1000, seed: int = 0,
              tol: float = 1e-4, return_log=False, backend=None):
    """Train one L1-loss (hinge) SVM per class against the rest.

    The bias is learned as the weight of an appended constant feature 1.
    Training stops when the spread of projected gradients in an epoch falls
    below ``tol``. The final primal-dual gap of every class is stored in the model.
    """
    X = _as_rows(vectors)
    y = np.asarray(labels, dtype=np.int64).ravel()
    if X.shape[0] != y.shape[0]:
        raise DimensionError(f"{X.shape[0]} vectors but {y.shape[0]} labels")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("need at least two classes to train a classifier")
    if C <= 0:
        raise ValueError(f"C must be positive, got {C}")
    kern = _kernels.get_backend(backend)
    Xa = _augment(X)
    rng = np.random.default_rng(seed)
    W = np.zeros((classes.size, Xa.shape[1]))
    gaps = np.zeros(classes.size)
    info = SvmTrainLog()
    for c_idx, c in enumerate(classes):
        yc = np.where(y == c, 1.0, -1.0)
        w, trace, gap, n_ep = _train_binary(Xa, yc, C, epochs, tol, rng, kern)
        W[c_idx] = w
        gaps[c_idx] = gap
        info.epochs.append(n_ep)
        info.dual_objective.append(trace)
        info.duality_gap.append(gap)
    model = SvmModel(W, classes, gaps)
    return (model, info) if return_log else model


def svm_scores(model: SvmModel, vectors) -> np.ndarray:
    X = _as_rows(vectors)
    if X.shape[1] != model.n_features:
        raise DimensionError(f"vectors have length {X.shape[1]}, model expects {model.n_features}")
    return X @ model.weights[:, :-1].T + model.weights[:, -1]


def svm_predict(model: SvmModel, vectors) -> Prediction:
    """Arg-max over one-vs-rest scores; ties go to the lowest class id."""
    S = svm_scores(model, vectors)
    return Prediction(labels=model.classes[np.argmax(S, axis=1)], scores=S, classes=model.classes)


def accuracy(predicted, labels) -> float:
    predicted = np.asarray(predicted).ravel()
    labels = np.asarray(labels).ravel()
    if predicted.size == 0:
        raise ValueError("cannot evaluate an empty prediction set")
    if predicted.shape != labels.shape:
        raise DimensionError(f"{predicted.size} predictions but {labels.size} labels")
    return float(np.mean(predicted == labels))


def average_precision(scores, relevant) -> float:
    """Non-interpolated AP: mean over positives of the precision at their rank.

    Items are ranked by decreasing score; equal scores keep input order.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    relevant = np.asarray(relevant, dtype=bool).ravel()
    if scores.size == 0:
        raise ValueError("cannot evaluate an empty ranking")
    if scores.shape != relevant.shape:
        raise DimensionError(f"{scores.size} scores but {relevant.size} relevance flags")
    n_pos = int(relevant.sum())
    if n_pos == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    hits = relevant[order]
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


def mean_average_precision(scores, labels, classes) -> float:
    """Mean over classes of the AP obtained by ranking all items by that class's score."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.asarray(labels).ravel()
    aps = [average_precision(scores[:, j], labels == c) for j, c in enumerate(classes)]
    return float(np.mean(aps))


def evaluate(prediction: Prediction, labels, metric: str = "accuracy") -> float:
    """``metric`` is ``"accuracy"`` or ``"map"`` (mean average precision)."""
    labels = np.asarray(labels).ravel()
    if labels.size == 0:
        raise ValueError("cannot evaluate an empty label set")
    if metric == "accuracy":
        return accuracy(prediction.labels, labels)
    if metric in ("map", "mean-average-precision"):
        if prediction.scores.shape[0] != labels.size:
            raise DimensionError(f"{prediction.scores.shape[0]} score rows but {labels.size} labels")
        return mean_average_precision(prediction.scores, labels, prediction.classes)
    raise ValueError(f"unknown metric {metric!r}")
