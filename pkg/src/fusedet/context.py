"""Whole-image presence prior and detection gating.

A bank of one-vs-rest linear classifiers predicts which categories appear
anywhere in an image; detections of a category whose presence score falls
below that category's threshold are removed (never re-scored). A threshold
of -inf disables a gate so it always passes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Sequence, Set

import numpy as np

from . import modelio
from .classify import train_svm
from .core import Detection

logger = logging.getLogger(__name__)


@dataclass
class PresencePrior:
    category_ids: List[int]
    weights: np.ndarray  # (N, dim)
    biases: np.ndarray  # (N,)
    thresholds: np.ndarray  # (N,), -inf disables the gate

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64)
        n = len(self.category_ids)
        if self.weights.ndim != 2 or self.weights.shape[0] != n:
            raise ValueError("one weight row per category required")
        if self.biases.shape != (n,) or self.thresholds.shape != (n,):
            raise ValueError("one bias and one threshold per category required")
        if np.any(np.isnan(self.thresholds)) or np.any(self.thresholds == np.inf):
            raise ValueError("thresholds must be finite or -inf")

    @property
    def n_categories(self) -> int:
        return len(self.category_ids)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def save(self, path) -> None:
        modelio.write_model(
            path,
            "presence-prior",
            {"n": str(self.n_categories), "dim": str(self.dim)},
            {
                "category_ids": np.asarray(self.category_ids, dtype=np.float64).reshape(1, -1),
                "weights": self.weights.reshape(self.n_categories, -1),
                "biases": self.biases.reshape(1, -1),
                "thresholds": self.thresholds.reshape(1, -1),
            },
        )

    @classmethod
    def load(cls, path) -> "PresencePrior":
        meta, arrays = modelio.read_model(path, "presence-prior")
        n = int(meta["n"])
        dim = int(meta["dim"])
        return cls(
            category_ids=[int(v) for v in arrays["category_ids"].ravel()[:n]],
            weights=arrays["weights"].reshape(n, dim),
            biases=arrays["biases"].ravel()[:n],
            thresholds=arrays["thresholds"].ravel()[:n],
        )


def train_presence_prior(
    image_features: np.ndarray,
    label_sets: Sequence[Set[int]],
    image_ids: Sequence[str],
    n_categories: int,
    lambda_: float,
    epochs: int,
    seed: int,
) -> PresencePrior:
    """One-vs-rest presence classifiers over a whole-image feature.

    Examples are sorted by image_id before training so the model does not
    depend on manifest order. Categories present in every image or absent
    from every image cannot be trained; they get a constant-sign stand-in
    model and a disabled gate (threshold -inf), with a warning for the
    absent case. All returned thresholds are -inf; calibrate them afterwards
    with select_thresholds.
    """
    X = np.asarray(image_features, dtype=np.float64)
    if X.ndim != 2 or not (X.shape[0] == len(label_sets) == len(image_ids)):
        raise ValueError("image_features, label_sets and image_ids must be parallel")
    if len(set(image_ids)) != len(image_ids):
        raise ValueError("image_ids must be unique")
    order = sorted(range(len(image_ids)), key=lambda i: image_ids[i])
    X = X[order]
    labels = [label_sets[i] for i in order]

    dim = X.shape[1]
    weights = np.zeros((n_categories, dim))
    biases = np.zeros(n_categories)
    for cid in range(n_categories):
        y = np.array([1 if cid in s else -1 for s in labels])
        if np.all(y > 0):
            logger.warning("category %d present in every training image; gate disabled", cid)
            biases[cid] = 1.0
            continue
        if np.all(y < 0):
            logger.warning("category %d absent from all training images; gate disabled", cid)
            biases[cid] = -1.0
            continue
        model = train_svm(X, y, lambda_, epochs, seed)
        weights[cid] = model.weights
        biases[cid] = model.bias
    return PresencePrior(
        category_ids=list(range(n_categories)),
        weights=weights,
        biases=biases,
        thresholds=np.full(n_categories, -np.inf),
    )


def presence_scores(image_feature: np.ndarray, prior: PresencePrior) -> np.ndarray:
    """Raw margins w_i . x + b_i for every category."""
    x = np.asarray(image_feature, dtype=np.float64)
    if prior.n_categories == 0:
        return np.zeros(0)
    if x.shape != (prior.dim,):
        raise ValueError(f"feature has shape {x.shape}, expected ({prior.dim},)")
    return prior.weights @ x + prior.biases


def select_thresholds(
    scores: np.ndarray,
    label_sets: Sequence[Set[int]],
    n_categories: int,
    recall: float = 0.95,
) -> np.ndarray:
    """Per-category gate values reaching the requested recall on held-out data.

    scores[i, c] is the presence score of category c on image i. For each
    category the threshold is the k-th largest score among images where the
    category is truly present, k = ceil(recall * positives), so keeping
    score >= threshold retains at least that fraction. Categories with no
    positive image get -inf (gate disabled).
    """
    S = np.asarray(scores, dtype=np.float64)
    if S.ndim != 2 or S.shape != (len(label_sets), n_categories):
        raise ValueError(f"scores must be ({len(label_sets)}, {n_categories}), got {S.shape}")
    if not 0.0 < recall <= 1.0:
        raise ValueError("recall must lie in (0, 1]")
    thresholds = np.full(n_categories, -np.inf)
    for cid in range(n_categories):
        positives = np.sort(S[[cid in s for s in label_sets], cid])[::-1]
        if len(positives) == 0:
            continue
        k = math.ceil(recall * len(positives))
        thresholds[cid] = positives[k - 1]
    return thresholds


def filter_detections(
    detections: Sequence[Detection],
    presence: np.ndarray,
    thresholds: np.ndarray,
) -> List[Detection]:
    """Keeps detections whose category's presence score clears its gate.

    Pure removal: output is a subsequence of the input, scores untouched.
    """
    presence = np.asarray(presence, dtype=np.float64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if presence.shape != thresholds.shape:
        raise ValueError("presence and thresholds must have the same length")
    n = presence.shape[0]
    out = []
    for det in detections:
        if not 0 <= det.category_id < n:
            raise ValueError(f"detection category {det.category_id} outside [0, {n})")
        if presence[det.category_id] >= thresholds[det.category_id]:
            out.append(det)
    return out
