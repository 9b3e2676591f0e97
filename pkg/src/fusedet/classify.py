"""Per-category linear SVM banks, score fusion, and the stacked fusion model.

Each feature channel gets one bank of N one-vs-rest classifiers. The three
N-score vectors are concatenated (cnn, hog, ifv) into a 3N-dim vector and a
second bank of N one-vs-rest classifiers is trained on those, after
per-dimension standardization whose constants travel with the model.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from . import modelio

_EPS = 1e-12


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.bias = float(self.bias)
        if self.weights.ndim != 1:
            raise ValueError("weights must be a 1-d vector")
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ValueError("model has non-finite entries")

    def score(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.weights.shape:
            raise ValueError(f"feature dim {x.shape} does not match model {self.weights.shape}")
        return float(self.weights @ x + self.bias)

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.weights.shape[0]:
            raise ValueError(f"feature matrix {X.shape} does not match model dim {self.weights.shape[0]}")
        return X @ self.weights + self.bias


def svm_objective(model: LinearModel, features: np.ndarray, labels: np.ndarray, lambda_: float) -> float:
    """lambda/2 * ||w||^2 + mean hinge loss. The bias is not regularized."""
    margins = labels * model.scores(features)
    hinge = np.maximum(0.0, 1.0 - margins)
    return 0.5 * lambda_ * float(model.weights @ model.weights) + float(hinge.mean())


def _optimal_bias(margins_wo_bias: np.ndarray, y: np.ndarray) -> float:
    """Exact minimizer of the mean hinge loss over the bias alone.

    With w fixed the loss is convex piecewise linear in b; its subgradient
    gains +1 at every breakpoint (1 - s_i for positives, -1 - s_i for
    negatives) and starts at -n_pos, so the minimum sits at the n_pos-th
    smallest breakpoint.
    """
    pos = y > 0
    breakpoints = np.concatenate([1.0 - margins_wo_bias[pos], -1.0 - margins_wo_bias[~pos]])
    n_pos = int(pos.sum())
    return float(np.partition(breakpoints, n_pos - 1)[n_pos - 1])


def train_svm(
    features: np.ndarray,
    labels: Sequence[int],
    lambda_: float,
    epochs: int,
    seed: int,
) -> LinearModel:
    """Primal subgradient descent on the regularized hinge objective.

    Steps are 1/(lambda * t) with t counting updates across epochs; each
    epoch visits the samples in a fresh seeded shuffle, and after every step
    the weight vector is projected onto the ball of radius 1/sqrt(lambda)
    that must contain the optimum. The bias is not regularized; since plain
    subgradient steps move it sluggishly, it is reset at each epoch end to
    its exact 1-d minimizer given the current weights (a coordinate-descent
    step on the same objective). The returned model is the best of the
    epoch-end iterates and the initial zero model, by objective value, so
    the per-epoch objective trajectory is non-increasing and the result is
    never worse than the zero vector.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("features and labels disagree on sample count")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be +1 or -1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("need at least one positive and one negative example")
    if lambda_ <= 0:
        raise ValueError("lambda must be positive")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")

    n, dim = X.shape
    rng = np.random.default_rng(seed)
    w = np.zeros(dim)
    b = 0.0
    best = LinearModel(weights=w.copy(), bias=b)
    best_obj = svm_objective(best, X, y, lambda_)

    radius = 1.0 / np.sqrt(lambda_)
    t = 1
    for _ in range(epochs):
        for i in rng.permutation(n):
            eta = 1.0 / (lambda_ * t)
            margin = y[i] * (w @ X[i] + b)
            w *= 1.0 - eta * lambda_
            if margin < 1.0:
                w += eta * y[i] * X[i]
                b += eta * y[i]
            norm = np.sqrt(w @ w)
            if norm > radius:
                w *= radius / norm
            t += 1
        b = _optimal_bias(X @ w, y)
        candidate = LinearModel(weights=w.copy(), bias=b)
        obj = svm_objective(candidate, X, y, lambda_)
        if obj < best_obj:
            best, best_obj = candidate, obj
    return best


@dataclass
class SvmBank:
    """One-vs-rest models for every category on a single feature channel."""

    channel: str
    category_ids: List[int]
    weights: np.ndarray  # (N, dim)
    biases: np.ndarray  # (N,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] != len(self.category_ids):
            raise ValueError("one weight row per category required")
        if self.biases.shape != (len(self.category_ids),):
            raise ValueError("one bias per category required")

    @property
    def n_categories(self) -> int:
        return len(self.category_ids)

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    @classmethod
    def from_models(cls, channel: str, models: Dict[int, LinearModel]) -> "SvmBank":
        ids = sorted(models)
        dims = {models[i].weights.shape[0] for i in ids}
        if len(dims) != 1:
            raise ValueError(f"models disagree on feature dim: {sorted(dims)}")
        return cls(
            channel=channel,
            category_ids=ids,
            weights=np.stack([models[i].weights for i in ids]),
            biases=np.array([models[i].bias for i in ids]),
        )

    def model(self, category_id: int) -> LinearModel:
        row = self.category_ids.index(category_id)
        return LinearModel(weights=self.weights[row].copy(), bias=float(self.biases[row]))

    def save(self, path) -> None:
        modelio.write_model(
            path,
            "svm-bank",
            {"channel": self.channel, "n": str(self.n_categories), "dim": str(self.dim)},
            {
                "category_ids": np.asarray(self.category_ids, dtype=np.float64)[None, :],
                "weights": self.weights,
                "biases": self.biases[None, :],
            },
        )

    @classmethod
    def load(cls, path) -> "SvmBank":
        meta, arrays = modelio.read_model(path, "svm-bank")
        return cls(
            channel=meta.get("channel", ""),
            category_ids=[int(v) for v in arrays["category_ids"][0]],
            weights=arrays["weights"],
            biases=arrays["biases"][0],
        )


def score_bank(feature: np.ndarray, bank: SvmBank) -> np.ndarray:
    """Scores of one feature vector under every model in the bank."""
    x = np.asarray(feature, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != bank.dim:
        raise ValueError(f"feature dim {x.shape} does not match bank dim {bank.dim}")
    return bank.weights @ x + bank.biases


def fuse_scores(cnn: np.ndarray, hog: np.ndarray, ifv: np.ndarray) -> np.ndarray:
    parts = [np.asarray(v, dtype=np.float64).ravel() for v in (cnn, hog, ifv)]
    n = parts[0].shape[0]
    if any(p.shape[0] != n for p in parts):
        raise ValueError(
            f"channel score lengths differ: {[p.shape[0] for p in parts]}"
        )
    return np.concatenate(parts)


def mine_hard_negatives(model: LinearModel, negatives: np.ndarray, count: int) -> np.ndarray:
    """Indices of the highest-scoring negatives (the confident mistakes)."""
    scores = model.scores(negatives)
    order = np.lexsort((np.arange(len(scores)), -scores))
    return order[: max(0, count)]


@dataclass
class FusionModel:
    """Stacked one-vs-rest classifiers over standardized 3N score vectors."""

    category_ids: List[int]
    weights: np.ndarray  # (N, 3N)
    biases: np.ndarray  # (N,)
    feature_means: np.ndarray  # (3N,)
    feature_scales: np.ndarray  # (3N,), strictly positive

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        self.feature_means = np.asarray(self.feature_means, dtype=np.float64)
        self.feature_scales = np.asarray(self.feature_scales, dtype=np.float64)
        n = len(self.category_ids)
        if self.weights.shape != (n, 3 * n):
            raise ValueError(f"fusion weights must be (N, 3N), got {self.weights.shape}")
        if np.any(self.feature_scales <= 0):
            raise ValueError("standardization scales must be positive")

    @property
    def n_categories(self) -> int:
        return len(self.category_ids)

    def standardize(self, fused: np.ndarray) -> np.ndarray:
        return (np.asarray(fused, dtype=np.float64) - self.feature_means) / self.feature_scales

    def save(self, path) -> None:
        modelio.write_model(
            path,
            "fusion",
            {"n": str(self.n_categories)},
            {
                "category_ids": np.asarray(self.category_ids, dtype=np.float64)[None, :],
                "weights": self.weights,
                "biases": self.biases[None, :],
                "feature_means": self.feature_means[None, :],
                "feature_scales": self.feature_scales[None, :],
            },
        )

    @classmethod
    def load(cls, path) -> "FusionModel":
        _, arrays = modelio.read_model(path, "fusion")
        return cls(
            category_ids=[int(v) for v in arrays["category_ids"][0]],
            weights=arrays["weights"],
            biases=arrays["biases"][0],
            feature_means=arrays["feature_means"][0],
            feature_scales=arrays["feature_scales"][0],
        )


def train_fusion(
    fused_vectors: np.ndarray,
    category_labels: Sequence[int],
    lambda_: float,
    epochs: int,
    seed: int,
    category_ids: Sequence[int] = None,
) -> FusionModel:
    """One train_svm per category on standardized fused score vectors.

    Labels are positions into category_ids (defaults to 0..N-1 with N read
    off the 3N-wide input); -1 marks background samples, negative for every
    category. Per-category trainer errors are re-raised with the category id.
    """
    X = np.asarray(fused_vectors, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("fused_vectors must be a 2-d array")
    if X.shape[1] % 3 != 0:
        raise ValueError(f"fused dim {X.shape[1]} is not a multiple of 3")
    n_cat = X.shape[1] // 3
    if category_ids is None:
        category_ids = list(range(n_cat))
    if len(category_ids) != n_cat:
        raise ValueError(f"expected {n_cat} category ids, got {len(category_ids)}")
    labels = np.asarray(category_labels, dtype=np.int64)
    if labels.shape != (X.shape[0],):
        raise ValueError("one label per sample required")
    if labels.min() < -1 or labels.max() >= n_cat:
        raise ValueError(f"labels must lie in [-1, {n_cat})")

    means = X.mean(axis=0)
    stds = X.std(axis=0)
    scales = np.where(stds > _EPS, stds, 1.0)
    Z = (X - means) / scales

    weights = np.empty((n_cat, 3 * n_cat))
    biases = np.empty(n_cat)
    for pos in range(n_cat):
        y = np.where(labels == pos, 1, -1)
        try:
            model = train_svm(Z, y, lambda_, epochs, seed)
        except ValueError as exc:
            raise ValueError(f"category {category_ids[pos]}: {exc}") from None
        weights[pos] = model.weights
        biases[pos] = model.bias
    return FusionModel(
        category_ids=list(category_ids),
        weights=weights,
        biases=biases,
        feature_means=means,
        feature_scales=scales,
    )


def final_score(fused: np.ndarray, fusion: FusionModel, category: int) -> float:
    """Detection score of one category; this value enters NMS and gating."""
    if not 0 <= category < fusion.n_categories:
        raise ValueError(f"category index {category} out of range [0, {fusion.n_categories})")
    v = np.asarray(fused, dtype=np.float64)
    if v.shape != (3 * fusion.n_categories,):
        raise ValueError(f"fused vector has shape {v.shape}, expected ({3 * fusion.n_categories},)")
    return float(fusion.weights[category] @ fusion.standardize(v) + fusion.biases[category])


def final_scores(fused: np.ndarray, fusion: FusionModel) -> np.ndarray:
    """All-category scores in category_ids order."""
    v = np.asarray(fused, dtype=np.float64)
    if v.shape != (3 * fusion.n_categories,):
        raise ValueError(f"fused vector has shape {v.shape}, expected ({3 * fusion.n_categories},)")
    return fusion.weights @ fusion.standardize(v) + fusion.biases
