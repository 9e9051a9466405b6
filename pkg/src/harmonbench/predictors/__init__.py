"""Predictive and stack models behind one train / predict_scores contract."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .._random import substream
from ..errors import ConfigError, DataError
from . import _cart
from .linear import fit_logistic, fit_ridge, logistic_proba

RF_CLASSIFIER = "random_forest_classifier"
RF_REGRESSOR = "random_forest_regressor"
LOGISTIC = "logistic"
RIDGE = "ridge"

KINDS = (RF_CLASSIFIER, RF_REGRESSOR, LOGISTIC, RIDGE)
CLASSIFIERS = (RF_CLASSIFIER, LOGISTIC)

_DEFAULTS = {
    RF_CLASSIFIER: {
        "n_estimators": 100,
        "max_depth": None,
        "min_samples_split": 2,
        "min_samples_leaf": 1,
        "max_features": "sqrt",
        "bootstrap": True,
    },
    RF_REGRESSOR: {
        "n_estimators": 100,
        "max_depth": None,
        "min_samples_split": 2,
        "min_samples_leaf": 1,
        "max_features": "all",
        "bootstrap": True,
    },
    LOGISTIC: {"C": 1.0, "gtol": 1e-6, "max_iter": 200},
    RIDGE: {"alpha": 1.0},
}


def _check_hyper(kind, h):
    if kind in (RF_CLASSIFIER, RF_REGRESSOR):
        if int(h["n_estimators"]) < 1:
            raise ConfigError("n_estimators must be >= 1")
        if h["max_depth"] is not None and int(h["max_depth"]) < 1:
            raise ConfigError("max_depth must be >= 1 or None")
        if int(h["min_samples_split"]) < 2:
            raise ConfigError("min_samples_split must be >= 2")
        if int(h["min_samples_leaf"]) < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        mf = h["max_features"]
        if not (mf in ("sqrt", "log2", "all") or isinstance(mf, (int, float)) and mf > 0):
            raise ConfigError(f"invalid max_features {mf!r}")
    elif kind == LOGISTIC:
        if not h["C"] > 0:
            raise ConfigError("logistic C must be positive")
    elif kind == RIDGE:
        if h["alpha"] < 0:
            raise ConfigError("ridge alpha must be non-negative")


@dataclass(frozen=True)
class PredictorSpec:
    kind: str
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown predictor kind {self.kind!r}; expected one of {list(KINDS)}")
        unknown = set(self.hyperparameters) - set(_DEFAULTS[self.kind])
        if unknown:
            raise ConfigError(f"unknown hyperparameter(s) for {self.kind}: {sorted(unknown)}")
        merged = {**_DEFAULTS[self.kind], **self.hyperparameters}
        _check_hyper(self.kind, merged)
        object.__setattr__(self, "hyperparameters", merged)

    @property
    def is_classifier(self):
        return self.kind in CLASSIFIERS

    def with_seed(self, seed):
        return PredictorSpec(self.kind, dict(self.hyperparameters), int(seed))

    def to_dict(self):
        return {"kind": self.kind, "hyperparameters": dict(self.hyperparameters), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        if "kind" not in d:
            raise ConfigError("predictor spec needs a 'kind'")
        return cls(d["kind"], dict(d.get("hyperparameters", {})), int(d.get("seed", 0)))


class FittedPredictor:
    kind: str
    n_features: int
    classes: tuple = ()

    def _check_width(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} input columns, got shape {X.shape}")
        return X

    def predict_scores(self, X):
        raise NotImplementedError

    def predict(self, X):
        s = self.predict_scores(X)
        if self.classes:
            return np.asarray(self.classes)[np.argmax(s, axis=1)]
        return s[:, 0]


class RandomForest(FittedPredictor):
    def __init__(self, kind, n_features, classes, offsets, feature, threshold, left, right, value):
        self.kind = kind
        self.n_features = int(n_features)
        self.classes = tuple(classes)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float).reshape(len(self.feature), -1)

    @property
    def n_trees(self):
        return len(self.offsets) - 1

    def predict_scores(self, X):
        X = np.ascontiguousarray(self._check_width(X))
        return _cart.predict_forest(X, self.offsets, self.feature, self.threshold, self.left, self.right, self.value)

    def to_dict(self):
        return {
            "kind": self.kind,
            "n_features": self.n_features,
            "classes": list(self.classes),
            "offsets": self.offsets.tolist(),
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], d["n_features"], d["classes"], d["offsets"], d["feature"],
                   d["threshold"], d["left"], d["right"], d["value"])


class Logistic(FittedPredictor):
    kind = LOGISTIC

    def __init__(self, coef, classes, n_features):
        self.coef = np.asarray(coef, dtype=float)
        self.classes = tuple(classes)
        self.n_features = int(n_features)

    def predict_scores(self, X):
        return logistic_proba(self.coef, self._check_width(X))

    def to_dict(self):
        return {"kind": self.kind, "coef": self.coef.tolist(), "classes": list(self.classes),
                "n_features": self.n_features}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["coef"], dtype=float).reshape(-1, d["n_features"] + 1), d["classes"], d["n_features"])


class Ridge(FittedPredictor):
    kind = RIDGE

    def __init__(self, weights, intercept):
        self.weights = np.asarray(weights, dtype=float)
        self.intercept = float(intercept)
        self.n_features = len(self.weights)

    def predict_scores(self, X):
        X = self._check_width(X)
        return (X @ self.weights + self.intercept)[:, None]

    def to_dict(self):
        return {"kind": self.kind, "weights": self.weights.tolist(), "intercept": self.intercept}

    @classmethod
    def from_dict(cls, d):
        return cls(d["weights"], d["intercept"])


def _n_try(max_features, p):
    if max_features == "sqrt":
        return max(1, int(math.sqrt(p)))
    if max_features == "log2":
        return max(1, int(math.log2(p)))
    if max_features == "all":
        return p
    if isinstance(max_features, float) and max_features <= 1.0:
        return max(1, int(max_features * p))
    return min(p, int(max_features))


def _canonical_order(X, y):
    # lexsort treats the last key as primary: column 0 first, target last
    keys = [np.asarray(y)] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def _train_forest(spec, X, y, classes):
    h = spec.hyperparameters
    classification = spec.kind == RF_CLASSIFIER
    order = _canonical_order(X, y)
    X = np.ascontiguousarray(X[order])
    y = y[order]
    n, p = X.shape
    if classification:
        index = {c: i for i, c in enumerate(classes)}
        y_cls = np.array([index[v] for v in y.tolist()], dtype=np.int64)
        y_reg = np.zeros(1)
        n_classes = len(classes)
    else:
        y_cls = np.zeros(1, dtype=np.int64)
        y_reg = y.astype(float)
        n_classes = 1
    n_try = _n_try(h["max_features"], p)
    max_depth = -1 if h["max_depth"] is None else int(h["max_depth"])
    rng = substream(spec.seed, "forest")
    tree_seeds = rng.integers(0, 2**31 - 1, size=int(h["n_estimators"]))
    parts = []
    for t, ts in enumerate(tree_seeds):
        boot = substream(spec.seed, "bootstrap", t)
        idx = boot.integers(0, n, size=n) if h["bootstrap"] else np.arange(n)
        idx = np.sort(idx).astype(np.int64)
        parts.append(_cart.build_tree(X, y_cls, y_reg, idx, classification, n_classes, n_try,
                                      int(h["min_samples_split"]), int(h["min_samples_leaf"]),
                                      max_depth, int(ts)))
    sizes = [len(part[0]) for part in parts]
    offsets = np.r_[0, np.cumsum(sizes)]
    return RandomForest(
        spec.kind, p, classes if classification else (), offsets,
        np.concatenate([q[0] for q in parts]),
        np.concatenate([q[1] for q in parts]),
        np.concatenate([q[2] for q in parts]),
        np.concatenate([q[3] for q in parts]),
        np.concatenate([q[4] for q in parts]),
    )


def train(spec: PredictorSpec, X, y, classes=None) -> FittedPredictor:
    """Fit the model described by ``spec`` on ``X`` (n x p) and targets ``y``.

    For classifiers ``classes`` fixes the score-column order; it defaults to
    the sorted distinct labels of ``y`` and may list classes absent from ``y``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("X must be a 2-d matrix")
    n = X.shape[0]
    if n < 2:
        raise DataError("need at least 2 training rows")
    if not np.all(np.isfinite(X)):
        raise DataError("training inputs contain non-finite values")
    if spec.is_classifier:
        y = np.asarray(y).astype(str)
        present = sorted(set(y.tolist()))
        if len(present) < 2:
            raise DataError(f"classifier training needs at least 2 classes, got {present}")
        classes = tuple(sorted({str(c) for c in classes})) if classes is not None else tuple(present)
        missing = set(present) - set(classes)
        if missing:
            raise DataError(f"training labels {sorted(missing)} not in class list")
    else:
        y = np.asarray(y, dtype=float)
        if not np.all(np.isfinite(y)):
            raise DataError("regression target contains non-finite values")
    if y.shape != (n,):
        raise DataError("need one target per training row")

    if spec.kind in (RF_CLASSIFIER, RF_REGRESSOR):
        return _train_forest(spec, X, y, classes)
    if spec.kind == LOGISTIC:
        h = spec.hyperparameters
        if len(classes) == 2:
            Y = (y == classes[1]).astype(float)[:, None]
        else:
            Y = (y[:, None] == np.asarray(classes)[None, :]).astype(float)
        coef, _ = fit_logistic(X, Y, C=float(h["C"]), gtol=float(h["gtol"]), max_iter=int(h["max_iter"]))
        return Logistic(coef, classes, X.shape[1])
    w, b = fit_ridge(X, y, float(spec.hyperparameters["alpha"]))
    return Ridge(w, b)


def predict_scores(model: FittedPredictor, X) -> np.ndarray:
    return model.predict_scores(X)


def predictor_from_dict(d) -> FittedPredictor:
    kind = d["kind"]
    if kind in (RF_CLASSIFIER, RF_REGRESSOR):
        return RandomForest.from_dict(d)
    if kind == LOGISTIC:
        return Logistic.from_dict(d)
    if kind == RIDGE:
        return Ridge.from_dict(d)
    raise ConfigError(f"unknown predictor kind {kind!r}")
