"""Leakage-free harmonization by pretending target values.

Unlabelled samples are harmonized once per candidate target value (every
class, or a grid over the training target range). A predictive model trained
on harmonized data scores each version, and a stack model learns to map the
row of scores to the final prediction. True targets of the samples being
predicted are never an input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import combat
from ._random import child_seed
from .combat import CombatConfig, CombatModel
from .data import Dataset, TaskKind, encode_target_covariate, folds_from_strata
from .errors import ConfigError, DataError, HarmonbenchError, ValidationError
from .predictors import (
    LOGISTIC,
    RF_CLASSIFIER,
    RIDGE,
    FittedPredictor,
    PredictorSpec,
    predictor_from_dict,
)
from .predictors import train as train_model


@dataclass(frozen=True)
class PrettyConfig:
    k_inner: int = 5
    pretend_values: tuple | None = None
    n_pretend: int = 10
    predictive_spec: PredictorSpec | None = None
    stack_spec: PredictorSpec | None = None
    combat_config: CombatConfig = field(default_factory=CombatConfig)
    use_covariates: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.k_inner < 2:
            raise ConfigError("k_inner must be at least 2")
        if self.pretend_values is None and self.n_pretend < 2:
            raise ConfigError("need at least 2 pretend values")
        if self.pretend_values is not None:
            object.__setattr__(self, "pretend_values", tuple(self.pretend_values))

    def resolved(self, task: TaskKind):
        """Fill unset model specs with the defaults for ``task``."""
        pred = self.predictive_spec
        stack = self.stack_spec
        if pred is None:
            pred = PredictorSpec(RF_CLASSIFIER if task.is_classification else RIDGE)
        if stack is None:
            stack = PredictorSpec(LOGISTIC if task.is_classification else RIDGE)
        if pred.is_classifier != task.is_classification or stack.is_classifier != task.is_classification:
            raise ConfigError("predictive and stack model kinds must match the task")
        return pred, stack

    def to_dict(self):
        return {
            "k_inner": self.k_inner,
            "pretend_values": None if self.pretend_values is None else list(self.pretend_values),
            "n_pretend": self.n_pretend,
            "predictive_spec": None if self.predictive_spec is None else self.predictive_spec.to_dict(),
            "stack_spec": None if self.stack_spec is None else self.stack_spec.to_dict(),
            "combat_config": vars(self.combat_config).copy(),
            "use_covariates": self.use_covariates,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown pretty option(s): {sorted(unknown)}")
        for key in ("predictive_spec", "stack_spec"):
            if d.get(key) is not None and not isinstance(d[key], PredictorSpec):
                d[key] = PredictorSpec.from_dict(d[key])
        if isinstance(d.get("combat_config"), dict):
            d["combat_config"] = CombatConfig.from_dict(d["combat_config"])
        return cls(**d)


@dataclass(frozen=True)
class ScoreMatrix:
    values: np.ndarray
    pretend_values: tuple

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.pretend_values):
            raise ValueError("score matrix needs one column per pretend value")


def enumerate_pretend_values(target, task: TaskKind, r: int = 10):
    if task.is_classification:
        return tuple(task.classes)
    if r < 2:
        raise ConfigError("need at least 2 pretend values for regression")
    y = np.asarray(target, dtype=float)
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise DataError("cannot pretend values over a constant regression target")
    return tuple(np.linspace(lo, hi, r).tolist())


def _pretend_block(value, m, task):
    return encode_target_covariate(np.full(m, value, dtype=object if task.is_classification else float), task)


def _column(scores, predictor, value, task):
    if not task.is_classification:
        return scores[:, 0]
    classes = predictor.classes
    if len(classes) == 2:
        return scores[:, 1]
    return scores[:, classes.index(value)]


def build_score_matrix(combat_model: CombatModel, predictor: FittedPredictor, X, sites, pretend_values,
                       task: TaskKind, covariates=None) -> ScoreMatrix:
    """Score ``X`` under each pretended target value, one column per value.

    Binary tasks use the positive-class probability, multi-class tasks the
    probability of the pretended class, regression the point prediction.
    """
    X = np.asarray(X, dtype=float)
    m = X.shape[0]
    extra = np.zeros((m, 0)) if covariates is None else np.asarray(covariates, dtype=float).reshape(m, -1)
    cols = []
    for v in pretend_values:
        cov = np.hstack([_pretend_block(v, m, task), extra])
        harmonized = combat.transform(combat_model, X, sites, cov)
        cols.append(_column(predictor.predict_scores(harmonized), predictor, v, task))
    return ScoreMatrix(np.column_stack(cols) if cols else np.zeros((m, 0)), tuple(pretend_values))


@dataclass
class PrettyModel:
    final_combat: CombatModel
    final_predictor: FittedPredictor
    stack: FittedPredictor
    pretend_values: tuple
    task: TaskKind
    use_covariates: bool = False
    oos_scores: ScoreMatrix | None = None

    def to_dict(self):
        return {
            "format": "harmonbench.pretty/1",
            "task": self.task.to_dict(),
            "pretend_values": list(self.pretend_values),
            "use_covariates": self.use_covariates,
            "final_combat": self.final_combat.to_dict(),
            "final_predictor": self.final_predictor.to_dict(),
            "stack": self.stack.to_dict(),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            final_combat=CombatModel.from_dict(d["final_combat"]),
            final_predictor=predictor_from_dict(d["final_predictor"]),
            stack=predictor_from_dict(d["stack"]),
            pretend_values=tuple(d["pretend_values"]),
            task=TaskKind.from_dict(d["task"]),
            use_covariates=d.get("use_covariates", False),
        )


def _inner_strata(train: Dataset):
    if train.task.is_classification:
        return np.char.add(np.char.add(train.sites, "\x1f"), train.target)
    return train.sites


def _check_inner_fold(train: Dataset, idx, fold):
    sites = train.sites[idx]
    for site in train.site_list:
        if np.sum(sites == site) < 2:
            raise ValidationError(f"inner fold {fold}: site {site} has fewer than 2 training rows")
    if train.task.is_classification:
        missing = sorted(set(train.target.tolist()) - set(train.target[idx].tolist()))
        if missing:
            raise ValidationError(f"inner fold {fold}: class(es) {missing} missing from training rows")


def _harmonizer_covariates(ds: Dataset, use_covariates, target=None):
    y = ds.target if target is None else target
    cov = encode_target_covariate(y, ds.task)
    if use_covariates and ds.covariates is not None:
        cov = np.hstack([cov, ds.covariates])
    return cov


def fit(train: Dataset, config: PrettyConfig) -> PrettyModel:
    task = train.task
    pred_spec, stack_spec = config.resolved(task)
    pretend = config.pretend_values or enumerate_pretend_values(train.target, task, config.n_pretend)
    if task.is_classification and set(map(str, pretend)) != set(task.classes):
        raise ConfigError("classification pretend values must be the full class list")
    classes = task.classes if task.is_classification else None

    n = train.n
    folds = folds_from_strata(_inner_strata(train), config.k_inner, 1, config.seed, stream="inner-folds")
    oos = np.full((n, len(pretend)), np.nan)
    extra = train.covariates if config.use_covariates else None
    for fold, (tr, va) in enumerate(folds):
        _check_inner_fold(train, tr, fold)
        inner = train.subset(tr)
        try:
            cov = _harmonizer_covariates(inner, config.use_covariates)
            cm = combat.fit(inner.features, inner.sites, cov, config.combat_config)
            harmonized = combat.transform(cm, inner.features, inner.sites, cov)
            model = train_predictor(pred_spec, harmonized, inner.target, classes, config.seed, "inner", fold)
            scores = build_score_matrix(cm, model, train.features[va], train.sites[va], pretend, task,
                                        None if extra is None else extra[va])
        except HarmonbenchError as exc:
            exc.args = (f"inner fold {fold}: {exc}",) + exc.args[1:]
            raise
        oos[va] = scores.values
    if not np.all(np.isfinite(oos)):
        raise DataError("out-of-sample score matrix has unfilled or non-finite entries")

    stack = train_predictor(stack_spec, oos, train.target, classes, config.seed, "stack")
    cov = _harmonizer_covariates(train, config.use_covariates)
    final_cm = combat.fit(train.features, train.sites, cov, config.combat_config)
    harmonized = combat.transform(final_cm, train.features, train.sites, cov)
    final_pred = train_predictor(pred_spec, harmonized, train.target, classes, config.seed, "final")
    return PrettyModel(final_cm, final_pred, stack, tuple(pretend), task, config.use_covariates,
                       ScoreMatrix(oos, tuple(pretend)))


def train_predictor(spec, X, y, classes, seed, *stream):
    return train_model(spec.with_seed(child_seed(seed, spec.seed, *stream)), X, y, classes)


def predict(model: PrettyModel, X, sites, covariates=None):
    """Predict targets for ``X``; there is deliberately no target argument.

    Returns ``(predictions, scores)`` where ``scores`` holds the stack model's
    class probabilities for classification and is ``None`` for regression.
    """
    if model.use_covariates and covariates is None:
        raise DataError("model was fit with extra covariates; pass them to predict")
    sm = build_score_matrix(model.final_combat, model.final_predictor, X, sites, model.pretend_values,
                            model.task, covariates if model.use_covariates else None)
    stack_scores = model.stack.predict_scores(sm.values)
    if model.task.is_classification:
        labels = np.asarray(model.stack.classes)[np.argmax(stack_scores, axis=1)]
        return labels, stack_scores
    return stack_scores[:, 0], None
