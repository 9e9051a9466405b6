"""The five harmonization schemes and the cross-validated experiment runner.

Schemes only ever see a :class:`FoldView`. Test-fold targets are reachable
through :meth:`FoldView.reveal_test_targets` alone, which the leakage-prone
TTL scheme uses by design. Independently of that, every ComBat transform is
observed: a call that carries the true target encoding of test rows is
counted against the running scheme, and leakage-free schemes fail loudly if
their count is ever non-zero.
"""

from __future__ import annotations

import contextvars
import csv
import io
import json
import logging
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np

from . import combat, pretty
from ._random import child_seed
from .combat import CombatConfig
from .data import Dataset, FoldPlan, TaskKind, encode_target_covariate, make_folds
from .errors import ConfigError, HarmonbenchError, ValidationError
from .metrics import CLASSIFICATION_METRICS, REGRESSION_METRICS, classification_metrics, regression_metrics
from .predictors import RF_CLASSIFIER, RIDGE, PredictorSpec, train

log = logging.getLogger(__name__)

UNHARMONIZED = "unharmonized"
WDH = "wdh"
TTL = "ttl"
NO_TARGET = "notarget"
PRETTY = "pretty"

SCHEMES = (UNHARMONIZED, PRETTY, WDH, TTL, NO_TARGET)
LEAKY = frozenset({WDH, TTL})
DISPLAY = {
    UNHARMONIZED: "Unharmonized",
    PRETTY: "PrettYharmonize",
    WDH: "WDH",
    TTL: "TTL",
    NO_TARGET: "No Target",
}


@dataclass(frozen=True)
class Scheme:
    name: str
    pretty: pretty.PrettyConfig | None = None

    def __post_init__(self):
        if self.name not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.name!r}; expected one of {list(SCHEMES)}")
        if self.name == PRETTY and self.pretty is None:
            object.__setattr__(self, "pretty", pretty.PrettyConfig())
        if self.name != PRETTY and self.pretty is not None:
            raise ConfigError("only the pretty scheme takes a PrettyConfig")

    @property
    def leakage(self):
        return self.name in LEAKY


@dataclass(frozen=True)
class ExperimentConfig:
    scheme: Scheme
    predictor_spec: PredictorSpec | None = None
    k: int = 5
    repeats: int = 1
    stratify: bool | None = None
    seed: int = 0
    combat_config: CombatConfig = field(default_factory=CombatConfig)
    use_covariates: bool = False

    def resolved_predictor(self, task: TaskKind):
        spec = self.predictor_spec
        if spec is None:
            spec = PredictorSpec(RF_CLASSIFIER if task.is_classification else RIDGE)
        if spec.is_classifier != task.is_classification:
            raise ConfigError(f"predictor {spec.kind} does not match a {task.kind} task")
        return spec

    def resolved_stratify(self, task: TaskKind):
        if self.stratify is None:
            return task.is_classification
        return self.stratify

    @property
    def fold_key(self):
        return (self.k, self.repeats, self.seed)


# ---------------------------------------------------------------- audit ----

_scope = contextvars.ContextVar("harmonbench_audit_scope", default=None)
audit_counts = Counter()


class _AuditScope:
    def __init__(self, scheme, features, truth):
        self.scheme = scheme
        self.rows = {features[i].tobytes(): i for i in range(features.shape[0])}
        self.truth = truth
        self.hits = 0


def _observe(Y, sites, cov):
    scope = _scope.get()
    if scope is None:
        return
    t = scope.truth.shape[1]
    if cov.shape[1] < t or Y.shape[0] == 0:
        return
    found = [(j, scope.rows.get(Y[j].tobytes())) for j in range(Y.shape[0])]
    found = [(j, i) for j, i in found if i is not None]
    if len(found) < 2:
        return
    call_rows = np.array([j for j, _ in found])
    test_rows = np.array([i for _, i in found])
    truth = scope.truth[test_rows]
    # a constant block (e.g. one pretended value for every row) carries no
    # information about the true labels
    if np.all(truth == truth[0]):
        return
    if np.array_equal(cov[call_rows, :t], truth):
        scope.hits += 1
        audit_counts[scope.scheme] += 1


combat.transform_observers.append(_observe)


@contextmanager
def audit_scope(scheme, test_features, test_target, task):
    scope = _AuditScope(scheme, np.ascontiguousarray(test_features, dtype=float),
                        encode_target_covariate(test_target, task))
    token = _scope.set(scope)
    try:
        yield scope
    finally:
        _scope.reset(token)


# ------------------------------------------------------------ fold view ----


class FoldView:
    """What a scheme may see of one fold."""

    def __init__(self, train_set: Dataset, test_features, test_sites, test_covariates, test_target, seed):
        self.train = train_set
        self.test_features = test_features
        self.test_sites = test_sites
        self.test_covariates = test_covariates
        self.seed = seed
        self._test_target = test_target
        self.revealed = 0

    def reveal_test_targets(self):
        """Hand out the true test targets. Only leakage-prone schemes call this."""
        self.revealed += 1
        return self._test_target


def _covariates(target_block, extra):
    blocks = [b for b in (target_block, extra) if b is not None]
    if not blocks:
        return None
    return np.hstack(blocks)


def _extra(ds_cov, cfg):
    return ds_cov if cfg.use_covariates else None


def _fit_predict(spec, X_train, y_train, X_test, task, seed):
    model = train(spec.with_seed(seed), X_train, y_train, task.classes if task.is_classification else None)
    scores = model.predict_scores(X_test)
    if task.is_classification:
        return np.asarray(model.classes)[np.argmax(scores, axis=1)], scores[:, -1]
    return scores[:, 0], None


def _run_unharmonized(view: FoldView, cfg, spec):
    tr = view.train
    return _fit_predict(spec, tr.features, tr.target, view.test_features, tr.task, view.seed)


def _run_wdh(view: FoldView, cfg, spec):
    # features were harmonized once on the pooled data before the fold loop
    return _run_unharmonized(view, cfg, spec)


def _run_ttl(view: FoldView, cfg, spec):
    tr = view.train
    cov_train = _covariates(encode_target_covariate(tr.target, tr.task), _extra(tr.covariates, cfg))
    model = combat.fit(tr.features, tr.sites, cov_train, cfg.combat_config)
    h_train = combat.transform(model, tr.features, tr.sites, cov_train)
    test_target = view.reveal_test_targets()
    cov_test = _covariates(encode_target_covariate(test_target, tr.task), _extra(view.test_covariates, cfg))
    h_test = combat.transform(model, view.test_features, view.test_sites, cov_test)
    return _fit_predict(spec, h_train, tr.target, h_test, tr.task, view.seed)


def _run_notarget(view: FoldView, cfg, spec):
    tr = view.train
    cov_train = _covariates(None, _extra(tr.covariates, cfg))
    model = combat.fit(tr.features, tr.sites, cov_train, cfg.combat_config)
    h_train = combat.transform(model, tr.features, tr.sites, cov_train)
    cov_test = _covariates(None, _extra(view.test_covariates, cfg))
    h_test = combat.transform(model, view.test_features, view.test_sites, cov_test)
    return _fit_predict(spec, h_train, tr.target, h_test, tr.task, view.seed)


def _run_pretty(view: FoldView, cfg, spec):
    pc = cfg.scheme.pretty
    if pc.predictive_spec is None:
        pc = replace(pc, predictive_spec=spec)
    pc = replace(pc, seed=view.seed, combat_config=cfg.combat_config, use_covariates=cfg.use_covariates)
    model = pretty.fit(view.train, pc)
    labels, stack_scores = pretty.predict(model, view.test_features, view.test_sites,
                                          view.test_covariates if cfg.use_covariates else None)
    if view.train.task.is_classification:
        return labels, stack_scores[:, -1]
    return labels, None


_RUNNERS = {
    UNHARMONIZED: _run_unharmonized,
    WDH: _run_wdh,
    TTL: _run_ttl,
    NO_TARGET: _run_notarget,
    PRETTY: _run_pretty,
}


# --------------------------------------------------------------- report ----


@dataclass
class FoldResult:
    fold: int
    repeat: int
    metrics: dict
    seconds: float
    test_index: np.ndarray
    predictions: np.ndarray
    scores: np.ndarray | None


@dataclass
class ExperimentReport:
    scheme: str
    leakage: bool
    seed: int
    task: str
    folds: list
    aggregate: dict
    audit_test_target_transforms: int = 0

    def to_dict(self):
        return {
            "scheme": self.scheme,
            "leakage": self.leakage,
            "seed": self.seed,
            "task": self.task,
            "folds": [
                {"fold": f.fold, "repeat": f.repeat, "metrics": f.metrics, "seconds": round(f.seconds, 4)}
                for f in self.folds
            ],
            "aggregate": self.aggregate,
            "audit_test_target_transforms": self.audit_test_target_transforms,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _metrics(task, y_true, pred, scores):
    if task.is_classification:
        recs = classification_metrics(y_true, pred, scores, task.positive_class)
    else:
        recs = regression_metrics(y_true, pred)
    return {r.name: r.value for r in recs}


def _check_fold(dataset, tr, fold):
    train_sites = set(dataset.sites[tr].tolist())
    lost = sorted(set(dataset.site_list) - train_sites)
    if lost:
        raise ValidationError(f"fold {fold}: site(s) {lost} missing from the training side")
    if dataset.task.is_classification:
        lost = sorted(set(dataset.task.classes) - set(dataset.target[tr].tolist()))
        if lost:
            raise ValidationError(f"fold {fold}: class(es) {lost} missing from the training side")


def run_experiment(dataset: Dataset, config: ExperimentConfig, plan: FoldPlan | None = None) -> ExperimentReport:
    """Cross-validate one scheme on ``dataset``.

    ``plan`` pins the folds; by default they are derived from the config. Pinning
    lets a caller change test targets without the (stratified) folds moving.
    """
    task = dataset.task
    spec = config.resolved_predictor(task)
    scheme = config.scheme.name
    if plan is None:
        plan = make_folds(dataset, config.k, config.repeats, config.resolved_stratify(task), config.seed)
    elif plan.k != config.k or len(plan) != config.k * config.repeats:
        raise ConfigError("fold plan does not match the config's k and repeats")
    hits_before = audit_counts[scheme]

    features = dataset.features
    if scheme == WDH:
        with audit_scope(scheme, dataset.features, dataset.target, task):
            cov = _covariates(encode_target_covariate(dataset.target, task), _extra(dataset.covariates, config))
            model = combat.fit(dataset.features, dataset.sites, cov, config.combat_config)
            features = combat.transform(model, dataset.features, dataset.sites, cov)

    results = []
    for i, (tr, te) in enumerate(plan):
        repeat = plan.repeat_of(i)
        _check_fold(dataset, tr, i)
        train_set = Dataset(
            features=features[tr], sites=dataset.sites[tr], target=dataset.target[tr], task=task,
            covariates=None if dataset.covariates is None else dataset.covariates[tr],
            feature_names=dataset.feature_names, covariate_names=dataset.covariate_names,
        )
        view = FoldView(
            train_set, features[te], dataset.sites[te],
            None if dataset.covariates is None else dataset.covariates[te],
            dataset.target[te], child_seed(config.seed, "fold-model", repeat, i),
        )
        start = time.perf_counter()
        try:
            with audit_scope(scheme, features[te], dataset.target[te], task):
                pred, scores = _RUNNERS[scheme](view, config, spec)
        except HarmonbenchError as exc:
            exc.args = (f"fold {i}: {exc}",) + exc.args[1:]
            raise
        elapsed = time.perf_counter() - start
        results.append(FoldResult(i, repeat, _metrics(task, dataset.target[te], pred, scores), elapsed,
                                  te, np.asarray(pred), scores))

    hits = audit_counts[scheme] - hits_before
    if hits and scheme not in LEAKY:
        raise AssertionError(f"scheme {scheme} passed test-fold targets to a harmonization transform {hits} time(s)")
    names = CLASSIFICATION_METRICS if task.is_classification else REGRESSION_METRICS
    aggregate = {m: float(np.mean([r.metrics[m] for r in results])) for m in names}
    return ExperimentReport(scheme, config.scheme.leakage, config.seed, task.kind, results, aggregate, hits)


def _run_one(args):
    dataset, config = args
    return run_experiment(dataset, config)


def compare_schemes(dataset: Dataset, configs, jobs: int = 1):
    """Run every config on aligned folds; returns ``(rows, reports)``.

    ``rows`` has one dict per scheme with its aggregate metrics.
    """
    configs = list(configs)
    if not configs:
        raise ConfigError("no experiment configs to compare")
    keys = {c.fold_key for c in configs}
    if len(keys) != 1:
        raise ConfigError(f"configs disagree on fold parameters (k, repeats, seed): {sorted(keys)}")
    strat = {c.resolved_stratify(dataset.task) for c in configs}
    if len(strat) != 1:
        raise ConfigError("configs disagree on fold stratification")
    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_one, [(dataset, c) for c in configs]))
        for r in reports:
            audit_counts[r.scheme] += r.audit_test_target_transforms
    else:
        reports = [run_experiment(dataset, c) for c in configs]
    rows = []
    for r in reports:
        row = {"scheme": r.scheme, "leakage": r.leakage}
        row.update(r.aggregate)
        rows.append(row)
    return rows, reports


def table_to_csv(rows) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    fields = list(rows[0])
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(fields)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else str(v).lower() if isinstance(v, bool) else v
                         for v in (row[f] for f in fields)])
    return buf.getvalue()
