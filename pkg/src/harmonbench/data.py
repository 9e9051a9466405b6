"""Dataset container, CSV ingestion, target encoding and fold generation."""

from __future__ import annotations

import fnmatch
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from ._random import substream
from .errors import ConfigError, DataError, ParseError, SchemaError, ValidationError

REGRESSION = "regression"
CLASSIFICATION = "classification"


@dataclass(frozen=True)
class TaskKind:
    kind: str
    classes: tuple = ()

    def __post_init__(self):
        if self.kind not in (REGRESSION, CLASSIFICATION):
            raise ConfigError(f"unknown task kind {self.kind!r}")
        if self.kind == CLASSIFICATION:
            object.__setattr__(self, "classes", tuple(sorted({str(c) for c in self.classes})))
        elif self.classes:
            raise ConfigError("regression tasks carry no class list")

    @classmethod
    def regression(cls):
        return cls(REGRESSION)

    @classmethod
    def classification(cls, labels):
        return cls(CLASSIFICATION, tuple(labels))

    @property
    def is_classification(self):
        return self.kind == CLASSIFICATION

    @property
    def positive_class(self):
        """Lexicographically largest class; used for AUC scores and F1."""
        return self.classes[-1]

    def to_dict(self):
        return {"kind": self.kind, "classes": list(self.classes)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], tuple(d.get("classes", ())))


def _frozen(a):
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    sites: np.ndarray
    target: np.ndarray
    task: TaskKind
    covariates: np.ndarray | None = None
    feature_names: tuple = ()
    covariate_names: tuple = ()
    ids: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim != 2:
            raise ValidationError("features must be a 2-d matrix")
        n, p = X.shape
        if n == 0:
            raise ValidationError("empty dataset")
        if p == 0:
            raise ValidationError("dataset has no feature columns")
        if not np.all(np.isfinite(X)):
            raise ValidationError("features contain non-finite values")
        sites = np.asarray(self.sites).astype(str)
        if self.task.is_classification:
            target = np.asarray(self.target).astype(str)
        else:
            target = np.asarray(self.target, dtype=float)
            if not np.all(np.isfinite(target)):
                raise ValidationError("regression target contains non-finite values")
        if sites.shape != (n,) or target.shape != (n,):
            raise ValidationError("sites and target must have one entry per row")
        cov = self.covariates
        if cov is not None:
            cov = np.asarray(cov, dtype=float)
            if cov.ndim == 1:
                cov = cov[:, None]
            if cov.shape[0] != n:
                raise ValidationError("covariate row count differs from feature row count")
            if not np.all(np.isfinite(cov)):
                raise ValidationError("covariates contain non-finite values")
            if cov.shape[1] == 0:
                cov = None
        few = sorted(s for s, c in Counter(sites).items() if c < 2)
        if few:
            raise ValidationError(f"site(s) with fewer than 2 rows: {', '.join(few)}")
        if self.task.is_classification:
            present = set(target)
            unknown = present - set(self.task.classes)
            if unknown:
                raise ValidationError(f"target labels not in class list: {sorted(unknown)}")
            if len(present) < 2:
                raise ValidationError("classification target has fewer than 2 distinct values")
        names = tuple(self.feature_names) or tuple(f"f{i}" for i in range(p))
        if len(names) != p:
            raise ValidationError("feature_names length differs from feature count")
        cov_names = tuple(self.covariate_names)
        if cov is not None and not cov_names:
            cov_names = tuple(f"c{i}" for i in range(cov.shape[1]))
        if cov is None:
            cov_names = ()
        elif len(cov_names) != cov.shape[1]:
            raise ValidationError("covariate_names length differs from covariate count")
        ids = None if self.ids is None else _frozen(np.asarray(self.ids).astype(str))
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "sites", _frozen(sites))
        object.__setattr__(self, "target", _frozen(target))
        object.__setattr__(self, "covariates", None if cov is None else _frozen(cov))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "covariate_names", cov_names)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def p(self):
        return self.features.shape[1]

    @property
    def site_list(self):
        return sorted(set(self.sites.tolist()))

    def subset(self, idx):
        idx = np.asarray(idx)
        return Dataset(
            features=self.features[idx],
            sites=self.sites[idx],
            target=self.target[idx],
            task=self.task,
            covariates=None if self.covariates is None else self.covariates[idx],
            feature_names=self.feature_names,
            covariate_names=self.covariate_names,
            ids=None if self.ids is None else self.ids[idx],
        )

    def to_frame(self, site_col="site", target_col="target", id_col="id"):
        df = pd.DataFrame(self.features, columns=list(self.feature_names))
        if self.covariates is not None:
            for j, name in enumerate(self.covariate_names):
                df[name] = self.covariates[:, j]
        df[site_col] = self.sites
        df[target_col] = self.target
        if self.ids is not None:
            df.insert(0, id_col, self.ids)
        return df


@dataclass(frozen=True)
class Schema:
    site_col: str
    target_col: str
    feature_cols: tuple
    covariate_cols: tuple = ()
    task: str = CLASSIFICATION
    id_col: str | None = None

    @classmethod
    def from_mapping(cls, m: Mapping):
        missing = [k for k in ("site_col", "target_col", "feature_cols") if k not in m]
        if missing:
            raise ConfigError(f"schema is missing key(s): {', '.join(missing)}")
        feats = m["feature_cols"]
        if isinstance(feats, str):
            feats = [feats]
        covs = m.get("covariate_cols") or ()
        if isinstance(covs, str):
            covs = [covs]
        task = m.get("task", CLASSIFICATION)
        if task not in (REGRESSION, CLASSIFICATION):
            raise ConfigError(f"schema task must be {REGRESSION!r} or {CLASSIFICATION!r}, got {task!r}")
        return cls(m["site_col"], m["target_col"], tuple(feats), tuple(covs), task, m.get("id_col"))

    def to_dict(self):
        return {
            "site_col": self.site_col,
            "target_col": self.target_col,
            "feature_cols": list(self.feature_cols),
            "covariate_cols": list(self.covariate_cols),
            "task": self.task,
            "id_col": self.id_col,
        }


def _expand(patterns, header, reserved):
    out = []
    for pat in patterns:
        if any(ch in pat for ch in "*?["):
            hits = [h for h in header if fnmatch.fnmatchcase(h, pat) and h not in reserved]
            if not hits:
                raise SchemaError(f"column pattern {pat!r} matches no column")
        else:
            if pat not in header:
                raise SchemaError(f"missing column {pat!r}")
            hits = [pat]
        out.extend(h for h in hits if h not in out)
    return out


def _numeric_block(df, cols, what):
    # numpy's str -> float conversion is correctly rounded, so values written
    # with repr() come back bit-identical (pandas' fast parser is not exact)
    values = np.empty((len(df), len(cols)))
    for j, col in enumerate(cols):
        raw = df[col].to_numpy(dtype=str)
        try:
            num = raw.astype(float)
            bad = ~np.isfinite(num)
        except ValueError:
            bad = np.array([not _is_finite_number(v) for v in raw])
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            # +2: header line plus 1-based numbering
            raise ParseError(
                f"non-numeric {what} value {raw[i]!r} at row {i + 2}, column {col!r}",
                row=i + 2,
                column=col,
            )
        values[:, j] = num
    return values


def _is_finite_number(v):
    try:
        return np.isfinite(float(v))
    except ValueError:
        return False


def load_dataset(path, schema) -> Dataset:
    """Read a CSV file into a :class:`Dataset` with columns assigned by role."""
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    header = list(df.columns)
    for col in (schema.site_col, schema.target_col) + ((schema.id_col,) if schema.id_col else ()):
        if col not in header:
            raise SchemaError(f"missing column {col!r}")
    reserved = {schema.site_col, schema.target_col, schema.id_col}
    covariate_cols = _expand(schema.covariate_cols, header, reserved)
    feature_cols = [c for c in _expand(schema.feature_cols, header, reserved) if c not in covariate_cols]
    if not feature_cols:
        raise SchemaError("schema selects no feature columns")
    if len(df) == 0:
        raise ValidationError("empty dataset")
    X = _numeric_block(df, feature_cols, "feature")
    cov = _numeric_block(df, covariate_cols, "covariate") if covariate_cols else None
    target = df[schema.target_col].to_numpy()
    if schema.task == CLASSIFICATION:
        task = TaskKind.classification(set(target.tolist()))
    else:
        target = _numeric_block(df, [schema.target_col], "target")[:, 0]
        task = TaskKind.regression()
    return Dataset(
        features=X,
        sites=df[schema.site_col].to_numpy(),
        target=target,
        task=task,
        covariates=cov,
        feature_names=tuple(feature_cols),
        covariate_names=tuple(covariate_cols),
        ids=df[schema.id_col].to_numpy() if schema.id_col else None,
    )


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple
    k: int
    repeats: int
    seed: int
    stratify: bool = False

    def __iter__(self):
        return iter(self.folds)

    def __len__(self):
        return len(self.folds)

    def repeat_of(self, i):
        return i // self.k

    def to_dict(self):
        return {
            "k": self.k,
            "repeats": self.repeats,
            "seed": self.seed,
            "stratify": self.stratify,
            "folds": [[tr.tolist(), te.tolist()] for tr, te in self.folds],
        }


def kfold_assign(strata, k, rng):
    """Assign each row to one of ``k`` folds, dealing each stratum round-robin.

    Rows of each stratum are shuffled, strata are concatenated in sorted order
    and the fold counter continues across strata, so fold sizes differ by at
    most one and every stratum is spread as evenly as possible.
    """
    strata = np.asarray(strata)
    n = len(strata)
    order = []
    for s in sorted(set(strata.tolist())):
        members = np.flatnonzero(strata == s)
        order.append(rng.permutation(members))
    order = np.concatenate(order) if order else np.arange(0)
    offset = int(rng.integers(k))
    assign = np.empty(n, dtype=int)
    assign[order] = (np.arange(n) + offset) % k
    return assign


def folds_from_strata(strata, k, repeats, seed, stream="folds"):
    n = len(strata)
    folds = []
    for r in range(repeats):
        rng = substream(seed, stream, r)
        assign = kfold_assign(strata, k, rng)
        for f in range(k):
            test = np.flatnonzero(assign == f)
            train = np.flatnonzero(assign != f)
            folds.append((train, test))
    return tuple(folds)


def make_folds(dataset: Dataset, k: int = 5, repeats: int = 1, stratify: bool = False, seed: int = 0) -> FoldPlan:
    if k < 2:
        raise ConfigError("k must be at least 2")
    if repeats < 1:
        raise ConfigError("repeats must be at least 1")
    n = dataset.n
    if n < k:
        raise ConfigError(f"cannot split {n} rows into {k} folds")
    if stratify:
        if not dataset.task.is_classification:
            raise ConfigError("stratified folds need a classification target")
        counts = Counter(dataset.target.tolist())
        small = sorted(c for c, m in counts.items() if m < k)
        if small:
            raise ValidationError(f"class(es) with fewer than k={k} rows: {', '.join(small)}")
        strata = dataset.target
    else:
        strata = np.zeros(n, dtype=int)
    return FoldPlan(folds_from_strata(strata, k, repeats, seed), k, repeats, seed, stratify)


def encode_target_covariate(target: Sequence, task: TaskKind) -> np.ndarray:
    """Encode target values as a real covariate block for harmonization.

    Regression targets pass through as one column; classes become indicator
    columns against the first (lexicographically smallest) class.
    """
    if not task.is_classification:
        y = np.asarray(target, dtype=float)
        return y.reshape(-1, 1)
    y = np.asarray(target).astype(str)
    index = {c: i for i, c in enumerate(task.classes)}
    unseen = sorted(set(y.tolist()) - index.keys())
    if unseen:
        raise DataError(f"unseen class(es) {unseen}; known classes: {list(task.classes)}")
    codes = np.array([index[v] for v in y.tolist()], dtype=int)
    out = np.zeros((len(y), len(task.classes) - 1))
    hit = codes > 0
    out[np.flatnonzero(hit), codes[hit] - 1] = 1.0
    return out
