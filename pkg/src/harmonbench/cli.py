"""Command-line front end.

    harmonbench run --config run.toml [--seed N] [--out DIR] [--jobs N]
    harmonbench harmonize fit --data in.csv --model combat.json [--out harmonized.csv]
    harmonbench harmonize transform --data in.csv --model combat.json --out harmonized.csv
    harmonbench generate [--config gen.toml] [--seed N] --out data.csv
    harmonbench sample --config sample.toml [--seed N] --out sampled.csv

Configs are TOML, or JSON when the file name ends in ``.json``. Failures
print one JSON line to stderr and exit with 2 (config), 3 (data) or
4 (numerical).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, combat
from .combat import CombatConfig, CombatModel
from .data import Dataset, Schema, _expand, _numeric_block, load_dataset
from .errors import ConfigError, DataError, HarmonbenchError
from .predictors import PredictorSpec
from .pretty import PrettyConfig
from .schemes import SCHEMES, ExperimentConfig, Scheme, compare_schemes, table_to_csv
from .synth import DependenceSpec, GenConfig, generate, sample_dependence, sample_independence

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("harmonbench")

HARMONIZER_FORMAT = "harmonbench.harmonizer/1"
RUN_KEYS = {"seed", "out", "jobs", "schemes", "data", "folds", "predictor", "combat", "pretty", "use_covariates"}
DATA_KEYS = {"path", "schema", "generate", "dependence", "independence"}
FOLD_KEYS = {"k", "repeats", "stratify"}


# ---------------------------------------------------------------- config ----


def read_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        if path.suffix.lower() == ".json":
            return json.loads(path.read_text(encoding="utf-8"))
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None


class _Errors:
    """Collects validation failures so they can be reported together."""

    def __init__(self):
        self.messages = []

    def attempt(self, fn, *args, where=""):
        try:
            return fn(*args)
        except (ConfigError, TypeError, ValueError) as exc:
            self.messages.append(f"{where}: {exc}" if where else str(exc))
            return None

    def add(self, msg):
        self.messages.append(msg)

    def raise_if_any(self):
        if self.messages:
            err = ConfigError("; ".join(self.messages))
            err.messages = list(self.messages)
            raise err


@dataclass
class DataSource:
    path: Path | None = None
    schema: Schema | None = None
    generate: GenConfig | None = None
    dependence: DependenceSpec | None = None
    independence: dict | None = None

    def to_dict(self):
        return {
            "path": None if self.path is None else str(self.path),
            "schema": None if self.schema is None else self.schema.to_dict(),
            "generate": None if self.generate is None else asdict(self.generate),
            "dependence": None if self.dependence is None else _jsonable(asdict(self.dependence)),
            "independence": self.independence,
        }


@dataclass
class RunConfig:
    data: DataSource
    seed: int
    schemes: tuple = SCHEMES
    out: Path = Path("results")
    jobs: int = 1
    k: int = 5
    repeats: int = 1
    stratify: bool | None = None
    predictor: PredictorSpec | None = None
    combat_config: CombatConfig = field(default_factory=CombatConfig)
    pretty: PrettyConfig = field(default_factory=PrettyConfig)
    use_covariates: bool = False

    def to_dict(self):
        return {
            "data": self.data.to_dict(),
            "seed": self.seed,
            "schemes": list(self.schemes),
            "folds": {"k": self.k, "repeats": self.repeats, "stratify": self.stratify},
            "predictor": None if self.predictor is None else self.predictor.to_dict(),
            "combat": asdict(self.combat_config),
            "pretty": self.pretty.to_dict(),
            "use_covariates": self.use_covariates,
        }

    def hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def experiment_configs(self):
        out = []
        for name in self.schemes:
            scheme = Scheme(name, self.pretty if name == "pretty" else None)
            out.append(ExperimentConfig(
                scheme, self.predictor, self.k, self.repeats, self.stratify, self.seed,
                self.combat_config, self.use_covariates,
            ))
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else base / p


def _unknown(errs, d, allowed, where):
    extra = sorted(set(d) - allowed)
    if extra:
        errs.add(f"{where}: unknown key(s) {extra}")


def parse_data_source(raw, base, errs: _Errors, where="data"):
    if not isinstance(raw, dict):
        errs.add(f"{where}: missing or not a table")
        return None
    _unknown(errs, raw, DATA_KEYS, where)
    src = DataSource()
    has_path = raw.get("path") is not None
    has_gen = raw.get("generate") is not None
    if has_path == has_gen:
        errs.add(f"{where}: give exactly one of 'path' or 'generate'")
    if has_path:
        src.path = _resolve(base, raw["path"])
        if not src.path.exists():
            errs.add(f"{where}.path: dataset file not found: {src.path}")
        if "schema" not in raw:
            errs.add(f"{where}.schema: required with 'path'")
        else:
            src.schema = errs.attempt(Schema.from_mapping, raw["schema"], where=f"{where}.schema")
    if has_gen:
        src.generate = errs.attempt(GenConfig.from_dict, raw["generate"], where=f"{where}.generate")
    if raw.get("dependence") is not None and raw.get("independence") is not None:
        errs.add(f"{where}: 'dependence' and 'independence' are mutually exclusive")
    if raw.get("dependence") is not None:
        src.dependence = errs.attempt(DependenceSpec.from_dict, raw["dependence"], where=f"{where}.dependence")
    if raw.get("independence") is not None:
        ind = raw["independence"]
        if not isinstance(ind, dict) or set(ind) - {"per_site_class_counts", "bins"}:
            errs.add(f"{where}.independence: allowed keys are per_site_class_counts, bins")
        else:
            src.independence = dict(ind)
    return src


def parse_run_config(raw, base=Path("."), seed=None, out=None, jobs=None) -> RunConfig:
    """Validate a run config, reporting every problem at once."""
    errs = _Errors()
    if not isinstance(raw, dict):
        errs.add("config must be a table")
        errs.raise_if_any()
    _unknown(errs, raw, RUN_KEYS, "config")
    data = parse_data_source(raw.get("data"), base, errs)

    if seed is None:
        seed = raw.get("seed")
    if seed is None:
        errs.add("seed: required (in the config or via --seed)")
    elif not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errs.add(f"seed: must be a non-negative integer, got {seed!r}")

    schemes = raw.get("schemes", list(SCHEMES))
    if not isinstance(schemes, list) or not schemes:
        errs.add("schemes: must be a non-empty list")
        schemes = []
    for s in schemes:
        if s not in SCHEMES:
            errs.add(f"schemes: unknown scheme {s!r}; expected one of {list(SCHEMES)}")
    if len(set(schemes)) != len(schemes):
        errs.add("schemes: duplicate entries")

    folds = raw.get("folds", {})
    if not isinstance(folds, dict):
        errs.add("folds: must be a table")
        folds = {}
    _unknown(errs, folds, FOLD_KEYS, "folds")
    k = folds.get("k", 5)
    repeats = folds.get("repeats", 1)
    if not isinstance(k, int) or k < 2:
        errs.add(f"folds.k: must be an integer >= 2, got {k!r}")
    if not isinstance(repeats, int) or repeats < 1:
        errs.add(f"folds.repeats: must be an integer >= 1, got {repeats!r}")
    stratify = folds.get("stratify")
    if stratify is not None and not isinstance(stratify, bool):
        errs.add("folds.stratify: must be true or false")

    predictor = None
    if raw.get("predictor") is not None:
        predictor = errs.attempt(PredictorSpec.from_dict, raw["predictor"], where="predictor")
    cc = errs.attempt(CombatConfig.from_dict, raw.get("combat", {}), where="combat")
    pc = errs.attempt(PrettyConfig.from_dict, raw.get("pretty", {}), where="pretty")

    jobs = raw.get("jobs", 1) if jobs is None else jobs
    if not isinstance(jobs, int) or jobs < 1:
        errs.add(f"jobs: must be a positive integer, got {jobs!r}")
    use_cov = raw.get("use_covariates", False)
    if not isinstance(use_cov, bool):
        errs.add("use_covariates: must be true or false")
    out = Path(out) if out is not None else _resolve(base, raw.get("out", "results"))

    errs.raise_if_any()
    return RunConfig(
        data=data, seed=seed, schemes=tuple(schemes), out=out, jobs=jobs, k=k, repeats=repeats,
        stratify=stratify, predictor=predictor, combat_config=cc, pretty=pc, use_covariates=use_cov,
    )


def materialize(src: DataSource, seed: int) -> Dataset:
    """Load or generate the dataset, then apply any sampling design."""
    if src.path is not None:
        ds = load_dataset(src.path, src.schema)
    else:
        ds = generate(src.generate)
    if src.dependence is not None:
        ds = sample_dependence(ds, src.dependence, seed)
    elif src.independence is not None:
        ds = sample_independence(ds, src.independence.get("per_site_class_counts"), seed,
                                 src.independence.get("bins", 10))
    return ds


def _file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_frame(df: pd.DataFrame, path):
    # floats are written with repr so they survive a round trip exactly
    _write_text(path, df.to_csv(index=False, lineterminator="\n", float_format=None))


def _dataset_frame(ds: Dataset, schema: Schema | None):
    if schema is None:
        return ds.to_frame()
    return ds.to_frame(site_col=schema.site_col, target_col=schema.target_col, id_col=schema.id_col or "id")


# -------------------------------------------------------------- commands ----


def cmd_run(args):
    raw = read_config(args.config)
    cfg = parse_run_config(raw, Path(args.config).resolve().parent, args.seed, args.out, args.jobs)
    ds = materialize(cfg.data, cfg.seed)
    log.info("dataset: %d rows, %d features, %d sites, task %s", ds.n, ds.p, len(ds.site_list), ds.task.kind)
    rows, reports = compare_schemes(ds, cfg.experiment_configs(), jobs=cfg.jobs)

    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for rep in reports:
        name = f"report_{rep.scheme}.json"
        _write_text(out / name, rep.to_json() + "\n")
        files.append(name)
    _write_text(out / "comparison.csv", table_to_csv(rows))
    files.append("comparison.csv")
    manifest = {
        "version": __version__,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "schemes": list(cfg.schemes),
        "dataset": {
            "n": ds.n,
            "p": ds.p,
            "sites": ds.site_list,
            "source_sha256": None if cfg.data.path is None else _file_sha256(cfg.data.path),
        },
        "outputs": files,
    }
    _write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for row in rows:
        log.info("%s", row)
    print(out / "comparison.csv")
    return 0


def _harmonize_columns(df, args):
    header = list(df.columns)
    if args.site_col not in header:
        raise DataError(f"missing column {args.site_col!r}")
    covs = _expand(args.covariates, header, {args.site_col}) if args.covariates else []
    reserved = {args.site_col, *covs, *args.ignore}
    feats = args.features or ["*"]
    feats = [c for c in _expand(feats, header, reserved) if c not in covs and c not in args.ignore]
    if not feats:
        raise DataError("no feature columns selected")
    return feats, covs


def _read_table(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if len(df) == 0:
        raise DataError("empty dataset")
    return df


def _apply(df, bundle, model):
    X = _numeric_block(df, bundle["feature_cols"], "feature")
    cov = _numeric_block(df, bundle["covariate_cols"], "covariate") if bundle["covariate_cols"] else None
    H = combat.transform(model, X, df[bundle["site_col"]].to_numpy().astype(str), cov)
    out = df.copy()
    for j, col in enumerate(bundle["feature_cols"]):
        out[col] = [repr(float(v)) for v in H[:, j]]
    return out


def cmd_harmonize(args):
    df = _read_table(args.data)
    if args.action == "fit":
        feats, covs = _harmonize_columns(df, args)
        X = _numeric_block(df, feats, "feature")
        cov = _numeric_block(df, covs, "covariate") if covs else None
        cfg = CombatConfig(use_eb=not args.no_eb)
        model = combat.fit(X, df[args.site_col].to_numpy().astype(str), cov, cfg)
        bundle = {
            "format": HARMONIZER_FORMAT,
            "site_col": args.site_col,
            "feature_cols": feats,
            "covariate_cols": covs,
            "model": model.to_dict(),
        }
        _write_text(args.model, json.dumps(bundle) + "\n")
        if args.out:
            write_frame(_apply(df, bundle, model), args.out)
        return 0
    path = Path(args.model)
    if not path.exists():
        raise ConfigError(f"model file not found: {path}")
    bundle = json.loads(path.read_text(encoding="utf-8"))
    if bundle.get("format") != HARMONIZER_FORMAT:
        raise ConfigError(f"{path} is not a harmonizer model file")
    for col in [bundle["site_col"], *bundle["feature_cols"], *bundle["covariate_cols"]]:
        if col not in df.columns:
            raise DataError(f"missing column {col!r}")
    if not args.out:
        raise ConfigError("transform needs --out")
    write_frame(_apply(df, bundle, CombatModel.from_dict(bundle["model"])), args.out)
    return 0


def cmd_generate(args):
    raw = read_config(args.config) if args.config else {}
    if isinstance(raw.get("generate"), dict):
        raw = raw["generate"]
    raw = dict(raw)
    if args.seed is not None:
        raw["seed"] = args.seed
    ds = generate(GenConfig.from_dict(raw))
    write_frame(ds.to_frame(), args.out)
    return 0


def cmd_sample(args):
    raw = read_config(args.config)
    base = Path(args.config).resolve().parent
    errs = _Errors()
    src = parse_data_source(raw.get("data"), base, errs)
    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is None:
        errs.add("seed: required (in the config or via --seed)")
    if src is not None and src.dependence is None and src.independence is None:
        errs.add("data: sample needs a 'dependence' or 'independence' table")
    errs.raise_if_any()
    ds = materialize(src, seed)
    write_frame(_dataset_frame(ds, src.schema), args.out)
    return 0


# ------------------------------------------------------------------ main ----


def build_parser():
    ap = argparse.ArgumentParser(prog="harmonbench", description="Multi-site harmonization benchmark")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"harmonbench {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="compare harmonization schemes under cross-validation")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--jobs", type=int)
    run.set_defaults(func=cmd_run)

    harm = sub.add_parser("harmonize", help="fit or apply a standalone ComBat model")
    harm.add_argument("action", choices=("fit", "transform"))
    harm.add_argument("--data", required=True)
    harm.add_argument("--model", required=True)
    harm.add_argument("--out")
    harm.add_argument("--site-col", default="site")
    harm.add_argument("--features", nargs="*", help="feature columns or glob patterns (default: all others)")
    harm.add_argument("--covariates", nargs="*", default=[])
    harm.add_argument("--ignore", nargs="*", default=["target", "id"],
                      help="columns that are neither features nor covariates")
    harm.add_argument("--no-eb", action="store_true", help="skip empirical Bayes shrinkage")
    harm.set_defaults(func=cmd_harmonize)

    gen = sub.add_parser("generate", help="write a synthetic multi-site dataset")
    gen.add_argument("--config")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_generate)

    samp = sub.add_parser("sample", help="subsample a dataset under a dependence or independence design")
    samp.add_argument("--config", required=True)
    samp.add_argument("--seed", type=int)
    samp.add_argument("--out", required=True)
    samp.set_defaults(func=cmd_sample)
    return ap


def _fail(exc, code):
    payload = {"error": type(exc).__name__, "exit_code": code, "message": str(exc)}
    if getattr(exc, "messages", None):
        payload["messages"] = exc.messages
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HarmonbenchError as exc:
        return _fail(exc, exc.exit_code)
    except np.linalg.LinAlgError as exc:
        return _fail(exc, 4)


if __name__ == "__main__":
    sys.exit(main())
