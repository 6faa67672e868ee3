"""Command-line pipeline: synth, split, fit-tree, train, evaluate, compare.

Configuration is a flat key=value file with dotted namespaces
(e.g. tree.max_depth=5); every key has a default and a handful of flags
override their config counterparts. A single --seed fans out deterministically
to data generation, splitting, model init, training, and tie-breaking, so a
rerun with the same config and seed writes byte-identical artifacts.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from . import distill, metrics, student, tree as tree_mod
from .errors import ConfigError, KdsmError
from .seeds import derive_seed

TWO_MODEL_FORMAT = "two-model/v1"

DEFAULTS: dict[str, str] = {
    "seed": "1",
    "out.dir": "out",
    "data.dir": "",
    "synth.n": "50000",
    "synth.d_numeric": "6",
    "synth.d_categorical": "2",
    "synth.base_rate": "0.03",
    "synth.effect_function": "piecewise-on-two-features",
    "synth.effect_scale": "1.0",
    "synth.treatment_fraction": "0.5",
    "synth.noise_features": "2",
    "split.train": "0.6",
    "split.valid": "0.2",
    "split.test": "0.2",
    "split.subsample_per_arm": "0",
    "tree.criterion": "ed",
    "tree.max_depth": "5",
    "tree.min_samples_per_arm": "100",
    "tree.min_gain": "0.0",
    "tree.numeric_split_candidates": "32",
    "student.hidden_sizes": "64,32",
    "student.embedding_dim": "8",
    "student.activation": "relu",
    "student.optimizer": "adam",
    "student.momentum": "0.0",
    "student.beta1": "0.9",
    "student.beta2": "0.999",
    "student.eps": "1e-8",
    "student.learning_rate": "0.01",
    "student.lr_decay_factor": "0.5",
    "student.lr_decay_patience": "6",
    "train.lambda": "0.5",
    "train.batch_size": "512",
    "train.max_epochs": "40",
    "train.early_stop_patience": "12",
    "train.drop_leftovers": "false",
    "eval.tie_seed": "",
    "compare.methods": "plain,kdss,kdsm,tm,mom",
    "compare.seeds": "1,2,3,4,5",
}

METHODS = ("kdsm", "kdss", "plain", "tm", "mom")


def parse_config_file(path: str) -> dict[str, str]:
    """Flat key=value lines; blank lines and #-comments ignored."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            out[key] = value.strip()
    return out


@dataclass
class RunConfig:
    """Typed view over the merged (defaults, file, flags) key space."""

    values: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        merged = dict(DEFAULTS)
        merged.update(self.values)
        self.values = merged

    def _get(self, key: str) -> str:
        return self.values[key]

    def _int(self, key: str) -> int:
        try:
            return int(self._get(key))
        except ValueError:
            raise ConfigError(f"config key {key}={self._get(key)!r} is not an integer") from None

    def _float(self, key: str) -> float:
        try:
            return float(self._get(key))
        except ValueError:
            raise ConfigError(f"config key {key}={self._get(key)!r} is not a number") from None

    def _bool(self, key: str) -> bool:
        v = self._get(key).lower()
        if v in ("true", "1", "yes"):
            return True
        if v in ("false", "0", "no"):
            return False
        raise ConfigError(f"config key {key}={self._get(key)!r} is not a boolean")

    @property
    def seed(self) -> int:
        return self._int("seed")

    @property
    def out_dir(self) -> str:
        return self._get("out.dir")

    @property
    def data_dir(self) -> str:
        return self._get("data.dir") or self.out_dir

    def synthetic_config(self, seed: int) -> data_mod.SyntheticConfig:
        cfg = data_mod.SyntheticConfig(
            n=self._int("synth.n"),
            d_numeric=self._int("synth.d_numeric"),
            d_categorical=self._int("synth.d_categorical"),
            base_rate=self._float("synth.base_rate"),
            effect_function=self._get("synth.effect_function"),
            effect_scale=self._float("synth.effect_scale"),
            treatment_fraction=self._float("synth.treatment_fraction"),
            noise_features=self._int("synth.noise_features"),
            seed=seed,
        )
        cfg.validate()
        return cfg

    def split_ratios(self) -> data_mod.SplitRatios:
        return data_mod.SplitRatios(
            train=self._float("split.train"),
            valid=self._float("split.valid"),
            test=self._float("split.test"),
        )

    def tree_params(self) -> tree_mod.TreeParams:
        params = tree_mod.TreeParams(
            criterion=self._get("tree.criterion"),
            max_depth=self._int("tree.max_depth"),
            min_samples_per_arm=self._int("tree.min_samples_per_arm"),
            min_gain=self._float("tree.min_gain"),
            numeric_split_candidates=self._int("tree.numeric_split_candidates"),
        )
        params.validate()
        return params

    def student_config(self, init_seed: int) -> student.StudentConfig:
        hidden_raw = self._get("student.hidden_sizes").strip()
        try:
            hidden = tuple(int(h) for h in hidden_raw.split(",") if h.strip() != "")
        except ValueError:
            raise ConfigError(
                f"config key student.hidden_sizes={hidden_raw!r} is not a comma list of integers"
            ) from None
        cfg = student.StudentConfig(
            hidden_sizes=hidden,
            embedding_dim=self._int("student.embedding_dim"),
            activation=self._get("student.activation"),
            optimizer=self._get("student.optimizer"),
            momentum=self._float("student.momentum"),
            beta1=self._float("student.beta1"),
            beta2=self._float("student.beta2"),
            eps=self._float("student.eps"),
            learning_rate=self._float("student.learning_rate"),
            lr_decay_factor=self._float("student.lr_decay_factor"),
            lr_decay_patience=self._int("student.lr_decay_patience"),
            init_seed=init_seed,
        )
        cfg.validate()
        return cfg

    def hyper(self, master_seed: int) -> distill.KdsmHyper:
        h = distill.KdsmHyper(
            kd_weight=self._float("train.lambda"),
            batch_size=self._int("train.batch_size"),
            max_epochs=self._int("train.max_epochs"),
            early_stop_patience=self._int("train.early_stop_patience"),
            master_seed=master_seed,
        )
        h.validate()
        return h

    def tie_seed(self, master_seed: int) -> int:
        raw = self._get("eval.tie_seed")
        if raw == "":
            return derive_seed(master_seed, "eval-ties")
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config key eval.tie_seed={raw!r} is not an integer") from None

    def compare_methods(self) -> list[str]:
        methods = [m.strip() for m in self._get("compare.methods").split(",") if m.strip()]
        for m in methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r} in compare.methods")
        return methods

    def compare_seeds(self) -> list[int]:
        try:
            return [int(s) for s in self._get("compare.seeds").split(",") if s.strip()]
        except ValueError:
            raise ConfigError(
                f"config key compare.seeds={self._get('compare.seeds')!r} is not a comma list of integers"
            ) from None


def _load_run_config(args) -> RunConfig:
    values: dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    if getattr(args, "seed", None) is not None:
        values["seed"] = str(args.seed)
    if getattr(args, "lambda_", None) is not None:
        values["train.lambda"] = repr(args.lambda_)
    if getattr(args, "criterion", None) is not None:
        values["tree.criterion"] = args.criterion
    if getattr(args, "tie_seed", None) is not None:
        values["eval.tie_seed"] = str(args.tie_seed)
    if getattr(args, "drop_leftovers", False):
        values["train.drop_leftovers"] = "true"
    if getattr(args, "out", None):
        values["out.dir"] = args.out
    return RunConfig(values)


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _dataset_paths(cfg: RunConfig) -> dict[str, str]:
    d = cfg.data_dir
    return {
        "dataset": os.path.join(d, "dataset.csv"),
        "true_cate": os.path.join(d, "true_cate.csv"),
        "schema": os.path.join(d, "schema.json"),
        "train": os.path.join(d, "train.csv"),
        "valid": os.path.join(d, "valid.csv"),
        "test": os.path.join(d, "test.csv"),
        "split_indices": os.path.join(d, "split_indices.txt"),
        "tree": os.path.join(d, "tree.json"),
    }


def _load_schema(path: str) -> data_mod.FeatureSchema:
    if not os.path.exists(path):
        raise ConfigError(f"schema file {path} not found; run `kdsm synth` or place one there")
    with open(path, encoding="utf-8") as fh:
        return data_mod.FeatureSchema.from_jsonable(json.load(fh))


def _load_split(cfg: RunConfig) -> tuple[data_mod.Dataset, data_mod.Dataset, data_mod.Dataset]:
    paths = _dataset_paths(cfg)
    schema = _load_schema(paths["schema"])
    for name in ("train", "valid", "test"):
        if not os.path.exists(paths[name]):
            raise ConfigError(f"{paths[name]} not found; run `kdsm split` first")
    return (
        data_mod.load_csv(paths["train"], schema),
        data_mod.load_csv(paths["valid"], schema),
        data_mod.load_csv(paths["test"], schema),
    )


def cmd_synth(args) -> int:
    cfg = _load_run_config(args)
    synth_cfg = cfg.synthetic_config(derive_seed(cfg.seed, "synth"))
    ds, tau = data_mod.gen_synthetic(synth_cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    out = _dataset_paths(RunConfig({"data.dir": cfg.out_dir}))
    data_mod.save_csv(ds, out["dataset"])
    _write_text(
        out["true_cate"], "true_cate\n" + "".join(repr(float(v)) + "\n" for v in tau)
    )
    _write_text(out["schema"], json.dumps(ds.schema.to_jsonable(), indent=1) + "\n")
    print(f"wrote {out['dataset']} ({ds.n} rows), {out['true_cate']}, {out['schema']}")
    return 0


def cmd_split(args) -> int:
    cfg = _load_run_config(args)
    paths = _dataset_paths(cfg)
    schema = _load_schema(paths["schema"])
    if not os.path.exists(paths["dataset"]):
        raise ConfigError(f"{paths['dataset']} not found; run `kdsm synth` or place a dataset there")
    ds = data_mod.load_csv(paths["dataset"], schema)
    n_sub = cfg._int("split.subsample_per_arm")
    if n_sub > 0:
        ds = data_mod.subsample_per_arm(ds, n_sub, derive_seed(cfg.seed, "subsample"))
    split = data_mod.split_dataset(ds, cfg.split_ratios(), derive_seed(cfg.seed, "split"))
    for w in split.warnings:
        print(f"warning: {w}", file=sys.stderr)
    os.makedirs(cfg.out_dir, exist_ok=True)
    out = _dataset_paths(RunConfig({"data.dir": cfg.out_dir}))
    data_mod.save_csv(split.train, out["train"])
    data_mod.save_csv(split.valid, out["valid"])
    data_mod.save_csv(split.test, out["test"])
    lines = ["# split indices v1"]
    for name in ("train", "valid", "test"):
        lines.append(f"{name}: " + " ".join(str(int(i)) for i in split.indices[name]))
    _write_text(out["split_indices"], "\n".join(lines) + "\n")
    # re-emit the schema with any first-appearance dictionaries pinned, so
    # every later stage codes the three files identically
    _write_text(out["schema"], json.dumps(ds.schema.to_jsonable(), indent=1) + "\n")
    print(
        f"wrote {out['train']} ({split.train.n}), {out['valid']} ({split.valid.n}), "
        f"{out['test']} ({split.test.n})"
    )
    return 0


def cmd_fit_tree(args) -> int:
    cfg = _load_run_config(args)
    paths = _dataset_paths(cfg)
    schema = _load_schema(paths["schema"])
    if not os.path.exists(paths["train"]):
        raise ConfigError(f"{paths['train']} not found; run `kdsm split` first")
    train = data_mod.load_csv(paths["train"], schema)
    fitted = tree_mod.fit_tree(train, cfg.tree_params(), derive_seed(cfg.seed, "tree"))
    os.makedirs(cfg.out_dir, exist_ok=True)
    tree_path = os.path.join(cfg.out_dir, "tree.json")
    tree_mod.save_tree(fitted, tree_path)
    _write_text(os.path.join(cfg.out_dir, "leaf_summary.txt"), tree_mod.leaf_summary(fitted))
    print(f"wrote {tree_path} ({fitted.n_leaves} leaves)")
    return 0


def _save_predictor(obj, path: str) -> None:
    if isinstance(obj, distill.TwoModelResult):
        doc = {
            "format": TWO_MODEL_FORMAT,
            "treated": student.student_to_jsonable(obj.treated_model),
            "control": student.student_to_jsonable(obj.control_model),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")
    else:
        student.save_student(obj, path)


def load_predictor(path: str):
    """Load any predictor artifact (tree, student model, or two-model pair);
    returns (kind, predict_uplift_batch callable, schema)."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    fmt = obj.get("format")
    if fmt == tree_mod.TREE_FORMAT:
        t = tree_mod.tree_from_jsonable(obj)
        return "tree", (lambda X: tree_mod.predict_uplift_tree_batch(t, X)), t.schema
    if fmt == student.MODEL_FORMAT:
        m = student.student_from_jsonable(obj)
        if m.head == "regression":
            return "mom", (lambda X: student.raw_output_batch(m, X)), m.schema
        return "student", (lambda X: student.predict_uplift_batch(m, X)), m.schema
    if fmt == TWO_MODEL_FORMAT:
        pair = distill.TwoModelResult(
            student.student_from_jsonable(obj["treated"]),
            student.student_from_jsonable(obj["control"]),
        )
        return "two-model", pair.predict_uplift_batch, pair.treated_model.schema
    raise ConfigError(f"{path}: unknown predictor format {fmt!r}")


def _train_one(method, train, valid, tree, student_cfg, hyper, drop_leftovers):
    if method == "kdsm":
        return distill.train_kdsm(train, valid, tree, student_cfg, hyper, drop_leftovers)
    if method == "kdss":
        return distill.train_kdss(train, valid, tree, student_cfg, hyper)
    if method == "plain":
        return distill.train_plain(train, valid, student_cfg, hyper)
    if method == "tm":
        return distill.train_two_model(train, valid, student_cfg, hyper)
    if method == "mom":
        return distill.train_mom(train, valid, student_cfg, hyper)
    raise ConfigError(f"unknown method {method!r}")


def cmd_train(args) -> int:
    cfg = _load_run_config(args)
    method = args.method
    if method not in METHODS:
        raise ConfigError(f"--method must be one of {METHODS}, got {method!r}")
    train, valid, _ = _load_split(cfg)
    teacher = None
    if method in ("kdsm", "kdss") or (method == "plain" and args.pair_stream):
        tree_path = _dataset_paths(cfg)["tree"]
        if not os.path.exists(tree_path):
            raise ConfigError(
                f"--method {method} needs a fitted tree at {tree_path}; run `kdsm fit-tree` first"
            )
        teacher = tree_mod.load_tree(tree_path)
        if tree_mod.schema_hash(teacher.schema) != tree_mod.schema_hash(train.schema):
            raise ConfigError("tree schema does not match the training data schema")
    student_cfg = cfg.student_config(derive_seed(cfg.seed, "student-init"))
    hyper = cfg.hyper(derive_seed(cfg.seed, "train"))
    drop = cfg._bool("train.drop_leftovers")
    if method == "plain" and args.pair_stream:
        model, report = distill.train_plain(
            train, valid, student_cfg, hyper, pair_stream_tree=teacher, drop_leftovers=drop
        )
    else:
        model, report = _train_one(method, train, valid, teacher, student_cfg, hyper, drop)
    os.makedirs(cfg.out_dir, exist_ok=True)
    model_path = os.path.join(cfg.out_dir, f"model_{method}.json")
    _save_predictor(model, model_path)
    distill.write_train_report(report, os.path.join(cfg.out_dir, f"train_report_{method}.txt"))
    best = "undefined" if report.best_val_auuc is None else f"{report.best_val_auuc:.4f}"
    print(f"wrote {model_path} (best epoch {report.best_epoch}, val AUUC {best})")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_run_config(args)
    _, _, test = _load_split(cfg)
    tie_seed = cfg.tie_seed(cfg.seed)
    os.makedirs(cfg.out_dir, exist_ok=True)
    for path in args.models:
        kind, predict, schema = load_predictor(path)
        if tree_mod.schema_hash(schema) != tree_mod.schema_hash(test.schema):
            raise ConfigError(f"{path}: predictor schema does not match the test data schema")
        preds = predict(test.features)
        ev = metrics.rank_eval(preds, test.treatment, test.outcome, tie_seed)
        summary = {
            "auuc": metrics.auuc(ev),
            "qini": metrics.qini_coefficient(ev),
            "n": ev.n,
            "tie_seed": tie_seed,
        }
        stem = os.path.splitext(os.path.basename(path))[0]
        eval_dir = os.path.join(cfg.out_dir, f"eval_{stem}")
        os.makedirs(eval_dir, exist_ok=True)
        metrics.write_curve_csv(metrics.uplift_curve(ev), os.path.join(eval_dir, "uplift_curve.csv"))
        metrics.write_curve_csv(metrics.qini_curve(ev), os.path.join(eval_dir, "qini_curve.csv"))
        _write_text(os.path.join(eval_dir, "summary.json"), json.dumps(summary, indent=1) + "\n")
        print(
            f"{path} ({kind}): auuc={summary['auuc']:.4f} qini={summary['qini']:.6f} "
            f"-> {eval_dir}"
        )
    return 0


@dataclass
class MethodRow:
    method: str
    seed: int
    auuc: float | None = None
    qini: float | None = None
    failed: bool = False
    error: str = ""


@dataclass
class MedianRow:
    method: str
    auuc: float | None
    qini: float | None
    n_ok: int


@dataclass
class ComparisonReport:
    rows: list[MethodRow]
    medians: list[MedianRow]


def run_comparison(
    cfg: RunConfig,
    out_dir: str | None = None,
    methods: list[str] | None = None,
    seeds: list[int] | None = None,
) -> ComparisonReport:
    """Train and evaluate every (method, seed) cell on fresh synthetic data.

    Per seed: one dataset, one split, and one teacher are shared by all
    methods; test rankings share one tie seed so curves are comparable. A
    failing cell is marked failed and the rest proceed. Rerunning with the
    same config writes byte-identical artifacts.
    """
    methods = methods if methods is not None else cfg.compare_methods()
    seeds = seeds if seeds is not None else cfg.compare_seeds()
    ratios = cfg.split_ratios()
    tree_params = cfg.tree_params()
    rows: list[MethodRow] = []
    for seed in seeds:
        synth_cfg = cfg.synthetic_config(derive_seed(seed, "synth"))
        ds, _ = data_mod.gen_synthetic(synth_cfg)
        split = data_mod.split_dataset(ds, ratios, derive_seed(seed, "split"))
        teacher = tree_mod.fit_tree(split.train, tree_params, derive_seed(seed, "tree"))
        student_cfg = cfg.student_config(derive_seed(seed, "student-init"))
        hyper = cfg.hyper(derive_seed(seed, "train"))
        tie_seed = cfg.tie_seed(seed)
        drop = cfg._bool("train.drop_leftovers")
        for method in methods:
            row = MethodRow(method=method, seed=seed)
            try:
                model, report = _train_one(
                    method, split.train, split.valid, teacher, student_cfg, hyper, drop
                )
                if method == "tm":
                    preds = model.predict_uplift_batch(split.test.features)
                elif method == "mom":
                    preds = student.raw_output_batch(model, split.test.features)
                else:
                    preds = student.predict_uplift_batch(model, split.test.features)
                ev = metrics.rank_eval(preds, split.test.treatment, split.test.outcome, tie_seed)
                row.auuc = metrics.auuc(ev)
                row.qini = metrics.qini_coefficient(ev)
                if out_dir is not None:
                    cell_dir = os.path.join(out_dir, "cells", f"{method}_seed{seed}")
                    os.makedirs(cell_dir, exist_ok=True)
                    _save_predictor(model, os.path.join(cell_dir, "model.json"))
                    distill.write_train_report(report, os.path.join(cell_dir, "train_report.txt"))
                    _write_text(
                        os.path.join(cell_dir, "summary.json"),
                        json.dumps(
                            {
                                "auuc": row.auuc,
                                "qini": row.qini,
                                "n": ev.n,
                                "tie_seed": tie_seed,
                            },
                            indent=1,
                        )
                        + "\n",
                    )
            except KdsmError as e:
                row.failed = True
                row.error = str(e)
            rows.append(row)
    medians: list[MedianRow] = []
    for method in methods:
        ok = [r for r in rows if r.method == method and not r.failed]
        if ok:
            medians.append(
                MedianRow(
                    method=method,
                    auuc=statistics.median(r.auuc for r in ok),
                    qini=statistics.median(r.qini for r in ok),
                    n_ok=len(ok),
                )
            )
        else:
            medians.append(MedianRow(method=method, auuc=None, qini=None, n_ok=0))
    medians.sort(key=lambda m: (m.qini is None, -(m.qini if m.qini is not None else 0.0)))
    report = ComparisonReport(rows=rows, medians=medians)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_text(os.path.join(out_dir, "comparison.txt"), format_comparison_report(report))
    return report


def format_comparison_report(report: ComparisonReport) -> str:
    """Per-seed rows plus a median block sorted by median Qini, descending."""
    lines = ["# comparison report v1", "method\tseed\tauuc\tqini\tstatus"]
    for r in report.rows:
        if r.failed:
            lines.append(f"{r.method}\t{r.seed}\t-\t-\tfailed: {r.error}")
        else:
            lines.append(
                f"{r.method}\t{r.seed}\t{repr(float(r.auuc))}\t{repr(float(r.qini))}\tok"
            )
    lines.append("# medians (sorted by qini, descending)")
    lines.append("method\tauuc_median\tqini_median\tn_ok")
    for m in report.medians:
        if m.n_ok == 0:
            lines.append(f"{m.method}\t-\t-\t0")
        else:
            lines.append(
                f"{m.method}\t{repr(float(m.auuc))}\t{repr(float(m.qini))}\t{m.n_ok}"
            )
    return "\n".join(lines) + "\n"


def cmd_compare(args) -> int:
    cfg = _load_run_config(args)
    report = run_comparison(cfg, out_dir=cfg.out_dir)
    print(format_comparison_report(report), end="")
    failed = [r for r in report.rows if r.failed]
    if failed:
        print(f"warning: {len(failed)} cell(s) failed", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kdsm",
        description="Uplift modeling: tree teacher, distilled student, baselines, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tie=False, method=False, models=False):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, help="master seed (overrides config)")
        p.add_argument("--lambda", dest="lambda_", type=float, help="soft-term weight")
        p.add_argument("--criterion", choices=("ed", "kl"), help="tree split criterion")
        p.add_argument("--out", help="output directory")
        p.add_argument(
            "--drop-leftovers",
            action="store_true",
            help="train on matched pairs only, dropping unpaired rows",
        )
        if tie:
            p.add_argument("--tie-seed", type=int, help="ranking tie-break seed")
        if method:
            p.add_argument("--method", required=True, choices=METHODS)
            p.add_argument(
                "--pair-stream",
                action="store_true",
                help="plain only: consume the tree's pair-grouped stream",
            )
        if models:
            p.add_argument("models", nargs="+", help="predictor file(s) to evaluate")

    common(sub.add_parser("synth", help="generate a synthetic trial dataset"))
    common(sub.add_parser("split", help="stratified train/valid/test split"))
    common(sub.add_parser("fit-tree", help="fit the uplift tree teacher"))
    common(sub.add_parser("train", help="train a student or baseline"), method=True)
    common(sub.add_parser("evaluate", help="rank the test split and report metrics"), tie=True, models=True)
    common(sub.add_parser("compare", help="full method-by-seed comparison table"), tie=True)
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "fit-tree": cmd_fit_tree,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except KdsmError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
