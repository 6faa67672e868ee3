import hashlib
import json
import os

import numpy as np
import pytest

from kdsm.cli import load_predictor, main
from kdsm.data import load_csv
from kdsm.metrics import read_curve_csv
from kdsm.seeds import derive_seed
from kdsm.tree import load_tree, predict_uplift_tree_batch


BASE_CFG = """\
seed = 3
synth.n = 1500
synth.d_numeric = 2
synth.d_categorical = 1
synth.base_rate = 0.3
tree.max_depth = 2
tree.min_samples_per_arm = 30
student.hidden_sizes = 6
student.embedding_dim = 2
train.batch_size = 128
train.max_epochs = 2
train.early_stop_patience = 3
"""


def write_cfg(dirpath, extra=""):
    out = os.path.join(dirpath, "out")
    cfg_path = os.path.join(dirpath, "run.cfg")
    with open(cfg_path, "w", encoding="utf-8") as fh:
        fh.write(BASE_CFG + f"out.dir = {out}\n" + extra)
    return cfg_path, out


def file_hashes(root):
    hashes = {}
    for dirpath, _, names in os.walk(root):
        for name in names:
            p = os.path.join(dirpath, name)
            with open(p, "rb") as fh:
                hashes[os.path.relpath(p, root)] = hashlib.sha256(fh.read()).hexdigest()
    return hashes


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("cli"))
    cfg, out = write_cfg(root)
    assert main(["synth", "--config", cfg]) == 0
    assert main(["split", "--config", cfg]) == 0
    assert main(["fit-tree", "--config", cfg]) == 0
    for method in ("plain", "kdss", "kdsm", "tm", "mom"):
        assert main(["train", "--config", cfg, "--method", method]) == 0
    models = [os.path.join(out, f"model_{m}.json") for m in ("plain", "kdss", "kdsm", "tm", "mom")]
    assert main(["evaluate", "--config", cfg, *models, os.path.join(out, "tree.json")]) == 0
    return cfg, out


def test_pipeline_writes_all_artifacts(pipeline):
    _, out = pipeline
    expected = [
        "dataset.csv",
        "true_cate.csv",
        "schema.json",
        "train.csv",
        "valid.csv",
        "test.csv",
        "split_indices.txt",
        "tree.json",
        "leaf_summary.txt",
    ]
    expected += [f"model_{m}.json" for m in ("plain", "kdss", "kdsm", "tm", "mom")]
    expected += [f"train_report_{m}.txt" for m in ("plain", "kdss", "kdsm", "tm", "mom")]
    for m in ("model_plain", "model_kdsm", "tree"):
        expected += [
            f"eval_{m}/summary.json",
            f"eval_{m}/uplift_curve.csv",
            f"eval_{m}/qini_curve.csv",
        ]
    for rel in expected:
        assert os.path.exists(os.path.join(out, rel)), rel


def test_pipeline_rerun_is_byte_identical(pipeline):
    cfg, out = pipeline
    before = file_hashes(out)
    assert main(["synth", "--config", cfg]) == 0
    assert main(["split", "--config", cfg]) == 0
    assert main(["fit-tree", "--config", cfg]) == 0
    assert main(["train", "--config", cfg, "--method", "kdsm"]) == 0
    assert main(["evaluate", "--config", cfg, os.path.join(out, "model_kdsm.json")]) == 0
    after = file_hashes(out)
    assert before == after


def test_summary_auuc_matches_reintegrated_curve(pipeline):
    _, out = pipeline
    with open(os.path.join(out, "eval_model_kdsm", "summary.json"), encoding="utf-8") as fh:
        summary = json.load(fh)
    curve = read_curve_csv(os.path.join(out, "eval_model_kdsm", "uplift_curve.csv"))
    recomputed = float(np.mean(curve.values / curve.values[-1]))
    assert abs(recomputed - summary["auuc"]) < 1e-12


def test_evaluating_teacher_reproduces_tree_predictions(pipeline):
    _, out = pipeline
    kind, predict, schema = load_predictor(os.path.join(out, "tree.json"))
    assert kind == "tree"
    tree = load_tree(os.path.join(out, "tree.json"))
    test_ds = load_csv(os.path.join(out, "test.csv"), schema)
    assert np.array_equal(predict(test_ds.features), predict_uplift_tree_batch(tree, test_ds.features))


def test_models_share_one_tie_seed(pipeline):
    _, out = pipeline
    seeds = set()
    for m in ("model_plain", "model_kdsm", "model_tm", "model_mom", "tree"):
        with open(os.path.join(out, f"eval_{m}", "summary.json"), encoding="utf-8") as fh:
            seeds.add(json.load(fh)["tie_seed"])
    assert seeds == {derive_seed(3, "eval-ties")}


def test_mom_predictor_loads_as_regression(pipeline):
    _, out = pipeline
    kind, predict, schema = load_predictor(os.path.join(out, "model_mom.json"))
    assert kind == "mom"
    test_ds = load_csv(os.path.join(out, "test.csv"), schema)
    preds = predict(test_ds.features)
    assert preds.shape == (test_ds.n,)
    assert np.all(np.isfinite(preds))


def test_plain_pair_stream_equals_kdsm_at_zero_weight(tmp_path):
    cfg, out = write_cfg(str(tmp_path))
    assert main(["synth", "--config", cfg]) == 0
    assert main(["split", "--config", cfg]) == 0
    assert main(["fit-tree", "--config", cfg]) == 0
    assert main(["train", "--config", cfg, "--method", "kdsm", "--lambda", "0"]) == 0
    assert main(["train", "--config", cfg, "--method", "plain", "--pair-stream"]) == 0
    with open(os.path.join(out, "model_kdsm.json"), "rb") as fh:
        kdsm_bytes = fh.read()
    with open(os.path.join(out, "model_plain.json"), "rb") as fh:
        plain_bytes = fh.read()
    assert kdsm_bytes == plain_bytes


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    cfg, out = write_cfg(str(tmp_path), extra="bogus.key = 1\n")
    assert main(["synth", "--config", cfg]) == 1
    err = capsys.readouterr().err
    assert "bogus.key" in err
    assert ":" in err  # path:lineno prefix
    assert not os.path.exists(os.path.join(out, "dataset.csv"))


def test_invalid_base_rate_fails_before_writing(tmp_path, capsys):
    cfg, out = write_cfg(str(tmp_path), extra="synth.base_rate = 1.5\n")
    assert main(["synth", "--config", cfg]) == 1
    assert "base_rate" in capsys.readouterr().err
    assert not os.path.exists(out)


def test_train_kdsm_without_tree_names_fit_tree(tmp_path, capsys):
    cfg, out = write_cfg(str(tmp_path))
    assert main(["synth", "--config", cfg]) == 0
    assert main(["split", "--config", cfg]) == 0
    assert main(["train", "--config", cfg, "--method", "kdsm"]) == 1
    assert "fit-tree" in capsys.readouterr().err


def test_unknown_method_rejected_by_parser(tmp_path):
    cfg, _ = write_cfg(str(tmp_path))
    with pytest.raises(SystemExit) as exc:
        main(["train", "--config", cfg, "--method", "boosted"])
    assert exc.value.code == 2


def test_evaluate_rejects_schema_mismatch(pipeline, tmp_path, capsys):
    _, out = pipeline
    cfg2, out2 = write_cfg(str(tmp_path), extra="synth.d_numeric = 3\n")
    assert main(["synth", "--config", cfg2]) == 0
    assert main(["split", "--config", cfg2]) == 0
    code = main(["evaluate", "--config", cfg2, os.path.join(out, "model_plain.json")])
    assert code == 1
    assert "schema" in capsys.readouterr().err


def test_compare_report_rows_and_sorted_medians(tmp_path, capsys):
    root = str(tmp_path)
    out = os.path.join(root, "out")
    cfg_path = os.path.join(root, "cmp.cfg")
    with open(cfg_path, "w", encoding="utf-8") as fh:
        fh.write(
            BASE_CFG
            + f"out.dir = {out}\n"
            + "compare.methods = plain,kdsm\n"
            + "compare.seeds = 1,2\n"
        )
    assert main(["compare", "--config", cfg_path]) == 0
    capsys.readouterr()
    path = os.path.join(out, "comparison.txt")
    assert os.path.exists(path)
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "# comparison report v1"
    cell_lines = [l for l in lines if l and not l.startswith("#") and l.split("\t")[0] in ("plain", "kdsm")]
    # 2 methods x 2 seeds plus 2 median rows
    assert len(cell_lines) == 6
    median_idx = lines.index("# medians (sorted by qini, descending)")
    medians = [l.split("\t") for l in lines[median_idx + 2 :] if l]  # skip the header row
    qinis = [float(m[2]) for m in medians]
    assert qinis == sorted(qinis, reverse=True)
    # per-cell artifacts land under cells/
    assert os.path.exists(os.path.join(out, "cells", "kdsm_seed1", "summary.json"))
