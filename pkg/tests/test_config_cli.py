import json
from collections import Counter

import numpy as np
import pytest

from reliefkit import errors
from reliefkit.config import DEFAULTS, PROFILE_SAMPLES, load_config, output_root, read_config_file
from reliefkit.mesh import PatternLabeling
from reliefkit.meshio import read_labels_csv, read_ply, write_labels_csv
from reliefkit.metrics import read_report
from reliefkit.retrieval import MembershipMatrix
from reliefkit.synth.dataset import read_manifest

from conftest import run_cli

SMALL = """# small smoke config
splits = 3,8,6
two_pattern_queries = 1
resolution = 3000
workers = 1
"""


# -------------------------------------------------------------------- config

def test_empty_config_gives_defaults(tmp_path):
    (tmp_path / "empty.cfg").write_text("")
    cfg = load_config(tmp_path / "empty.cfg")
    for k, v in DEFAULTS.items():
        assert cfg.values[k] == v
    assert cfg["sample_count"] == PROFILE_SAMPLES["desk"]


def test_flag_beats_file(tmp_path):
    (tmp_path / "c.cfg").write_text("seed = 3\ntau = 0.5\n")
    assert load_config(tmp_path / "c.cfg")["seed"] == 3
    cfg = load_config(tmp_path / "c.cfg", overrides={"seed": 9})
    assert cfg["seed"] == 9 and cfg["tau"] == 0.5


def test_unknown_key_is_named(tmp_path):
    (tmp_path / "bad.cfg").write_text("speling = 3\n")
    with pytest.raises(errors.DataError, match="speling"):
        read_config_file(tmp_path / "bad.cfg")


def test_config_parse_errors(tmp_path):
    (tmp_path / "a.cfg").write_text("seed three\n")
    with pytest.raises(errors.DataError, match="expected 'key = value'"):
        read_config_file(tmp_path / "a.cfg")
    (tmp_path / "b.cfg").write_text("seed = three\n")
    with pytest.raises(errors.DataError, match="cannot parse"):
        read_config_file(tmp_path / "b.cfg")
    (tmp_path / "c.cfg").write_text("splits = 1,2\n")
    with pytest.raises(errors.DataError, match="splits"):
        read_config_file(tmp_path / "c.cfg")
    (tmp_path / "d.cfg").write_text("# only comments\n\nprofile = full  # trailing\n")
    assert load_config(tmp_path / "d.cfg")["sample_count"] == PROFILE_SAMPLES["full"]


def test_output_root_from_environment(monkeypatch, tmp_path):
    monkeypatch.delenv("RELIEFKIT_OUT", raising=False)
    assert str(output_root()) == "reliefkit-out"
    monkeypatch.setenv("RELIEFKIT_OUT", str(tmp_path / "elsewhere"))
    assert output_root() == tmp_path / "elsewhere"


# ---------------------------------------------------------------- exit codes

def test_usage_errors_exit_1(tmp_path):
    assert run_cli("frobnicate") == 1
    assert run_cli() == 1
    assert run_cli("segment") == 1  # --data is required
    assert run_cli("generate", "--seed", "x") == 1
    assert run_cli("generate", "--set", "noequals", "--out", tmp_path) == 1
    assert run_cli("segment", "--data", tmp_path, "--splits", "bogus") == 1


def test_help_exits_0(capsys):
    assert run_cli("--help") == 0
    assert "generate" in capsys.readouterr().out


def test_data_errors_exit_2(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("speling = 3\n")
    assert run_cli("generate", "--config", tmp_path / "bad.cfg", "--out", tmp_path / "d") == 2
    assert "speling" in capsys.readouterr().err
    assert run_cli("generate", "--set", "speling=3", "--out", tmp_path / "d") == 2
    (tmp_path / "data").mkdir()
    (tmp_path / "data" / "manifest.jsonl").write_text("{not json\n")
    assert run_cli("segment", "--data", tmp_path / "data", "--out", tmp_path / "s") == 2
    assert run_cli("segment", "--data", tmp_path / "missing", "--out", tmp_path / "s") == 2


# -------------------------------------------------------------- subcommands

def test_generate_desk_counts(desk_runs):
    root = desk_runs[0]["root"]
    entries = read_manifest(root / "data")
    assert Counter(e.split for e in entries) == {"query": 5, "retrieval": 30, "training": 70}
    summary = json.loads((root / "data" / "summary.json").read_text())
    assert summary["config"]["seed"] == 7 and summary["config"]["profile"] == "desk"


def test_summary_records_effective_config(desk_runs):
    root = desk_runs[0]["root"]
    seg = json.loads((root / "seg" / "summary.json").read_text())
    assert seg["config"]["seed"] == 7 and seg["config"]["tau"] == 0.4
    assert seg["config"]["sample_count"] == PROFILE_SAMPLES["desk"]
    ev = json.loads((root / "eval" / "summary.json").read_text())
    assert set(ev["metrics"]) >= {"NN", "FT", "ST", "mAP", "nDCG", "e", "AUC"}
    assert ev["config"]["cutoff"] == 32


def test_evaluate_hand_fixture(tmp_path):
    labels = tmp_path / "labels"
    labels.mkdir()
    write_labels_csv(labels / "q.csv", PatternLabeling([1, 1]))
    for name, cls in zip("abcd", (1, 2, 1, 2)):
        write_labels_csv(labels / f"{name}.csv", PatternLabeling([cls, 0]))
    MembershipMatrix(np.array([[0.9, 0.8, 0.7, 0.1]]), ["q"], list("abcd")).to_csv(tmp_path / "m.csv")
    assert run_cli("evaluate", "--membership", tmp_path / "m.csv", "--truth", labels,
                   "--out", tmp_path / "ev") == 0
    rows = read_report(tmp_path / "ev" / "report.jsonl")
    assert rows[1]["id"] == "q"
    assert abs(rows[1]["AP"] - 0.8333) < 1e-4
    assert rows[0]["AUC"] == 0.75
    roc = (tmp_path / "ev" / "roc.csv").read_text().splitlines()
    assert roc[0] == "threshold,fpr,tpr"


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    (root / "small.cfg").write_text(SMALL)
    common = ("--config", root / "small.cfg", "--seed", 3)
    assert run_cli("generate", *common, "--out", root / "data") == 0
    assert run_cli("segment", *common, "--data", root / "data", "--out", root / "seg") == 0
    return root, common


def test_both_retrieval_methods_feed_evaluate(small_run):
    root, common = small_run
    assert run_cli("retrieve", *common, "--data", root / "data", "--labels", root / "seg" / "labels",
                   "--out", root / "sig.csv") == 0
    assert run_cli("retrieve", *common, "--data", root / "data", "--method", "multiview",
                   "--set", "view_resolution=48", "--out", root / "mv.csv") == 0
    for name in ("sig", "mv"):
        M = MembershipMatrix.from_csv(root / f"{name}.csv")
        assert M.shape == (3, 8)
        assert run_cli("evaluate", "--membership", root / f"{name}.csv", "--truth", root / "data",
                       "--out", root / f"ev-{name}") == 0
        summary = json.loads((root / f"ev-{name}" / "summary.json").read_text())
        assert 0.0 <= summary["metrics"]["mAP"] <= 1.0
    method = json.loads((root / "mv.summary.json").read_text())
    assert method["method"] == "multiview" and method["config"]["view_resolution"] == 48


def test_retrieve_default_output_uses_environment(small_run, monkeypatch, tmp_path):
    root, common = small_run
    monkeypatch.setenv("RELIEFKIT_OUT", str(tmp_path / "env-out"))
    assert run_cli("retrieve", *common, "--data", root / "data", "--labels", root / "seg" / "labels") == 0
    assert (tmp_path / "env-out" / "membership-signature.csv").exists()


def test_export_labeled_meshes(small_run):
    root, common = small_run
    assert run_cli("export", "--data", root / "data", "--labels", root / "seg" / "labels",
                   "--out", root / "ply") == 0
    entries = [e for e in read_manifest(root / "data") if e.split != "training"]
    summary = json.loads((root / "ply" / "summary.json").read_text())
    assert len(summary["files"]) == len(entries)
    e = entries[0]
    raw = read_ply(root / "ply" / f"{e.id}.ply")
    assert len(raw["faces"]) == len(read_labels_csv(root / "seg" / "labels" / f"{e.id}.csv").labels)

    one = root / "ply" / "one.ply"
    assert run_cli("export", "--mesh", e.path, "--labels", root / "seg" / "labels" / f"{e.id}.csv",
                   "--binary", "--out", one) == 0
    assert one.read_bytes().startswith(b"ply\nformat binary_little_endian")
