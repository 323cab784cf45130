import csv
import json

import numpy as np
import pytest

from fmce import fmcs_dataset
from fmce.cli import args_from_snapshot, build_parser, config_snapshot, main
from fmce.report import read_pgm

from .fmcs_fixtures import perfect_model, separable


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


# -- analyze ---------------------------------------------------------------------

def test_analyze_fixture_matches_oracle(capsys, fixtures_dir):
    code, out, _ = run(capsys, "analyze", "--loss", fixtures_dir / "exp_decay.csv")
    assert code == 0
    report = json.loads(out)
    oracle = json.loads((fixtures_dir / "exp_decay_oracle.json").read_text())
    assert report["markers"] == oracle["markers"]
    assert report["convergence_epoch"] == oracle["converged_epoch"]
    assert report["baseline_epoch"] == oracle["baseline_epoch"]
    assert report["run_id"] == "exp_decay"
    assert {"alpha", "mode", "window", "mu", "k", "total_drop", "per_phase_drop"} <= report.keys()


def test_analyze_k2(capsys, fixtures_dir):
    code, out, _ = run(capsys, "analyze", "--loss", fixtures_dir / "exp_decay.csv", "--k", 2)
    report = json.loads(out)
    assert code == 0
    assert len(report["markers"]) == 2
    assert report["markers"][1] == report["convergence_epoch"]


def test_analyze_flat_curve_is_degenerate(capsys, fixtures_dir):
    code, out, err = run(capsys, "analyze", "--loss", fixtures_dir / "flat.csv")
    assert code == 4
    assert "degenerate" in err
    assert out == ""


def test_analyze_not_converged(capsys, fixtures_dir):
    code, _, err = run(capsys, "analyze", "--loss", fixtures_dir / "exp_decay.csv", "--mu", "1e-12")
    assert code == 3
    assert "converge" in err


def test_analyze_infeasible(capsys, tmp_path):
    log = tmp_path / "short.csv"
    log.write_text("epoch,loss\n" + "".join(f"{m},{2 * 0.5 ** m}\n" for m in range(1, 4)))
    code, _, err = run(capsys, "analyze", "--loss", log, "--mu", "10", "--window", 1, "--k", 5)
    assert code == 4
    assert err


@pytest.mark.parametrize("text", ["epoch,loss\n1,0.5\n3,0.4\n", "epoch,loss\n1,abc\n2,0.1\n", "nonsense"])
def test_analyze_bad_log(capsys, tmp_path, text):
    log = tmp_path / "bad.csv"
    log.write_text(text)
    code, _, err = run(capsys, "analyze", "--loss", log)
    assert code == 2
    assert "error" in err


def test_analyze_missing_file(capsys, tmp_path):
    assert run(capsys, "analyze", "--loss", tmp_path / "none.csv")[0] == 2


@pytest.mark.parametrize("argv", [
    ["analyze"],
    ["analyze", "--loss", "x", "--mode", "median"],
    ["analyze", "--loss", "x", "--window", "0"],
    ["pipeline", "--out", "x", "--epochs", "ten"],
    ["frobnicate"],
])
def test_parse_errors_exit_2(capsys, argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_analyze_emits_curves_and_report_file(capsys, fixtures_dir, tmp_path):
    out_json = tmp_path / "plan.json"
    code, out, _ = run(capsys, "analyze", "--loss", fixtures_dir / "exp_decay.csv", "--out", out_json,
                       "--emit-curves", tmp_path / "curves", "--no-figures")
    assert code == 0 and out == ""
    report = json.loads(out_json.read_text())
    with (tmp_path / "curves" / "curves.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "raw", "smoothed", "log_smoothed", "cqi"]
    assert len(rows) == 200 and rows[0]["cqi"] == ""
    assert float(rows[1]["raw"]) == pytest.approx(2 * np.exp(-0.1))
    with (tmp_path / "curves" / "markers.csv").open() as fh:
        markers = [int(r["epoch"]) for r in csv.DictReader(fh)]
    assert markers == report["markers"]
    assert not (tmp_path / "curves" / "curves.png").exists()


def test_analyze_is_idempotent(capsys, fixtures_dir, tmp_path):
    for name in ("a", "b"):
        run(capsys, "analyze", "--loss", fixtures_dir / "exp_decay.csv", "--out", tmp_path / f"{name}.json",
            "--emit-curves", tmp_path / name)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    for f in ("curves.csv", "markers.csv", "curves.png"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


# -- help and config snapshots ---------------------------------------------------------

def _subparsers(parser):
    for action in parser._actions:
        if action.choices and isinstance(action.choices, dict):
            return action.choices
    raise AssertionError("no subcommands")


def test_help_lists_every_flag_and_default():
    subs = _subparsers(build_parser())
    assert set(subs) == {"analyze", "pipeline", "train-original", "dataset", "train-fmce", "eval-fmce", "gradcam"}
    for name, p in subs.items():
        text = " ".join(p.format_help().split())
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)
            if action.option_strings and action.help and action.dest != "help":
                assert f"default: {action.default}" in text, (name, action.dest)
    text = " ".join(subs["pipeline"].format_help().split())
    assert "--k K number of convergence scores (default: 5)" in text
    assert "--epochs EPOCHS original-task epochs (default: 60)" in text


SNAPSHOT_CASES = [
    ["analyze", "--loss", "l.csv", "--alpha", "0.7", "--mode", "paper-literal", "--k", "4", "--emit-curves", "d"],
    ["pipeline", "--seed", "3", "--out", "o", "--mu", "0.002", "--no-figures", "--fmce-lr", "0.01"],
    ["train-original", "--out", "t", "--epochs", "5"],
    ["dataset", "--trace", "t", "--plan", "p.json", "--out", "d.fmcs", "--split-seed", "9"],
    ["train-fmce", "--dataset", "d.fmcs", "--out", "m.fmck", "--no-normalise"],
    ["eval-fmce", "--model", "m.fmck", "--dataset", "d.fmcs", "--split", "all"],
    ["gradcam", "--model", "m.fmck", "--dataset", "d.fmcs", "--indices", "1,5,9", "--target", "2", "--out", "g"],
]


@pytest.mark.parametrize("argv", SNAPSHOT_CASES, ids=lambda a: a[0])
def test_config_snapshot_round_trips(argv, capsys):
    parser = build_parser()
    snap = config_snapshot(parser.parse_args(argv))
    again = config_snapshot(parser.parse_args(args_from_snapshot(snap)))
    assert again == snap
    assert main(argv + ["--print-config"]) == 0
    assert json.loads(capsys.readouterr().out) == json.loads(json.dumps(snap))


def test_mode_alias_normalised():
    args = build_parser().parse_args(["analyze", "--loss", "x", "--mode", "paper_literal"])
    assert args.mode == "paper-literal"


# -- stage commands --------------------------------------------------------------------

@pytest.fixture
def perfect_files(tmp_path):
    ds = separable()
    ds_path = tmp_path / "sep.fmcs"
    fmcs_dataset.save(ds, ds_path)
    model_path = tmp_path / "model.fmck"
    perfect_model(ds).save(model_path)
    return ds_path, model_path


def test_eval_perfect_predictions(capsys, perfect_files, tmp_path):
    ds_path, model_path = perfect_files
    code, out, _ = run(capsys, "eval-fmce", "--model", model_path, "--dataset", ds_path)
    assert code == 0
    m = json.loads(out)
    assert (m["accuracy"], m["precision"], m["recall"], m["f1"]) == (1.0, 1.0, 1.0, 1.0)
    code, _, _ = run(capsys, "eval-fmce", "--model", model_path, "--dataset", ds_path,
                     "--out", tmp_path / "m.json", "--split", "all")
    assert code == 0
    assert json.loads((tmp_path / "m.json").read_text())["confusion"] == [[40, 0, 0], [0, 40, 0], [0, 0, 40]]
    assert (tmp_path / "m.png").exists()


def test_eval_missing_model(capsys, perfect_files, tmp_path):
    ds_path, _ = perfect_files
    code, _, err = run(capsys, "eval-fmce", "--model", tmp_path / "nope.fmck", "--dataset", ds_path)
    assert code == 15 and "evaluate" in err


def test_gradcam_one_pgm_per_index(capsys, perfect_files, tmp_path):
    ds_path, model_path = perfect_files
    out = tmp_path / "gc"
    code, stdout, _ = run(capsys, "gradcam", "--model", model_path, "--dataset", ds_path,
                          "--indices", "0,41,100,7", "--out", out)
    assert code == 0
    pgms = sorted(out.glob("*.pgm"))
    assert len(pgms) == 4 and len(stdout.splitlines()) == 4
    index = json.loads((out / "index.json").read_text())
    assert [e["index"] for e in index["samples"]] == [0, 41, 100, 7]
    assert [e["target"] for e in index["samples"]] == [1, 2, 3, 1]
    for e in index["samples"]:
        img = read_pgm(out / e["pgm"])
        assert img.shape == tuple(e["shape"])
        np.testing.assert_array_equal(img, np.round(np.array(e["heatmap"]) * 255))
    assert (out / "gradcam.png").exists()


def test_gradcam_bad_index(capsys, perfect_files, tmp_path):
    ds_path, model_path = perfect_files
    code, _, err = run(capsys, "gradcam", "--model", model_path, "--dataset", ds_path,
                       "--indices", "5000", "--out", tmp_path)
    assert code == 16 and "5000" in err


def test_dataset_missing_checkpoint_names_epoch(capsys, small_run, tmp_path):
    _, trace = small_run
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"markers": [2, 4, 17]}))
    code, _, err = run(capsys, "dataset", "--trace", trace.root, "--plan", plan, "--out", tmp_path / "d.fmcs")
    assert code == 13
    assert "marker epoch 17" in err


def test_stage_commands_chain(capsys, small_run, small_fmcs_bytes, tmp_path):
    _, trace = small_run
    plan = tmp_path / "plan.json"
    plan.write_text(json.dumps({"markers": [2, 4, 6]}))
    ds_path = tmp_path / "fmcs" / "d.fmcs"
    assert run(capsys, "dataset", "--trace", trace.root, "--plan", plan, "--out", ds_path)[0] == 0
    assert fmcs_dataset.loads(ds_path.read_bytes()).features.tobytes() == \
        fmcs_dataset.loads(small_fmcs_bytes[0]).features.tobytes()
    model = tmp_path / "m.fmck"
    assert run(capsys, "train-fmce", "--dataset", ds_path, "--out", model, "--fmce-epochs", 2)[0] == 0
    assert (tmp_path / "m.json").exists() and (tmp_path / "m.loss.csv").exists()
    code, out, _ = run(capsys, "eval-fmce", "--model", model, "--dataset", ds_path)
    assert code == 0 and 0.0 <= json.loads(out)["accuracy"] <= 1.0


def test_train_fmce_without_split(capsys, tmp_path):
    path = tmp_path / "d.fmcs"
    path.write_bytes(fmcs_dataset.dumps(separable()))
    code, _, err = run(capsys, "train-fmce", "--dataset", path, "--out", tmp_path / "m.fmck")
    assert code == 14 and "split" in err


def test_train_original_command(capsys, tmp_path):
    code, out, _ = run(capsys, "train-original", "--out", tmp_path / "t", "--epochs", 2, "--n-per-class", 50)
    assert code == 0
    assert len(list((tmp_path / "t" / "checkpoints").glob("*.fmck"))) == 2
    assert run(capsys, "train-original", "--out", tmp_path / "u", "--n-per-class", 10)[0] == 10


def test_pipeline_invalid_config(capsys, tmp_path):
    code, _, err = run(capsys, "pipeline", "--out", tmp_path, "--alpha", "1.5")
    assert code == 2 and "alpha" in err


def test_pipeline_stage_failure_code(capsys, tmp_path):
    code, _, err = run(capsys, "pipeline", "--out", tmp_path, "--epochs", 3, "--n-per-class", 50,
                       "--mu", "1e-12", "--no-figures")
    assert code == 12
    assert "stage analyze" in err
    assert (tmp_path / "analysis" / "curves.csv").exists()
