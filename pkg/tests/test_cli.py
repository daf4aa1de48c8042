import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from scaleplan import cli, io
from scaleplan.errors import NumericFailure


def run(argv, capsys=None):
    code = cli.run([str(a) for a in argv])
    if capsys is None:
        return code
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


LANE_GRAPH = {
    "lanelets": [
        {"id": "A", "centerline": [[0, 0], [50, 0]]},
        {"id": "S", "centerline": [[50, 0], [100, 0]]},
        {"id": "L", "centerline": [[50, 0], [50, 50]]},
    ],
    "edges": [{"from": "A", "to": "S", "type": "longitudinal"}, {"from": "A", "to": "L", "type": "longitudinal"}],
}


def build_corpus(d: Path) -> Path:
    """Input files for every subcommand, written under ``d``."""
    assert run(["synth", "--output-dir", d, "--params", "beta=2,c=-0.5,eps_inf=0.1"]) == 0
    assert run(["synth", "--output-dir", d / "b", "--params", "beta=3,c=-0.5,eps_inf=0.1"]) == 0
    assert run(["synth", "--output-dir", d / "sess", "--sessions", 300, "--topology", "chained(0.3)"]) == 0
    rng = np.random.default_rng(1)
    with open(d / "traj.jsonl", "w") as fh:
        for i in range(20):
            truth = rng.normal(size=(6, 2))
            fh.write(json.dumps({"id": f"p{i}", "pred": (truth + rng.normal(size=truth.shape)).tolist(), "truth": truth.tolist()}) + "\n")
    write(d / "runs.csv", "scenario,total_km,failures\na,120.5,2\nb,80,1\n")
    write(d / "graph.json", json.dumps(LANE_GRAPH))
    with open(d / "ego.jsonl", "w") as fh:
        for sid, path in [("s1", [[0, 0], [50, 0], [50, 40]]), ("s1", [[1, 0], [50, 0], [50, 45]]), ("s2", [[0, 0], [95, 0]])]:
            fh.write(json.dumps({"session_id": sid, "path": path}) + "\n")
    write(d / "cases.csv", "target,actual_hours,action\n0.6,16,keep\n0.3,100,keep\n")
    return d


@pytest.fixture
def corpus(tmp_path, capsys):
    d = build_corpus(tmp_path / "in")
    capsys.readouterr()
    return d


def invocations(d: Path):
    return {
        "fit": ["fit", "--input", d / "observations.csv", "--estimator", "m2", "--plot"],
        "fit-auto": ["fit", "--input", d / "observations.csv", "--n-starts", 4],
        "select": ["select", "--input", d / "observations.csv", "--n-starts", 4, "--plot"],
        "predict": ["predict", "--input", d / "model.json", "--target", 0.2],
        "predict-pct": ["predict", "--input", d / "model.json", "--improvement-pct", 10, "--reference-hours", 64],
        "predict-cases": ["predict", "--input", d / "model.json", "--cases", d / "cases.csv"],
        "equivalence": ["equivalence", "--input", d / "model.json", "--model-b", d / "b" / "model.json", "--reference-hours", 1000],
        "metrics": ["metrics", "--input", d / "traj.jsonl"],
        "mdbf": ["mdbf", "--input", d / "runs.csv"],
        "curate": ["curate", "--input", d / "sess" / "sessions.jsonl", "--restarts", 2],
        "label": ["label", "--input", d / "ego.jsonl", "--lane-graph", d / "graph.json"],
        "schedule": ["schedule", "--k", 5],
        "synth": ["synth", "--sigma", 0.01, "--estimator", "m3", "--params", "beta=1.365,c=0.110,gamma=0.0004"],
        "synth-sessions": ["synth", "--sessions", 50],
    }


# -- spec examples ----------------------------------------------------------


def test_schedule_k13_prints_two_epochs(tmp_path, capsys):
    code, out, _ = run(["schedule", "--k", 13, "--output-dir", tmp_path], capsys)
    assert code == 0 and "epochs: 2" in out.splitlines()
    assert json.loads((tmp_path / "schedule.json").read_text())["epochs"] == 2


def test_fit_recovers_synth_m2(tmp_path, capsys):
    truth = {"beta": 1.422, "c": -0.413, "eps_inf": 0.5457}
    assert run(["synth", "--output-dir", tmp_path, "--params", ",".join(f"{k}={v}" for k, v in truth.items())]) == 0
    code, _, _ = run(["fit", "--input", tmp_path / "observations.csv", "--estimator", "m2", "--output-dir", tmp_path / "f"], capsys)
    assert code == 0
    params = json.loads((tmp_path / "f" / "fit.json").read_text())["model"]["params"]
    for k, v in truth.items():
        assert params[k] == pytest.approx(v, rel=1e-4)


def test_select_with_seven_points_exits_2_without_artifacts(tmp_path, capsys):
    run(["synth", "--output-dir", tmp_path, "--hours", "16,32,64,128,256,512,1024"])
    out_dir = tmp_path / "sel"
    code, out, err = run(["select", "--input", tmp_path / "observations.csv", "--output-dir", out_dir], capsys)
    assert code == 2
    assert err.startswith("error: insufficient-heldout:") and err.count("\n") == 1
    assert not out_dir.exists()


# -- exit codes ---------------------------------------------------------------


@pytest.mark.parametrize(
    "argv",
    [[], ["bogus"], ["fit"], ["fit", "--input", "x.csv", "--estimator", "m9"], ["schedule", "--k", "abc"], ["predict", "--input", "m.json"]],
)
def test_usage_errors_exit_1(argv, capsys, tmp_path):
    code, _, err = run(argv + ["--output-dir", tmp_path] if argv else argv, capsys)
    assert code == 1 and err.startswith("error: usage:")


def test_missing_input_is_data_error(tmp_path, capsys):
    code, _, err = run(["fit", "--input", tmp_path / "nope.csv", "--output-dir", tmp_path / "o"], capsys)
    assert code == 2 and err.startswith("error: data-error:")


def test_malformed_csv_is_data_error(tmp_path, capsys):
    bad = write(tmp_path / "bad.csv", "hours,value\n16,abc\n")
    code, _, err = run(["fit", "--input", bad, "--output-dir", tmp_path / "o"], capsys)
    assert code == 2 and "data-error" in err and not (tmp_path / "o").exists()


def test_unreachable_target_exit_2(corpus, tmp_path, capsys):
    code, _, err = run(["predict", "--input", corpus / "model.json", "--target", 0.05, "--output-dir", tmp_path / "o"], capsys)
    assert code == 2 and err.startswith("error: unreachable-target:")


def test_invalid_exponent_exit_2(tmp_path, capsys):
    code, _, err = run(["schedule", "--k", -1, "--output-dir", tmp_path], capsys)
    assert code == 2 and err.startswith("error: invalid-exponent:")


def test_numeric_failure_exit_3(monkeypatch, tmp_path, capsys):
    def boom(args, out):
        raise NumericFailure("did not converge")

    monkeypatch.setitem(cli.COMMANDS, "schedule", boom)
    code, _, err = run(["schedule", "--k", 3, "--output-dir", tmp_path / "o"], capsys)
    assert code == 3 and err == "error: numeric-failure: did not converge\n"
    assert not (tmp_path / "o").exists()


def test_process_exit_status_and_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "scaleplan", "schedule", "--k", "13", "--output-dir", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "epochs: 2" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "scaleplan", "fit"], capture_output=True, text=True)
    assert proc.returncode == 1 and proc.stderr.startswith("error: usage:")


# -- every subcommand, determinism and replay -------------------------------------


@pytest.mark.parametrize("name", list(invocations(Path("."))))
def test_subcommand_runs_and_replays_identically(name, corpus, tmp_path, capsys):
    argv = invocations(corpus)[name]
    out_dir = tmp_path / name
    code, _, err = run(argv + ["--output-dir", out_dir], capsys)
    assert code == 0, err
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["subcommand"] == argv[0] and manifest["seed"] == 42
    assert set(manifest["outputs"]) == {p.name for p in out_dir.iterdir()} - {"manifest.json"}
    for key, entry in manifest["inputs"].items():
        assert entry["sha256"] == io.sha256_file(entry["path"])
    again = tmp_path / (name + "-replay")
    assert run(["replay", "--manifest", out_dir / "manifest.json", "--output-dir", again], capsys)[0] == 0
    for fname in manifest["outputs"]:
        assert (again / fname).read_bytes() == (out_dir / fname).read_bytes(), fname


def test_csv_outputs_use_lf(corpus, tmp_path, capsys):
    for name, argv in invocations(corpus).items():
        run(argv + ["--output-dir", tmp_path / name], capsys)
    csvs = list(tmp_path.rglob("*.csv"))
    assert len(csvs) >= 6
    for p in csvs:
        raw = p.read_bytes()
        assert b"\r" not in raw and raw.endswith(b"\n")
        raw.decode("utf-8")


def test_replay_rejects_changed_input(corpus, tmp_path, capsys):
    obs = tmp_path / "obs.csv"
    obs.write_bytes((corpus / "observations.csv").read_bytes())
    run(["fit", "--input", obs, "--estimator", "m1", "--output-dir", tmp_path / "o"], capsys)
    with open(obs, "a") as fh:
        fh.write("99999,0.1,,,\n")
    code, _, err = run(["replay", "--manifest", tmp_path / "o" / "manifest.json"], capsys)
    assert code == 2 and "changed" in err


def test_replay_bad_manifest(tmp_path, capsys):
    m = write(tmp_path / "manifest.json", "{}")
    assert run(["replay", "--manifest", m], capsys)[0] == 2


def test_seed_changes_synthetic_output(tmp_path, capsys):
    a, b, c = (tmp_path / x for x in "abc")
    run(["synth", "--sigma", 0.05, "--output-dir", a], capsys)
    run(["synth", "--sigma", 0.05, "--output-dir", b], capsys)
    run(["synth", "--sigma", 0.05, "--seed", 7, "--output-dir", c], capsys)
    assert (a / "observations.csv").read_bytes() == (b / "observations.csv").read_bytes()
    assert (a / "observations.csv").read_bytes() != (c / "observations.csv").read_bytes()


# -- environment overrides --------------------------------------------------------


def test_env_overrides(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("SCALEPLAN_SEED", "7")
    monkeypatch.setenv("SCALEPLAN_OUTPUT_DIR", str(tmp_path / "env"))
    assert run(["synth", "--sigma", 0.01], capsys)[0] == 0
    assert json.loads((tmp_path / "env" / "manifest.json").read_text())["seed"] == 7
    # flags win over the environment
    assert run(["synth", "--seed", 3, "--output-dir", tmp_path / "flag"], capsys)[0] == 0
    assert json.loads((tmp_path / "flag" / "manifest.json").read_text())["seed"] == 3


def test_env_input_satisfies_required_flag(monkeypatch, corpus, tmp_path, capsys):
    monkeypatch.setenv("SCALEPLAN_INPUT", str(corpus / "runs.csv"))
    code, out, _ = run(["mdbf", "--output-dir", tmp_path], capsys)
    assert code == 0 and "MDBF" in out


def test_malformed_env_value_is_usage_error(monkeypatch, capsys):
    monkeypatch.setenv("SCALEPLAN_SEED", "seven")
    assert run(["schedule", "--k", 3], capsys)[0] == 1


# -- atomic writes ----------------------------------------------------------------


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "x.csv"
    io.atomic_write(target, "a\n")
    io.atomic_write(target, "b\n")
    assert target.read_text() == "b\n" and [p.name for p in tmp_path.iterdir()] == ["x.csv"]


def test_atomic_write_failure_keeps_old_file(tmp_path, monkeypatch):
    target = tmp_path / "x.csv"
    io.atomic_write(target, "old\n")

    def fail(src, dst):
        raise OSError("disk full")

    monkeypatch.setattr(os, "replace", fail)
    with pytest.raises(OSError):
        io.atomic_write(target, "new\n")
    assert target.read_text() == "old\n" and [p.name for p in tmp_path.iterdir()] == ["x.csv"]


# -- content checks -------------------------------------------------------------


def test_plot_svg_is_log_x(corpus, tmp_path, capsys):
    run(invocations(corpus)["fit"] + ["--output-dir", tmp_path], capsys)
    svg = (tmp_path / "fit.svg").read_text()
    assert svg.startswith("<?xml") and "<svg" in svg and "Date" not in svg


def test_label_csv_content(corpus, tmp_path, capsys):
    run(invocations(corpus)["label"] + ["--output-dir", tmp_path], capsys)
    rows = io.read_labels(tmp_path / "labels.csv")
    assert [(s, l.action_type) for s, l in rows] == [("s1", "turn"), ("s2", "turn")]
    assert rows[0][1].angle == pytest.approx(90, abs=2)


def test_curate_outputs(corpus, tmp_path, capsys):
    code, out, _ = run(invocations(corpus)["curate"] + ["--output-dir", tmp_path], capsys)
    assert code == 0 and "shared cells across splits: 0" in out
    lines = (tmp_path / "assignment.csv").read_text().splitlines()
    assert lines[0] == "session_id,split,tier" and len(lines) == 301
