import subprocess
import sys

import numpy as np
import pytest

from spanrank import __version__
from spanrank.cli import RunConfig, build_parser, parse, run
from spanrank.formats import read_matrix_csv, write_instances_binary, write_instances_csv
from spanrank.scatter import LabeledInstanceSet


@pytest.fixture
def instances(tmp_path):
    rng = np.random.default_rng(0)
    labels = np.repeat(np.arange(4), 15)
    data = rng.normal(size=(60, 3)) + np.eye(4, 3)[labels] * 3
    x = LabeledInstanceSet(data, labels, 4)
    write_instances_csv(tmp_path / "x.csv", x)
    write_instances_binary(tmp_path / "x.bin", x)
    return tmp_path


def test_bank_gen_combined(tmp_path, capsys):
    assert run(["bank", "gen", "--name", "combined", "--out", str(tmp_path / "k"), "--resolution", "9"]) == 0
    files = sorted(p.name for p in (tmp_path / "k").iterdir())
    assert len(files) == 99 and files[0] == "kernel_000.csv" and files[-1] == "kernel_098.csv"
    assert read_matrix_csv(tmp_path / "k" / "kernel_050.csv").shape == (9, 9)
    assert "098 schmid" in capsys.readouterr().out


def test_missing_required_option_is_usage_error(capsys):
    assert run(["project", "train", "--out", "p.csv"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("usage: spanrank project train") and "--instances" in err
    assert run(["no-such-command"]) == 1
    assert run([]) == 1
    assert run(["rank", "--projected", "v.csv", "--out", "r.csv", "--bins", "many"]) == 1


def test_data_errors_exit_two(tmp_path, capsys):
    assert run(["project", "train", "--instances", str(tmp_path / "absent.csv"), "--out", str(tmp_path / "p")]) == 2
    (tmp_path / "bad.csv").write_text("f0,f1\n1,2\n")
    assert run(["project", "train", "--instances", str(tmp_path / "bad.csv"), "--out", str(tmp_path / "p")]) == 2
    assert "error" in capsys.readouterr().err


def test_help_and_version(capsys):
    assert run(["--help"]) == 0
    for cmd in (["bank", "gen"], ["project", "train"], ["project", "apply"], ["rank"], ["select"], ["optfilter"],
                ["eval"], ["synth"]):
        assert run(cmd + ["--help"]) == 0
        assert run(cmd + ["--version"]) == 0
    assert f"spanrank {__version__}" in capsys.readouterr().out


def test_train_apply_rank_select_chain(instances):
    d = instances
    for src in ("x.csv", "x.bin"):
        assert run(["project", "train", "--instances", str(d / src), "--out", str(d / f"{src}.proj"),
                    "--trace", str(d / "trace.csv"), "--max-iters", "50"]) == 0
    a = read_matrix_csv(d / "x.csv.proj")
    assert a.shape == (3, 4)
    assert (d / "x.csv.proj").read_bytes() == (d / "x.bin.proj").read_bytes()
    assert (d / "trace.csv").read_text().startswith("iter,H,H1,H2\n")
    assert run(["project", "apply", "--instances", str(d / "x.csv"), "--proj", str(d / "x.csv.proj"),
                "--out", str(d / "v.csv")]) == 0
    v = read_matrix_csv(d / "v.csv")
    x = np.loadtxt(d / "x.csv", delimiter=",", skiprows=1)[:, :3]
    np.testing.assert_allclose(v, x @ a, rtol=1e-12, atol=1e-12)
    assert run(["rank", "--projected", str(d / "v.csv"), "--out", str(d / "r.csv")]) == 0
    assert run(["select", "--projected", str(d / "v.csv"), "--rank", str(d / "r.csv"), "--out", str(d / "s.csv")]) == 0
    rank = read_matrix_csv(d / "r.csv", header=True)
    sel = (d / "s.csv").read_text().splitlines()
    assert sel[0] == "index,v0,v1,v2,v3"
    assert len(sel) - 1 == int(rank[:, 2].sum()) > 0
    assert run(["rank", "--projected", str(d / "v.csv"), "--out", str(d / "t.csv"), "--strategy", "top-m",
                "--m", "5", "--criterion-columns"]) == 0
    top = read_matrix_csv(d / "t.csv", header=True)
    assert top.shape[1] == 7 and int(top[:, 2].sum()) >= 5
    assert run(["rank", "--projected", str(d / "v.csv"), "--out", str(d / "t.csv"), "--strategy", "top-m"]) == 1


def test_select_mismatch_is_data_error(instances):
    d = instances
    write = lambda name, text: (d / name).write_text(text)
    write("v.csv", "1,2,3\n4,5,6\n")
    write("r.csv", "index,score,selected\n0,1,1\n")
    assert run(["select", "--projected", str(d / "v.csv"), "--rank", str(d / "r.csv"), "--out", str(d / "s")]) == 2


def test_config_defaults_and_override(instances):
    d = instances
    (d / "run.cfg").write_text(f"instances = {d / 'x.csv'}\nmax_iters = 3\ninit = random\nseed = 5\n")
    cfg, _ = parse(["project", "train", "--config", str(d / "run.cfg"), "--out", "p.csv", "--seed", "9"])
    assert cfg.options["instances"] == str(d / "x.csv")
    assert cfg.options["max_iters"] == 3 and cfg.options["init"] == "random"
    assert cfg.options["seed"] == 9
    (d / "bad.cfg").write_text("init = sideways\n")
    assert run(["project", "train", "--config", str(d / "bad.cfg"), "--instances", "x", "--out", "y"]) == 1


def test_run_config_round_trip(tmp_path):
    argv = ["eval", "--manifest", "a.csv", "b.csv", "--bank", "S", "--report", "out", "--optimize-filters",
            "--bounds", "scale=1:4", "--bounds", "tau=1:2", "--tol", "1e-09", "--max-filters", "3"]
    cfg, _ = parse(argv)
    text = cfg.to_text()
    assert "command = eval" in text and "optimize_filters = true" in text and "bank = s" in text
    back = RunConfig.from_text(text, build_parser())
    assert back == cfg
    (tmp_path / "r.cfg").write_text(text)
    again, _ = parse(["eval", "--config", str(tmp_path / "r.cfg")])
    assert again == cfg


def test_idempotent_outputs(instances):
    d = instances
    for k in range(2):
        assert run(["project", "train", "--instances", str(d / "x.csv"), "--out", str(d / f"p{k}.csv"),
                    "--init", "random", "--seed", "3", "--max-iters", "40"]) == 0
    assert (d / "p0.csv").read_bytes() == (d / "p1.csv").read_bytes()


def test_small_eval(tmp_path):
    assert run(["synth", "--out", str(tmp_path / "data"), "--classes", "3", "--per-class", "4", "--size", "16",
                "--splits", "2", "--seed", "1"]) == 0
    manifests = sorted(str(p) for p in (tmp_path / "data").glob("split_*.csv"))
    assert len(manifests) == 2
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert run(["eval", "--manifest", *manifests, "--bank", "s", "--max-filters", "2", "--resolution", "5",
                    "--report", str(out), "--keep-rankings"]) == 0
        outs.append(out)
    report = (outs[0] / "report.csv").read_text()
    assert report == (outs[1] / "report.csv").read_text()
    assert report.startswith("# seed = 42\n# bank = S\n# filters = 2\n")
    assert (outs[0] / "split_1" / "filter_001_rank.csv").exists()
    cfg = RunConfig.from_text((outs[0] / "run.cfg").read_text(), build_parser())
    assert cfg.command == "eval" and cfg.options["manifest"] == manifests


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "spanrank", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip() == f"spanrank {__version__}"
