import json

import numpy as np
import pytest

from hanfuse import kernels
from hanfuse.cli import main
from hanfuse.engine import HanConfig, init_params, zero_router_params
from hanfuse.formats import read_params, read_tensor, write_params, write_tensor

from conftest import _available

SMALL = {"C": 8, "H": 3, "W": 3, "L": 2, "G": 4}


@pytest.fixture(autouse=True)
def restore_backend():
    before = kernels.backend
    yield
    kernels.set_backend(before)


@pytest.fixture
def workdir(tmp_path, rng):
    (tmp_path / "cfg.json").write_text(json.dumps(SMALL))
    for i in range(2):
        write_tensor(tmp_path / f"rgb{i}.ftns", rng.standard_normal((8, 3, 3)))
        write_tensor(tmp_path / f"tir{i}.ftns", rng.standard_normal((8, 3, 3)))
    assert main(["init", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "p.fprm")]) == 0
    return tmp_path


def forward(d, *extra, params="p.fprm", pairs=1):
    argv = ["forward", "--params", str(d / params), "--out", str(d / "fused.ftns"),
            "--rgb", *[str(d / f"rgb{i}.ftns") for i in range(pairs)],
            "--tir", *[str(d / f"tir{i}.ftns") for i in range(pairs)], *extra]
    return main(argv)


def test_init_defaults_and_counts(tmp_path, capsys):
    assert main(["init", "--out", str(tmp_path / "p.fprm")]) == 0
    out = capsys.readouterr().out
    assert "param_count" in out and "flop_count" in out
    read_params(tmp_path / "p.fprm", HanConfig())


def test_init_bad_group_count(tmp_path, capsys):
    assert main(["init", "--set", "G=7", "--set", "C=16", "--out", str(tmp_path / "p.fprm")]) == 2
    assert "G must divide C" in capsys.readouterr().err
    assert not (tmp_path / "p.fprm").exists()


def test_init_unknown_field(tmp_path, capsys):
    assert main(["init", "--set", "depth=3", "--out", str(tmp_path / "p.fprm")]) == 2
    assert "depth" in capsys.readouterr().err


def test_init_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["init", "--seed", "7", "--set", "C=8", "--set", "G=4", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_forward_writes_fused_and_trace(workdir, capsys):
    assert forward(workdir, "--trace", str(workdir / "t.json")) == 0
    assert read_tensor(workdir / "fused.ftns").shape == (8, 3, 3)
    assert "layer 1: gates min" in capsys.readouterr().out
    doc = json.loads((workdir / "t.json").read_text())
    assert len(doc["frames"]) == 1


def test_forward_zero_routers(workdir):
    cfg = HanConfig(**SMALL)
    write_params(workdir / "z.fprm", zero_router_params(init_params(cfg)))
    assert forward(workdir, params="z.fprm") == 0
    assert not read_tensor(workdir / "fused.ftns").any()


def test_forward_replay_bit_exact(workdir):
    assert forward(workdir, "--trace", str(workdir / "t.json"), pairs=2) == 0
    first = [read_tensor(workdir / f"fused_{i}.ftns").tobytes() for i in range(2)]
    assert forward(workdir, "--replay", str(workdir / "t.json"), pairs=2) == 0
    assert [read_tensor(workdir / f"fused_{i}.ftns").tobytes() for i in range(2)] == first


def test_forward_jobs_match_serial(workdir):
    assert forward(workdir, pairs=2) == 0
    serial = [(workdir / f"fused_{i}.ftns").read_bytes() for i in range(2)]
    assert forward(workdir, "--jobs", "2", pairs=2) == 0
    assert [(workdir / f"fused_{i}.ftns").read_bytes() for i in range(2)] == serial


def test_forward_mismatched_channels(workdir, rng):
    write_tensor(workdir / "rgb0.ftns", rng.standard_normal((16, 3, 3)))
    write_tensor(workdir / "tir0.ftns", rng.standard_normal((16, 3, 3)))
    assert forward(workdir) == 2


def test_forward_mismatched_modalities(workdir, rng):
    write_tensor(workdir / "tir0.ftns", rng.standard_normal((8, 3, 4)))
    assert forward(workdir) == 2


def test_forward_missing_file(workdir):
    assert forward(workdir, params="nope.fprm") == 2


def test_trace_dot(workdir, capsys):
    assert forward(workdir, "--trace", str(workdir / "t.json")) == 0
    assert main(["trace", "--trace", str(workdir / "t.json"), "--dot", str(workdir / "g.dot")]) == 0
    text = (workdir / "g.dot").read_text()
    assert text.startswith("digraph han {")
    capsys.readouterr()
    assert main(["trace", "--trace", str(workdir / "t.json"), "--print-dot"]) == 0
    assert capsys.readouterr().out.startswith(text)
    assert main(["trace", "--trace", str(workdir / "t.json"), "--frame", "3"]) == 2


def test_check_fast(capsys):
    assert main(["check", "--level", "fast"]) == 0
    out = capsys.readouterr().out
    assert "all suites passed" in out
    assert "FAIL" not in out


def test_check_corrupted_params(tmp_path, capsys, monkeypatch):
    import hanfuse.checks

    monkeypatch.setattr(hanfuse.checks, "run_suites", lambda level: [])
    (tmp_path / "bad.fprm").write_bytes(b"FPRM\x01\xff\xff")
    assert main(["check", "--params", str(tmp_path / "bad.fprm")]) == 1
    assert "format error" in capsys.readouterr().out


def test_synth_and_train_demo(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--set", "C=8", "--set", "G=4", "--set", "H=4", "--set", "W=4", "--set", "L=2",
                 "--counts", "noisy-tir=1,noisy-rgb=1", "--out", str(data)]) == 0
    assert len(json.loads((data / "manifest.json").read_text())["scenarios"]) == 2
    assert main(["train-demo", "--data", str(data), "--steps", "3", "--out", str(tmp_path / "r.json"),
                 "--params-out", str(tmp_path / "trained.fprm")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert len(report["losses"]) == 4 and set(report["gate_means"]) == {"noisy-tir", "noisy-rgb"}
    read_params(tmp_path / "trained.fprm", HanConfig(C=8, G=4, H=4, W=4, L=2))


def test_train_demo_divergence_exit(tmp_path):
    data = tmp_path / "data"
    main(["synth", "--set", "C=8", "--set", "G=4", "--set", "L=1", "--counts", "noisy-tir=1,clean-both=1",
          "--out", str(data)])
    assert main(["train-demo", "--data", str(data), "--steps", "50", "--step-size", "1e6"]) == 1


def test_synth_bad_counts(tmp_path):
    assert main(["synth", "--counts", "rainy=2", "--out", str(tmp_path / "d")]) == 2


def test_bench(capsys):
    assert main(["bench", "--runs", "2", "--set", "C=8", "--set", "G=4", "--set", "H=4", "--set", "W=4"]) == 0
    out = capsys.readouterr().out
    for name in _available():
        assert f"{name}: forward median" in out


def test_kernel_flag(workdir):
    assert main(["--kernels", "numpy", "forward", "--params", str(workdir / "p.fprm"), "--rgb",
                 str(workdir / "rgb0.ftns"), "--tir", str(workdir / "tir0.ftns"), "--out", str(workdir / "f.ftns")]) == 0
    assert kernels.backend == "numpy"


@pytest.mark.parametrize("argv", [["frobnicate"], ["init"], ["forward", "--bogus"], []])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err
