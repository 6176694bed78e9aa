import os

import numpy as np
import pytest

import bitsiege as bs
from bitsiege.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main, parse_config


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, desk):
    """victim/model/data files shared by the CLI tests."""
    d = tmp_path_factory.mktemp("cli")
    bs.save_model(desk["model"], d / "victim.model")
    bs.save_dataset(desk["test"], d / "test.data")
    return d


def write_cfg(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_parse_config(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("a = 1 2 3  # comment\n\nb = x\n")
    assert parse_config(p) == {"a": ["1", "2", "3"], "b": ["x"]}


def test_train_command(tmp_path):
    cfg = write_cfg(tmp_path / "t.cfg",
                    "classes = 4\nper_class = 20\ntest_per_class = 5\nepochs = 3\n")
    out = tmp_path / "out"
    assert main(["train", "--config", cfg, "--out", str(out)]) == EXIT_OK
    assert (out / "victim.model").exists()
    assert (out / "test.data").exists()
    bs.load_model(out / "victim.model")


def test_quantize_command(workdir, tmp_path):
    out = tmp_path / "v.qmodel"
    rc = main(["quantize", "--model", str(workdir / "victim.model"), "--nq", "8",
               "--out", str(out)])
    assert rc == EXIT_OK
    q = bs.load_qmodel(out)
    assert q.params[0].bitwidth == 8


def test_attack_command(workdir, tmp_path):
    cfg = write_cfg(tmp_path / "a.cfg", f"""
victim = {workdir / 'victim.model'}
eval = {workdir / 'test.data'}
nq = 8
rp = 1.0
seeds = 0
ranking = fl2r
recon = czr
nbf = 5
""")
    out = tmp_path / "atk"
    assert main(["attack", "--config", cfg, "--out", str(out)]) == EXIT_OK
    traces = [f for f in os.listdir(out) if f.endswith(".trace")]
    assert len(traces) == 1
    tr = bs.load_trace(out / traces[0])
    assert len(tr.accuracies) == 6


def sweep_cfg(workdir, tmp_path, name="s.cfg"):
    return write_cfg(tmp_path / name, f"""
victim = {workdir / 'victim.model'}
eval = {workdir / 'test.data'}
nq = 8 4
rp = 0.7 1.0
seeds = 0 1
ranking = fl2r random
recon = czr
nbf = 4
""")


def test_sweep_and_report(workdir, tmp_path):
    cfg = sweep_cfg(workdir, tmp_path)
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == EXIT_OK
    n_cfg = 2 * 2 * 2 * 2 * 1
    traces = [f for f in os.listdir(out) if f.endswith(".trace")]
    assert len(traces) == n_cfg
    rows = (out / "results.csv").read_text().strip().splitlines()
    assert len(rows) == 1 + n_cfg * 5  # header + configs x (nbf+1)
    assert rows[0] == "nq,rp,seed,ranking,recon,flip_index,accuracy"

    rep = tmp_path / "rep"
    assert main(["report", str(out), "--out", str(rep)]) == EXIT_OK
    report_rows = (rep / "report.csv").read_text().strip().splitlines()
    assert len(report_rows) == 1 + n_cfg * 5
    summary = (rep / "summary.csv").read_text().strip().splitlines()
    assert summary[0] == "nq,rp,ranking,recon,flips,mean_accuracy"
    assert len(summary) == 1 + 8  # nbf=4 keeps only flips=0 per configuration group


def test_sweep_deterministic_and_parallel(workdir, tmp_path):
    cfg = sweep_cfg(workdir, tmp_path)
    outs = []
    for i, jobs in enumerate(("1", "1", "4")):
        out = tmp_path / f"rep{i}"
        assert main(["sweep", "--config", cfg, "--out", str(out), "--jobs", jobs]) == EXIT_OK
        outs.append((out / "results.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_sweep_seed_base(workdir, tmp_path):
    cfg = sweep_cfg(workdir, tmp_path)
    out = tmp_path / "sb"
    assert main(["sweep", "--config", cfg, "--out", str(out), "--seed-base", "50"]) == EXIT_OK
    rows = (out / "results.csv").read_text().strip().splitlines()[1:]
    seeds = {r.split(",")[2] for r in rows}
    assert seeds == {"50", "51"}


def test_usage_errors():
    assert main(["attack"]) == EXIT_USAGE
    assert main(["sweep", "--config", "/nonexistent.cfg", "--out", "/tmp/x"]) in (EXIT_USAGE, EXIT_IO)
    assert main(["frobnicate"]) == EXIT_USAGE


def test_missing_config_key(workdir, tmp_path):
    cfg = write_cfg(tmp_path / "m.cfg", "victim = x\n")
    assert main(["attack", "--config", cfg, "--out", str(tmp_path)]) == EXIT_USAGE


def test_io_error_on_missing_model(tmp_path):
    cfg = write_cfg(tmp_path / "c.cfg", f"""
victim = {tmp_path / 'missing.model'}
eval = {tmp_path / 'missing.data'}
nq = 8
rp = 1.0
ranking = fl2r
recon = czr
nbf = 2
""")
    assert main(["attack", "--config", cfg, "--out", str(tmp_path)]) == EXIT_IO


def test_verify_command(capsys):
    assert main(["verify"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and all(l.startswith("PASS") for l in lines)
