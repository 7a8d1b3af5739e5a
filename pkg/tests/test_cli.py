import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from adubf import autodiff as ad
from adubf.cli import RESULT_COLUMNS, SCHEMA_VERSION, main, read_rows
from adubf.gradcheck import FAMILIES, run_gradcheck

CONFIG = """
[layout]
M = 2
K = 2
Nt = 4
Nr = 2
[model]
B = 4
encoder_widths = 16
preproc_widths = 16
[training]
epochs = 2
batch_size = 32
train_samples = 64
test_samples = 20
[sweep]
grid = 2, 4
"""


@pytest.fixture
def cfg_path(tmp_path, monkeypatch):
    for k in list(os.environ):
        if k.startswith("ADUBF_"):
            monkeypatch.delenv(k)
    p = tmp_path / "c.ini"
    p.write_text(CONFIG)
    return str(p)


@pytest.fixture
def data(tmp_path, cfg_path):
    tr, te = str(tmp_path / "tr.bin"), str(tmp_path / "te.bin")
    assert main(["gen-data", "--config", cfg_path, "--out", tr]) == 0
    assert main(["gen-data", "--config", cfg_path, "--out", te, "--seed", "2",
                 "--count", "20"]) == 0
    return tr, te


def test_gen_data_is_bit_identical(tmp_path, cfg_path, data):
    again = str(tmp_path / "again.bin")
    main(["gen-data", "--config", cfg_path, "--out", again])
    assert Path(again).read_bytes() == Path(data[0]).read_bytes()


def test_gen_data_zero_count_is_config_error(tmp_path, cfg_path, capsys):
    code = main(["gen-data", "--config", cfg_path, "--out", str(tmp_path / "x.bin"),
                 "--count", "0"])
    assert code != 0
    assert capsys.readouterr().err.startswith("error[config]:")


def test_train_eval_baseline_pipeline(tmp_path, cfg_path, data):
    tr, te = data
    ckpt, log = str(tmp_path / "m.ckpt"), str(tmp_path / "log.csv")
    assert main(["train", "--config", cfg_path, "--data", tr, "--ckpt", ckpt,
                 "--out", log]) == 0
    schema, rows = read_rows(log)
    assert schema == "adubf-trainlog/1" and len(rows) == 2
    assert all(np.isfinite(float(r["loss"])) for r in rows)

    out1, out2 = str(tmp_path / "e1.csv"), str(tmp_path / "e2.csv")
    assert main(["eval", "--ckpt", ckpt, "--data", te, "--out", out1]) == 0
    assert main(["eval", "--ckpt", ckpt, "--data", te, "--out", out2]) == 0
    schema, ev1 = read_rows(out1)
    _, ev2 = read_rows(out2)
    assert schema == SCHEMA_VERSION
    strip = lambda rows: [{k: v for k, v in r.items() if k != "wall_time_s"} for r in rows]
    assert strip(ev1) == strip(ev2)
    assert list(ev1[0]) == list(RESULT_COLUMNS)

    perf = str(tmp_path / "p.csv")
    assert main(["baseline", "--config", cfg_path, "--data", te, "--scheme", "perfect",
                 "--out", perf]) == 0
    _, pr = read_rows(perf)
    assert float(pr[0]["mean_rate_bits"]) >= float(ev1[0]["mean_rate_bits"]) >= 0


def test_resume_continues_step_counter(tmp_path, cfg_path, data, monkeypatch):
    tr, _ = data
    ckpt = str(tmp_path / "m.ckpt")
    monkeypatch.setenv("ADUBF_TRAINING_EPOCHS", "1")
    assert main(["train", "--config", cfg_path, "--data", tr, "--ckpt", ckpt,
                 "--out", str(tmp_path / "l1.csv")]) == 0
    monkeypatch.setenv("ADUBF_TRAINING_EPOCHS", "2")
    assert main(["train", "--config", cfg_path, "--data", tr, "--ckpt", ckpt, "--resume",
                 "--out", str(tmp_path / "l2.csv")]) == 0
    from adubf.model import ADUModel
    model, meta = ADUModel.load(ckpt)
    assert meta["epoch"] == 1 and len(meta["log"]) == 2
    assert set(model.store.t.values()) == {4}


def test_layout_mismatch_is_reported(tmp_path, cfg_path, data, capsys, monkeypatch):
    monkeypatch.setenv("ADUBF_LAYOUT_NT", "6")
    code = main(["train", "--config", cfg_path, "--data", data[0],
                 "--ckpt", str(tmp_path / "m.ckpt")])
    assert code != 0 and "error[config]" in capsys.readouterr().err


def test_sweep_rows_per_scheme(tmp_path, cfg_path):
    out = str(tmp_path / "s.csv")
    assert main(["sweep", "--config", cfg_path, "--out", out, "--scheme", "rvq",
                 "--scheme", "perfect", "--scheme", "adu"]) == 0
    schema, rows = read_rows(out)
    assert schema == SCHEMA_VERSION
    assert len(rows) == 6
    for scheme in ("rvq", "perfect", "adu"):
        assert sorted(int(r["axis_value"]) for r in rows if r["scheme"] == scheme) == [2, 4]


def test_gradcheck_report_lists_every_family(capsys):
    assert main(["gradcheck", "--seed", "1"]) == 0
    text = capsys.readouterr().out
    for fam in FAMILIES:
        assert fam in text
    assert "FAIL" not in text


def test_gradcheck_detects_wrong_rule():
    def broken(rng):
        x = rng.standard_normal((3, 3))
        # wrong adjoint: drops the factor 2 of d(x^2)/dx
        return (lambda t: ad._node(t[0].value ** 2, [(t[0], lambda g: g * t[0].value)])), [x]

    res = run_gradcheck(0, dict(FAMILIES, broken=broken))
    bad = {r.family: r.passed for r in res}
    assert bad["broken"] is False
    assert all(v for k, v in bad.items() if k != "broken")


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "adubf.cli", "eval", "--ckpt",
                           str(tmp_path / "none.ckpt"), "--data", str(tmp_path / "none.bin")],
                          capture_output=True, text=True)
    assert proc.returncode != 0
    assert proc.stderr.startswith("error[")
