import filecmp
import io
import json
import os

import pytest

from conftest import TINY
from isvos.pipeline.cli import main


def run(*argv):
    buf = io.StringIO()
    code = main(list(argv), out=buf)
    return code, buf.getvalue()


def tree_bytes(root):
    out = {}
    for d, _, files in os.walk(root):
        for f in files:
            p = os.path.join(d, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, root)] = fh.read()
    return out


@pytest.fixture
def tiny_cfg(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return str(p)


def test_synth_deterministic(tmp_path):
    assert run("synth", "--seed", "7", "--out", str(tmp_path / "d"))[0] == 0
    assert run("--seed", "7", "synth", "--out", str(tmp_path / "d2"))[0] == 0
    a, b = tree_bytes(tmp_path / "d"), tree_bytes(tmp_path / "d2")
    assert a == b and len(a) == 17
    run("synth", "--seed", "8", "--out", str(tmp_path / "d3"))
    assert tree_bytes(tmp_path / "d3") != a


def test_eval_identical_dirs(tmp_path):
    run("synth", "--seed", "1", "--out", str(tmp_path / "g"))
    code, text = run("eval", "--pred", str(tmp_path / "g"), "--gt", str(tmp_path / "g"),
                     "--csv", str(tmp_path / "c.csv"))
    assert code == 0 and "J&F 1.0000" in text
    rows = (tmp_path / "c.csv").read_text().splitlines()
    assert rows[0] == "frame,object,j,f" and len(rows) == 1 + 7 * 2


def test_train_run_sweep(tmp_path, tiny_cfg):
    d = str(tmp_path / "seq")
    run("synth", "--seed", "2", "--size", "32", "--frames", "6", "--out", d)
    model = str(tmp_path / "m.npz")
    code, text = run("train", "--config", tiny_cfg, "--data", d, "--steps", "2", "--out", model,
                     "--loss-csv", str(tmp_path / "loss.csv"))
    assert code == 0 and "step    0" in text
    assert len((tmp_path / "loss.csv").read_text().splitlines()) == 3
    for out in ("r1", "r2"):
        code, text = run("run", "--model", model, "--data", d, "--out", str(tmp_path / out))
        assert code == 0 and "J&F" in text
    cmp = filecmp.dircmp(tmp_path / "r1" / "masks", tmp_path / "r2" / "masks")
    assert not cmp.diff_files and len(cmp.same_files) == 6
    report = json.loads((tmp_path / "r1" / "report.json").read_text())
    assert report["memorized"] == [0, 5]
    code, text = run("sweep", "--model", model, "--data", d, "--sizes", "2,4", "--out", str(tmp_path / "s.csv"))
    assert code == 0 and "monotone" in text
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 4


def test_gradcheck_subset():
    code, text = run("gradcheck", "--only", "softmax", "dice_loss")
    assert code == 0 and text.count("PASS") == 2


def test_bench_stdout(monkeypatch):
    import isvos.pipeline.bench as bench
    monkeypatch.setattr(bench, "run_bench", lambda repeats=5, _f=bench.run_bench: _f(((16, 8, 4, 4),), 1))
    code, text = run("bench", "--repeats", "1")
    assert code == 0 and text.startswith("memory_positions,")


def test_exit_codes(tmp_path, capsys):
    assert run("synth", "--bogus")[0] == 1
    assert "usage" in capsys.readouterr().err
    assert run("frobnicate")[0] == 1
    assert run("gradcheck", "--only", "no_such_check")[0] == 1
    assert run("synth", "--size", "48", "--out", str(tmp_path / "x"))[0] == 1
    assert run("eval", "--pred", str(tmp_path / "missing"), "--gt", str(tmp_path / "missing"))[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("train", "--config", str(bad), "--out", str(tmp_path / "m.npz"))[0] == 2
    (tmp_path / "g" / "masks").mkdir(parents=True)
    (tmp_path / "g" / "masks" / "00000.pgm").write_bytes(b"P5\n4 4\n255\n\x00")
    assert run("eval", "--pred", str(tmp_path / "g"), "--gt", str(tmp_path / "g"))[0] == 2
