import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from chainflat import MonotonicChain, gen_random_chain, middle_segment, unfolding_oracle
from chainflat import io as cio
from chainflat.cli import main

FIXTURES = Path(__file__).parent / "fixtures"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_points(path, pts):
    path.write_text(cio.format_csv(np.asarray(pts).tolist()))
    return path


def test_counts(capsys):
    code, out, _ = run(capsys, "counts", "--d", 100, "--m", 2, "--K", 10)
    assert code == 0
    data = json.loads(out)
    assert data["N"] == 1079


def test_counts_rejects_bad_dims(capsys):
    code, _, err = run(capsys, "counts", "--d", 2, "--m", 3, "--K", 1)
    assert code == 1 and err


def test_build_then_eval_short_example(tmp_path, capsys):
    code, net_json, _ = run(capsys, "build", "--chain", FIXTURES / "short_example_chain.json")
    assert code == 0
    net_path = tmp_path / "net.json"
    net_path.write_text(net_json)
    th = np.radians(60)
    pts = write_points(tmp_path / "p.csv", [[np.cos(th), np.sin(th)]])
    code, out, _ = run(capsys, "eval", "--network", net_path, "--points", pts)
    assert code == 0
    assert float(out.strip()) == pytest.approx(2.0, abs=1e-12)


def test_eval_wrong_columns_exits_2(tmp_path, capsys):
    assert run(capsys, "build", "--chain", FIXTURES / "short_example_chain.json", "--out-dir", tmp_path)[0] == 0
    net = tmp_path / "network.json"
    pts = write_points(tmp_path / "p.csv", [[1.0, 2.0, 3.0]])
    code, _, err = run(capsys, "eval", "--network", net, "--points", pts)
    assert code == 2 and "error" in err


def test_missing_and_corrupt_files_exit_2(tmp_path, capsys):
    assert run(capsys, "eval", "--network", tmp_path / "nope.json", "--points", tmp_path / "x.csv")[0] == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(capsys, "build", "--chain", bad)[0] == 2


def test_usage_errors_exit_1(capsys):
    assert run(capsys)[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    code, _, err = run(capsys, "counts", "--d", "ten", "--m", 2, "--K", 3)
    assert code == 1 and "invalid" in err


def test_fit_build_analyze_pipeline(tmp_path, capsys):
    ch, s = gen_random_chain(6, 2, 4, np.radians(20), seed=3)
    pts = write_points(tmp_path / "p.csv", s["on"])
    labels = tmp_path / "l.csv"
    labels.write_text("\n".join(str(int(k)) for k in s["on_segment"]) + "\n")
    code, _, _ = run(capsys, "fit", "--points", pts, "--labels", labels, "--m", 2, "--out-dir", tmp_path / "fit")
    assert code == 0
    chain_path = tmp_path / "fit" / "chain.json"
    code, _, _ = run(capsys, "build", "--chain", chain_path, "--out-dir", tmp_path / "net")
    assert code == 0
    net_path = tmp_path / "net" / "network.json"

    # the fitted chain re-expresses segment 0, so compare in its own intrinsic frame
    fitted = MonotonicChain.from_dict(json.loads(chain_path.read_text()))
    truth = unfolding_oracle(fitted, s["on"])
    truth_path = write_points(tmp_path / "t.csv", truth)
    code, out, _ = run(capsys, "analyze", "--network", net_path, "--chain", chain_path,
                       "--points", pts, "--truth", truth_path, "--out-dir", tmp_path / "an")
    assert code == 0
    summary = json.loads(out)
    code, out, _ = run(capsys, "eval", "--network", net_path, "--points", pts)
    emb = np.array([[float(v) for v in line.split(",")] for line in out.strip().splitlines()])
    assert np.max(np.linalg.norm(emb - truth, axis=1)) <= 1e-7 * ch.scale
    assert summary["max_rel_err"] == 0.0
    header = (tmp_path / "an" / "errors.csv").read_text().splitlines()[0]
    assert header.startswith("point_index,segment,err_abs,err_rel,sigma_k,bound_k")
    assert (tmp_path / "an" / "errors.png").exists()


def test_fit_split_into_complex_and_build(tmp_path, capsys):
    ch, s = gen_random_chain(6, 2, 6, np.radians(25), seed=5)
    pts = tmp_path / "p.csv"
    rows = [list(p) + [int(k)] for p, k in zip(s["on"], s["on_segment"])]
    pts.write_text(cio.format_csv(rows, [f"x{i}" for i in range(6)] + ["label"]))
    code, out, _ = run(capsys, "fit", "--points", pts, "--header", "--m", 2, "--pieces", 2)
    assert code == 0
    data = json.loads(out)
    assert data["kind"] == "complex" and len(data["chains"]) == 2
    cpath = tmp_path / "c.json"
    cpath.write_text(out)
    for mode in ("sum", "maxpool"):
        code, out, _ = run(capsys, "build", "--chain", cpath, "--mode", mode)
        assert code == 0 and json.loads(out)["metadata"]["mode"] == mode


def test_build_start_segment_flag(tmp_path, capsys):
    ch, _ = gen_random_chain(5, 1, 5, np.radians(20), seed=2)
    path = tmp_path / "c.json"
    path.write_bytes(cio.dumps_json(ch.to_dict()))
    code, out, _ = run(capsys, "build", "--chain", path, "--start-segment", "middle")
    assert code == 0
    assert json.loads(out)["metadata"]["start"] == middle_segment(ch)
    assert run(capsys, "build", "--chain", path, "--start-segment", 9)[0] == 1


def test_outputs_are_deterministic(tmp_path, capsys):
    outs = []
    for i in range(2):
        d = tmp_path / f"r{i}"
        assert run(capsys, "demo", "swiss-roll", "--n", 800, "--seed", 4, "--no-plots", "--out-dir", d)[0] == 0
        outs.append({p.name: p.read_bytes() for p in d.iterdir()})
    assert outs[0] == outs[1]


def test_seed_env_override(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CHAINFLAT_SEED", "9")
    _, a, _ = run(capsys, "demo", "swiss-roll", "--n", 600, "--seed", 1, "--no-plots")
    _, b, _ = run(capsys, "demo", "swiss-roll", "--n", 600, "--seed", 2, "--no-plots")
    assert json.loads(a)["spec"]["seed"] == 9 and a == b


def test_demo_writes_figures(tmp_path, capsys):
    code, out, _ = run(capsys, "demo", "worst-case", "--out-dir", tmp_path / "wc")
    assert code == 0
    summary = json.loads(out)
    assert summary["min_amplification"]["seg3"] >= 1e4
    for name in summary["manifest"]:
        assert (tmp_path / "wc" / name).exists()
    assert (tmp_path / "wc" / "worstcase.png").exists()
    code, out, _ = run(capsys, "demo", "swiss-roll", "--n", 1500, "--out-dir", tmp_path / "sr")
    assert code == 0
    assert any(n.endswith(".png") for n in json.loads(out)["manifest"])


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "chainflat", "counts", "--d", "100", "--m", "2", "--K", "10"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["N"] == 1079
