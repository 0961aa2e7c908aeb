import json
import os

import numpy as np
import pytest

from bfiki.capture import (DEFAULT_PAYMENT_IP, DEFAULT_VICTIM_MAC,
                           make_attack_capture, write_fixture)
from bfiki.cli import main
from bfiki.config import ENV_SEED, PipelineConfig, config_hash, load_config
from bfiki.errors import ConfigInvalid
from bfiki.synth import SynthConfig, synth_dataset

MAC = "a4:c3:f0:12:00:01"


@pytest.fixture()
def fixture_pcap(tmp_path):
    cfg = SynthConfig(cps_range=(0.8, 1.2))
    lab = synth_dataset({6: 1}, cfg, seed=77)[0]
    path = tmp_path / "cap.pcap"
    write_fixture(str(path), make_attack_capture(lab))
    return str(path), lab


@pytest.fixture()
def ipdb(tmp_path):
    path = tmp_path / "ips.txt"
    path.write_text(f"# payment endpoints\n{DEFAULT_PAYMENT_IP}\n")
    return str(path)


def test_parse_writes_frames_jsonl(fixture_pcap, tmp_path):
    pcap, lab = fixture_pcap
    out = tmp_path / "frames.jsonl"
    assert main(["parse", "--pcap", pcap, "--mac", MAC, "--out", str(out)]) == 0
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(lines) == len(lab.series)
    assert lines[0]["src_mac"] == MAC
    assert lines[0]["n_rows"] == 2 and lines[0]["n_cols"] == 1


def test_parse_bad_pcap_exit_code(tmp_path):
    bad = tmp_path / "bad.pcap"
    bad.write_bytes(b"garbage!")
    out = tmp_path / "frames.jsonl"
    assert main(["parse", "--pcap", str(bad), "--mac", MAC,
                 "--out", str(out)]) == 3


def test_usage_error_exit_code():
    assert main(["parse", "--pcap"]) == 2
    assert main(["nonsense"]) == 2


def test_windows_command(fixture_pcap, ipdb, tmp_path):
    pcap, _ = fixture_pcap
    out = tmp_path / "windows.json"
    assert main(["windows", "--pcap", pcap, "--mac", MAC, "--ipdb", ipdb,
                 "--out", str(out)]) == 0
    windows = json.loads(out.read_text())
    assert len(windows) == 1
    assert windows[0]["trigger_ip"] == DEFAULT_PAYMENT_IP


def test_windows_no_match_exit_one(fixture_pcap, tmp_path):
    pcap, _ = fixture_pcap
    db = tmp_path / "other.txt"
    db.write_text("10.9.9.9\n")
    out = tmp_path / "windows.json"
    assert main(["windows", "--pcap", pcap, "--mac", MAC, "--ipdb", str(db),
                 "--out", str(out)]) == 1


def test_series_and_segment_and_plots(fixture_pcap, tmp_path):
    pcap, lab = fixture_pcap
    frames = tmp_path / "frames.jsonl"
    series_csv = tmp_path / "series.csv"
    segments = tmp_path / "segments.jsonl"
    assert main(["parse", "--pcap", pcap, "--mac", MAC, "--out", str(frames)]) == 0
    assert main(["series", "--frames", str(frames), "--selector", "first_phi_q",
                 "--fs", "40", "--out", str(series_csv)]) == 0
    assert main(["segment", "--in", str(series_csv), "--k", "6",
                 "--out", str(segments)]) == 0
    segs = [json.loads(l) for l in segments.read_text().splitlines()]
    assert len(segs) == 6

    plot_base = tmp_path / "series_plot"
    assert main(["plot", "--kind", "series", "--in", str(series_csv),
                 "--out", str(plot_base)]) == 0
    assert (tmp_path / "series_plot.svg").exists()
    rows = (tmp_path / "series_plot.csv").read_text().splitlines()
    assert rows[0] == "t_s,value,gap"
    assert len(rows) == len(lab.series) + 1

    seg_base = tmp_path / "segments_plot"
    assert main(["plot", "--kind", "segments", "--in", str(segments),
                 "--out", str(seg_base)]) == 0
    seg_rows = (tmp_path / "segments_plot.csv").read_text().splitlines()
    peak_rows = [r for r in seg_rows if ",peak," in r]
    assert len(peak_rows) == 6                    # K peak verticals


def test_plot_empty_candidates_bad_input(tmp_path):
    empty = tmp_path / "eval.json"
    empty.write_text("{}")
    assert main(["plot", "--kind", "topn", "--in", str(empty),
                 "--out", str(tmp_path / "x")]) == 3


def test_synth_command_dataset_layout(tmp_path):
    out = tmp_path / "data"
    assert main(["synth", "--layout", "numeric", "--count", "3x4,2x6",
                 "--seed", "5", "--out", str(out)]) == 0
    labels = json.loads((out / "labels.json").read_text())
    assert len(labels["files"]) == 5
    assert sorted(os.listdir(out / "series"))[0] == "0000.csv"
    lengths = sorted(len(m["password"]) for m in labels["files"].values())
    assert lengths == [4, 4, 4, 6, 6]


def test_eval_command(tmp_path):
    cand_dir = tmp_path / "cands"
    cand_dir.mkdir()
    for i, (keys, listed) in enumerate((
            (["1", "2"], ["12", "21"]),
            (["3", "4"], ["43", "34"]),
            (["9", "9"], ["99", "98"]))):
        payload = {"n_segments": 2, "keys": keys,
                   "candidates": [{"password": p, "probability": 0.5 - 0.1 * j}
                                  for j, p in enumerate(listed)]}
        (cand_dir / f"{i:04d}.json").write_text(json.dumps(payload))
    truth = tmp_path / "truth.json"
    truth.write_text(json.dumps({"0000": "12", "0001": "34", "0002": "56"}))
    out = tmp_path / "eval.json"
    assert main(["eval", "--candidates", str(cand_dir), "--truth", str(truth),
                 "--out", str(out)]) == 0
    result = json.loads(out.read_text())
    # keys correct: 12 -> both right; 34 -> both right; 56 -> none listed right
    assert result["classification_accuracy"] == pytest.approx(4 / 6)
    assert result["top_n_accuracy"]["1"] == pytest.approx(1 / 3)
    assert result["top_n_accuracy"]["5"] == pytest.approx(2 / 3)
    accs = [result["top_n_accuracy"][str(n)] for n in (1, 5, 10, 20, 50, 100)]
    assert all(a <= b + 1e-12 for a, b in zip(accs, accs[1:]))

    plot_base = tmp_path / "topn"
    assert main(["plot", "--kind", "topn", "--in", str(out),
                 "--out", str(plot_base)]) == 0
    rows = (tmp_path / "topn.csv").read_text().splitlines()
    assert rows[0] == "n,accuracy"
    assert len(rows) == 7


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------

def test_load_config_defaults_when_none():
    cfg = load_config(None)
    assert cfg.fs_hz == 40.0 and cfg.alpha == 0.6 and cfg.beta == 0.5
    assert cfg.lambda_ == 0.5 and cfg.idle_timeout_s == 2.0


def test_load_config_toml(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text('fs_hz = 50.0\nalpha = 0.7\nlambda = 0.25\nseed = 9\n'
                    '[sra]\nepochs = 3\n')
    cfg = load_config(str(path))
    assert cfg.fs_hz == 50.0 and cfg.alpha == 0.7
    assert cfg.lambda_ == 0.25 and cfg.seed == 9
    assert cfg.sra.epochs == 3 and cfg.ki.epochs == 12


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("alhpa = 0.7\n")
    with pytest.raises(ConfigInvalid):
        load_config(str(path))


def test_load_config_rejects_bad_values(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text("alpha = 1.5\n")
    with pytest.raises(ConfigInvalid):
        load_config(str(path))


def test_env_seed_override(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_SEED, "4242")
    cfg = load_config(None)
    assert cfg.seed == 4242
    monkeypatch.setenv(ENV_SEED, "zzz")
    with pytest.raises(ConfigInvalid):
        load_config(None)


def test_config_hash_stable_and_sensitive():
    a = PipelineConfig()
    b = PipelineConfig()
    assert config_hash(a) == config_hash(b)
    c = PipelineConfig(alpha=0.61)
    assert config_hash(a) != config_hash(c)
