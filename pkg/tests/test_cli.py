import json
import subprocess
import sys

import numpy as np
import pytest

from svc_forge.audio import load_waveform, save_waveform
from svc_forge.cli import main
from svc_forge.f0 import F0Contour, load_contour, save_contour
from svc_forge.fx import EffectChainConfig, apply_harmony

from conftest import SR, make_corpus, sine


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    lines = out.strip().splitlines()
    summary = json.loads(lines[-1]) if code == 0 else None
    if code == 0:
        assert len(lines) == 1
    return code, summary, err


@pytest.fixture
def sine_wav(tmp_path):
    p = tmp_path / "sine.wav"
    save_waveform(sine(220, 1.0), p, "16")
    return p


def test_extract_f0(capsys, tmp_path, sine_wav):
    code, summary, _ = run(capsys, "extract-f0", "--in", str(sine_wav), "--out", str(tmp_path / "f.json"))
    assert code == 0
    c = load_contour(tmp_path / "f.json")
    v = c.values[c.values > 0]
    assert np.all(np.abs(v / 220 - 1) <= 0.01)
    assert summary["median_hz"] == pytest.approx(220, rel=0.01)


def test_extract_f0_missing_in(capsys, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["extract-f0", "--out", str(tmp_path / "f.json")])
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_extract_f0_unreadable(capsys, tmp_path):
    missing = tmp_path / "missing.wav"
    code, _, err = run(capsys, "extract-f0", "--in", str(missing), "--out", str(tmp_path / "f.json"))
    assert code == 1 and str(missing) in err
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav")
    code, _, err = run(capsys, "extract-f0", "--in", str(bad), "--out", str(tmp_path / "f.json"))
    assert code == 1 and str(bad) in err


def test_extract_f0_bad_range(capsys, tmp_path, sine_wav):
    code, _, _ = run(capsys, "extract-f0", "--in", str(sine_wav), "--out", str(tmp_path / "f.json"), "--fmin", "500", "--fmax", "100")
    assert code == 2


def test_perturb_f0_seeded(capsys, tmp_path):
    values = np.zeros(400)
    values[20:380] = 300.0
    save_contour(F0Contour(values), tmp_path / "in.json")
    outs = []
    for name in ("a", "b"):
        code, summary, _ = run(capsys, "--seed", "11", "perturb-f0", "--in", str(tmp_path / "in.json"), "--out", str(tmp_path / f"{name}.json"))
        assert code == 0 and summary["seed"] == 11
        outs.append((tmp_path / f"{name}.json").read_bytes())
    assert outs[0] == outs[1]
    code, summary, _ = run(capsys, "perturb-f0", "--in", str(tmp_path / "in.json"), "--out", str(tmp_path / "z.json"),
                           "--p-jit", "0", "--p-gld", "0", "--p-jmp", "0")
    assert code == 0
    assert np.array_equal(load_contour(tmp_path / "z.json").values, values)


def test_perturb_f0_bad_probabilities(capsys, tmp_path):
    save_contour(F0Contour(np.full(50, 200.0)), tmp_path / "in.json")
    code, _, err = run(capsys, "perturb-f0", "--in", str(tmp_path / "in.json"), "--out", str(tmp_path / "o.json"),
                       "--p-jit", "0.5", "--p-gld", "0.5", "--p-jmp", "0.2")
    assert code == 2 and "p_jit + p_gld + p_jmp" in err


def test_fx_forced_harmony(capsys, tmp_path):
    src = tmp_path / "a.wav"
    save_waveform(sine(440, 1.0), src, "float32")
    code, summary, _ = run(capsys, "fx", "--in", str(src), "--out", str(tmp_path / "b.wav"), "--force", "harmony=+7", "--mix-h", "0.4")
    assert code == 0
    assert summary["effect_trace"]["harmony_interval"] == 7
    assert summary["effect_trace"]["echo_applied"] is False
    out = load_waveform(tmp_path / "b.wav").samples
    expected = apply_harmony(load_waveform(src), 7, 0.4).samples
    np.testing.assert_allclose(out, expected.astype(np.float32), atol=1e-7)
    code, _, _ = run(capsys, "fx", "--in", str(src), "--out", str(tmp_path / "c.wav"), "--force", "harmony=+7", "--mix-h", "0.4")
    assert (tmp_path / "b.wav").read_bytes() == (tmp_path / "c.wav").read_bytes()


def test_fx_random_chain_and_env_seed(capsys, tmp_path, monkeypatch):
    src = tmp_path / "a.wav"
    save_waveform(sine(300, 0.5), src, "16")
    monkeypatch.setenv("SVC_FORGE_SEED", "42")
    code, s1, _ = run(capsys, "fx", "--in", str(src), "--out", str(tmp_path / "b.wav"))
    assert code == 0 and s1["seed"] == 42
    code, s2, _ = run(capsys, "fx", "--seed", "42", "--in", str(src), "--out", str(tmp_path / "c.wav"))
    assert s1["effect_trace"] == s2["effect_trace"]
    assert (tmp_path / "b.wav").read_bytes() == (tmp_path / "c.wav").read_bytes()


def test_fx_bad_force(capsys, tmp_path, sine_wav):
    code, _, _ = run(capsys, "fx", "--in", str(sine_wav), "--out", str(tmp_path / "b.wav"), "--force", "chorus")
    assert code == 2
    code, _, _ = run(capsys, "fx", "--in", str(sine_wav), "--out", str(tmp_path / "b.wav"), "--force", "harmony=lots")
    assert code == 2


def test_excite_comb(capsys, tmp_path):
    save_contour(F0Contour(np.full(90, 441.0)), tmp_path / "c.json")
    code, summary, _ = run(capsys, "excite", "--f0", str(tmp_path / "c.json"), "--out", str(tmp_path / "e.wav"),
                           "--harmonics", "8", "--mask-out", str(tmp_path / "m.json"))
    assert code == 0 and summary["voiced_samples"] == 90 * 512
    e = load_waveform(tmp_path / "e.wav").samples
    s = np.abs(np.fft.rfft(e[:SR] * np.hanning(SR)))
    floor_mask = np.ones(len(s), bool)
    for j in range(0, 60):
        floor_mask[max(441 * j - 3, 0) : 441 * j + 4] = False
    floor = s[floor_mask].max()
    for j in range(1, 9):
        assert 20 * np.log10(s[441 * j] / floor) >= 40
    assert json.loads((tmp_path / "m.json").read_text()) == [1] * (90 * 512)


def test_run_and_stats(capsys, tmp_path):
    make_corpus(tmp_path / "c", 3)
    out = tmp_path / "o"
    code, summary, _ = run(capsys, "run", "--in", str(tmp_path / "c"), "--out", str(out), "--seed", "3")
    assert code == 0 and summary["records"] == 3 and summary["master_seed"] == 3
    code, rep, _ = run(capsys, "stats", str(out / "manifest.jsonl"))
    assert code == 0 and rep["records"] == 3


def test_run_config_and_partial(capsys, tmp_path):
    make_corpus(tmp_path / "c", 3)
    (tmp_path / "c" / "clip_002.wav").write_bytes(b"garbage")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"output_dir": str(tmp_path / "o"), "master_seed": 9}))
    code, _, err = run(capsys, "run", "--config", str(cfg), "--in", str(tmp_path / "c"))
    assert code == 3 and "clip_002.wav" in err
    assert len((tmp_path / "o" / "manifest.jsonl").read_text().splitlines()) == 3


def test_run_total_failure(capsys, tmp_path):
    (tmp_path / "c").mkdir()
    (tmp_path / "c" / "a.wav").write_bytes(b"garbage")
    code, _, _ = run(capsys, "run", "--in", str(tmp_path / "c"), "--out", str(tmp_path / "o"))
    assert code == 1


def test_run_bad_config(capsys, tmp_path):
    make_corpus(tmp_path / "c", 1)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"perturbation": {"p_jit": 0.4, "p_gld": 0.4, "p_jmp": 0.4}, "effects": {"p_h": 1.5}}))
    code, _, err = run(capsys, "run", "--config", str(cfg), "--in", str(tmp_path / "c"), "--out", str(tmp_path / "o"))
    assert code == 2
    assert "0 < p_jit+p_gld+p_jmp < 1" in err and "p_h" in err
    cfg.write_text("{broken")
    code, _, _ = run(capsys, "run", "--config", str(cfg), "--in", str(tmp_path / "c"), "--out", str(tmp_path / "o"))
    assert code == 2


def test_run_jobs_reproducible(capsys, tmp_path):
    make_corpus(tmp_path / "c", 4)
    run(capsys, "run", "--in", str(tmp_path / "c"), "--out", str(tmp_path / "o1"), "--jobs", "1", "--seed", "5")
    run(capsys, "run", "--in", str(tmp_path / "c"), "--out", str(tmp_path / "o2"), "--jobs", "8", "--seed", "5")
    assert (tmp_path / "o1" / "manifest.jsonl").read_bytes() == (tmp_path / "o2" / "manifest.jsonl").read_bytes()


def test_stats_dry_run_manifest(capsys, tmp_path):
    make_corpus(tmp_path / "c", 2)
    cfg = tmp_path / "dry.json"
    cfg.write_text(json.dumps({
        "perturbation": {"p_jit": 0, "p_gld": 0, "p_jmp": 0},
        "effects": {"p_h": 0, "p_e": 0, "p_r": 0},
    }))
    run(capsys, "run", "--config", str(cfg), "--in", str(tmp_path / "c"), "--out", str(tmp_path / "o"))
    code, rep, _ = run(capsys, "stats", str(tmp_path / "o" / "manifest.jsonl"))
    assert code == 0
    assert all(e["rate"] == 0 for e in rep["effects"])
    assert rep["kinds"][3]["rate"] == 1.0  # every planned segment is "none"
    assert all(k["rate"] == 0 for k in rep["kinds"][:3])


@pytest.mark.parametrize(
    "sub, needles",
    [
        ("fx", ["0.3", "0.4", "0.35", "0.5"]),
        ("perturb-f0", ["0.15", "0.2"]),
        ("extract-f0", ["2048", "512"]),
    ],
)
def test_help_documents_defaults(sub, needles):
    proc = subprocess.run([sys.executable, "-m", "svc_forge.cli", sub, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for n in needles:
        assert f"default {n}" in proc.stdout
