import numpy as np
import pytest

from svc_forge.audio import Waveform, save_waveform

SR = 44100


def sine(freq, seconds=2.0, amp=0.5, sr=SR):
    t = np.arange(int(round(seconds * sr))) / sr
    return Waveform(amp * np.sin(2 * np.pi * freq * t), sr)


def phrase(freqs, note_s=0.5, gap_s=0.15, sr=SR, amp=0.4):
    """Notes separated by silence, giving one voiced region per note."""
    parts = [np.zeros(int(gap_s * sr))]
    for f in freqs:
        t = np.arange(int(note_s * sr)) / sr
        parts += [amp * np.sin(2 * np.pi * f * t), np.zeros(int(gap_s * sr))]
    return Waveform(np.concatenate(parts), sr)


def make_corpus(root, n, seconds=0.6, seed=0, bit_depth="16"):
    gen = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        w = phrase(gen.uniform(150, 500, 3), note_s=seconds / 3)
        p = root / f"clip_{i:03d}.wav"
        save_waveform(w, p, bit_depth)
        paths.append(p)
    return paths


@pytest.fixture
def corpus(tmp_path):
    d = tmp_path / "corpus"
    make_corpus(d, 3, seconds=1.2)
    return d


# --------------------------------------------------------------------------
# Acceptance report: one line per criterion in the terminal summary.

_ACCEPTANCE: dict[str, dict] = {}


@pytest.fixture
def criterion(request):
    entry = _ACCEPTANCE.setdefault(request.node.nodeid, {"title": request.node.name, "detail": ""})

    def note(title, detail=""):
        entry["title"], entry["detail"] = title, detail

    return note


def pytest_runtest_logreport(report):
    entry = _ACCEPTANCE.get(report.nodeid)
    if entry is None:
        return
    if report.when == "call" or report.failed:
        entry["outcome"] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for entry in _ACCEPTANCE.values():
        outcome = entry.get("outcome", "FAIL")
        terminalreporter.write_line(f"{outcome}  {entry['title']}  {entry['detail']}")
