"""F0 contour extraction (YIN) and random contour perturbation.

A contour holds one value in Hz per analysis frame, 0 meaning unvoiced.
Perturbation picks 2-4 segments over voiced regions and applies one of
jitter (vibrato-like modulation), glide (log-linear slide), jump (constant
offset) or nothing to each, per the configured probabilities.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .audio import FrameSpec, Waveform
from .seeding import child_seed, rng

KINDS = ("jitter", "glide", "jump", "none")

DEFAULT_F0_RANGE = (50.0, 1100.0)
YIN_THRESHOLD = 0.1
# Frames quieter than this RMS are treated as silence.
SILENCE_RMS = 1e-5
PLACEMENT_ATTEMPTS = 50


@dataclass(frozen=True)
class F0Contour:
    values: np.ndarray
    frame_spec: FrameSpec = field(default_factory=FrameSpec)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 1:
            raise ValueError("contour values must be 1-D")
        if np.any(~np.isfinite(values)) or np.any(values < 0):
            raise ValueError("contour values must be finite and non-negative")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def voiced(self) -> np.ndarray:
        return self.values > 0

    def with_values(self, values) -> "F0Contour":
        return F0Contour(values, self.frame_spec)

    def to_dict(self) -> dict:
        return {
            "sample_rate": self.frame_spec.sample_rate,
            "hop_size": self.frame_spec.hop_size,
            "fft_size": self.frame_spec.fft_size,
            "values_hz": [float(v) for v in self.values],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "F0Contour":
        try:
            spec = FrameSpec(
                fft_size=int(doc["fft_size"]),
                hop_size=int(doc["hop_size"]),
                sample_rate=int(doc["sample_rate"]),
            )
            values = doc["values_hz"]
        except KeyError as exc:
            raise ValueError(f"F0 document missing field {exc}") from None
        return cls(np.asarray(values, dtype=np.float64), spec)


def save_contour(contour: F0Contour, path) -> None:
    Path(path).write_text(json.dumps(contour.to_dict()) + "\n")


def load_contour(path) -> F0Contour:
    return F0Contour.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# Extraction


def _yin_frames(frames: np.ndarray, sample_rate: int, fmin: float, fmax: float) -> np.ndarray:
    n_frames, width = frames.shape
    tau_min = max(2, int(math.floor(sample_rate / fmax)))
    tau_max = min(int(math.ceil(sample_rate / fmin)), width // 2)
    n_tau = tau_max + 2  # one extra lag for the parabolic fit
    win = width - n_tau

    n_fft = 1 << int(math.ceil(math.log2(width + win)))
    spec_full = np.fft.rfft(frames, n_fft, axis=1)
    spec_head = np.fft.rfft(frames[:, :win], n_fft, axis=1)
    corr = np.fft.irfft(spec_full * np.conj(spec_head), n_fft, axis=1)[:, :n_tau]

    energy = np.concatenate(
        [np.zeros((n_frames, 1)), np.cumsum(frames**2, axis=1)], axis=1
    )
    e_head = energy[:, win][:, None]
    lags = np.arange(n_tau)
    e_lag = energy[:, lags + win] - energy[:, lags]
    diff = np.maximum(e_head + e_lag - 2.0 * corr, 0.0)

    cum = np.cumsum(diff[:, 1:], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        cmnd = np.where(cum > 0, diff[:, 1:] * lags[1:] / cum, 1.0)
    cmnd = np.concatenate([np.ones((n_frames, 1)), cmnd], axis=1)

    rms = np.sqrt(np.mean(frames**2, axis=1))
    out = np.zeros(n_frames)
    for i in range(n_frames):
        if rms[i] < SILENCE_RMS:
            continue
        row = cmnd[i]
        below = np.nonzero(row[tau_min : tau_max + 1] < YIN_THRESHOLD)[0]
        if below.size == 0:
            continue
        tau = tau_min + int(below[0])
        while tau + 1 <= tau_max and row[tau + 1] < row[tau]:
            tau += 1
        a, b, c = row[tau - 1], row[tau], row[tau + 1]
        denom = a - 2.0 * b + c
        shift = 0.5 * (a - c) / denom if denom > 0 else 0.0
        freq = sample_rate / (tau + float(np.clip(shift, -1.0, 1.0)))
        if fmin <= freq <= fmax:
            out[i] = freq
    return out


def extract_f0(
    w: Waveform, spec: FrameSpec | None = None, f0_range=DEFAULT_F0_RANGE
) -> F0Contour:
    """YIN pitch track with one value per hop; the last partial frame is zero-padded."""
    if spec is None:
        spec = FrameSpec(sample_rate=w.sample_rate)
    elif spec.sample_rate != w.sample_rate:
        spec = FrameSpec(spec.fft_size, spec.hop_size, w.sample_rate)
    fmin, fmax = (float(v) for v in f0_range)
    nyquist = w.sample_rate / 2
    if not 0 < fmin < fmax < nyquist:
        raise ValueError(f"f0 range {f0_range} must satisfy 0 < fmin < fmax < {nyquist}")
    if w.sample_rate / fmin > spec.fft_size // 2:
        raise ValueError(f"fmin {fmin} Hz needs a longer window than fft_size {spec.fft_size}")

    n_frames = spec.num_frames(len(w))
    padded_len = (n_frames - 1) * spec.hop_size + spec.fft_size
    x = np.zeros(padded_len)
    x[: len(w)] = w.samples
    frames = np.lib.stride_tricks.sliding_window_view(x, spec.fft_size)[:: spec.hop_size]

    values = np.concatenate(
        [
            _yin_frames(frames[i : i + 256], w.sample_rate, fmin, fmax)
            for i in range(0, n_frames, 256)
        ]
    )
    return F0Contour(values, spec)


# --------------------------------------------------------------------------
# Perturbation


@dataclass(frozen=True)
class PerturbationConfig:
    p_jit: float = 0.15
    p_gld: float = 0.15
    p_jmp: float = 0.2
    seg_count_min: int = 2
    seg_count_max: int = 4
    seg_dur_min: float = 0.2
    seg_dur_max: float = 1.0
    jitter_depth_cents: float = 50.0
    jitter_rate_hz: tuple[float, float] = (4.0, 7.0)
    glide_extent_semitones: float = 2.0
    jump_extent_semitones: float = 3.0
    f0_clamp: tuple[float, float] = (40.0, 1300.0)

    def problems(self) -> list[str]:
        errs = []
        for name in ("p_jit", "p_gld", "p_jmp"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                errs.append(f"perturbation.{name}={p} must lie in [0, 1]")
        total = self.p_jit + self.p_gld + self.p_jmp
        # The all-zero case is the identity pipeline and stays legal.
        if not total < 1.0:
            errs.append(
                f"perturbation: p_jit + p_gld + p_jmp = {total:g} violates 0 < p_jit+p_gld+p_jmp < 1"
            )
        if not 0 <= self.seg_count_min <= self.seg_count_max:
            errs.append("perturbation: need 0 <= seg_count_min <= seg_count_max")
        if not 0 < self.seg_dur_min <= self.seg_dur_max:
            errs.append("perturbation: need 0 < seg_dur_min <= seg_dur_max")
        if self.jitter_depth_cents < 0:
            errs.append("perturbation.jitter_depth_cents must be >= 0")
        lo, hi = self.jitter_rate_hz
        if not 0 < lo <= hi:
            errs.append("perturbation.jitter_rate_hz must be an increasing positive range")
        if self.glide_extent_semitones < 0:
            errs.append("perturbation.glide_extent_semitones must be >= 0")
        if self.jump_extent_semitones < 1:
            errs.append("perturbation.jump_extent_semitones must be >= 1")
        lo, hi = self.f0_clamp
        if not 0 < lo < hi:
            errs.append("perturbation.f0_clamp must be an increasing positive range")
        return errs

    def validate(self) -> "PerturbationConfig":
        errs = self.problems()
        if errs:
            raise ValueError("; ".join(errs))
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["jitter_rate_hz"] = list(self.jitter_rate_hz)
        d["f0_clamp"] = list(self.f0_clamp)
        return d


class Segment(NamedTuple):
    """Half-open frame range ``[start, end)`` with its perturbation kind."""

    start: int
    end: int
    kind: str = "none"


@dataclass(frozen=True)
class SegmentPlan:
    segments: tuple[Segment, ...]
    rng_seed: int

    def to_dict(self) -> dict:
        return {
            "rng_seed": self.rng_seed,
            "segments": [
                {"start_frame": s.start, "end_frame": s.end, "kind": s.kind}
                for s in self.segments
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SegmentPlan":
        segs = tuple(
            Segment(int(s["start_frame"]), int(s["end_frame"]), str(s["kind"]))
            for s in doc["segments"]
        )
        return cls(segs, int(doc["rng_seed"]))


def voiced_runs(voiced: np.ndarray) -> list[tuple[int, int]]:
    """Half-open ``(start, end)`` ranges of consecutive True values."""
    v = np.concatenate([[False], np.asarray(voiced, dtype=bool), [False]])
    edges = np.flatnonzero(v[1:] != v[:-1])
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def draw_kinds(cfg: PerturbationConfig, gen: np.random.Generator, n: int) -> list[str]:
    edges = np.cumsum([cfg.p_jit, cfg.p_gld, cfg.p_jmp])
    u = gen.random(n)
    return [KINDS[int(i)] for i in np.searchsorted(edges, u, side="right")]


def plan_segments(contour: F0Contour, cfg: PerturbationConfig, seed: int) -> SegmentPlan:
    frame_rate = contour.frame_spec.frame_rate
    min_frames = max(1, int(round(cfg.seg_dur_min * frame_rate)))
    feasible = [r for r in voiced_runs(contour.voiced) if r[1] - r[0] >= min_frames]
    if not feasible:
        return SegmentPlan((), int(seed))

    place = rng(seed, 0)
    count = int(place.integers(cfg.seg_count_min, cfg.seg_count_max + 1))
    kinds = draw_kinds(cfg, rng(seed, 1), count)

    taken: list[tuple[int, int]] = []
    for _ in range(PLACEMENT_ATTEMPTS):
        if len(taken) >= count:
            break
        dur = max(1, int(round(place.uniform(cfg.seg_dur_min, cfg.seg_dur_max) * frame_rate)))
        run_start, run_end = feasible[int(place.integers(len(feasible)))]
        length = min(dur, run_end - run_start)
        start = run_start + int(place.integers(run_end - run_start - length + 1))
        end = start + length
        if any(start < b and a < end for a, b in taken):
            continue
        taken.append((start, end))

    taken.sort()
    segs = tuple(Segment(a, b, k) for (a, b), k in zip(taken, kinds))
    return SegmentPlan(segs, int(seed))


def _shift_segment(contour: F0Contour, seg, semitones: np.ndarray, cfg) -> F0Contour:
    """Scale voiced frames of ``seg`` by ``2**(semitones/12)`` and clamp."""
    values = contour.values.copy()
    region = values[seg[0] : seg[1]]
    mask = region > 0
    if not mask.any():
        return contour
    lo, hi = cfg.f0_clamp
    shifted = region * np.exp2(np.broadcast_to(semitones, region.shape) / 12.0)
    region[mask] = np.clip(shifted[mask], lo, hi)
    return contour.with_values(values)


def apply_jitter(
    contour: F0Contour,
    seg,
    cfg: PerturbationConfig,
    seed: int,
    *,
    depth_cents: float | None = None,
    rate_hz: float | None = None,
    phase: float | None = None,
) -> F0Contour:
    """Sinusoidal pitch modulation of up to ``cfg.jitter_depth_cents`` within ``seg``."""
    gen = rng(seed)
    drawn_depth = gen.uniform(0.0, cfg.jitter_depth_cents)
    drawn_rate = gen.uniform(*cfg.jitter_rate_hz)
    drawn_phase = gen.uniform(0.0, 2 * np.pi)
    depth = drawn_depth if depth_cents is None else depth_cents
    rate = drawn_rate if rate_hz is None else rate_hz
    phi = drawn_phase if phase is None else phase
    if depth == 0:
        return contour
    t = np.arange(seg[1] - seg[0]) / contour.frame_spec.frame_rate
    cents = depth * np.sin(2 * np.pi * rate * t + phi)
    return _shift_segment(contour, seg, cents / 100.0, cfg)


def apply_glide(
    contour: F0Contour,
    seg,
    cfg: PerturbationConfig,
    seed: int,
    *,
    semitones: float | None = None,
) -> F0Contour:
    """Log-linear ramp from 0 at the segment start to a target offset at its last frame."""
    drawn = rng(seed).uniform(-cfg.glide_extent_semitones, cfg.glide_extent_semitones)
    delta = drawn if semitones is None else semitones
    n = seg[1] - seg[0]
    if delta == 0 or n == 0:
        return contour
    ramp = delta * np.arange(n) / (n - 1) if n > 1 else np.array([delta])
    return _shift_segment(contour, seg, ramp, cfg)


def apply_jump(
    contour: F0Contour,
    seg,
    cfg: PerturbationConfig,
    seed: int,
    *,
    semitones: float | None = None,
) -> F0Contour:
    """Constant offset of 1 to ``cfg.jump_extent_semitones`` semitones, either sign."""
    gen = rng(seed)
    magnitude = gen.uniform(1.0, cfg.jump_extent_semitones)
    sign = 1.0 if gen.random() < 0.5 else -1.0
    delta = sign * magnitude if semitones is None else semitones
    return _shift_segment(contour, seg, np.float64(delta), cfg)


OPERATORS = {"jitter": apply_jitter, "glide": apply_glide, "jump": apply_jump}


def perturb_f0(
    contour: F0Contour, cfg: PerturbationConfig, seed: int
) -> tuple[F0Contour, SegmentPlan]:
    plan = plan_segments(contour, cfg, seed)
    out = contour
    for i, seg in enumerate(plan.segments):
        op = OPERATORS.get(seg.kind)
        if op is not None:
            out = op(out, seg, cfg, child_seed(seed, 2, i))
    return out, plan
