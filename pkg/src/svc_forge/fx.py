"""Wet-sound simulation: harmony, echo and reverb, each fired by its own coin flip.

Every effect blends as ``(1 - mix) * dry + mix * wet`` and returns exactly as
many samples as it was given, so the clean signal stays a valid target.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np
from scipy.signal import lfilter, resample_poly

from .audio import Waveform, peak_guard
from .seeding import child_seed, rng

PV_FFT = 2048
PV_HOP = 512

COMB_DELAYS_MS = (29.7, 37.1, 41.1, 43.7)
ALLPASS_DELAYS_MS = (5.0, 1.7)
ALLPASS_GAIN = 0.7
# Seeded spread of the comb delays around their nominal values.
COMB_SPREAD = 0.03


# --------------------------------------------------------------------------
# Phase vocoder


def _stft(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    window = np.hanning(n_fft + 1)[:-1]
    pad = n_fft // 2
    xp = np.pad(x, (pad, pad + n_fft))
    n_frames = 1 + len(x) // hop
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop][:n_frames]
    return np.fft.rfft(frames * window, axis=1).T


def _istft(spec: np.ndarray, n_fft: int, hop: int, length: int) -> np.ndarray:
    window = np.hanning(n_fft + 1)[:-1]
    frames = np.fft.irfft(spec.T, n_fft, axis=1) * window
    n_frames = frames.shape[0]
    total = n_fft + hop * (n_frames - 1)
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n_frames):
        out[i * hop : i * hop + n_fft] += frames[i]
        norm[i * hop : i * hop + n_fft] += window**2
    nz = norm > 1e-8
    out[nz] /= norm[nz]
    pad = n_fft // 2
    out = out[pad : pad + length]
    return np.pad(out, (0, length - len(out)))


def time_stretch(x: np.ndarray, rate: float, n_fft: int = PV_FFT, hop: int = PV_HOP) -> np.ndarray:
    """Phase-vocoder time stretch; ``rate > 1`` shortens, output has ``round(len/rate)`` samples."""
    spec = _stft(x, n_fft, hop)
    n_bins, n_frames = spec.shape
    steps = np.arange(0, n_frames, rate)
    spec = np.pad(spec, ((0, 0), (0, 2)))
    idx = steps.astype(int)
    frac = steps - idx
    left, right = spec[:, idx], spec[:, idx + 1]
    mag = (1 - frac) * np.abs(left) + frac * np.abs(right)

    advance = np.linspace(0, np.pi * hop, n_bins)[:, None]
    dphase = np.angle(right) - np.angle(left) - advance
    dphase -= 2 * np.pi * np.round(dphase / (2 * np.pi))
    phase = np.angle(spec[:, :1]) + np.concatenate(
        [np.zeros((n_bins, 1)), np.cumsum(advance + dphase, axis=1)[:, :-1]], axis=1
    )
    return _istft(mag * np.exp(1j * phase), n_fft, hop, int(round(len(x) / rate)))


def pitch_shift(x: np.ndarray, semitones: float, n_fft: int = PV_FFT, hop: int = PV_HOP) -> np.ndarray:
    """Duration-preserving pitch shift: stretch by the pitch ratio, then resample back."""
    if semitones == 0:
        return np.array(x, dtype=np.float64)
    ratio = 2.0 ** (semitones / 12.0)
    stretched = time_stretch(x, 1.0 / ratio, n_fft, hop)
    frac = Fraction(ratio).limit_denominator(1000)
    out = resample_poly(stretched, frac.denominator, frac.numerator)
    n = len(x)
    return out[:n] if len(out) >= n else np.pad(out, (0, n - len(out)))


# --------------------------------------------------------------------------
# Effects


def _blend(w: Waveform, wet: np.ndarray, mix: float) -> Waveform:
    return w.with_samples((1.0 - mix) * w.samples + mix * wet)


def apply_harmony(w: Waveform, interval_semitones: float, mix: float) -> Waveform:
    if not -12 <= interval_semitones <= 12:
        raise ValueError(f"harmony interval {interval_semitones} outside +-12 semitones")
    if mix == 0:
        return w
    return _blend(w, pitch_shift(w.samples, interval_semitones), mix)


def echo_wet(x: np.ndarray, delay: int, feedback: float) -> np.ndarray:
    """``sum_k feedback**k * x[n - k*delay]`` for k >= 1."""
    b = np.zeros(delay + 1)
    a = np.zeros(delay + 1)
    b[delay] = feedback
    a[0] = 1.0
    a[delay] = -feedback
    return lfilter(b, a, x)


def apply_echo(w: Waveform, delay_s: float, feedback: float, mix: float) -> Waveform:
    if not 0 <= feedback < 1:
        raise ValueError(f"echo feedback {feedback} must be in [0, 1)")
    delay = int(round(delay_s * w.sample_rate))
    if delay < 1:
        raise ValueError(f"echo delay {delay_s}s is shorter than one sample")
    if mix == 0:
        return w
    if delay >= len(w) or feedback == 0:
        return _blend(w, np.zeros(len(w)), mix)
    return _blend(w, echo_wet(w.samples, delay, feedback), mix)


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    if n % 2 == 0:
        return n == 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return False
        f += 2
    return True


def _nearest_prime(n: int, exclude=()) -> int:
    for step in range(n + 1):
        for cand in (n - step, n + step):
            if cand > 1 and cand not in exclude and _is_prime(cand):
                return cand
    raise ValueError(f"no prime near {n}")


def comb_feedback(delay_s: float, rt60_s: float) -> float:
    """Gain giving a 60 dB decay over ``rt60_s`` for a loop of ``delay_s``."""
    return 10.0 ** (-3.0 * delay_s / rt60_s)


def schroeder_delays(sample_rate: int, seed: int) -> tuple[list[int], list[int]]:
    """Prime comb and allpass delays in samples; combs are jittered by the seed."""
    spread = rng(seed).uniform(1 - COMB_SPREAD, 1 + COMB_SPREAD, len(COMB_DELAYS_MS))
    combs: list[int] = []
    for ms, s in zip(COMB_DELAYS_MS, spread):
        combs.append(_nearest_prime(int(round(ms * s * sample_rate / 1000)), combs))
    allpasses: list[int] = []
    for ms in ALLPASS_DELAYS_MS:
        allpasses.append(_nearest_prime(int(round(ms * sample_rate / 1000)), combs + allpasses))
    return combs, allpasses


def schroeder_wet(x: np.ndarray, sample_rate: int, rt60_s: float, seed: int) -> np.ndarray:
    """Four parallel feedback combs into two series allpasses."""
    combs, allpasses = schroeder_delays(sample_rate, seed)
    acc = np.zeros(len(x))
    for m in combs:
        a = np.zeros(m + 1)
        a[0], a[m] = 1.0, -comb_feedback(m / sample_rate, rt60_s)
        acc += lfilter([1.0], a, x)
    y = acc / len(combs)
    g = ALLPASS_GAIN
    for m in allpasses:
        b = np.zeros(m + 1)
        a = np.zeros(m + 1)
        b[0], b[m] = -g, 1.0
        a[0], a[m] = 1.0, -g
        y = lfilter(b, a, y)
    return y


def apply_reverb(w: Waveform, rt60_s: float, mix: float, seed: int) -> Waveform:
    if rt60_s <= 0:
        raise ValueError(f"rt60 must be positive, got {rt60_s}")
    if mix == 0:
        return w
    return peak_guard(_blend(w, schroeder_wet(w.samples, w.sample_rate, rt60_s, seed), mix))


# --------------------------------------------------------------------------
# Chain


@dataclass(frozen=True)
class EffectChainConfig:
    p_h: float = 0.3
    p_e: float = 0.4
    p_r: float = 0.4
    mix_h: float = 0.4
    mix_e: float = 0.35
    mix_r: float = 0.5
    harmony_intervals: tuple[int, ...] = (3, 4, 5, 7, -5)
    echo_delay: tuple[float, float] = (0.08, 0.3)
    echo_feedback: tuple[float, float] = (0.3, 0.6)
    reverb_rt60: tuple[float, float] = (0.3, 1.2)

    def problems(self) -> list[str]:
        errs = []
        for name in ("p_h", "p_e", "p_r"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                errs.append(f"effects.{name}={p} violates 0 <= {name} < 1")
        for name in ("mix_h", "mix_e", "mix_r"):
            m = getattr(self, name)
            if not 0.0 <= m <= 1.0:
                errs.append(f"effects.{name}={m} must lie in [0, 1]")
        if not self.harmony_intervals:
            errs.append("effects.harmony_intervals must not be empty")
        elif any(abs(i) > 12 for i in self.harmony_intervals):
            errs.append("effects.harmony_intervals must lie within +-12 semitones")
        lo, hi = self.echo_delay
        if not 0 < lo <= hi:
            errs.append("effects.echo_delay must be an increasing positive range")
        lo, hi = self.echo_feedback
        if not 0 <= lo <= hi < 1:
            errs.append("effects.echo_feedback must be a range inside [0, 1)")
        lo, hi = self.reverb_rt60
        if not 0 < lo <= hi:
            errs.append("effects.reverb_rt60 must be an increasing positive range")
        return errs

    def validate(self) -> "EffectChainConfig":
        errs = self.problems()
        if errs:
            raise ValueError("; ".join(errs))
        return self

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class EffectTrace:
    """Which effects fired and with what parameters; enough to re-render the chain."""

    seed: int
    harmony_applied: bool = False
    harmony_interval: int | None = None
    echo_applied: bool = False
    echo_delay_s: float | None = None
    echo_feedback: float | None = None
    reverb_applied: bool = False
    reverb_rt60_s: float | None = None
    reverb_seed: int | None = None

    @property
    def applied(self) -> list[str]:
        names = ("harmony", "echo", "reverb")
        return [n for n in names if getattr(self, f"{n}_applied")]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "EffectTrace":
        return cls(**doc)


def _draw_params(cfg: EffectChainConfig, seed: int) -> dict:
    """Parameters every effect would use if it fired; each effect has its own stream."""
    echo = rng(seed, 2)
    return {
        "harmony_interval": int(rng(seed, 1).choice(np.asarray(cfg.harmony_intervals))),
        "echo_delay_s": float(echo.uniform(*cfg.echo_delay)),
        "echo_feedback": float(echo.uniform(*cfg.echo_feedback)),
        "reverb_rt60_s": float(rng(seed, 3).uniform(*cfg.reverb_rt60)),
        "reverb_seed": child_seed(seed, 4),
    }


_PARAMS = {
    "harmony": ("harmony_interval",),
    "echo": ("echo_delay_s", "echo_feedback"),
    "reverb": ("reverb_rt60_s", "reverb_seed"),
}


def draw_effects(cfg: EffectChainConfig, seed: int) -> EffectTrace:
    """Coin flips and parameter draws for one chain run, without touching audio."""
    fire = rng(seed, 0).random(3) < np.array([cfg.p_h, cfg.p_e, cfg.p_r])
    params = _draw_params(cfg, seed)
    kw: dict = {"seed": int(seed)}
    for on, (name, keys) in zip(fire, _PARAMS.items()):
        if on:
            kw[f"{name}_applied"] = True
            kw.update({k: params[k] for k in keys})
    return EffectTrace(**kw)


def force_effects(cfg: EffectChainConfig, seed: int, **forced) -> EffectTrace:
    """A trace with exactly the named effects switched on.

    ``forced`` maps an effect name to a dict of parameter overrides (possibly
    empty); parameters not given are drawn from ``seed`` as in :func:`draw_effects`.
    """
    unknown = set(forced) - set(_PARAMS)
    if unknown:
        raise ValueError(f"unknown effect(s): {', '.join(sorted(unknown))}")
    params = _draw_params(cfg, seed)
    kw: dict = {"seed": int(seed)}
    for name, overrides in forced.items():
        kw[f"{name}_applied"] = True
        kw.update({k: params[k] for k in _PARAMS[name]})
        kw.update(overrides or {})
    return EffectTrace(**kw)


def render_chain(w: Waveform, trace: EffectTrace, cfg: EffectChainConfig) -> Waveform:
    """Apply the effects recorded in ``trace`` in harmony, echo, reverb order."""
    out = w
    if trace.harmony_applied:
        out = apply_harmony(out, trace.harmony_interval, cfg.mix_h)
    if trace.echo_applied:
        out = apply_echo(out, trace.echo_delay_s, trace.echo_feedback, cfg.mix_e)
    if trace.reverb_applied:
        out = apply_reverb(out, trace.reverb_rt60_s, cfg.mix_r, trace.reverb_seed)
    return peak_guard(out)


def apply_chain(w: Waveform, cfg: EffectChainConfig, seed: int) -> tuple[Waveform, EffectTrace]:
    trace = draw_effects(cfg, seed)
    return render_chain(w, trace, cfg), trace
