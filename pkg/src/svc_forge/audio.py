"""Waveform container, WAV file I/O and level helpers."""
from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

BIT_DEPTHS = ("16", "24", "float32")


class AudioFormatError(ValueError):
    """Raised for WAV files that cannot be decoded into a Waveform."""


@dataclass(frozen=True)
class Waveform:
    """Mono float64 samples at an integer sample rate.

    The sample buffer is made read-only on construction so a Waveform can be
    shared between workers without defensive copies.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64, copy=True)
        if samples.ndim != 1:
            raise ValueError(f"expected 1-D samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("waveform contains non-finite samples")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def with_samples(self, samples) -> "Waveform":
        return Waveform(samples, self.sample_rate)


@dataclass(frozen=True)
class FrameSpec:
    fft_size: int = 2048
    hop_size: int = 512
    sample_rate: int = 44100

    def __post_init__(self):
        if self.fft_size <= 0 or self.hop_size <= 0 or self.sample_rate <= 0:
            raise ValueError("fft_size, hop_size and sample_rate must be positive")
        if self.hop_size > self.fft_size:
            raise ValueError(f"hop_size {self.hop_size} exceeds fft_size {self.fft_size}")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop_size

    def num_frames(self, num_samples: int) -> int:
        """Frame count for ``num_samples``, counting a zero-padded final partial frame."""
        if num_samples < self.fft_size:
            raise ValueError(
                f"{num_samples} samples is shorter than one analysis window ({self.fft_size})"
            )
        return 1 + -(-(num_samples - self.fft_size) // self.hop_size)


def _normalize(data: np.ndarray, path) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        # scipy returns 24-bit PCM left-justified in int32, so one divisor serves both.
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.float32:
        return data.astype(np.float64)
    raise AudioFormatError(f"{path}: unsupported sample format {data.dtype}")


def load_waveform(path) -> Waveform:
    """Read a PCM16/PCM24/float32 WAV file; multichannel input is averaged to mono."""
    path = Path(path)
    try:
        sample_rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, TypeError) as exc:
        raise AudioFormatError(f"{path}: not a readable WAV file ({exc})") from exc
    samples = _normalize(np.asarray(data), path)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.shape[0] == 0:
        raise AudioFormatError(f"{path}: zero-length audio")
    return Waveform(samples, sample_rate)


def _bit_depth(bit_depth) -> str:
    key = str(bit_depth).lower()
    if key not in BIT_DEPTHS:
        raise ValueError(f"bit_depth must be one of {BIT_DEPTHS}, got {bit_depth!r}")
    return key


def _pcm_ints(x: np.ndarray, bits: int) -> np.ndarray:
    full = float(1 << (bits - 1))
    return np.clip(np.round(x * full), -full, full - 1)


def quantize(w: Waveform, bit_depth) -> Waveform:
    """The waveform exactly as ``save_waveform`` followed by ``load_waveform`` would return it."""
    depth = _bit_depth(bit_depth)
    x = np.clip(w.samples, -1.0, 1.0)
    if depth == "float32":
        return w.with_samples(x.astype(np.float32))
    bits = int(depth)
    return w.with_samples(_pcm_ints(x, bits) / float(1 << (bits - 1)))


def save_waveform(w: Waveform, path, bit_depth="float32") -> None:
    """Write ``w`` as a mono WAV file, clamping samples into [-1, 1] first."""
    depth = _bit_depth(bit_depth)
    if len(w) == 0:
        raise ValueError("refusing to write an empty waveform")
    path = Path(path)
    x = np.clip(w.samples, -1.0, 1.0)
    if depth == "float32":
        wavfile.write(path, w.sample_rate, x.astype(np.float32))
        return
    if depth == "16":
        frames, width = _pcm_ints(x, 16).astype("<i2").tobytes(), 2
    else:
        ints = _pcm_ints(x, 24).astype("<i4")
        frames, width = ints.view(np.uint8).reshape(-1, 4)[:, :3].tobytes(), 3
    with open(path, "wb") as raw, wave.open(raw, "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(width)
        fh.setframerate(w.sample_rate)
        fh.writeframes(frames)


def peak_guard(w: Waveform) -> Waveform:
    peak = np.max(np.abs(w.samples)) if len(w) else 0.0
    if peak <= 1.0:
        return w
    return w.with_samples(w.samples / peak)
