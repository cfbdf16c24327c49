"""Harmonic-plus-noise source excitation driven by an F0 contour.

Voiced samples carry ``tanh(W . h(t) + b)`` over a bank of harmonic sines
with continuous phase; unvoiced samples carry low-level Gaussian noise.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .f0 import F0Contour
from .seeding import rng


@dataclass(frozen=True)
class NsfConfig:
    num_harmonics: int = 8
    sine_amplitude: float = 0.1
    noise_std: float = 0.003
    merge_weights: tuple[float, ...] | None = None
    merge_bias: float = 0.0
    sample_rate: int = 44100
    random_phase: bool = False

    def __post_init__(self):
        if self.num_harmonics < 1:
            raise ValueError("num_harmonics must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.merge_weights is not None and len(self.merge_weights) != self.num_harmonics:
            raise ValueError(
                f"merge_weights has {len(self.merge_weights)} entries for {self.num_harmonics} harmonics"
            )

    @property
    def weights(self) -> np.ndarray:
        if self.merge_weights is None:
            return np.full(self.num_harmonics, 1.0 / self.num_harmonics)
        return np.asarray(self.merge_weights, dtype=np.float64)


@dataclass(frozen=True)
class Excitation:
    samples: np.ndarray
    sample_rate: int
    voiced_mask: np.ndarray = field(repr=False)


def upsample_f0(contour: F0Contour, sample_rate: int | None = None) -> np.ndarray:
    """Per-sample frequency track, ``hop_size`` samples per frame.

    Inside a voiced run frequency ramps linearly toward the next frame; the
    last frame of a run is held, and unvoiced frames give 0.
    """
    if len(contour) == 0:
        raise ValueError("cannot upsample an empty contour")
    hop = contour.frame_spec.hop_size
    if sample_rate is not None and sample_rate != contour.frame_spec.sample_rate:
        hop = int(round(hop * sample_rate / contour.frame_spec.sample_rate))
    f = contour.values
    nxt = np.append(f[1:], 0.0)
    slope = np.where((f > 0) & (nxt > 0), nxt - f, 0.0)
    ramp = np.arange(hop) / hop
    return (f[:, None] + slope[:, None] * ramp[None, :]).ravel()


def harmonic_bank(f0_track: np.ndarray, cfg: NsfConfig, seed: int = 0) -> np.ndarray:
    """``(H, T)`` array; row ``j-1`` is ``alpha * sin(2*pi*j*sum_{u<t} f0(u)/fs)``."""
    f0 = np.asarray(f0_track, dtype=np.float64)
    fs = cfg.sample_rate
    # Cycles elapsed before each sample, so every harmonic starts at phase 0.
    cycles = np.concatenate([[0.0], np.cumsum(f0[:-1] / fs)]) if len(f0) else f0
    harmonics = np.arange(1, cfg.num_harmonics + 1)[:, None]
    offsets = np.zeros((cfg.num_harmonics, 1))
    if cfg.random_phase:
        offsets[:, 0] = rng(seed).uniform(0.0, 1.0, cfg.num_harmonics)
    phase = 2 * np.pi * np.mod(harmonics * cycles[None, :] + offsets, 1.0)
    bank = cfg.sine_amplitude * np.sin(phase)
    audible = (f0[None, :] > 0) & (harmonics * f0[None, :] < fs / 2)
    return np.where(audible, bank, 0.0)


def merge_excitation(h: np.ndarray, cfg: NsfConfig) -> np.ndarray:
    h = np.atleast_2d(h)
    w = cfg.weights
    if h.shape[0] != w.shape[0]:
        raise ValueError(f"{h.shape[0]} channels for {w.shape[0]} merge weights")
    return np.tanh(w @ h + cfg.merge_bias)


def generate_excitation(contour: F0Contour, cfg: NsfConfig | None = None, seed: int = 0) -> Excitation:
    if cfg is None:
        cfg = NsfConfig(sample_rate=contour.frame_spec.sample_rate)
    track = upsample_f0(contour, cfg.sample_rate)
    voiced = track > 0
    harmonic = merge_excitation(harmonic_bank(track, cfg, seed), cfg)
    noise = np.clip(cfg.noise_std * rng(seed, 1).standard_normal(len(track)), -1.0, 1.0)
    samples = np.where(voiced, harmonic, noise)
    return Excitation(samples, cfg.sample_rate, voiced)
