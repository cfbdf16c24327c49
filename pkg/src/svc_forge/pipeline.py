"""Batch emission of (augmented, perturbed F0, clean target) training triples.

Each input file gets a 64-bit seed hashed from the master seed and the file's
path relative to the input root, so results do not depend on listing order,
on which other files are present, or on the number of workers.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import FrameSpec, Waveform, load_waveform, quantize, save_waveform, _bit_depth
from .f0 import (
    DEFAULT_F0_RANGE,
    KINDS,
    F0Contour,
    PerturbationConfig,
    SegmentPlan,
    extract_f0,
    perturb_f0,
    save_contour,
)
from .fx import EffectChainConfig, EffectTrace, draw_effects, render_chain
from .seeding import STREAM_F0, STREAM_FX, child_seed, file_seed

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.jsonl"
CONFIG_NAME = "config.json"
RECORD_FIELDS = (
    "source_path",
    "augmented_path",
    "target_path",
    "f0_clean_path",
    "f0_pert_path",
    "segment_plan",
    "effect_trace",
    "per_file_seed",
)


class ConfigError(ValueError):
    """Invalid pipeline configuration; ``problems`` lists every violation."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class SampleRatePolicyError(ValueError):
    pass


class BatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    effects: EffectChainConfig = field(default_factory=EffectChainConfig)
    frame: FrameSpec = field(default_factory=FrameSpec)
    f0_range: tuple[float, float] = DEFAULT_F0_RANGE
    master_seed: int = 0
    output_dir: str | None = None
    bit_depth: str = "float32"
    require_sample_rate: int | None = None

    def problems(self) -> list[str]:
        errs = self.perturbation.problems() + self.effects.problems()
        lo, hi = self.f0_range
        if not 0 < lo < hi:
            errs.append(f"f0_range {list(self.f0_range)} must satisfy 0 < fmin < fmax")
        try:
            _bit_depth(self.bit_depth)
        except ValueError as exc:
            errs.append(str(exc))
        if self.require_sample_rate is not None and self.require_sample_rate <= 0:
            errs.append("require_sample_rate must be positive")
        return errs

    def validate(self) -> "PipelineConfig":
        errs = self.problems()
        if errs:
            raise ConfigError(errs)
        return self

    def to_dict(self) -> dict:
        return {
            "perturbation": self.perturbation.to_dict(),
            "effects": self.effects.to_dict(),
            "frame": dataclasses.asdict(self.frame),
            "f0_range": list(self.f0_range),
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "bit_depth": self.bit_depth,
            "require_sample_rate": self.require_sample_rate,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        """Build and validate a config, reporting all problems at once."""
        errs: list[str] = []
        kw: dict = {}
        known = {f.name for f in dataclasses.fields(cls)}
        for key in sorted(set(doc) - known):
            errs.append(f"unknown config field {key!r}")
        nested = {"perturbation": PerturbationConfig, "effects": EffectChainConfig, "frame": FrameSpec}
        for key, typ in nested.items():
            if key in doc:
                obj, sub_errs = _build(typ, doc[key], key)
                errs += sub_errs
                if obj is not None:
                    kw[key] = obj
        for key in ("master_seed", "output_dir", "bit_depth", "require_sample_rate"):
            if key in doc:
                kw[key] = doc[key]
        if "f0_range" in doc:
            try:
                lo, hi = doc["f0_range"]
                kw["f0_range"] = (float(lo), float(hi))
            except (TypeError, ValueError):
                errs.append("f0_range must be a [fmin, fmax] pair")
        if "bit_depth" in kw:
            kw["bit_depth"] = str(kw["bit_depth"]).lower()
        if "master_seed" in kw and not isinstance(kw["master_seed"], int):
            errs.append("master_seed must be an integer")
        if errs:
            raise ConfigError(errs + _safe_problems(cls, kw))
        return cls(**kw).validate()

    def with_seed(self, seed: int) -> "PipelineConfig":
        return dataclasses.replace(self, master_seed=int(seed))


def _build(typ, doc, prefix):
    if not isinstance(doc, dict):
        return None, [f"{prefix} must be an object"]
    known = {f.name for f in dataclasses.fields(typ)}
    errs = [f"unknown config field {prefix}.{k!r}" for k in sorted(set(doc) - known)]
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items() if k in known}
    try:
        obj = typ(**kw)
    except (TypeError, ValueError) as exc:
        return None, errs + [f"{prefix}: {exc}"]
    return obj, errs


def _safe_problems(cls, kw) -> list[str]:
    try:
        return cls(**kw).problems()
    except (TypeError, ValueError):
        return []


def load_config(path) -> PipelineConfig:
    return PipelineConfig.from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# One sample


@dataclass(frozen=True)
class AugmentedSample:
    augmented: Waveform
    target: Waveform
    f0_clean: F0Contour
    f0_pert: F0Contour
    segment_plan: SegmentPlan
    effect_trace: EffectTrace


def _frame_spec(cfg: PipelineConfig, sample_rate: int) -> FrameSpec:
    return FrameSpec(cfg.frame.fft_size, cfg.frame.hop_size, sample_rate)


def simulate_sample(
    contour: F0Contour, cfg: PipelineConfig, per_file_seed: int
) -> tuple[F0Contour, SegmentPlan, EffectTrace]:
    """The random decisions ``augment_sample`` would make, without rendering audio."""
    f0_pert, plan = perturb_f0(contour, cfg.perturbation, child_seed(per_file_seed, STREAM_F0))
    trace = draw_effects(cfg.effects, child_seed(per_file_seed, STREAM_FX))
    return f0_pert, plan, trace


def augment_sample(x: Waveform, cfg: PipelineConfig, per_file_seed: int) -> AugmentedSample:
    if cfg.require_sample_rate is not None and x.sample_rate != cfg.require_sample_rate:
        raise SampleRatePolicyError(
            f"sample rate {x.sample_rate} Hz, config requires {cfg.require_sample_rate} Hz"
        )
    # F0 always comes from the clean signal; the wet chain never feeds the extractor.
    f0 = extract_f0(x, _frame_spec(cfg, x.sample_rate), cfg.f0_range)
    f0_pert, plan, trace = simulate_sample(f0, cfg, per_file_seed)
    augmented = render_chain(x, trace, cfg.effects)
    return AugmentedSample(augmented, x, f0, f0_pert, plan, trace)


# --------------------------------------------------------------------------
# Batch


@dataclass
class BatchResult:
    manifest_path: Path
    records: list[dict]
    errors: list[dict]

    @property
    def status(self) -> str:
        if not self.errors:
            return "ok"
        return "failed" if not self.records else "partial"


def discover_inputs(inputs) -> tuple[Path, list[tuple[Path, str]]]:
    """Resolve a directory or a list of files to ``(root, [(path, relpath), ...])`` sorted by relpath."""
    if isinstance(inputs, (str, os.PathLike)):
        inputs = [inputs]
    paths = [Path(p) for p in inputs]
    if len(paths) == 1 and paths[0].is_dir():
        root = paths[0].resolve()
        files = [p for p in root.rglob("*") if p.is_file() and p.suffix.lower() == ".wav"]
    else:
        files = [p.resolve() for p in paths]
        root = Path(os.path.commonpath([p.parent for p in files])) if files else Path.cwd()
    if not files:
        raise BatchError(f"no input WAV files in {', '.join(map(str, paths))}")
    listed = sorted(((p, p.relative_to(root).as_posix()) for p in files), key=lambda t: t[1])
    return root, listed


def _artifact_paths(out_dir: Path, relpath: str) -> dict[str, Path]:
    stem = Path(relpath).with_suffix("")
    return {
        "augmented_path": out_dir / "augmented" / f"{stem}.wav",
        "target_path": out_dir / "target" / f"{stem}.wav",
        "f0_clean_path": out_dir / "f0_clean" / f"{stem}.json",
        "f0_pert_path": out_dir / "f0_pert" / f"{stem}.json",
    }


def _rel(path: Path, out_dir: Path) -> str:
    return Path(os.path.relpath(path, out_dir)).as_posix()


def process_file(src: Path, relpath: str, cfg: PipelineConfig, out_dir: Path) -> dict:
    """Augment one file and write its artifacts; failures come back as error entries."""
    seed = file_seed(cfg.master_seed, relpath)
    try:
        clean = quantize(load_waveform(src), cfg.bit_depth)
        sample = augment_sample(clean, cfg, seed)
        paths = _artifact_paths(out_dir, relpath)
        for p in paths.values():
            p.parent.mkdir(parents=True, exist_ok=True)
        save_waveform(sample.augmented, paths["augmented_path"], cfg.bit_depth)
        save_waveform(sample.target, paths["target_path"], cfg.bit_depth)
        save_contour(sample.f0_clean, paths["f0_clean_path"])
        save_contour(sample.f0_pert, paths["f0_pert_path"])
    except (OSError, ValueError) as exc:
        log.warning("skipping %s: %s", src, exc)
        return {"error": str(exc), "source": _rel(src, out_dir)}
    record = {"source_path": _rel(src, out_dir)}
    record.update({k: _rel(v, out_dir) for k, v in paths.items()})
    record["segment_plan"] = sample.segment_plan.to_dict()
    record["effect_trace"] = sample.effect_trace.to_dict()
    record["per_file_seed"] = seed
    return record


def run_batch(inputs, cfg: PipelineConfig, jobs: int = 1, output_dir=None) -> BatchResult:
    cfg.validate()
    out = output_dir if output_dir is not None else cfg.output_dir
    if out is None:
        raise ConfigError(["output_dir is required"])
    out_dir = Path(out).resolve()
    _, listed = discover_inputs(inputs)
    out_dir.mkdir(parents=True, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise PermissionError(f"output directory {out_dir} is not writable")

    args = [(src, rel, cfg, out_dir) for src, rel in listed]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            entries = list(pool.map(process_file, *zip(*args)))
    else:
        entries = [process_file(*a) for a in args]

    manifest = out_dir / MANIFEST_NAME
    # `listed` is already sorted by relpath, so the manifest order is canonical.
    with manifest.open("w") as fh:
        for entry in entries:
            fh.write(json.dumps(entry) + "\n")
    (out_dir / CONFIG_NAME).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")

    records = [e for e in entries if "error" not in e]
    errors = [e for e in entries if "error" in e]
    return BatchResult(manifest, records, errors)


# --------------------------------------------------------------------------
# Stats


def _rate_check(name: str, hits: int, n: int, expected: float) -> dict:
    rate = hits / n if n else 0.0
    se = math.sqrt(expected * (1 - expected) / n) if n else 0.0
    deviation = abs(rate - expected)
    flagged = bool(n) and (deviation > 3 * se if se > 0 else deviation > 0)
    return {
        "name": name,
        "count": hits,
        "n": n,
        "rate": rate,
        "expected": expected,
        "stderr": se,
        "flagged": flagged,
    }


def stats_report(manifest_path, cfg: PipelineConfig | None = None) -> dict:
    """Empirical effect and perturbation-kind rates of a manifest against the config.

    Without ``cfg``, the ``config.json`` written next to the manifest is used,
    falling back to the default config.
    """
    manifest_path = Path(manifest_path)
    if cfg is None:
        sidecar = manifest_path.parent / CONFIG_NAME
        cfg = load_config(sidecar) if sidecar.exists() else PipelineConfig()

    n_records = n_errors = n_malformed = 0
    effect_hits = Counter()
    kind_hits = Counter()
    seg_hist = Counter()
    for line in manifest_path.read_text().splitlines():
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
            if "error" in entry:
                n_errors += 1
                continue
            trace = entry["effect_trace"]
            segs = entry["segment_plan"]["segments"]
            applied = [trace[f"{n}_applied"] for n in ("harmony", "echo", "reverb")]
            kinds = [s["kind"] for s in segs]
        except (ValueError, KeyError, TypeError):
            n_malformed += 1
            continue
        n_records += 1
        for name, on in zip(("harmony", "echo", "reverb"), applied):
            effect_hits[name] += bool(on)
        kind_hits.update(kinds)
        seg_hist[len(segs)] += 1

    fx_cfg, pert = cfg.effects, cfg.perturbation
    effects = [
        _rate_check(name, effect_hits[name], n_records, p)
        for name, p in (("harmony", fx_cfg.p_h), ("echo", fx_cfg.p_e), ("reverb", fx_cfg.p_r))
    ]
    n_segments = sum(k * v for k, v in seg_hist.items())
    p_none = 1.0 - pert.p_jit - pert.p_gld - pert.p_jmp
    expected_kinds = dict(zip(KINDS, (pert.p_jit, pert.p_gld, pert.p_jmp, p_none)))
    kinds = [_rate_check(k, kind_hits[k], n_segments, expected_kinds[k]) for k in KINDS]

    warnings = []
    if n_records == 0:
        warnings.append("manifest contains no sample records")
    if n_malformed:
        warnings.append(f"{n_malformed} malformed manifest line(s)")
    for w in warnings:
        log.warning("%s: %s", manifest_path, w)
    flags = [c["name"] for c in effects + kinds if c["flagged"]]
    return {
        "records": n_records,
        "errors": n_errors,
        "malformed": n_malformed,
        "segments": n_segments,
        "effects": effects,
        "kinds": kinds,
        "segment_count_histogram": {str(k): seg_hist[k] for k in sorted(seg_hist)},
        "flags": flags,
        "warnings": warnings,
    }
