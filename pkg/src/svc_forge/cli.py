"""svc-forge command line.

Exit statuses: 0 success, 1 I/O failure, 2 bad arguments or config,
3 batch finished with some failed files. Each successful command prints a
single JSON line on stdout; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import audio, f0, fx, nsf, pipeline

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_PARTIAL = 0, 1, 2, 3
SEED_ENV = "SVC_FORGE_SEED"

log = logging.getLogger("svc_forge")

_PERT = f0.PerturbationConfig()
_FX = fx.EffectChainConfig()


class UsageError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                   help=f"random seed (falls back to ${SEED_ENV}, then the config, then 0)")
    p.add_argument("--config", default=argparse.SUPPRESS,
                   help="pipeline config JSON; its perturbation/effects sections seed the option defaults")
    return p


def _add_pert_options(p):
    g = p.add_argument_group("F0 perturbation")
    g.add_argument("--p-jit", type=float, help=f"jitter probability per segment (default {_PERT.p_jit})")
    g.add_argument("--p-gld", type=float, help=f"glide probability per segment (default {_PERT.p_gld})")
    g.add_argument("--p-jmp", type=float, help=f"jump probability per segment (default {_PERT.p_jmp})")


def _add_fx_options(p):
    g = p.add_argument_group("wet-sound chain")
    g.add_argument("--p-h", type=float, help=f"harmony trigger probability (default {_FX.p_h})")
    g.add_argument("--p-e", type=float, help=f"echo trigger probability (default {_FX.p_e})")
    g.add_argument("--p-r", type=float, help=f"reverb trigger probability (default {_FX.p_r})")
    g.add_argument("--mix-h", type=float, help=f"harmony wet mix (default {_FX.mix_h})")
    g.add_argument("--mix-e", type=float, help=f"echo wet mix (default {_FX.mix_e})")
    g.add_argument("--mix-r", type=float, help=f"reverb wet mix (default {_FX.mix_r})")


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="svc-forge",
        description="Seeded F0 perturbation, wet-sound simulation and NSF excitation for SVC training data.",
        parents=[common],
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("extract-f0", parents=[common], help="YIN F0 contour of a WAV file")
    p.add_argument("--in", dest="input", required=True, help="input WAV")
    p.add_argument("--out", required=True, help="output F0 JSON")
    p.add_argument("--fmin", type=float, default=f0.DEFAULT_F0_RANGE[0], help="lowest F0 in Hz (default %(default)s)")
    p.add_argument("--fmax", type=float, default=f0.DEFAULT_F0_RANGE[1], help="highest F0 in Hz (default %(default)s)")
    p.add_argument("--fft-size", type=int, default=2048, help="analysis window (default %(default)s)")
    p.add_argument("--hop-size", type=int, default=512, help="hop between frames (default %(default)s)")
    p.set_defaults(func=cmd_extract_f0)

    p = sub.add_parser("perturb-f0", parents=[common], help="apply seeded jitter/glide/jump segments to an F0 JSON")
    p.add_argument("--in", dest="input", required=True, help="input F0 JSON")
    p.add_argument("--out", required=True, help="output F0 JSON")
    _add_pert_options(p)
    p.set_defaults(func=cmd_perturb_f0)

    p = sub.add_parser("fx", parents=[common], help="run the harmony/echo/reverb chain on a WAV file")
    p.add_argument("--in", dest="input", required=True, help="input WAV")
    p.add_argument("--out", required=True, help="output WAV")
    p.add_argument("--force", action="append", default=[], metavar="EFFECT[=VALUE]",
                   help="apply only the forced effects: harmony=SEMITONES, echo=DELAY_S[:FEEDBACK], "
                        "reverb=RT60_S; a bare name draws the parameter from the seed. Repeatable.")
    p.add_argument("--bit-depth", default="float32", choices=audio.BIT_DEPTHS, help="output depth (default %(default)s)")
    _add_fx_options(p)
    p.set_defaults(func=cmd_fx)

    p = sub.add_parser("excite", parents=[common], help="harmonic-plus-noise excitation from an F0 JSON")
    p.add_argument("--f0", required=True, help="input F0 JSON")
    p.add_argument("--out", required=True, help="output WAV (float32)")
    p.add_argument("--harmonics", type=int, default=8, help="number of harmonics (default %(default)s)")
    p.add_argument("--sine-amp", type=float, default=0.1, help="sine amplitude (default %(default)s)")
    p.add_argument("--noise-std", type=float, default=0.003, help="unvoiced noise std (default %(default)s)")
    p.add_argument("--mask-out", help="write the per-sample voiced mask as a JSON 0/1 array")
    p.set_defaults(func=cmd_excite)

    p = sub.add_parser("run", parents=[common], help="batch-augment a corpus and write a manifest")
    p.add_argument("--in", dest="input", required=True, help="input directory of WAV files")
    p.add_argument("--out", help="output directory (overrides config output_dir)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default %(default)s)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("stats", parents=[common], help="empirical trigger rates of a manifest")
    p.add_argument("manifest", help="manifest.jsonl from `run`")
    p.set_defaults(func=cmd_stats)
    return parser


# --------------------------------------------------------------------------


def _emit(summary: dict) -> int:
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def _seed(args, cfg: pipeline.PipelineConfig | None = None) -> int:
    seed = getattr(args, "seed", None)
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"${SEED_ENV}={env!r} is not an integer") from None
    return cfg.master_seed if cfg is not None else 0


def _config(args) -> pipeline.PipelineConfig:
    path = getattr(args, "config", None)
    if path is None:
        return pipeline.PipelineConfig()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    return pipeline.PipelineConfig.from_dict(doc)


def _override(obj, args, names):
    changes = {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}
    return dataclasses.replace(obj, **changes) if changes else obj


def cmd_extract_f0(args) -> int:
    if not 0 < args.fmin < args.fmax:
        raise UsageError(f"need 0 < --fmin < --fmax, got {args.fmin}, {args.fmax}")
    try:
        spec = audio.FrameSpec(args.fft_size, args.hop_size)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    w = audio.load_waveform(args.input)
    contour = f0.extract_f0(w, spec, (args.fmin, args.fmax))
    f0.save_contour(contour, args.out)
    voiced = contour.values[contour.values > 0]
    return _emit({
        "command": "extract-f0",
        "out": args.out,
        "frames": len(contour),
        "voiced_frames": int(voiced.size),
        "median_hz": float(np.median(voiced)) if voiced.size else 0.0,
    })


def cmd_perturb_f0(args) -> int:
    cfg = _config(args)
    pert = _override(cfg.perturbation, args, ("p_jit", "p_gld", "p_jmp"))
    errs = pert.problems()
    if errs:
        raise pipeline.ConfigError(errs)
    contour = f0.load_contour(args.input)
    seed = _seed(args, cfg)
    out, plan = f0.perturb_f0(contour, pert, seed)
    f0.save_contour(out, args.out)
    return _emit({"command": "perturb-f0", "out": args.out, "seed": seed, "segment_plan": plan.to_dict()})


def _parse_forces(items: list[str]) -> dict:
    forced: dict = {}
    for item in items:
        name, _, value = item.partition("=")
        name = name.strip().lower()
        try:
            if name == "harmony":
                forced[name] = {"harmony_interval": int(value)} if value else {}
            elif name == "echo":
                delay, _, fb = value.partition(":")
                forced[name] = {}
                if delay:
                    forced[name]["echo_delay_s"] = float(delay)
                if fb:
                    forced[name]["echo_feedback"] = float(fb)
            elif name == "reverb":
                forced[name] = {"reverb_rt60_s": float(value)} if value else {}
            else:
                raise UsageError(f"--force: unknown effect {name!r}")
        except ValueError:
            raise UsageError(f"--force: bad value in {item!r}") from None
    return forced


def cmd_fx(args) -> int:
    cfg = _config(args)
    chain = _override(cfg.effects, args, ("p_h", "p_e", "p_r", "mix_h", "mix_e", "mix_r"))
    errs = chain.problems()
    if errs:
        raise pipeline.ConfigError(errs)
    seed = _seed(args, cfg)
    forces = _parse_forces(args.force)
    w = audio.load_waveform(args.input)
    if forces:
        trace = fx.force_effects(chain, seed, **forces)
        out = fx.render_chain(w, trace, chain)
    else:
        out, trace = fx.apply_chain(w, chain, seed)
    audio.save_waveform(out, args.out, args.bit_depth)
    return _emit({"command": "fx", "out": args.out, "seed": seed, "effect_trace": trace.to_dict()})


def cmd_excite(args) -> int:
    contour = f0.load_contour(args.f0)
    cfg = nsf.NsfConfig(
        num_harmonics=args.harmonics,
        sine_amplitude=args.sine_amp,
        noise_std=args.noise_std,
        sample_rate=contour.frame_spec.sample_rate,
    )
    seed = _seed(args)
    exc = nsf.generate_excitation(contour, cfg, seed)
    audio.save_waveform(audio.Waveform(exc.samples, exc.sample_rate), args.out, "float32")
    if args.mask_out:
        with open(args.mask_out, "w") as fh:
            json.dump(exc.voiced_mask.astype(int).tolist(), fh)
    return _emit({
        "command": "excite",
        "out": args.out,
        "seed": seed,
        "samples": int(exc.samples.size),
        "voiced_samples": int(exc.voiced_mask.sum()),
    })


def cmd_run(args) -> int:
    cfg = _config(args)
    cfg = cfg.with_seed(_seed(args, cfg))
    out = args.out or cfg.output_dir
    if out is None:
        raise UsageError("no output directory: pass --out or set output_dir in the config")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    result = pipeline.run_batch(args.input, cfg, jobs=args.jobs, output_dir=out)
    for err in result.errors:
        print(f"svc-forge: {err['source']}: {err['error']}", file=sys.stderr)
    _emit({
        "command": "run",
        "manifest": str(result.manifest_path),
        "records": len(result.records),
        "errors": len(result.errors),
        "status": result.status,
        "master_seed": cfg.master_seed,
    })
    return {"ok": EXIT_OK, "partial": EXIT_PARTIAL, "failed": EXIT_IO}[result.status]


def cmd_stats(args) -> int:
    cfg = _config(args) if getattr(args, "config", None) else None
    report = pipeline.stats_report(args.manifest, cfg)
    report["command"] = "stats"
    return _emit(report)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="svc-forge: %(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, pipeline.ConfigError) as exc:
        print(f"svc-forge {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except pipeline.BatchError as exc:
        print(f"svc-forge {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, ValueError) as exc:
        print(f"svc-forge {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
