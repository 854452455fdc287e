"""Command-line surface: synth | train | segment | eval | sweep | tune.

Every run that has an output directory echoes its fully resolved
configuration there as ``config_resolved.json``.  Errors exit nonzero with a
single-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import audio
from . import infer
from . import metrics
from . import model
from . import trainer

__all__ = ["main"]


def _echo_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_resolved.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _ref_mapping(manifest: Path, level: str) -> tuple[dict[str, np.ndarray], dict[str, float]]:
    """Reference times and durations per utterance; the final annotated end
    time doubles as the duration, so no audio needs decoding."""
    refs: dict[str, np.ndarray] = {}
    durations: dict[str, float] = {}
    for wav, phn, wrd in audio.read_manifest(manifest):
        ann = audio.load_annotation(phn if level == "phoneme" else wrd, level)
        if ann.times.size == 0:
            raise ValueError(f"{wav.stem}: empty {level} annotation")
        refs[wav.stem] = ann.times
        durations[wav.stem] = float(ann.times[-1])
    return refs, durations


def _cmd_synth(args) -> int:
    spec = audio.spec_from_json(Path(args.spec).read_text()) if args.spec else audio.default_spec()
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out = Path(args.out)
    utts = audio.generate_corpus(spec, args.n, start_index=args.start_index)
    manifest = audio.save_corpus(utts, out)
    _echo_config(out, {"command": "synth", "n": args.n, "start_index": args.start_index,
                       "spec": json.loads(audio.spec_to_json(spec))})
    print(f"wrote {args.n} utterances to {manifest}")
    return 0


def _cmd_train(args) -> int:
    config = trainer.resolve_config(args.config, overrides={"seed": args.seed})
    out = Path(args.out)
    _echo_config(out, {"command": "train", "manifest": str(args.manifest), "val": args.val and str(args.val),
                       "workers": args.workers, "resume": args.resume and str(args.resume),
                       "config": dataclasses.asdict(config)})
    result = trainer.train(args.manifest, config, out, val_manifest_path=args.val,
                           resume_from=args.resume, workers=args.workers)
    last = result.history[-1]
    print(f"trained {config.epochs} epochs; checkpoint {result.checkpoint}")
    print(f"final epoch: l_nfc {last['l_nfc']:.4f}  l_nsc "
          + (f"{last['l_nsc']:.4f}" if last["l_nsc"] is not None else "inactive"))
    return 0


def _cmd_segment(args) -> int:
    out = Path(args.out)
    entries = [(str(wav), wav.stem) for wav, _, _ in audio.read_manifest(args.manifest)]
    profiles = infer.profile_corpus(args.ckpt, entries, workers=args.workers)
    cfg = infer.PeakPickConfig(prominence=args.prominence, level=args.level, normalize=args.normalize)
    preds = [infer.predict(p, cfg) for p in profiles]
    infer.write_predictions(preds, out, args.level)
    _echo_config(out, {"command": "segment", "ckpt": str(args.ckpt), "manifest": str(args.manifest),
                       "level": args.level, "prominence": args.prominence, "normalize": args.normalize,
                       "workers": args.workers})
    total = sum(p.times.size for p in preds)
    print(f"wrote {len(preds)} boundary files ({total} boundaries) to {out}")
    return 0


def _cmd_eval(args) -> int:
    preds = infer.read_predictions(args.pred)
    refs, durations = _ref_mapping(args.ref, args.level)
    report = metrics.evaluate(preds, refs, tolerance=args.tol, durations=durations,
                              per_utterance_average=args.per_utterance)
    print(metrics.format_report(report, label=args.level))
    if args.out:
        out = Path(args.out)
        _echo_config(out, {"command": "eval", "pred": str(args.pred), "ref": str(args.ref),
                           "level": args.level, "tol": args.tol, "per_utterance": args.per_utterance})
        (out / "eval.json").write_text(json.dumps(dataclasses.asdict(report), indent=2) + "\n")
    return 0


def _cmd_sweep(args) -> int:
    config = trainer.resolve_config(args.config, overrides={"seed": args.seed})
    out = Path(args.out)
    values = tuple(float(v) if args.grid == "thres" else int(v) for v in args.values.split(",")) if args.values else None
    _echo_config(out, {"command": "sweep", "grid": args.grid, "values": values,
                       "manifest": str(args.manifest), "val": str(args.val),
                       "workers": args.workers, "config": dataclasses.asdict(config)})
    rows = trainer.sweep(args.manifest, args.val, config, args.grid, out, values=values, workers=args.workers)
    fmt = "{:>11} {:>12} {:>12} {:>14}"
    print(fmt.format(args.grid, "phoneme_R", "word_R", "mean_segments"))
    for row in rows:
        print(fmt.format(
            f"{row['value']:.2f}" if args.grid == "thres" else str(row["value"]),
            _pct_cell(row["phoneme_r_value"]),
            _pct_cell(row["word_r_value"]),
            f"{row['mean_segments']:.2f}" if row["mean_segments"] is not None else "n/a",
        ))
    return 0


def _pct_cell(value: float | None) -> str:
    return "n/a" if value is None else f"{100 * value:.1f}"


def _cmd_tune(args) -> int:
    entries = [(str(wav), wav.stem) for wav, _, _ in audio.read_manifest(args.manifest)]
    profiles = infer.profile_corpus(args.ckpt, entries, workers=args.workers)
    refs, durations = _ref_mapping(args.manifest, args.level)
    result = infer.tune_prominence(profiles, refs, args.level, durations=durations, tolerance=args.tol)
    print(f"prominence {result.prominence:.2f}  r_value {_pct_cell(result.r_value)}")
    if args.out:
        out = Path(args.out)
        _echo_config(out, {"command": "tune", "ckpt": str(args.ckpt), "manifest": str(args.manifest),
                           "level": args.level, "tol": args.tol, "workers": args.workers})
        payload = {"level": args.level, "prominence": result.prominence, "r_value": result.r_value,
                   "grid": [{"prominence": p, "r_value": r} for p, r in result.rows]}
        (out / "tune.json").write_text(json.dumps(payload, indent=2) + "\n")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scpc", description="Joint frame/segment contrastive boundary detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic corpus with reference boundaries")
    p.add_argument("--spec", help="corpus spec JSON (default: built-in five-phone spec)")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True, help="number of utterances")
    p.add_argument("--start-index", type=int, default=0,
                   help="first utterance index; disjoint ranges under one seed give disjoint splits")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="train a model from a wav manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="flat key = value training config")
    p.add_argument("--out", required=True)
    p.add_argument("--val", help="validation manifest for per-epoch R-values")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("segment", help="predict boundaries with a trained model")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--level", choices=infer.LEVELS, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prominence", type=float, default=infer.DEFAULT_PROMINENCE)
    p.add_argument("--normalize", action="store_true", help="min-max scale scores per utterance")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_segment)

    p = sub.add_parser("eval", help="score predicted boundaries against references")
    p.add_argument("--pred", required=True, help="directory written by `segment`")
    p.add_argument("--ref", required=True, help="reference manifest")
    p.add_argument("--level", choices=infer.LEVELS, required=True)
    p.add_argument("--tol", type=float, default=metrics.DEFAULT_TOLERANCE)
    p.add_argument("--per-utterance", action="store_true", dest="per_utterance",
                   help="average precision/recall per utterance instead of pooling counts")
    p.add_argument("--out", help="also write eval.json here")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("sweep", help="train once per grid point and tabulate R-values")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--config", help="base training config")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", choices=sorted(trainer.SWEEP_GRIDS), required=True)
    p.add_argument("--values", help="comma-separated grid override (default: reference grid)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser("tune", help="grid-search peak prominence on labeled data")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True, help="labeled validation manifest")
    p.add_argument("--level", choices=infer.LEVELS, required=True)
    p.add_argument("--tol", type=float, default=metrics.DEFAULT_TOLERANCE)
    p.add_argument("--out", help="also write tune.json here")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=_cmd_tune)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (OSError, ValueError, trainer.DivergenceError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
