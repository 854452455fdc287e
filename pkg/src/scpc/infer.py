"""Boundary prediction from a trained model.

Phoneme boundaries are prominence-filtered peaks of the normalized
dissimilarity between adjacent frame latents.  Word boundaries are peaks of
the dissimilarity between each causal context state and the following
segment latent, emitted at the end time of the segment the context has seen.
Inference is forward-only: parameters enter the tape as constants and only
the score curves are kept, so sweeping prominence never reruns the model.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from . import audio
from . import diffcore as dc
from . import metrics
from . import model

__all__ = [
    "DEFAULT_PROMINENCE",
    "PROMINENCE_GRID",
    "PeakPickConfig",
    "PredictedBoundaries",
    "UtteranceProfile",
    "TuneResult",
    "profile_utterance",
    "profile_corpus",
    "predict",
    "phoneme_boundaries",
    "word_boundaries",
    "tune_prominence",
    "write_predictions",
    "read_predictions",
]

DEFAULT_PROMINENCE = 0.1
PROMINENCE_GRID = tuple(i / 100 for i in range(51))
LEVELS = ("phoneme", "word")


@dataclass(frozen=True)
class PeakPickConfig:
    """How to turn a score curve into boundaries."""

    prominence: float = DEFAULT_PROMINENCE
    level: str = "phoneme"
    normalize: bool = False   # min-max scale scores per utterance first

    def __post_init__(self):
        if self.prominence < 0:
            raise ValueError(f"prominence must be >= 0, got {self.prominence}")
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}, got {self.level!r}")


@dataclass(frozen=True)
class PredictedBoundaries:
    """Strictly increasing boundary times (seconds) for one utterance."""

    id: str
    level: str
    times: np.ndarray

    def __post_init__(self):
        if self.times.size and np.any(np.diff(self.times) <= 0):
            raise ValueError(f"{self.id}: boundary times must be strictly increasing")


@dataclass(frozen=True)
class UtteranceProfile:
    """Score curves for one utterance, precomputed once per checkpoint.

    ``dissimilarity`` has one entry per frame junction; ``word_scores`` one
    per segment junction.  Both are empty when the utterance is too short to
    encode two frames.
    """

    id: str
    dissimilarity: np.ndarray        # (L-1,)
    word_scores: np.ndarray          # (M-1,)
    segment_end_frames: np.ndarray   # (M,) last frame index of each segment
    n_frames: int
    duration_s: float


@dataclass(frozen=True)
class TuneResult:
    prominence: float
    r_value: float | None
    rows: tuple[tuple[float, float | None], ...]  # (prominence, r_value) per grid point


def _rowwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a.astype(np.float64)
    b = b.astype(np.float64)
    num = (a * b).sum(axis=1)
    den = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1) + 1e-8
    return num / den


def profile_utterance(net: model.SCPCModel, samples: np.ndarray, utt_id: str) -> UtteranceProfile:
    """Run the model forward and keep only what peak picking needs.

    Segmentation uses the threshold stored in the model config.  Utterances
    shorter than two frames cannot produce a junction; they yield an empty
    profile and a warning.
    """
    duration = samples.size / net.config.sample_rate
    empty = np.empty(0, dtype=np.float64)
    if samples.size < model.RECEPTIVE_FIELD + model.TOTAL_STRIDE:
        warnings.warn(f"utterance {utt_id}: {samples.size} samples is too short to segment; emitting no boundaries")
        return UtteranceProfile(utt_id, empty, empty, np.empty(0, dtype=np.int64), 0, duration)

    tape = dc.Tape()
    leaves = {name: tape.constant(arr) for name, arr in net.params.items()}
    graph = model.analyze_utterance(tape, leaves, samples, net.config.thres)

    dissim = np.array(graph.boundaries.dissimilarity.data, dtype=np.float64)
    spans = graph.boundaries.spans
    end_frames = np.array([e - 1 for _, e in spans], dtype=np.int64)
    m = len(spans)
    if m >= 2:
        seg = graph.segments.data
        ctx = graph.contexts.data
        word_scores = 1.0 - _rowwise_cosine(ctx[: m - 1], seg[1:])
    else:
        word_scores = empty
    return UtteranceProfile(utt_id, dissim, word_scores, end_frames, graph.frames.shape[0], duration)


_WORKER_NET: model.SCPCModel | None = None


def _worker_init(ckpt_path: str) -> None:
    global _WORKER_NET
    _WORKER_NET = model.load_checkpoint(ckpt_path)[0]


def _worker_profile(entry: tuple[str, str]) -> UtteranceProfile:
    wav_path, utt_id = entry
    assert _WORKER_NET is not None
    wave = audio.load_wav(wav_path)
    if wave.sample_rate != _WORKER_NET.config.sample_rate:
        raise ValueError(f"{utt_id}: sample rate {wave.sample_rate} != model's {_WORKER_NET.config.sample_rate}; resample first")
    return profile_utterance(_WORKER_NET, wave.samples, utt_id)


def profile_corpus(ckpt_path: str | Path, entries: list[tuple[str, str]], workers: int = 1) -> list[UtteranceProfile]:
    """Profiles for (wav_path, utterance_id) pairs, in input order.

    With workers > 1 the model is loaded once per worker process; results are
    identical to the sequential path.
    """
    if workers <= 1:
        _worker_init(str(ckpt_path))
        return [_worker_profile(e) for e in entries]
    with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init, initargs=(str(ckpt_path),)) as pool:
        return list(pool.map(_worker_profile, entries))


def _pick(scores: np.ndarray, cfg: PeakPickConfig) -> np.ndarray:
    if cfg.normalize and scores.size:
        lo, hi = scores.min(), scores.max()
        scores = np.zeros_like(scores) if hi == lo else (scores - lo) / (hi - lo)
    idx, _ = find_peaks(scores, prominence=cfg.prominence)
    return idx


def phoneme_boundaries(profile: UtteranceProfile, cfg: PeakPickConfig) -> PredictedBoundaries:
    """Peaks of the frame dissimilarity curve; junction t maps to t * 10 ms."""
    idx = _pick(profile.dissimilarity, cfg)
    times = (idx + 1) * model.FRAME_HOP_S
    return PredictedBoundaries(profile.id, "phoneme", times.astype(np.float64))


def word_boundaries(profile: UtteranceProfile, cfg: PeakPickConfig) -> PredictedBoundaries:
    """Peaks of the context-vs-next-segment dissimilarity, at segment end times.

    A peak at junction t marks the end of segment t: the last frame index of
    that segment times the frame hop.  Fewer than three segments cannot carry
    an interior peak, so nothing is emitted.
    """
    m = profile.segment_end_frames.size
    if m < 3:
        return PredictedBoundaries(profile.id, "word", np.empty(0, dtype=np.float64))
    idx = _pick(profile.word_scores, cfg)
    times = profile.segment_end_frames[idx] * model.FRAME_HOP_S
    return PredictedBoundaries(profile.id, "word", times.astype(np.float64))


def predict(profile: UtteranceProfile, cfg: PeakPickConfig) -> PredictedBoundaries:
    if cfg.level == "phoneme":
        return phoneme_boundaries(profile, cfg)
    return word_boundaries(profile, cfg)


def tune_prominence(
    profiles: list[UtteranceProfile],
    refs: dict[str, np.ndarray],
    level: str,
    durations: dict[str, float] | None = None,
    tolerance: float = metrics.DEFAULT_TOLERANCE,
    grid: tuple[float, ...] = PROMINENCE_GRID,
    normalize: bool = False,
) -> TuneResult:
    """Grid-search prominence maximizing the pooled R-value on a labeled set.

    Ties break toward the larger prominence (fewer boundaries).  Grid points
    where no boundaries are predicted score as negative infinity.
    """
    if not profiles:
        raise ValueError("tune_prominence: empty validation set")
    if not grid:
        raise ValueError("tune_prominence: empty grid")
    best_prom, best_rv, best_score = None, None, -np.inf
    rows = []
    for prom in grid:
        cfg = PeakPickConfig(prominence=prom, level=level, normalize=normalize)
        preds = {p.id: predict(p, cfg).times for p in profiles}
        report = metrics.evaluate(preds, refs, tolerance, durations)
        rows.append((prom, report.r_value))
        score = -np.inf if report.r_value is None else report.r_value
        if score >= best_score:
            best_prom, best_rv, best_score = prom, report.r_value, score
    return TuneResult(best_prom, best_rv, tuple(rows))


def write_predictions(preds: list[PredictedBoundaries], out_dir: str | Path, level: str) -> Path:
    """One boundary-time file per utterance plus a manifest and a count report.

    Each ``<id>.txt`` holds one time per line with six decimals; the manifest
    ``predictions.tsv`` maps ids to files and ``report.json`` records counts.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_lines = []
    counts = []
    for p in preds:
        fname = f"{p.id}.txt"
        (out / fname).write_text("".join(f"{t:.6f}\n" for t in p.times))
        manifest_lines.append(f"{p.id}\t{fname}")
        counts.append({"id": p.id, "n_boundaries": int(p.times.size)})
    manifest = out / "predictions.tsv"
    manifest.write_text("".join(line + "\n" for line in manifest_lines))
    report = {
        "level": level,
        "n_utterances": len(preds),
        "total_boundaries": int(sum(c["n_boundaries"] for c in counts)),
        "utterances": counts,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return manifest


def read_predictions(pred_dir: str | Path) -> dict[str, np.ndarray]:
    """Load a predictions directory back into an id -> times mapping."""
    pred_dir = Path(pred_dir)
    manifest = pred_dir / "predictions.tsv"
    if not manifest.is_file():
        raise FileNotFoundError(f"no predictions.tsv in {pred_dir}")
    out: dict[str, np.ndarray] = {}
    for line in manifest.read_text().splitlines():
        if not line.strip():
            continue
        utt_id, fname = line.split("\t")
        text = (pred_dir / fname).read_text()
        times = np.array([float(v) for v in text.split()], dtype=np.float64)
        if times.size and np.any(np.diff(times) <= 0):
            raise ValueError(f"{utt_id}: boundary file {fname} is not strictly increasing")
        out[utt_id] = times
    return out
