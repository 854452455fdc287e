"""Optimization loop: joint contrastive training with a staged segment loss.

A single optimizer writer updates the parameters; per-utterance randomness is
derived functionally from (seed, epoch, utterance index), so two runs of the
same build produce bitwise-identical checkpoints and an interrupted run
resumes on the exact loss trajectory.  The segment-level loss joins the total
from ``add_nsc_epoch`` onward.
"""

from __future__ import annotations

import dataclasses
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import audio
from . import diffcore as dc
from . import infer
from . import metrics
from . import model
from . import objective as obj

__all__ = [
    "GRAD_CLIP_NORM",
    "ENV_PREFIX",
    "SWEEP_GRIDS",
    "TrainConfig",
    "TrainItem",
    "TrainResult",
    "DivergenceError",
    "parse_config_text",
    "config_to_text",
    "resolve_config",
    "load_dataset",
    "train",
    "sweep",
]

GRAD_CLIP_NORM = 5.0    # global-norm clip; the straight-through path can spike
ENV_PREFIX = "SCPC_"

# Reference grids: threshold 0..0.1 step 0.01, segment-loss start epoch 0..10.
SWEEP_GRIDS: dict[str, tuple] = {
    "thres": tuple(i / 100 for i in range(11)),
    "nsc_epoch": tuple(range(11)),
}


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run except the data itself."""

    lr: float = 1e-3
    optimizer: str = "adam"   # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 8       # utterances per update
    epochs: int = 40
    thres: float = 0.09       # boundary peak threshold during training
    add_nsc_epoch: int = 2    # first epoch that includes the segment loss
    k_frame: int = 10
    k_seg: int = 5
    frame_dim: int = 64
    segment_dim: int = 64
    seed: int = 0
    checkpoint_interval: int = 1   # epochs between checkpoint writes

    def __post_init__(self):
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.thres <= 1.0:
            raise ValueError(f"thres must be in [0, 1], got {self.thres}")
        if self.add_nsc_epoch < 0:
            raise ValueError(f"add_nsc_epoch must be >= 0, got {self.add_nsc_epoch}")
        if self.batch_size < 1 or self.epochs < 1 or self.checkpoint_interval < 1:
            raise ValueError("batch_size, epochs, and checkpoint_interval must be >= 1")
        if self.k_frame < 1 or self.k_seg < 0:
            raise ValueError(f"need k_frame >= 1 and k_seg >= 0, got {self.k_frame}, {self.k_seg}")
        if self.frame_dim < 1 or self.segment_dim < 1:
            raise ValueError("frame_dim and segment_dim must be >= 1")


# ------------------------------------------------------------ configuration

def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; '#' starts a comment, blank lines skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValueError(f"config line {lineno}: empty key or value in {raw!r}")
        if key in out:
            raise ValueError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def config_to_text(config: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in dataclasses.asdict(config).items())


_FIELD_TYPES = {"int": int, "float": float, "str": str}


def resolve_config(path: str | Path | None = None, env: dict | None = None, overrides: dict | None = None) -> TrainConfig:
    """Defaults, overridden in order by config file, SCPC_* environment
    variables, and explicit overrides (None override values are ignored).

    Unknown file keys are rejected together, so a typo'd config fails with
    the full list.
    """
    fields = {f.name: _FIELD_TYPES[f.type] for f in dataclasses.fields(TrainConfig)}
    values: dict[str, object] = {}
    if path is not None:
        raw = parse_config_text(Path(path).read_text())
        unknown = sorted(set(raw) - set(fields))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        values.update(raw)
    env = os.environ if env is None else env
    for name in fields:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            values[name] = env[env_key]
    for name, value in (overrides or {}).items():
        if name not in fields:
            raise ValueError(f"unknown config keys: {name}")
        if value is not None:
            values[name] = value
    typed = {}
    for name, value in values.items():
        try:
            typed[name] = fields[name](value)
        except (TypeError, ValueError) as e:
            raise ValueError(f"config key {name!r}: cannot parse {value!r} as {fields[name].__name__}") from e
    return TrainConfig(**typed)


# ------------------------------------------------------------------- data

@dataclass(frozen=True)
class TrainItem:
    """One utterance held in memory with both reference boundary levels."""

    id: str
    samples: np.ndarray
    phoneme_times: np.ndarray
    word_times: np.ndarray
    duration_s: float


def load_dataset(manifest_path: str | Path) -> list[TrainItem]:
    items = []
    for wav_path, phn_path, wrd_path in audio.read_manifest(manifest_path):
        wave = audio.load_wav(wav_path)
        if wave.sample_rate != 16000:
            raise ValueError(f"{wav_path}: sample rate {wave.sample_rate} != 16000; resample first")
        phoneme = audio.load_annotation(phn_path, "phoneme")
        word = audio.load_annotation(wrd_path, "word")
        items.append(TrainItem(wav_path.stem, wave.samples, phoneme.times, word.times, wave.samples.size / wave.sample_rate))
    return items


# -------------------------------------------------------------- optimizer

@dataclass
class _OptState:
    t: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


def _clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float(np.sum(g * g))
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for name in grads:
            grads[name] *= scale
    return norm


def _apply_update(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: _OptState, config: TrainConfig) -> None:
    """One optimizer step; math in float64, storage in float32."""
    if config.optimizer == "sgd":
        for name in params:
            params[name] = (params[name].astype(np.float64) - config.lr * grads[name]).astype(np.float32)
        return
    state.t += 1
    bias1 = 1.0 - config.beta1 ** state.t
    bias2 = 1.0 - config.beta2 ** state.t
    for name in params:
        g = grads[name]
        m = config.beta1 * state.m[name].astype(np.float64) + (1.0 - config.beta1) * g
        v = config.beta2 * state.v[name].astype(np.float64) + (1.0 - config.beta2) * g * g
        state.m[name] = m.astype(np.float32)
        state.v[name] = v.astype(np.float32)
        step = config.lr * (m / bias1) / (np.sqrt(v / bias2) + config.eps)
        params[name] = (params[name].astype(np.float64) - step).astype(np.float32)


# ------------------------------------------------------------- validation

_VAL_NET: model.SCPCModel | None = None


def _val_init(net: model.SCPCModel) -> None:
    global _VAL_NET
    _VAL_NET = net


def _val_profile(entry: tuple[str, np.ndarray]) -> infer.UtteranceProfile:
    utt_id, samples = entry
    assert _VAL_NET is not None
    return infer.profile_utterance(_VAL_NET, samples, utt_id)


def _profile_items(net: model.SCPCModel, items: list[TrainItem], workers: int) -> list[infer.UtteranceProfile]:
    entries = [(it.id, it.samples) for it in items]
    if workers <= 1:
        return [infer.profile_utterance(net, s, i) for i, s in entries]
    with ProcessPoolExecutor(max_workers=workers, initializer=_val_init, initargs=(net,)) as pool:
        return list(pool.map(_val_profile, entries))


def _validate(net: model.SCPCModel, items: list[TrainItem], workers: int) -> tuple[float | None, float | None]:
    """Pooled R-values at the default prominence, both levels."""
    profiles = _profile_items(net, items, workers)
    durations = {it.id: it.duration_s for it in items}
    preds_ph = {p.id: infer.phoneme_boundaries(p, infer.PeakPickConfig(level="phoneme")).times for p in profiles}
    preds_wd = {p.id: infer.word_boundaries(p, infer.PeakPickConfig(level="word")).times for p in profiles}
    rep_ph = metrics.evaluate(preds_ph, {it.id: it.phoneme_times for it in items}, durations=durations)
    rep_wd = metrics.evaluate(preds_wd, {it.id: it.word_times for it in items}, durations=durations)
    return rep_ph.r_value, rep_wd.r_value


# --------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainResult:
    checkpoint: Path
    metrics_log: Path
    history: list[dict]
    model: model.SCPCModel


_RESUME_FREE_FIELDS = {"epochs", "checkpoint_interval"}   # logging/extent knobs, not math


def _save_state(path: Path, net: model.SCPCModel, state: _OptState, completed_epochs: int, config: TrainConfig) -> None:
    extras = {
        "epoch": np.asarray(completed_epochs, dtype=np.int64),
        "adam_t": np.asarray(state.t, dtype=np.int64),
    }
    for name in net.params:
        extras[f"adam_m/{name}"] = state.m[name]
        extras[f"adam_v/{name}"] = state.v[name]
    tmp = path.with_suffix(".tmp.npz")
    model.save_checkpoint(tmp, net, extra_arrays=extras, train_config=dataclasses.asdict(config))
    os.replace(tmp, path)


def train(
    manifest_path: str | Path,
    config: TrainConfig,
    out_dir: str | Path,
    val_manifest_path: str | Path | None = None,
    resume_from: str | Path | None = None,
    workers: int = 1,
) -> TrainResult:
    """Train from a manifest, logging one JSON record per epoch.

    Checkpoints are written atomically after clean epochs only, so a
    divergence (non-finite loss, reported with the offending utterance)
    leaves the last good checkpoint in place.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    items = load_dataset(manifest_path)
    if len(items) < config.batch_size:
        raise ValueError(f"need at least batch_size={config.batch_size} utterances, got {len(items)}")
    val_items = load_dataset(val_manifest_path) if val_manifest_path else []
    min_frames = config.k_frame + 2

    if resume_from is not None:
        net, extras, echoed = model.load_checkpoint(resume_from)
        if echoed is None:
            raise ValueError(f"{resume_from}: checkpoint carries no training config; cannot resume")
        stored = TrainConfig(**echoed)
        mismatched = [
            f.name for f in dataclasses.fields(TrainConfig)
            if f.name not in _RESUME_FREE_FIELDS and getattr(stored, f.name) != getattr(config, f.name)
        ]
        if mismatched:
            raise ValueError(f"resume config differs from checkpoint on: {', '.join(mismatched)}")
        start_epoch = int(extras["epoch"])
        if start_epoch >= config.epochs:
            raise ValueError(f"checkpoint already covers {start_epoch} epochs; nothing to resume for epochs={config.epochs}")
        state = _OptState(
            t=int(extras["adam_t"]),
            m={k: extras[f"adam_m/{k}"] for k in net.params},
            v={k: extras[f"adam_v/{k}"] for k in net.params},
        )
    else:
        net = model.SCPCModel.init(model.ModelConfig(config.frame_dim, config.segment_dim, config.thres), seed=config.seed)
        start_epoch = 0
        state = _OptState(0, {k: np.zeros_like(p) for k, p in net.params.items()}, {k: np.zeros_like(p) for k, p in net.params.items()})

    params = dict(net.params)
    spec = obj.ContrastiveBatchSpec(config.k_frame, config.k_seg)
    ckpt_path = out / "checkpoint.npz"
    metrics_path = out / "metrics.jsonl"
    history: list[dict] = []

    with open(metrics_path, "w" if start_epoch == 0 else "a") as log:
        for epoch in range(start_epoch, config.epochs):
            order = np.random.default_rng([config.seed, epoch]).permutation(len(items))
            nsc_active = epoch >= config.add_nsc_epoch
            nfc_sum = nsc_sum = seg_sum = 0.0
            nfc_n = nsc_n = seg_n = skipped = 0

            for start in range(0, len(order), config.batch_size):
                batch = order[start : start + config.batch_size]
                grads = {k: np.zeros(p.shape, dtype=np.float64) for k, p in params.items()}
                contributing = 0
                for idx in batch:
                    item = items[int(idx)]
                    if item.samples.size < model.RECEPTIVE_FIELD or model.n_frames(item.samples.size) < min_frames:
                        skipped += 1
                        continue
                    tape = dc.Tape()
                    leaves = {k: tape.tensor(p, requires_grad=True) for k, p in params.items()}
                    graph = model.analyze_utterance(tape, leaves, item.samples, config.thres)
                    rng = np.random.default_rng([config.seed, epoch, int(idx)])
                    total, report = obj.utterance_loss(tape, graph.frames, graph.segments, graph.contexts, spec, nsc_active, rng)
                    if not np.isfinite(report.total):
                        raise DivergenceError(f"non-finite loss on utterance {item.id} in epoch {epoch}; last-good checkpoint retained")
                    tape.backward(total)
                    for k in params:
                        grads[k] += leaves[k].grad.astype(np.float64)
                    contributing += 1
                    nfc_sum += report.nfc
                    nfc_n += 1
                    if report.nsc is not None:
                        nsc_sum += report.nsc
                        nsc_n += 1
                    seg_sum += graph.segments.shape[0]
                    seg_n += 1
                if contributing == 0:
                    continue
                for k in grads:
                    grads[k] /= contributing
                norm = _clip_global_norm(grads, GRAD_CLIP_NORM)
                if not np.isfinite(norm):
                    raise DivergenceError(f"non-finite gradient norm in epoch {epoch}; last-good checkpoint retained")
                _apply_update(params, grads, state, config)

            net = model.SCPCModel(net.config, dict(params))
            record = {
                "epoch": epoch,
                "l_nfc": nfc_sum / nfc_n if nfc_n else None,
                "l_nsc": nsc_sum / nsc_n if nsc_n else None,
                "mean_segments": seg_sum / seg_n if seg_n else None,
                "n_skipped": skipped,
                "val_r_phoneme": None,
                "val_r_word": None,
            }
            if val_items:
                record["val_r_phoneme"], record["val_r_word"] = _validate(net, val_items, workers)
            history.append(record)
            log.write(json.dumps(record) + "\n")
            log.flush()
            if (epoch + 1) % config.checkpoint_interval == 0 or epoch + 1 == config.epochs:
                _save_state(ckpt_path, net, state, epoch + 1, config)

    return TrainResult(ckpt_path, metrics_path, history, net)


# ----------------------------------------------------------------- sweeps

def sweep(
    manifest_path: str | Path,
    val_manifest_path: str | Path,
    base_config: TrainConfig,
    grid_name: str,
    out_dir: str | Path,
    values: tuple | None = None,
    workers: int = 1,
) -> list[dict]:
    """One full train+eval per grid point, same seed and data throughout.

    Rows carry the final epoch's validation R-values and the mean number of
    training-time segments per utterance; the table lands in ``sweep.json``.
    """
    if grid_name not in SWEEP_GRIDS:
        raise ValueError(f"grid must be one of {sorted(SWEEP_GRIDS)}, got {grid_name!r}")
    grid = SWEEP_GRIDS[grid_name] if values is None else tuple(values)
    if not grid:
        raise ValueError("sweep grid is empty")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in grid:
        if grid_name == "thres":
            config = dataclasses.replace(base_config, thres=float(value))
            tag = f"thres_{value:.2f}"
        else:
            config = dataclasses.replace(base_config, add_nsc_epoch=int(value))
            tag = f"nsc_epoch_{int(value)}"
        result = train(manifest_path, config, out / tag, val_manifest_path, workers=workers)
        last = result.history[-1]
        rows.append({
            "param": grid_name,
            "value": value,
            "phoneme_r_value": last["val_r_phoneme"],
            "word_r_value": last["val_r_word"],
            "mean_segments": last["mean_segments"],
            "l_nfc": last["l_nfc"],
            "l_nsc": last["l_nsc"],
        })
    (out / "sweep.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows
