"""Model parameters and computation-graph builders for the segmentation model.

Three trainable blocks:

* a strided convolutional frame encoder mapping raw 16 kHz samples to one
  latent vector every 10 ms (five layers, 465-sample receptive field);
* a one-hidden-layer MLP re-encoding segment mean vectors;
* a single-layer tanh recurrence producing a causal context state per segment.

Parameters live in a flat name -> float32 array dict so the optimizer,
gradient clipping, and checkpoints can treat them uniformly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import boundary as bd
from . import diffcore as dc

__all__ = [
    "KERNELS",
    "STRIDES",
    "RECEPTIVE_FIELD",
    "TOTAL_STRIDE",
    "FRAME_HOP_S",
    "LATENT_EPS",
    "ModelConfig",
    "SCPCModel",
    "FrameSeq",
    "SegmentSeq",
    "UtteranceGraph",
    "n_frames",
    "frame_latents",
    "segment_latents",
    "context_states",
    "analyze_utterance",
    "save_checkpoint",
    "load_checkpoint",
]

KERNELS = (10, 8, 4, 4, 4)
STRIDES = (5, 4, 2, 2, 2)
RECEPTIVE_FIELD = 465   # samples: 1 + sum((k-1) * prod(earlier strides))
TOTAL_STRIDE = 160      # samples between frames: 10 ms at 16 kHz
FRAME_HOP_S = TOTAL_STRIDE / 16000.0

CHECKPOINT_VERSION = 1

# Added to encoder outputs so no latent is ever the exact zero vector, which
# cosine similarity rejects.  A relu stack can go fully dead for a window once
# the optimizer moves the biases, so an init-time bias alone is not enough.
LATENT_EPS = 1e-6


def n_frames(n_samples: int) -> int:
    """Frames produced for an input of ``n_samples`` (requires at least 465)."""
    if n_samples < RECEPTIVE_FIELD:
        raise ValueError(f"input of {n_samples} samples is shorter than one receptive field ({RECEPTIVE_FIELD})")
    return (n_samples - RECEPTIVE_FIELD) // TOTAL_STRIDE + 1


@dataclass(frozen=True)
class ModelConfig:
    frame_dim: int = 64    # latent width per frame
    segment_dim: int = 64  # segment and context width
    thres: float = 0.09    # peak threshold used for segmentation
    sample_rate: int = 16000

    def __post_init__(self):
        if self.frame_dim < 1 or self.segment_dim < 1:
            raise ValueError(f"dims must be positive, got frame_dim={self.frame_dim} segment_dim={self.segment_dim}")
        if not 0.0 <= self.thres <= 1.0:
            raise ValueError(f"thres must be in [0, 1], got {self.thres}")
        if self.sample_rate != 16000:
            raise ValueError(f"only 16 kHz input is supported, got {self.sample_rate}; resample first")


@dataclass(frozen=True)
class FrameSeq:
    """Frame latents for one utterance: row t covers 10 ms starting at t * hop."""

    id: str
    latents: np.ndarray   # (n_frames, frame_dim)
    hop_s: float = FRAME_HOP_S


@dataclass(frozen=True)
class SegmentSeq:
    """Segment latents plus the frame span each segment covers (half-open)."""

    id: str
    latents: np.ndarray                 # (n_segments, segment_dim)
    spans: tuple[tuple[int, int], ...]  # frame index spans, half-open
    context: np.ndarray | None = None   # (n_segments, segment_dim) causal states


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class SCPCModel:
    """Parameter container; the actual math lives in the graph builders below."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        self.config = config
        self.params = params

    @classmethod
    def init(cls, config: ModelConfig = ModelConfig(), seed: int = 0) -> "SCPCModel":
        """Uniform fan-in initialization, fully determined by the seed."""
        rng = np.random.default_rng([seed, 0xC0DE])
        p, q = config.frame_dim, config.segment_dim
        params: dict[str, np.ndarray] = {}
        c_in = 1
        for i, (k, _) in enumerate(zip(KERNELS, STRIDES)):
            c_out = p
            params[f"frame_conv{i}_w"] = _uniform(rng, (c_out, c_in, k), c_in * k)
            # Small positive bias keeps silent windows off the relu dead zone
            # at init; LATENT_EPS is the durable nonzero guarantee.
            params[f"frame_conv{i}_b"] = np.full(c_out, 0.01, dtype=np.float32)
            c_in = c_out
        params["seg_w1"] = _uniform(rng, (p, q), p)
        params["seg_b1"] = np.zeros(q, dtype=np.float32)
        params["seg_w2"] = _uniform(rng, (q, q), q)
        params["seg_b2"] = np.zeros(q, dtype=np.float32)
        params["ctx_w_in"] = _uniform(rng, (q, q), q)
        params["ctx_w_h"] = _uniform(rng, (q, q), q)
        params["ctx_b"] = np.zeros(q, dtype=np.float32)
        return cls(config, params)

    def leaf_tensors(self, tape: dc.Tape) -> dict[str, dc.Tensor]:
        return {name: tape.tensor(arr, requires_grad=True) for name, arr in self.params.items()}


def frame_latents(tape: dc.Tape, leaves: dict[str, dc.Tensor], samples: np.ndarray) -> dc.Tensor:
    """Encode raw samples into frame latents, shape (n_frames, frame_dim).

    ``samples`` must be float32, at least one receptive field long; the caller
    is responsible for the sample rate being 16 kHz.
    """
    n_frames(samples.size)  # validates length
    x = tape.tensor(samples.reshape(1, -1))
    n_layers = len(KERNELS)
    for i, (k, s) in enumerate(zip(KERNELS, STRIDES)):
        x = dc.conv1d(x, leaves[f"frame_conv{i}_w"], stride=s)     # (c_out, t)
        x = dc.transpose(x)                                        # (t, c_out)
        x = dc.relu(dc.add(x, leaves[f"frame_conv{i}_b"]))
        if i < n_layers - 1:
            x = dc.transpose(x)
    return dc.add(x, tape.constant(np.float32(LATENT_EPS)))


def segment_latents(tape: dc.Tape, leaves: dict[str, dc.Tensor], means: dc.Tensor) -> dc.Tensor:
    """Re-encode segment means (n_segments, frame_dim) -> (n_segments, segment_dim).

    ``LATENT_EPS`` is added so a dead hidden layer (output equal to the bias,
    zero at init) cannot produce the exact zero vector.
    """
    h = dc.relu(dc.add(dc.matmul(means, leaves["seg_w1"]), leaves["seg_b1"]))
    out = dc.add(dc.matmul(h, leaves["seg_w2"]), leaves["seg_b2"])
    return dc.add(out, tape.constant(np.float32(LATENT_EPS)))


def context_states(tape: dc.Tape, leaves: dict[str, dc.Tensor], segments: dc.Tensor) -> dc.Tensor:
    """Causal tanh recurrence over segment latents; row i sees segments 0..i."""
    m, q = segments.shape
    h = tape.constant(np.zeros((1, q), dtype=np.float32))
    rows = []
    for i in range(m):
        x_i = dc.narrow(segments, i, 1)
        pre = dc.add(dc.add(dc.matmul(x_i, leaves["ctx_w_in"]), dc.matmul(h, leaves["ctx_w_h"])), leaves["ctx_b"])
        h = dc.tanh(pre)
        rows.append(h)
    return dc.concat(rows, axis=0)


@dataclass(frozen=True)
class UtteranceGraph:
    """Every stage of one utterance's forward pass, on a live tape."""

    frames: dc.Tensor          # (L, frame_dim)
    boundaries: bd.BoundaryGraph
    segments: dc.Tensor        # (M, segment_dim)
    contexts: dc.Tensor        # (M, segment_dim)


def analyze_utterance(tape: dc.Tape, leaves: dict[str, dc.Tensor], samples: np.ndarray, thres: float) -> UtteranceGraph:
    """Frames -> boundaries -> segment latents -> causal context, one tape."""
    frames = frame_latents(tape, leaves, samples)
    graph = bd.detect_segments(tape, frames, thres)
    segments = segment_latents(tape, leaves, graph.means)
    contexts = context_states(tape, leaves, segments)
    return UtteranceGraph(frames, graph, segments, contexts)


def save_checkpoint(path: str | Path, model: SCPCModel, extra_arrays: dict[str, np.ndarray] | None = None, train_config: dict | None = None) -> None:
    """Write a versioned npz container: params, config echo, optional extras."""
    payload: dict[str, np.ndarray] = {
        "format_version": np.asarray(CHECKPOINT_VERSION),
        "config_json": np.asarray(json.dumps({"model": asdict(model.config), "train": train_config})),
    }
    for name, arr in model.params.items():
        payload[f"param/{name}"] = arr
    for name, arr in (extra_arrays or {}).items():
        payload[f"extra/{name}"] = arr
    np.savez(Path(path), **payload)


def load_checkpoint(path: str | Path) -> tuple[SCPCModel, dict[str, np.ndarray], dict | None]:
    """Read a checkpoint; returns (model, extra arrays, train config echo)."""
    path = Path(path)
    with np.load(path, allow_pickle=False) as data:
        if "format_version" not in data or int(data["format_version"]) != CHECKPOINT_VERSION:
            found = int(data["format_version"]) if "format_version" in data else None
            raise ValueError(f"{path}: checkpoint format version mismatch (found {found}, expected {CHECKPOINT_VERSION})")
        config_raw = json.loads(str(data["config_json"]))
        config = ModelConfig(**config_raw["model"])
        params = {k[len("param/") :]: data[k] for k in data.files if k.startswith("param/")}
        extras = {k[len("extra/") :]: data[k] for k in data.files if k.startswith("extra/")}
    expected = set(SCPCModel.init(config, seed=0).params)
    if set(params) != expected:
        raise ValueError(f"{path}: checkpoint parameter set does not match this model (missing {sorted(expected - set(params))})")
    return SCPCModel(config, params), extras, config_raw.get("train")
