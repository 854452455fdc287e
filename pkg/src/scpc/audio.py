"""Waveform I/O, boundary annotations, and the synthetic evaluation corpus.

Real corpora are ingested from mono RIFF/WAVE files (16-bit PCM or float32)
plus TIMIT-style alignment files.  The synthetic corpus renders each phone as
a stationary mix of sine partials over a noise floor, concatenates phones
with short cross-fades, and emits exact sample-accurate boundary annotations,
which makes segmentation quality measurable without any external data.

Boundary time convention: an annotation stores segment *end* times in
seconds, so the final entry coincides with the utterance end (scoring strips
it along with time zero).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.io import wavfile

__all__ = [
    "Waveform",
    "BoundaryAnnotation",
    "PhoneTemplate",
    "SynthSpec",
    "SynthUtterance",
    "load_wav",
    "write_wav",
    "resample_linear",
    "split_long_waveform",
    "parse_alignment_file",
    "load_annotation",
    "default_spec",
    "spec_from_json",
    "spec_to_json",
    "generate_utterance",
    "generate_corpus",
    "save_corpus",
    "read_manifest",
    "write_manifest",
]

LEVELS = ("phoneme", "word")


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float32 samples in [-1, 1] and their sample rate."""

    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self):
        if self.samples.ndim != 1:
            raise ValueError(f"waveform must be mono 1-D, got shape {self.samples.shape}")
        if self.samples.dtype != np.float32:
            raise ValueError(f"waveform samples must be float32, got {self.samples.dtype}")
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class BoundaryAnnotation:
    """Sorted segment end times (seconds) for one utterance at one level."""

    id: str
    level: str
    times: np.ndarray

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}, got {self.level!r}")
        t = np.asarray(self.times, dtype=np.float64)
        if t.ndim != 1:
            raise ValueError(f"times must be 1-D, got shape {t.shape}")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] < 0):
            raise ValueError(f"times must be strictly increasing and nonnegative ({self.id})")
        object.__setattr__(self, "times", t)


def load_wav(path: str | Path) -> Waveform:
    """Read a mono RIFF/WAVE file (16-bit PCM or float32) as float32 in [-1, 1].

    Truncated files are an error, not a warning: silently shortened audio
    would skew boundary scoring.
    """
    path = Path(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except (ValueError, wavfile.WavFileWarning) as exc:
        raise ValueError(f"{path}: unreadable or unsupported wav file ({exc})") from exc
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = (data / 32768.0).astype(np.float32)
    elif data.dtype == np.float32:
        samples = data
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}; use 16-bit PCM or float32")
    return Waveform(samples, int(rate), id=path.stem)


def write_wav(path: str | Path, waveform: Waveform, encoding: str = "pcm16") -> None:
    """Write a waveform as 16-bit PCM (default) or float32 RIFF/WAVE."""
    path = Path(path)
    if encoding == "pcm16":
        ints = np.clip(np.round(waveform.samples.astype(np.float64) * 32768.0), -32768, 32767)
        wavfile.write(path, waveform.sample_rate, ints.astype(np.int16))
    elif encoding == "float32":
        wavfile.write(path, waveform.sample_rate, waveform.samples)
    else:
        raise ValueError(f"unknown wav encoding {encoding!r}; use 'pcm16' or 'float32'")


def resample_linear(waveform: Waveform, target_rate: int) -> Waveform:
    """Linear-interpolation resampling: a crude fallback, not a proper filter."""
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    if target_rate == waveform.sample_rate:
        return waveform
    n_out = int(round(waveform.samples.size * target_rate / waveform.sample_rate))
    src_t = np.arange(waveform.samples.size) / waveform.sample_rate
    dst_t = np.arange(n_out) / target_rate
    out = np.interp(dst_t, src_t, waveform.samples.astype(np.float64)).astype(np.float32)
    return Waveform(out, target_rate, id=waveform.id)


def split_long_waveform(waveform: Waveform, max_seconds: float, silence_threshold: float = 0.01) -> list[Waveform]:
    """Split at quiet points so no piece exceeds ``max_seconds``.

    Intended for corpora distributed as long recordings.  Frame RMS is scanned
    at a 10 ms hop; each cut lands on the quietest frame in the tail of the
    allowed window, falling back to a hard cut when nothing drops below
    ``silence_threshold``.
    """
    if max_seconds <= 0:
        raise ValueError(f"max_seconds must be positive, got {max_seconds}")
    max_len = int(max_seconds * waveform.sample_rate)
    if waveform.samples.size <= max_len:
        return [waveform]

    hop = max(1, waveform.sample_rate // 100)
    pieces = []
    start = 0
    part = 0
    x = waveform.samples
    while x.size - start > max_len:
        lo, hi = start + max_len // 2, start + max_len
        frames = np.arange(lo, hi - hop, hop)
        rms = np.sqrt([(x[f : f + hop].astype(np.float64) ** 2).mean() for f in frames])
        quiet = frames[rms < silence_threshold]
        cut = int(quiet[-1]) if quiet.size else hi
        pieces.append(Waveform(x[start:cut].copy(), waveform.sample_rate, id=f"{waveform.id}_part{part}"))
        start, part = cut, part + 1
    pieces.append(Waveform(x[start:].copy(), waveform.sample_rate, id=f"{waveform.id}_part{part}"))
    return pieces


def parse_alignment_file(path: str | Path, fmt: str = "timit", sample_rate: int = 16000) -> np.ndarray:
    """Extract boundary times (seconds) from an alignment file.

    ``timit``: lines of ``<start_sample> <end_sample> <label>``; boundary
    times are the segment end samples divided by ``sample_rate``, with
    duplicate consecutive ends collapsed.  ``simple_times``: one boundary
    time in seconds per line.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    times: list[float] = []
    if fmt == "timit":
        prev_end = None
        for n, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{n}: expected '<start> <end> <label>', got {line!r}")
            try:
                start, end = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{n}: non-integer sample index in {line!r}") from exc
            if end <= start:
                raise ValueError(f"{path}:{n}: empty or negative span [{start}, {end})")
            if prev_end is not None and start < prev_end:
                raise ValueError(f"{path}:{n}: span starts at {start}, before previous end {prev_end}")
            prev_end = end
            t = end / sample_rate
            if not times or t > times[-1]:
                times.append(t)
    elif fmt == "simple_times":
        for n, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                t = float(line)
            except ValueError as exc:
                raise ValueError(f"{path}:{n}: expected one boundary time per line, got {line!r}") from exc
            if times and t <= times[-1]:
                raise ValueError(f"{path}:{n}: times must be strictly increasing")
            times.append(t)
    else:
        raise ValueError(f"unknown alignment format {fmt!r}; use 'timit' or 'simple_times'")
    return np.asarray(times, dtype=np.float64)


def load_annotation(path: str | Path, level: str, fmt: str = "timit", sample_rate: int = 16000) -> BoundaryAnnotation:
    return BoundaryAnnotation(Path(path).stem, level, parse_alignment_file(path, fmt, sample_rate))


# --- synthetic corpus ---------------------------------------------------

@dataclass(frozen=True)
class PhoneTemplate:
    """Stationary spectral recipe: sine partial frequencies plus a noise floor."""

    frequencies: tuple[float, ...]
    noise_level: float = 0.02


@dataclass(frozen=True)
class SynthSpec:
    """Everything that determines a synthetic corpus, down to the seed.

    Utterance ``i`` depends only on ``(seed, i)``, so corpora are reproducible
    and splits taken by index range never overlap in content.
    """

    phones: tuple[PhoneTemplate, ...]
    lexicon: tuple[tuple[int, ...], ...]
    duration_ms: tuple[float, float] = (60.0, 120.0)
    words_per_utterance: tuple[int, int] = (3, 5)
    silence_prob: float = 0.0
    sample_rate: int = 16000
    seed: int = 0
    amplitude: float = 0.3
    crossfade_ms: float = 16.0

    def __post_init__(self):
        if not self.phones:
            raise ValueError("spec needs at least one phone template")
        nyquist = self.sample_rate / 2
        for i, ph in enumerate(self.phones):
            if any(f <= 0 or f >= nyquist for f in ph.frequencies):
                raise ValueError(f"phone {i}: partial frequencies must lie in (0, {nyquist})")
        if not self.lexicon:
            raise ValueError("lexicon must not be empty")
        for w, word in enumerate(self.lexicon):
            if not 2 <= len(word) <= 4:
                raise ValueError(f"word {w}: length must be 2-4 phones, got {len(word)}")
            if any(p < 0 or p >= len(self.phones) for p in word):
                raise ValueError(f"word {w}: phone index out of range")
        if len(set(self.lexicon)) != len(self.lexicon):
            raise ValueError("lexicon contains duplicate words")
        lo, hi = self.duration_ms
        if lo < 60.0 or hi < lo:
            raise ValueError(f"phone durations must satisfy 60 <= lo <= hi, got {self.duration_ms}")
        lo_w, hi_w = self.words_per_utterance
        if lo_w < 1 or hi_w < lo_w:
            raise ValueError(f"words_per_utterance must satisfy 1 <= lo <= hi, got {self.words_per_utterance}")
        if not 0.0 <= self.silence_prob <= 1.0:
            raise ValueError(f"silence_prob must be in [0, 1], got {self.silence_prob}")
        if self.crossfade_ms <= 0.0:
            raise ValueError(f"crossfade_ms must be positive, got {self.crossfade_ms}")


@dataclass(frozen=True)
class SynthUtterance:
    waveform: Waveform
    phoneme: BoundaryAnnotation
    word: BoundaryAnnotation
    phone_labels: tuple[str, ...]      # one per segment, silences included
    phone_spans: tuple[tuple[int, int], ...]  # sample spans per segment
    word_labels: tuple[str, ...]
    word_spans: tuple[tuple[int, int], ...]


def default_spec(seed: int = 0) -> SynthSpec:
    """Five well-separated phones and an eight-word lexicon.

    Words follow three skeletons, (0, f, 1, f'), (1, f, 2, f'), and
    (2, 0, f), with f, f' standing for either of {3, 4}.  Treating 3 and 4 as
    one interchangeable class, every within-word transition is fully
    determined by one or two phones of history, while the word after a join
    is a fresh uniform draw: all of the prediction surprise sits at word
    joins, which is the contrast the segment-level objective turns into word
    boundaries.  Phones 3 and 4 never carry information a later transition
    depends on, so a model is free to treat them alike; each word-initial
    phone {0, 1, 2} is also a determined mid-word target somewhere, which
    keeps the join candidates mutually discriminable.  Word-initial and
    word-final phone classes are disjoint, so every join is a real spectral
    change.
    """
    phones = (
        PhoneTemplate((250.0, 2100.0)),
        PhoneTemplate((420.0, 1150.0, 2600.0)),
        PhoneTemplate((640.0, 1750.0)),
        PhoneTemplate((880.0, 1350.0, 3000.0)),
        PhoneTemplate((330.0, 3400.0)),
    )
    lexicon = (
        (0, 3, 1, 3),
        (0, 3, 1, 4),
        (0, 4, 1, 3),
        (0, 4, 1, 4),
        (1, 3, 2, 4),
        (1, 4, 2, 3),
        (2, 0, 3),
        (2, 0, 4),
    )
    return SynthSpec(phones=phones, lexicon=lexicon, seed=seed)


def spec_to_json(spec: SynthSpec) -> str:
    payload = {
        "phones": [{"frequencies": list(p.frequencies), "noise_level": p.noise_level} for p in spec.phones],
        "lexicon": [list(w) for w in spec.lexicon],
        "duration_ms": list(spec.duration_ms),
        "words_per_utterance": list(spec.words_per_utterance),
        "silence_prob": spec.silence_prob,
        "sample_rate": spec.sample_rate,
        "seed": spec.seed,
        "amplitude": spec.amplitude,
        "crossfade_ms": spec.crossfade_ms,
    }
    return json.dumps(payload, indent=2)


def spec_from_json(text: str) -> SynthSpec:
    raw = json.loads(text)
    base = default_spec()
    kwargs = {}
    if "phones" in raw:
        kwargs["phones"] = tuple(PhoneTemplate(tuple(p["frequencies"]), p.get("noise_level", 0.02)) for p in raw["phones"])
    if "lexicon" in raw:
        kwargs["lexicon"] = tuple(tuple(w) for w in raw["lexicon"])
    for key in ("duration_ms", "words_per_utterance"):
        if key in raw:
            kwargs[key] = tuple(raw[key])
    for key in ("silence_prob", "sample_rate", "seed", "amplitude", "crossfade_ms"):
        if key in raw:
            kwargs[key] = raw[key]
    unknown = set(raw) - {"phones", "lexicon", "duration_ms", "words_per_utterance", "silence_prob", "sample_rate", "seed", "amplitude", "crossfade_ms"}
    if unknown:
        raise ValueError(f"unknown synth spec keys: {sorted(unknown)}")
    return replace(base, **kwargs)


_SILENCE_NOISE = 0.0015


def _render_segment(spec: SynthSpec, template: PhoneTemplate | None, n: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n, dtype=np.float64) / spec.sample_rate
    if template is None:  # silence: noise floor only, kept nonzero on purpose
        return (_SILENCE_NOISE * rng.standard_normal(n)).astype(np.float64)
    x = np.zeros(n, dtype=np.float64)
    for f in template.frequencies:
        phase = rng.uniform(0.0, 2.0 * np.pi)
        x += np.sin(2.0 * np.pi * f * t + phase)
    x *= spec.amplitude / max(len(template.frequencies), 1)
    x += template.noise_level * rng.standard_normal(n)
    return x


def generate_utterance(spec: SynthSpec, index: int) -> SynthUtterance:
    """Render utterance ``index``: random words, stationary phones, cross-faded joins.

    Annotated boundary times mark fade onset, the last sample at which a
    segment is still the sole signal; the acoustic transition then plays out
    over the fade.  The final boundary (utterance end) has no fade and is
    exact.
    """
    rng = np.random.default_rng([spec.seed, index])
    n_words = int(rng.integers(spec.words_per_utterance[0], spec.words_per_utterance[1] + 1))
    word_ids = [int(rng.integers(0, len(spec.lexicon))) for _ in range(n_words)]

    # Segment plan: (label, template index or None) in utterance order.
    segments: list[tuple[str, int | None]] = []
    word_of_segment: list[int | None] = []
    for w_pos, w in enumerate(word_ids):
        for p in spec.lexicon[w]:
            segments.append((f"p{p}", p))
            word_of_segment.append(w_pos)
        if w_pos < n_words - 1 and rng.random() < spec.silence_prob:
            segments.append(("sil", None))
            word_of_segment.append(None)

    lo, hi = spec.duration_ms
    lengths = [int(round(rng.uniform(lo, hi) * spec.sample_rate / 1000.0)) for _ in segments]
    rendered = [_render_segment(spec, spec.phones[tpl] if tpl is not None else None, n, rng) for (_, tpl), n in zip(segments, lengths)]

    # In-place linear fades across each interior join; segment lengths never
    # change, so sample bookkeeping below stays exact.
    half = max(1, int(round(spec.crossfade_ms * spec.sample_rate / 2000.0)))
    fades = [min(half, a.size, b.size) for a, b in zip(rendered[:-1], rendered[1:])]
    for (a, b), k in zip(zip(rendered[:-1], rendered[1:]), fades):
        a[-k:] *= np.linspace(1.0, 0.0, k + 1)[1:]
        b[:k] *= np.linspace(0.0, 1.0, k + 1)[1:]

    samples = np.concatenate(rendered)
    np.clip(samples, -1.0, 1.0, out=samples)
    wav = Waveform(samples.astype(np.float32), spec.sample_rate, id=f"u{index:05d}")

    # Interior boundaries land at fade onset (cumulative length minus the fade
    # half-width actually applied); the utterance end has no fade.
    ends = np.cumsum(lengths)
    ends[:-1] -= np.asarray(fades, dtype=ends.dtype)
    starts = np.concatenate([[0], ends[:-1]])
    phone_spans = tuple((int(s), int(e)) for s, e in zip(starts, ends))
    phn = BoundaryAnnotation(wav.id, "phoneme", ends / spec.sample_rate)

    word_spans = []
    word_labels = []
    for w_pos, w in enumerate(word_ids):
        seg_idx = [i for i, owner in enumerate(word_of_segment) if owner == w_pos]
        word_spans.append((int(starts[seg_idx[0]]), int(ends[seg_idx[-1]])))
        word_labels.append(f"w{w}")
    wrd = BoundaryAnnotation(wav.id, "word", np.asarray([e for _, e in word_spans]) / spec.sample_rate)

    return SynthUtterance(
        waveform=wav,
        phoneme=phn,
        word=wrd,
        phone_labels=tuple(lbl for lbl, _ in segments),
        phone_spans=phone_spans,
        word_labels=tuple(word_labels),
        word_spans=tuple(word_spans),
    )


def generate_corpus(spec: SynthSpec, n: int, start_index: int = 0) -> list[SynthUtterance]:
    return [generate_utterance(spec, i) for i in range(start_index, start_index + n)]


def _write_spans(path: Path, spans, labels) -> None:
    lines = [f"{s} {e} {lbl}" for (s, e), lbl in zip(spans, labels)]
    path.write_text("\n".join(lines) + "\n")


def save_corpus(utterances: list[SynthUtterance], out_dir: str | Path, manifest_name: str = "manifest.tsv") -> Path:
    """Write wav + TIMIT-style .phn/.wrd files and a manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for utt in utterances:
        wav_path = out / f"{utt.waveform.id}.wav"
        phn_path = out / f"{utt.waveform.id}.phn"
        wrd_path = out / f"{utt.waveform.id}.wrd"
        write_wav(wav_path, utt.waveform)
        _write_spans(phn_path, utt.phone_spans, utt.phone_labels)
        _write_spans(wrd_path, utt.word_spans, utt.word_labels)
        records.append((wav_path.name, phn_path.name, wrd_path.name))
    manifest = out / manifest_name
    write_manifest(records, manifest)
    return manifest


def write_manifest(records, path: str | Path) -> None:
    """One utterance per line: wav, phoneme alignment, word alignment (tab-separated)."""
    lines = ["\t".join(str(f) for f in rec) for rec in records]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_manifest(path: str | Path) -> list[tuple[Path, Path, Path]]:
    """Resolve a ``wav<TAB>phn<TAB>wrd`` manifest; every referenced file must exist."""
    path = Path(path)
    if path.is_dir():
        raise ValueError(f"{path} is a directory; pass the manifest file inside it (e.g. {path / 'manifest.tsv'})")
    base = path.parent
    records = []
    for n, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\n").split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{n}: expected 3 tab-separated paths, got {len(parts)}")
        resolved = tuple((base / p).resolve() for p in parts)
        for p in resolved:
            if not p.exists():
                raise FileNotFoundError(f"{path}:{n}: manifest references missing file {p}")
        records.append(resolved)
    if not records:
        raise ValueError(f"{path}: manifest is empty")
    return records
