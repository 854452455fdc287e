"""Tests for the contrastive objectives.

Hand-built latent geometries pin exact loss values (uniform similarities
give log(K+1); two-candidate setups give log(1 + e^margin)).  Distractor
sampling is checked for exclusion, determinism, and rough uniformity, and
composite finite-difference checks cover the full loss graphs.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from helpers import numeric_grad, rel_err

from scpc import audio
from scpc import diffcore as dc
from scpc import model
from scpc import objective as obj


def f64(tape, arr):
    return tape.tensor(np.asarray(arr, dtype=np.float64), requires_grad=True)


# ---------------------------------------------------------------- sampling

def test_spec_defaults_and_validation():
    spec = obj.ContrastiveBatchSpec()
    assert spec.k_frame == 10 and spec.k_seg == 5
    with pytest.raises(ValueError):
        obj.ContrastiveBatchSpec(k_frame=0)
    with pytest.raises(ValueError):
        obj.ContrastiveBatchSpec(k_seg=-1)


def test_sample_distractors_exact_complement():
    # k = n - 2 forces every row to be exactly the complement of {anchor, positive}.
    rng = np.random.default_rng(0)
    anchors = np.arange(11)
    positives = anchors + 1
    out = obj.sample_distractors(rng, 12, anchors, positives, 10)
    assert out.shape == (11, 10)
    for i in range(11):
        assert set(out[i]) == set(range(12)) - {anchors[i], positives[i]}


def test_sample_distractors_excludes_and_dedups():
    rng = np.random.default_rng(1)
    anchors = np.arange(30)
    positives = anchors + 1
    out = obj.sample_distractors(rng, 31, anchors, positives, 7)
    for i in range(30):
        row = out[i]
        assert len(set(row.tolist())) == 7
        assert anchors[i] not in row and positives[i] not in row
        assert row.min() >= 0 and row.max() < 31


def test_sample_distractors_deterministic():
    anchors = np.arange(9)
    positives = anchors + 1
    a = obj.sample_distractors(np.random.default_rng(42), 10, anchors, positives, 4)
    b = obj.sample_distractors(np.random.default_rng(42), 10, anchors, positives, 4)
    c = obj.sample_distractors(np.random.default_rng(43), 10, anchors, positives, 4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_sample_distractors_roughly_uniform():
    rng = np.random.default_rng(7)
    counts = np.zeros(8, dtype=int)
    n_draws = 6000
    for _ in range(n_draws):
        idx = obj.sample_distractors(rng, 8, np.array([2]), np.array([3]), 1)
        counts[idx[0, 0]] += 1
    assert counts[2] == 0 and counts[3] == 0
    valid = counts[[0, 1, 4, 5, 6, 7]]
    # expected 1000 per index; +-200 is over 6 sigma
    assert valid.min() > 800 and valid.max() < 1200


def test_sample_distractors_k_too_large():
    with pytest.raises(ValueError, match="distractors"):
        obj.sample_distractors(np.random.default_rng(0), 5, np.array([0]), np.array([1]), 4)


def test_sample_distractors_k_zero_consumes_rng_identically():
    anchors, positives = np.array([0, 1]), np.array([1, 2])
    r0 = np.random.default_rng(5)
    out = obj.sample_distractors(r0, 6, anchors, positives, 0)
    assert out.shape == (2, 0) and out.dtype == np.int64
    r1 = np.random.default_rng(5)
    obj.sample_distractors(r1, 6, anchors, positives, 3)
    # generator state depends only on the key-matrix shape, not on k
    assert r0.random() == r1.random()


# -------------------------------------------------------------- frame loss

def test_nfc_uniform_similarities_gives_log_k_plus_1():
    tape = dc.Tape()
    frames = f64(tape, np.tile([0.3, -0.7, 0.2], (12, 1)))
    loss, n_anchors = obj.nfc_loss(tape, frames, 10, np.random.default_rng(0))
    assert n_anchors == 11
    assert abs(float(loss.data) - np.log(11.0)) <= 1e-6


def test_nfc_hand_value():
    # Three frames on a line: cos(f0,f1)=1, cos(f0,f2)=cos(f1,f2)=-1.
    # Anchor 0: logits (1, -1) -> log(1 + e^-2); anchor 1: logits (-1, 1) flipped
    # to positive-first (-1 vs distractor 1) -> log(1 + e^2).
    tape = dc.Tape()
    frames = f64(tape, [[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    loss, n_anchors = obj.nfc_loss(tape, frames, 1, np.random.default_rng(0))
    expected = (np.log1p(np.exp(-2.0)) + np.log1p(np.exp(2.0))) / 2
    assert n_anchors == 2
    assert abs(float(loss.data) - expected) <= 1e-6


def test_nfc_short_utterance_raises():
    tape = dc.Tape()
    frames = f64(tape, np.ones((4, 2)))
    with pytest.raises(ValueError, match="at least"):
        obj.nfc_loss(tape, frames, 3, np.random.default_rng(0))


def test_nfc_gradient_matches_fd():
    base = np.random.default_rng(3).normal(size=(6, 3)).astype(np.float64)

    def f(arrays):
        tape = dc.Tape()
        x = tape.tensor(arrays[0], requires_grad=True)
        loss, _ = obj.nfc_loss(tape, x, 2, np.random.default_rng(7))
        return float(loss.data)

    tape = dc.Tape()
    x = tape.tensor(base, requires_grad=True)
    loss, _ = obj.nfc_loss(tape, x, 2, np.random.default_rng(7))
    tape.backward(loss)
    num = numeric_grad(f, [base])[0]
    assert rel_err(x.grad, num) <= 1e-4


# ------------------------------------------------------------ segment loss

def test_nsc_hand_value():
    # Anchor c0 = [1,0]: positive s1 cos 1, distractor s2 cos 0 -> log(1 + e^-1).
    # Anchor c1 = [1,0]: positive s2 cos 0, distractor s0 cos 1 -> log(1 + e^1).
    tape = dc.Tape()
    segments = f64(tape, [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    contexts = f64(tape, [[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    loss, n_anchors = obj.nsc_loss(tape, segments, contexts, 5, np.random.default_rng(0))
    expected = (np.log1p(np.exp(-1.0)) + np.log1p(np.exp(1.0))) / 2
    assert n_anchors == 2
    assert abs(float(loss.data) - expected) <= 1e-6


def test_nsc_uniform_similarities_gives_log_k_plus_1():
    tape = dc.Tape()
    same = np.tile([0.5, 0.5], (9, 1))
    loss, n_anchors = obj.nsc_loss(tape, f64(tape, same), f64(tape, same), 5, np.random.default_rng(0))
    assert n_anchors == 8
    assert abs(float(loss.data) - np.log(6.0)) <= 1e-6


def test_nsc_single_segment_gives_none():
    tape = dc.Tape()
    one = f64(tape, [[1.0, 0.0]])
    loss, n_anchors = obj.nsc_loss(tape, one, one, 5, np.random.default_rng(0))
    assert loss is None and n_anchors == 0


def test_nsc_two_segments_zero_loss():
    # Only one candidate (the positive): cross-entropy over a single logit is 0.
    tape = dc.Tape()
    segments = f64(tape, [[1.0, 0.0], [0.0, 1.0]])
    contexts = f64(tape, [[0.5, 0.5], [0.5, 0.5]])
    loss, n_anchors = obj.nsc_loss(tape, segments, contexts, 5, np.random.default_rng(0))
    assert n_anchors == 1
    assert float(loss.data) == 0.0


def test_nsc_shape_mismatch_raises():
    tape = dc.Tape()
    with pytest.raises(ValueError, match="match"):
        obj.nsc_loss(tape, f64(tape, np.ones((3, 2))), f64(tape, np.ones((2, 2))), 5, np.random.default_rng(0))


def test_nsc_gradient_matches_fd():
    rng = np.random.default_rng(11)
    seg0 = rng.normal(size=(5, 3)).astype(np.float64)
    ctx0 = rng.normal(size=(5, 3)).astype(np.float64)

    def f(arrays):
        tape = dc.Tape()
        s = tape.tensor(arrays[0], requires_grad=True)
        c = tape.tensor(arrays[1], requires_grad=True)
        loss, _ = obj.nsc_loss(tape, s, c, 2, np.random.default_rng(13))
        return float(loss.data)

    tape = dc.Tape()
    s = tape.tensor(seg0, requires_grad=True)
    c = tape.tensor(ctx0, requires_grad=True)
    loss, _ = obj.nsc_loss(tape, s, c, 2, np.random.default_rng(13))
    tape.backward(loss)
    nums = numeric_grad(f, [seg0, ctx0])
    assert rel_err(s.grad, nums[0]) <= 1e-4
    assert rel_err(c.grad, nums[1]) <= 1e-4


# ------------------------------------------------------------- total loss

def _tiny_graph(tape):
    frames = f64(tape, [[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    segments = f64(tape, [[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    contexts = f64(tape, [[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])
    return frames, segments, contexts


def test_utterance_loss_inactive_skips_segment_branch():
    tape = dc.Tape()
    frames, segments, contexts = _tiny_graph(tape)
    spec = obj.ContrastiveBatchSpec(k_frame=1, k_seg=1)
    total, report = obj.utterance_loss(tape, frames, segments, contexts, spec, False, np.random.default_rng(0))
    assert report.nsc is None
    assert report.total == report.nfc == float(total.data)
    assert report.n_frame_anchors == 2 and report.n_segment_anchors == 0


def test_utterance_loss_active_adds_both():
    tape = dc.Tape()
    frames, segments, contexts = _tiny_graph(tape)
    spec = obj.ContrastiveBatchSpec(k_frame=1, k_seg=1)
    total, report = obj.utterance_loss(tape, frames, segments, contexts, spec, True, np.random.default_rng(0))
    nfc_expected = (np.log1p(np.exp(-2.0)) + np.log1p(np.exp(2.0))) / 2
    nsc_expected = (np.log1p(np.exp(-1.0)) + np.log1p(np.exp(1.0))) / 2
    assert abs(report.nfc - nfc_expected) <= 1e-6
    assert abs(report.nsc - nsc_expected) <= 1e-6
    assert abs(float(total.data) - (nfc_expected + nsc_expected)) <= 1e-6
    assert report.n_segment_anchors == 2


def test_full_model_all_parameters_receive_gradient():
    """End-to-end: waveform -> frames -> segments -> contexts -> both losses.

    A zero threshold keeps every local dissimilarity peak, so a two-word
    utterance yields enough segments for the recurrent weights to matter.
    """
    spec = dataclasses.replace(audio.default_spec(seed=0), words_per_utterance=(2, 2))
    utt = audio.generate_utterance(spec, 0)
    net = model.SCPCModel.init(model.ModelConfig(frame_dim=16, segment_dim=16), seed=1)

    tape = dc.Tape()
    leaves = net.leaf_tensors(tape)
    graph = model.analyze_utterance(tape, leaves, utt.waveform.samples, thres=0.0)
    m = graph.segments.shape[0]
    assert m >= 3, f"expected several segments at thres 0, got {m}"
    total, report = obj.utterance_loss(
        tape, graph.frames, graph.segments, graph.contexts,
        obj.ContrastiveBatchSpec(), True, np.random.default_rng(0))
    assert np.isfinite(report.total)
    assert report.nsc is not None
    tape.backward(total)
    for name, leaf in leaves.items():
        assert leaf.grad is not None and np.any(leaf.grad != 0), f"no gradient reached {name}"
