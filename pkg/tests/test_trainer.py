"""Tests for configuration handling and the training loop.

Training runs here use a deliberately tiny corpus and model so the whole
file stays fast; the desk-scale quality gates live in the acceptance tests.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np
import pytest

from scpc import audio
from scpc import infer
from scpc import model
from scpc import trainer

TINY = trainer.TrainConfig(
    batch_size=5, epochs=3, add_nsc_epoch=1, k_frame=4, k_seg=2,
    frame_dim=8, segment_dim=8, thres=0.02, seed=0,
)


# ------------------------------------------------------------ configuration

def test_parse_config_text_basics():
    text = "# comment\nlr = 0.01\n\nepochs = 4   # trailing comment\n"
    assert trainer.parse_config_text(text) == {"lr": "0.01", "epochs": "4"}


def test_parse_config_text_rejects_malformed():
    with pytest.raises(ValueError, match="line 1"):
        trainer.parse_config_text("just words\n")
    with pytest.raises(ValueError, match="duplicate"):
        trainer.parse_config_text("lr = 1\nlr = 2\n")
    with pytest.raises(ValueError, match="empty"):
        trainer.parse_config_text("lr =\n")


def test_resolve_config_defaults():
    assert trainer.resolve_config(env={}) == trainer.TrainConfig()


def test_resolve_config_precedence(tmp_path):
    cfg_file = tmp_path / "train.cfg"
    cfg_file.write_text("lr = 0.01\nepochs = 4\nbatch_size = 2\n")
    # file alone
    cfg = trainer.resolve_config(cfg_file, env={})
    assert (cfg.lr, cfg.epochs, cfg.batch_size) == (0.01, 4, 2)
    # environment beats file
    cfg = trainer.resolve_config(cfg_file, env={"SCPC_LR": "0.5"})
    assert cfg.lr == 0.5
    # explicit override beats environment; None overrides are ignored
    cfg = trainer.resolve_config(cfg_file, env={"SCPC_LR": "0.5"}, overrides={"lr": 0.25, "seed": None})
    assert cfg.lr == 0.25 and cfg.seed == 0


def test_resolve_config_lists_unknown_keys(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("foo = 1\nlr = 0.1\nbar = 2\n")
    with pytest.raises(ValueError, match="bar, foo"):
        trainer.resolve_config(cfg_file, env={})


def test_resolve_config_bad_value_names_key(tmp_path):
    cfg_file = tmp_path / "bad.cfg"
    cfg_file.write_text("epochs = soon\n")
    with pytest.raises(ValueError, match="epochs"):
        trainer.resolve_config(cfg_file, env={})


def test_config_text_roundtrip(tmp_path):
    cfg = dataclasses.replace(trainer.TrainConfig(), lr=0.003, optimizer="sgd", epochs=7)
    path = tmp_path / "echo.cfg"
    path.write_text(trainer.config_to_text(cfg))
    assert trainer.resolve_config(path, env={}) == cfg


def test_train_config_validation():
    with pytest.raises(ValueError, match="optimizer"):
        trainer.TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError, match="thres"):
        trainer.TrainConfig(thres=1.5)
    with pytest.raises(ValueError, match="add_nsc_epoch"):
        trainer.TrainConfig(add_nsc_epoch=-1)


# -------------------------------------------------------------------- data

@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    spec = dataclasses.replace(audio.default_spec(seed=21), words_per_utterance=(2, 3))
    train_manifest = audio.save_corpus(audio.generate_corpus(spec, 10), root / "train")
    val_manifest = audio.save_corpus(audio.generate_corpus(spec, 3, start_index=1000), root / "val")
    return train_manifest, val_manifest


def test_load_dataset(corpus):
    items = trainer.load_dataset(corpus[0])
    assert len(items) == 10
    for it in items:
        assert it.samples.dtype == np.float32
        assert it.duration_s == it.samples.size / 16000
        assert it.phoneme_times[-1] == pytest.approx(it.duration_s)
        assert it.word_times.size <= it.phoneme_times.size


# ---------------------------------------------------------------- training

@pytest.fixture(scope="module")
def run(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    return trainer.train(corpus[0], TINY, out, corpus[1])


def test_train_smoke(run):
    assert run.checkpoint.is_file()
    lines = run.metrics_log.read_text().splitlines()
    assert len(lines) == 3
    records = [json.loads(line) for line in lines]
    assert records == run.history
    assert records[0]["l_nsc"] is None          # segment loss inactive in epoch 0
    assert records[1]["l_nsc"] is not None      # active from add_nsc_epoch on
    for rec in records:
        assert rec["l_nfc"] > 0
        assert rec["mean_segments"] >= 1
        assert "val_r_phoneme" in rec and "val_r_word" in rec


def test_checkpoint_carries_training_state(run):
    net, extras, echoed = model.load_checkpoint(run.checkpoint)
    assert int(extras["epoch"]) == 3
    assert trainer.TrainConfig(**echoed) == TINY
    init = model.SCPCModel.init(net.config, seed=TINY.seed)
    changed = any(not np.array_equal(net.params[k], init.params[k]) for k in net.params)
    assert changed, "training left every parameter at its initial value"


def test_checkpoint_roundtrip_identical_forward(run, corpus):
    loaded, _, _ = model.load_checkpoint(run.checkpoint)
    item = trainer.load_dataset(corpus[1])[0]
    a = infer.profile_utterance(run.model, item.samples, item.id)
    b = infer.profile_utterance(loaded, item.samples, item.id)
    assert np.array_equal(a.dissimilarity, b.dissimilarity)
    assert np.array_equal(a.word_scores, b.word_scores)


def test_training_is_bitwise_deterministic(run, corpus, tmp_path):
    again = trainer.train(corpus[0], TINY, tmp_path / "again", corpus[1])
    for k in run.model.params:
        assert np.array_equal(run.model.params[k], again.model.params[k])
    assert run.history == again.history


def test_resume_matches_uninterrupted_run(corpus, tmp_path):
    full_cfg = dataclasses.replace(TINY, epochs=4)
    straight = trainer.train(corpus[0], full_cfg, tmp_path / "straight", corpus[1])
    part_cfg = dataclasses.replace(TINY, epochs=2)
    partial = trainer.train(corpus[0], part_cfg, tmp_path / "resumed", corpus[1])
    resumed = trainer.train(corpus[0], full_cfg, tmp_path / "resumed", corpus[1], resume_from=partial.checkpoint)
    for k in straight.model.params:
        assert np.array_equal(straight.model.params[k], resumed.model.params[k])
    assert straight.history[2:] == resumed.history
    assert straight.metrics_log.read_text() == resumed.metrics_log.read_text()


def test_resume_rejects_changed_math(corpus, tmp_path):
    partial = trainer.train(corpus[0], dataclasses.replace(TINY, epochs=1), tmp_path / "a")
    with pytest.raises(ValueError, match="lr"):
        trainer.train(corpus[0], dataclasses.replace(TINY, epochs=2, lr=0.5), tmp_path / "b", resume_from=partial.checkpoint)
    with pytest.raises(ValueError, match="nothing to resume"):
        trainer.train(corpus[0], dataclasses.replace(TINY, epochs=1), tmp_path / "c", resume_from=partial.checkpoint)


def test_divergence_names_utterance_and_keeps_checkpoint(corpus, tmp_path):
    out = tmp_path / "diverge"
    good = trainer.train(corpus[0], dataclasses.replace(TINY, epochs=1), out)

    bad_dir = tmp_path / "bad_data"
    spec = dataclasses.replace(audio.default_spec(seed=21), words_per_utterance=(2, 3))
    utts = audio.generate_corpus(spec, 5)
    manifest = audio.save_corpus(utts, bad_dir)
    victim = audio.read_manifest(manifest)[2][0]
    n = audio.load_wav(victim).samples.size
    audio.write_wav(victim, audio.Waveform(np.full(n, np.nan, dtype=np.float32), 16000), encoding="float32")

    with pytest.raises(trainer.DivergenceError, match=f"non-finite loss on utterance {victim.stem}"):
        trainer.train(manifest, dataclasses.replace(TINY, epochs=1), out)
    kept, _, _ = model.load_checkpoint(out / "checkpoint.npz")
    for k in kept.params:
        assert np.array_equal(kept.params[k], good.model.params[k])


def test_short_utterances_are_skipped_not_fatal(corpus, tmp_path):
    data = tmp_path / "with_tiny"
    spec = dataclasses.replace(audio.default_spec(seed=22), words_per_utterance=(2, 2))
    manifest = audio.save_corpus(audio.generate_corpus(spec, 5), data)
    audio.write_wav(data / "tiny.wav", audio.Waveform(np.zeros(700, dtype=np.float32), 16000))
    (data / "tiny.phn").write_text("0 700 p0\n")
    (data / "tiny.wrd").write_text("0 700 w0\n")
    with open(manifest, "a") as f:
        f.write("tiny.wav\ttiny.phn\ttiny.wrd\n")
    result = trainer.train(manifest, dataclasses.replace(TINY, epochs=1), tmp_path / "out")
    assert result.history[0]["n_skipped"] == 1


def test_loss_decreases_over_training(corpus, tmp_path):
    cfg = dataclasses.replace(TINY, add_nsc_epoch=0, epochs=4)
    result = trainer.train(corpus[0], cfg, tmp_path / "learn")
    first = result.history[0]["l_nfc"] + result.history[0]["l_nsc"]
    last = result.history[-1]["l_nfc"] + result.history[-1]["l_nsc"]
    assert last < first


def test_train_requires_enough_utterances(corpus, tmp_path):
    with pytest.raises(ValueError, match="batch_size"):
        trainer.train(corpus[1], TINY, tmp_path / "small")  # val split has 3 < batch 5


# ------------------------------------------------------------------ sweeps

def test_sweep_grids_match_reference():
    assert len(trainer.SWEEP_GRIDS["thres"]) == 11
    assert trainer.SWEEP_GRIDS["thres"][0] == 0.0
    assert trainer.SWEEP_GRIDS["thres"][-1] == pytest.approx(0.10)
    assert trainer.SWEEP_GRIDS["nsc_epoch"] == tuple(range(11))


def test_sweep_single_point_equals_plain_train(corpus, tmp_path):
    rows = trainer.sweep(corpus[0], corpus[1], TINY, "thres", tmp_path / "sweep", values=(TINY.thres,))
    assert len(rows) == 1
    plain = trainer.train(corpus[0], TINY, tmp_path / "plain", corpus[1])
    last = plain.history[-1]
    assert rows[0]["phoneme_r_value"] == last["val_r_phoneme"]
    assert rows[0]["word_r_value"] == last["val_r_word"]
    assert rows[0]["mean_segments"] == last["mean_segments"]
    table = json.loads((tmp_path / "sweep" / "sweep.json").read_text())
    assert table == rows


def test_sweep_rejects_unknown_grid(corpus, tmp_path):
    with pytest.raises(ValueError, match="grid"):
        trainer.sweep(corpus[0], corpus[1], TINY, "learning_rate", tmp_path / "x")
