"""Corpus, split, batching, and WAV round-trip tests."""

import numpy as np
import pytest

from advspeaker import data as dt
from advspeaker.frontend import FrontendConfig, FrontendOps, log_mel

SMALL_SYNTH = dt.SynthConfig(num_speakers=3, utterances_per_speaker=10,
                             duration_s=0.2, sample_rate=4000, seed=5)


def test_split_counts_rule():
    assert dt.split_counts(10) == (9, 1)
    assert dt.split_counts(2) == (1, 1)
    assert dt.split_counts(40) == (36, 4)
    with pytest.raises(dt.CorpusError):
        dt.split_counts(1)


def test_wav_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    samples = np.clip(rng.normal(size=1600) * 0.2, -1, 1)
    path = tmp_path / "a.wav"
    dt.write_wav(path, samples, 8000)
    loaded, rate = dt.read_wav(path)
    assert rate == 8000
    assert loaded.shape == samples.shape
    assert np.abs(loaded - samples).max() < 2.0 / 32768


def _make_tree(tmp_path, per_speaker):
    rng = np.random.default_rng(1)
    for spk, count in per_speaker.items():
        d = tmp_path / spk
        d.mkdir()
        for i in range(count):
            dt.write_wav(d / f"utt{i:02d}.wav", rng.normal(size=800) * 0.1, 8000)
    return tmp_path


def test_ingest_split_and_determinism(tmp_path):
    root = _make_tree(tmp_path, {"alice": 10, "bob": 2, "carol": 5})
    m1 = dt.ingest(root, split_seed=3)
    m2 = dt.ingest(root, split_seed=3)
    assert m1.fingerprint == m2.fingerprint
    assert m1.num_speakers == 3
    by_speaker = {}
    for e in m1.entries:
        by_speaker.setdefault(e.speaker_id, []).append(e.split)
    assert sorted(by_speaker["alice"]).count("test") == 1
    assert sorted(by_speaker["bob"]) == ["test", "train"]
    assert sorted(by_speaker["carol"]).count("test") == 1
    m3 = dt.ingest(root, split_seed=4)
    assert m3.fingerprint != m1.fingerprint


def test_ingest_rejects_corrupt_but_fails_on_tiny_speaker(tmp_path):
    root = _make_tree(tmp_path, {"alice": 3, "bob": 2})
    bad = root / "alice" / "broken.wav"
    bad.write_bytes(b"not a wav file")
    manifest = dt.ingest(root)
    assert any("broken.wav" in r for r in manifest.rejects)
    assert sum(e.speaker_id == "alice" for e in manifest.entries) == 3

    solo = tmp_path / "solo"
    solo.mkdir()
    d = solo / "dave"
    d.mkdir()
    dt.write_wav(d / "only.wav", np.zeros(100) + 0.1, 8000)
    with pytest.raises(dt.CorpusError):
        dt.ingest(solo)


def test_load_corpus_round_trip(tmp_path):
    root = _make_tree(tmp_path, {"alice": 4, "bob": 4})
    manifest = dt.ingest(root)
    corpus = dt.load_corpus(manifest)
    assert corpus.num_speakers == 2
    assert corpus.fingerprint == manifest.fingerprint
    assert len(corpus.items("train")) + len(corpus.items("test")) == 8


def test_manifest_dict_round_trip(tmp_path):
    root = _make_tree(tmp_path, {"alice": 4, "bob": 4})
    manifest = dt.ingest(root)
    clone = dt.CorpusManifest.from_dict(manifest.to_dict())
    assert clone.fingerprint == manifest.fingerprint
    assert [vars(e) for e in clone.entries] == [vars(e) for e in manifest.entries]


def test_manifest_file_round_trip(tmp_path):
    root = _make_tree(tmp_path, {"alice": 4, "bob": 4})
    manifest = dt.ingest(root)
    path = tmp_path / "manifest.json"
    dt.save_manifest(path, manifest)
    loaded = dt.load_manifest(path)
    assert loaded.fingerprint == manifest.fingerprint
    assert loaded.num_speakers == manifest.num_speakers
    assert [vars(e) for e in loaded.entries] == [vars(e) for e in manifest.entries]


def test_no_utterance_in_both_splits():
    corpus = dt.synth_corpus(SMALL_SYNTH)
    train_ids = {id(u) for u in corpus.utterances if u.split == "train"}
    test_ids = {id(u) for u in corpus.utterances if u.split == "test"}
    assert not train_ids & test_ids
    per_speaker = {}
    for u in corpus.utterances:
        per_speaker.setdefault(u.speaker_id, set()).add(u.split)
    assert all(splits == {"train", "test"} for splits in per_speaker.values())


def test_synth_corpus_deterministic():
    a = dt.synth_corpus(SMALL_SYNTH)
    b = dt.synth_corpus(SMALL_SYNTH)
    assert a.fingerprint == b.fingerprint
    for ua, ub in zip(a.utterances, b.utterances):
        assert np.array_equal(ua.samples, ub.samples)


def test_synth_speakers_have_distinct_spectral_envelopes():
    corpus = dt.synth_corpus(SMALL_SYNTH)
    fe = FrontendConfig(sample_rate=4000, window_length=128, hop_length=64,
                        fft_size=128, mel_bins=12)
    ops = FrontendOps(fe)
    means = {}
    for spk in corpus.speakers:
        waves = np.stack([u.samples for u in corpus.utterances if u.speaker_id == spk])
        feats = log_mel(waves, ops).data
        means[spk] = feats.mean(axis=(0, 2))
    speakers = corpus.speakers
    for i in range(len(speakers)):
        for j in range(i + 1, len(speakers)):
            assert np.linalg.norm(means[speakers[i]] - means[speakers[j]]) > 0.1


def test_synth_classes_linearly_separable_on_mean_logmel():
    corpus = dt.synth_corpus(dt.SynthConfig(num_speakers=5, utterances_per_speaker=12,
                                            duration_s=0.25, sample_rate=4000, seed=7))
    fe = FrontendConfig(sample_rate=4000, window_length=128, hop_length=64,
                        fft_size=128, mel_bins=12)
    ops = FrontendOps(fe)

    def features(split):
        xs, ys = [], []
        for samples, label in corpus.items(split):
            feats = log_mel(samples[None, :], ops).data[0].mean(axis=1)
            xs.append(feats)
            ys.append(label)
        return np.stack(xs), np.asarray(ys)

    xtr, ytr = features("train")
    xte, yte = features("test")
    # one-hot least-squares linear classifier as the sanity oracle
    a = np.hstack([xtr, np.ones((len(xtr), 1))])
    targets = np.eye(corpus.num_speakers)[ytr]
    w, *_ = np.linalg.lstsq(a, targets, rcond=None)
    pred = np.argmax(np.hstack([xte, np.ones((len(xte), 1))]) @ w, axis=1)
    assert (pred == yte).mean() > 0.8


def test_batch_iter_covers_each_utterance_once():
    corpus = dt.synth_corpus(SMALL_SYNTH)
    n_train = len(corpus.items("train"))
    seen = 0
    for waves, labels in dt.batch_iter(corpus, 8, 400, seed=1, epoch=0):
        seen += len(labels)
        assert waves.shape == (len(labels), 400)
        assert (labels < corpus.num_speakers).all() and (labels >= 0).all()
    assert seen == n_train


def test_batch_iter_eval_deterministic_and_train_shuffles_differ():
    corpus = dt.synth_corpus(SMALL_SYNTH)
    ev1 = list(dt.batch_iter(corpus, 4, 400, seed=1, epoch=0, split="test", train=False))
    ev2 = list(dt.batch_iter(corpus, 4, 400, seed=9, epoch=3, split="test", train=False))
    for (x1, y1), (x2, y2) in zip(ev1, ev2):
        assert np.array_equal(x1, x2) and np.array_equal(y1, y2)

    tr_e0 = np.concatenate([y for _, y in dt.batch_iter(corpus, 8, 400, seed=1, epoch=0)])
    tr_e1 = np.concatenate([y for _, y in dt.batch_iter(corpus, 8, 400, seed=1, epoch=1)])
    assert not np.array_equal(tr_e0, tr_e1)
    tr_e0_again = np.concatenate([y for _, y in dt.batch_iter(corpus, 8, 400, seed=1, epoch=0)])
    assert np.array_equal(tr_e0, tr_e0_again)


def test_short_utterances_zero_padded():
    utts = [dt.Utterance(np.full(50, 0.5), 8000, s, sp)
            for s in ("a", "b") for sp in ("train", "test")]
    corpus = dt.Corpus(utts, 8000, "fp")
    waves, _ = next(dt.batch_iter(corpus, 4, 80, seed=0))
    assert waves.shape[1] == 80
    assert np.allclose(waves[:, 50:], 0.0)
