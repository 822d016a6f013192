import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vqprosody import dsp, net, training, vq
from vqprosody.errors import ConfigError, DivergenceError, InsufficientDataError

SMALL = net.EncoderConfig(n_mels=20, conv_channels=8, latent_dim=4, gru_units=6, proj_units=8)


def small_config(**kw):
    base = dict(steps=15, batch_size=3, codebook_size=16, encoder=SMALL)
    base.update(kw)
    return training.TrainConfig(**base)


@pytest.fixture(scope="module")
def corpus():
    return training.generate_corpus(6, seed=11)


def test_corpus_is_deterministic_and_in_range():
    a, b = training.generate_corpus(4, seed=5), training.generate_corpus(4, seed=5)
    for u, v in zip(a, b):
        assert np.array_equal(u.wave.samples, v.wave.samples) and u.factors == v.factors
    for u in training.generate_corpus(20, seed=6):
        for k, (lo, hi) in training.FACTOR_RANGES.items():
            assert lo <= u.factors[k] <= hi
        assert np.max(np.abs(u.wave.samples)) <= 1.0
    assert [u.uid for u in a] == ["utt0000", "utt0001", "utt0002", "utt0003"]


def test_flat_notes_have_stable_pitch():
    u = training.synth_utterance(180.0, 3.0, 0.0, content_id=7, duration=3.0)
    tr = dsp.yin_pitch(u.wave)
    hop = tr.hop_ms / 1000.0
    frame = dsp.FRAME_MS / 1000.0
    checked = 0
    for onset, length, _ in u.notes:
        sounding = length - training.NOTE_GAP_S
        t0 = np.arange(len(tr)) * hop
        inside = (t0 >= onset + 0.03) & (t0 + frame <= onset + sounding - 0.03) & tr.voiced
        if inside.sum() >= 2:
            checked += 1
            assert np.std(tr.f0_hz[inside]) < 2.0
    assert checked >= len(u.notes) - 1


def test_median_f0_matches_note_sequence():
    u = training.synth_utterance(200.0, 3.0, 0.5, content_id=3, duration=3.0)
    tr = dsp.yin_pitch(u.wave)
    med = np.median(tr.f0_hz[tr.voiced])
    assert abs(med - training.expected_median_f0(u)) <= 0.03 * training.expected_median_f0(u)


def test_tempo_sets_note_count():
    assert len(training.note_sequence(1, 3.0, 4.0)) == 12
    assert len(training.note_sequence(1, 3.0, 2.5)) == 8


def test_config_validation():
    with pytest.raises(ConfigError):
        training.TrainConfig(steps=0)
    with pytest.raises(ConfigError):
        training.TrainConfig(counter_mode="nope")
    with pytest.raises(ConfigError):
        training.TrainConfig(lr=-1.0)


def test_make_batch_pads_with_value():
    pad = np.full(3, -9.0)
    b, lengths = training.make_batch([np.ones((2, 3)), np.zeros((4, 3))], pad)
    assert b.shape == (2, 4, 3) and lengths.tolist() == [2, 4]
    assert np.all(b[0, 2:] == -9.0) and np.all(b[0, :2] == 1.0)


def test_zero_learning_rate_changes_nothing(corpus):
    cfg = small_config(lr=0.0, steps=5)
    params0 = net.init_params(SMALL, seed=int(np.random.SeedSequence(cfg.seed).spawn(3)[0].generate_state(1)[0]))
    params, book, log_, _ = training.train(corpus, cfg)
    assert all(np.array_equal(params[k], params0[k]) for k in params.names())
    assert np.all(log_.counter.accum == 0) and log_.counter.steps == 5


def test_log_identities(corpus):
    _, _, log_, trained = training.train(corpus, small_config())
    for step, rec, cb, cm, total in log_.records:
        assert total == rec + cb + cm
    run = np.zeros(SMALL.latent_dim)
    for d in log_.counter_deltas:
        run = run + d
    assert np.array_equal(run, trained.counter.accum)
    assert log_.column("step").tolist() == list(range(1, 16))


def test_training_is_bit_reproducible(corpus, tmp_path):
    _, _, a, _ = training.train(corpus, small_config(seed=3))
    _, _, b, _ = training.train(corpus, small_config(seed=3))
    a.write_tsv(tmp_path / "a.tsv")
    b.write_tsv(tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    _, _, c, _ = training.train(corpus, small_config(seed=4))
    assert c.records != a.records


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_step(corpus):
    with pytest.raises(DivergenceError, match="divergence at step") as info:
        training.train(corpus, small_config(lr=1e6, steps=50))
    assert 1 <= info.value.step <= 50


def test_checkpoint_callback_schedule(corpus):
    seen = []
    training.train(corpus, small_config(steps=10), checkpoint_every=4,
                   on_checkpoint=lambda step, m: seen.append(step))
    assert seen == [4, 8, 10]


def test_empty_corpus():
    with pytest.raises(InsufficientDataError):
        training.train([], small_config())


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_codes_move_toward_assigned_outputs(seed):
    rng = np.random.default_rng(seed)
    params = net.init_params(SMALL, seed=seed % 1000)
    model = net.ProsodyNet(params)
    book = vq.Codebook(rng.normal(scale=0.3, size=(6, SMALL.latent_dim)))
    x = rng.normal(size=(2, 12, SMALL.n_mels))
    lengths = np.array([12, 12])
    model.forward(x, lengths, book)
    pinned = model.pin()
    model._tape = None
    before = book.entries.copy()
    training.sgd_step(model, book, x, lengths, lr=1e-3, beta=0.25)
    z = pinned.z_e.reshape(-1, SMALL.latent_dim)
    idx = pinned.indices.reshape(-1)
    for k in np.unique(idx):
        target = z[idx == k].mean(axis=0)
        if np.linalg.norm(before[k] - target) > 1e-9:
            assert np.linalg.norm(book.entries[k] - target) < np.linalg.norm(before[k] - target)


def test_disentangle_needs_three(corpus):
    _, _, _, trained = training.train(corpus, small_config(steps=2))
    with pytest.raises(InsufficientDataError, match="insufficient data"):
        training.disentangle_experiment(corpus[:2], trained)


def test_collapsed_codebook_reports_no_attribution(corpus):
    _, _, _, trained = training.train(corpus, small_config(steps=2))
    trained.book = vq.Codebook(np.zeros((4, SMALL.latent_dim)))
    rep = training.disentangle_experiment(corpus, trained)
    assert rep.flag == "no attribution" and rep.top5_hits == 0
    again = training.disentangle_experiment(corpus, trained)
    assert again.counter_ranking == rep.counter_ranking


def test_style_control_repeat_and_range(corpus):
    _, _, _, trained = training.train(corpus, small_config(steps=3))
    a, b = training.style_control_demo(trained, corpus[0].wave, 1, [1.5, 1.5])
    assert np.array_equal(a.mel, b.mel)
    assert a.frames == dsp.mel_spectrogram(corpus[0].wave, n_mels=SMALL.n_mels).num_frames
    with pytest.raises(ConfigError):
        training.style_control_demo(trained, corpus[0].wave, 1, [5.0])


def test_count_inversions():
    assert training.count_inversions([1, 2, 3, 4, 5]) == 0
    assert training.count_inversions([5, 4, 3, 2, 1]) == 0
    assert training.count_inversions([1, 3, 2, 4, 5]) == 1
    assert training.count_inversions([1, 3, 2, 4, 3]) == 2


def test_spectral_centroid_tracks_peak():
    centers = np.linspace(100, 4000, 40)
    low, high = np.full((3, 40), -20.0), np.full((3, 40), -20.0)
    low[:, 5], high[:, 30] = 0.0, 0.0
    assert training.spectral_centroid(low, centers) < training.spectral_centroid(high, centers)
