import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vqprosody import net, vq
from vqprosody.errors import ConfigError, NoRecordedComputationError, ShapeError

from oracles import gradient_check

TINY = net.EncoderConfig(n_mels=6, conv_channels=5, latent_dim=3, gru_units=4, proj_units=5)


def tiny_setup(seed=0, lengths=(11, 7)):
    rng = np.random.default_rng(seed)
    params = net.init_params(TINY, seed=seed)
    for k, v in params.arrays.items():
        if k.endswith(".b"):
            v[...] = rng.normal(scale=0.1, size=v.shape)
    book = vq.Codebook(rng.normal(scale=0.5, size=(5, TINY.latent_dim)))
    x = rng.normal(size=(len(lengths), max(lengths), TINY.n_mels))
    return net.ProsodyNet(params), book, x, np.array(lengths)


def test_config_validation_and_downsampling():
    assert net.EncoderConfig().downsampling == 4
    assert net.EncoderConfig().latent_length(80) == 20
    assert net.EncoderConfig().latent_length(81) == 21
    with pytest.raises(ConfigError):
        net.EncoderConfig(kernel_sizes=(3, 3), strides=(1,))
    cfg = net.EncoderConfig(gru_units=7)
    assert net.EncoderConfig.from_dict(cfg.to_dict()) == cfg


def test_init_is_seeded():
    a, b = net.init_params(seed=3), net.init_params(seed=3)
    assert all(np.array_equal(a[k], b[k]) for k in a.names())
    assert not np.array_equal(a["enc.conv0.w"], net.init_params(seed=4)["enc.conv0.w"])


def test_same_padding_output_length():
    for n in range(1, 20):
        for k in (1, 2, 3, 4, 5):
            for s in (1, 2, 3):
                out, left, right = net.same_padding(n, k, s)
                assert out == -(-n // s)
                assert (n + left + right - k) // s + 1 == out


def test_encode_shapes():
    params = net.init_params(seed=0)
    book = vq.Codebook.random(seed=0)
    lat = net.encode(np.random.default_rng(0).normal(size=(80, 80)), params, book)
    assert lat.z_q_sequence.shape == (20, 16)
    assert lat.embedding.shape == (64,)
    assert np.array_equal(lat.z_q_sequence, book.entries[lat.indices])
    with pytest.raises(ShapeError, match="shape error"):
        net.encode(np.zeros((10, 40)), params, book)


@given(st.integers(4, 60))
@settings(max_examples=15, deadline=None)
def test_round_trip_returns_target_frames(T):
    params = net.init_params(TINY, seed=1)
    book = vq.Codebook.random(8, TINY.latent_dim, seed=1)
    x = np.random.default_rng(T).normal(size=(T, TINY.n_mels))
    lat = net.encode(x, params, book)
    assert lat.z_q_sequence.shape[0] == TINY.latent_length(T)
    assert net.decode(lat, T, params).shape == (T, TINY.n_mels)
    assert net.decode(lat, T + 3, params).shape == (T + 3, TINY.n_mels)


def test_zero_input_gives_constant_codes():
    params = net.init_params(seed=0)
    lat = net.encode(np.zeros((40, 80)), params, vq.Codebook.random(seed=0))
    assert np.all(lat.z_e == lat.z_e[0]) and np.all(lat.indices == lat.indices[0])


def test_zero_latent_decodes_to_zero():
    params = net.init_params(seed=0)
    m = net.ProsodyNet(params)
    lat = net.ProsodyLatent(np.zeros((20, 16)), m.summarize(np.zeros((20, 16))),
                            np.zeros(20, dtype=int), np.zeros((20, 16)))
    assert np.all(lat.embedding == 0)
    assert np.all(m.decode(lat, 80) == 0)


def test_backward_requires_forward():
    m, *_ = tiny_setup()
    with pytest.raises(NoRecordedComputationError, match="no recorded computation"):
        m.backward()
    with pytest.raises(NoRecordedComputationError):
        m.pin()


def test_forward_shape_checks():
    m, book, x, lengths = tiny_setup()
    with pytest.raises(ShapeError):
        m.forward(x[..., :4], lengths, book)
    with pytest.raises(ShapeError):
        m.forward(x, np.array([12, 3]), book)
    with pytest.raises(ShapeError):
        m.forward(x, lengths, vq.Codebook(np.zeros((4, 2))))


def test_every_group_matches_finite_differences():
    m, book, x, lengths = tiny_setup()
    errors = gradient_check(m, x, lengths, book)
    assert set(errors) >= set(m.params.names()) | {"codebook", "input"}
    bad = {k: v for k, v in errors.items() if not v < 1e-4}
    assert not bad, bad


def test_losses_average_over_valid_steps_only():
    m, book, x, lengths = tiny_setup()
    losses = m.forward(x, lengths, book, beta=0.25)
    tape = m._tape
    y = tape["y"]
    sq = [np.sum((y[i, :n] - x[i, :n]) ** 2) for i, n in enumerate(lengths)]
    assert losses.recon == pytest.approx(sum(sq) / (lengths.sum() * TINY.n_mels), rel=1e-12)
    steps = [TINY.latent_length(int(n)) for n in lengths]
    d = [np.sum(tape["cb_diff"][i, :n] ** 2) for i, n in enumerate(steps)]
    assert losses.codebook == pytest.approx(sum(d) / sum(steps), rel=1e-12)
    assert losses.commitment == pytest.approx(0.25 * losses.codebook, rel=1e-12)


def test_loss_routing_is_exact():
    m, book, x, lengths = tiny_setup()
    m.forward(x, lengths, book)
    g = m.backward({"recon": 0.0, "codebook": 1.0, "commitment": 0.0})
    assert np.any(g["codebook"] != 0)
    assert np.all(g["z_e"] == 0)
    assert all(np.all(g[k] == 0) for k in m.params.names())

    m.forward(x, lengths, book)
    g = m.backward({"recon": 0.0, "codebook": 0.0, "commitment": 1.0})
    assert np.all(g["codebook"] == 0)
    assert np.any(g["enc.latent.w"] != 0)
    assert all(np.all(g[k] == 0) for k in m.params.names() if not k.startswith("enc."))


def test_commitment_gradient_hand_form():
    m, book, x, lengths = tiny_setup(lengths=(11, 11))
    m.forward(x, lengths, book, beta=0.3)
    pinned = m.pin()
    g = m.backward({"recon": 0.0, "codebook": 0.0, "commitment": 1.0})
    n = pinned.z_e.shape[0] * pinned.z_e.shape[1]
    expected = 2 * 0.3 * (pinned.z_e - book.entries[pinned.indices]) / n
    assert np.allclose(g["z_e"], expected, rtol=1e-12, atol=1e-15)


def test_recon_gradient_crosses_quantiser_unchanged():
    m, book, x, lengths = tiny_setup()
    m.forward(x, lengths, book)
    g = m.backward({"recon": 1.0, "codebook": 0.0, "commitment": 0.0})
    assert np.array_equal(g["z_e"], g["z_q"])


def test_backward_clears_tape():
    m, book, x, lengths = tiny_setup()
    m.forward(x, lengths, book)
    m.backward()
    with pytest.raises(NoRecordedComputationError):
        m.backward()


def test_with_latent_recomputes_embedding():
    m, book, x, _ = tiny_setup()
    lat = m.encode(x[0], book)
    z = vq.manipulate_latent(lat.z_q_sequence, 1, 3.0)
    lat2 = m.with_latent(lat, z)
    assert np.array_equal(lat2.embedding, m.summarize(z))
    assert not np.array_equal(lat2.embedding, lat.embedding)
