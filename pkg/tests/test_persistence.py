import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from vqprosody import net, persistence, training, vq
from vqprosody.errors import ConfigError, CorruptContainerError


def sample_state(seed=0):
    cfg = net.EncoderConfig(n_mels=10, conv_channels=4, latent_dim=3, gru_units=3, proj_units=4)
    params = net.init_params(cfg, seed)
    book = vq.Codebook.random(8, 3, seed)
    counter = vq.CodebookCounter.zeros(3)
    counter.update(book, vq.Codebook(book.entries + 0.01))
    norm = training.FeatureNorm(np.full(10, -3.0), np.full(10, 2.0))
    return params, book, counter, norm


def test_round_trip_is_bit_exact_in_float32(tmp_path):
    params, book, counter, norm = sample_state()
    path = tmp_path / "a.vqpc"
    persistence.save_checkpoint(params, book, counter, path, norm=norm)
    ck = persistence.load_checkpoint(path)
    for k in params.names():
        assert np.array_equal(ck.params[k], params[k].astype(np.float32))
    assert np.array_equal(ck.book.entries, book.entries.astype(np.float32))
    assert ck.counter.steps == 1 and ck.counter.mode == counter.mode
    assert ck.params.config == params.config
    assert np.array_equal(ck.norm.mean, norm.mean)
    persistence.save_checkpoint(ck.params, ck.book, ck.counter, tmp_path / "b.vqpc", norm=ck.norm)
    assert path.read_bytes() == (tmp_path / "b.vqpc").read_bytes()
    assert persistence.read_container(path).narrowed


@given(st.dictionaries(st.text("abcxyz._", min_size=1, max_size=8),
                       hnp.arrays(st.sampled_from([np.float32, np.int32, np.uint8]),
                                  hnp.array_shapes(min_dims=0, max_dims=3, min_side=0, max_side=4)),
                       max_size=4))
@settings(max_examples=50, deadline=None)
def test_container_round_trip_property(tmp_path_factory, arrays):
    path = tmp_path_factory.mktemp("c") / "x.vqpc"
    persistence.write_container(arrays, path)
    back = persistence.read_container(path).arrays
    assert set(back) == set(arrays)
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype and back[k].shape == v.shape
        assert back[k].tobytes() == v.tobytes()


def test_header_layout(tmp_path):
    persistence.write_container({"a": np.arange(3, dtype=np.float32)}, tmp_path / "h.vqpc")
    raw = (tmp_path / "h.vqpc").read_bytes()
    magic, version, flags, n, plen, _ = struct.unpack_from("<4sHHIQI", raw)
    assert (magic, version, flags, n, plen) == (b"VQPC", 1, 0, 1, 12)
    assert raw[-12:] == np.arange(3, dtype="<f4").tobytes()


def test_truncated_and_corrupt_files_are_rejected(tmp_path):
    params, book, counter, _ = sample_state()
    path = tmp_path / "t.vqpc"
    persistence.save_checkpoint(params, book, counter, path)
    raw = path.read_bytes()
    for cut in (3, 20, len(raw) // 2, len(raw) - 1):
        (tmp_path / "cut.vqpc").write_bytes(raw[:cut])
        with pytest.raises(CorruptContainerError, match="corrupt container"):
            persistence.load_checkpoint(tmp_path / "cut.vqpc")
    flipped = bytearray(raw)
    flipped[-1] ^= 0xFF
    (tmp_path / "flip.vqpc").write_bytes(bytes(flipped))
    with pytest.raises(CorruptContainerError):
        persistence.load_checkpoint(tmp_path / "flip.vqpc")


def test_unknown_version_is_rejected(tmp_path):
    persistence.write_container({"a": np.zeros(2, np.float32)}, tmp_path / "v.vqpc")
    raw = bytearray((tmp_path / "v.vqpc").read_bytes())
    raw[4:6] = struct.pack("<H", 2)
    (tmp_path / "v2.vqpc").write_bytes(bytes(raw))
    with pytest.raises(CorruptContainerError, match="version 2"):
        persistence.read_container(tmp_path / "v2.vqpc")


def test_empty_parameter_set(tmp_path):
    book = vq.Codebook.random(4, 2, 0)
    empty = net.ParameterSet({}, seed=0, config=None)
    persistence.save_checkpoint(empty, book, vq.CodebookCounter.zeros(2), tmp_path / "e.vqpc")
    c = persistence.read_container(tmp_path / "e.vqpc")
    assert not any(k.startswith("param.") for k in c.arrays)
    assert "codebook.entries" in c.arrays
    assert persistence.load_checkpoint(tmp_path / "e.vqpc").params.arrays == {}


def test_write_error_names_path(tmp_path):
    with pytest.raises(OSError, match="missing"):
        persistence.write_container({}, tmp_path / "missing" / "x.vqpc")


def test_manifest_round_trip_and_checks(tmp_path):
    (tmp_path / "a.wav").write_bytes(b"")
    recs = [persistence.ManifestRecord("a", "a.wav", {"base_f0": 150.0, "tempo": 3.0, "pitch_var": 1.0}, "la"),
            persistence.ManifestRecord("b", "a.wav")]
    persistence.write_manifest(recs, tmp_path / "m.jsonl")
    back = persistence.read_manifest(tmp_path / "m.jsonl")
    assert [r.id for r in back] == ["a", "b"]
    assert back[0].factors["tempo"] == 3.0 and back[0].transcript == "la"
    assert back[1].factors is None
    with pytest.raises(ConfigError, match="duplicate"):
        persistence.write_manifest([recs[0], recs[0]], tmp_path / "d.jsonl")
    (tmp_path / "bad.jsonl").write_text('{"id": "x", "audio": "nowhere.wav"}\n')
    with pytest.raises(ConfigError, match="missing audio"):
        persistence.read_manifest(tmp_path / "bad.jsonl")
    (tmp_path / "dup.jsonl").write_text('{"id": "a", "audio": "a.wav"}\n' * 2)
    with pytest.raises(ConfigError, match="duplicate"):
        persistence.read_manifest(tmp_path / "dup.jsonl")
