"""Prosody encoder (conv stack -> residual blocks -> VQ -> GRU -> projection)
and a mirrored toy decoder, with hand-written reverse-mode gradients.

Arrays are batch-major ``(B, T, C)``.  A forward pass records a tape on the
model; :meth:`ProsodyNet.backward` consumes it.  All arithmetic is float64.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import vq
from .errors import ConfigError, NoRecordedComputationError, ShapeError


@dataclass(frozen=True)
class EncoderConfig:
    n_mels: int = 80
    conv_channels: int = 32
    kernel_sizes: tuple = (3, 4, 3, 4)
    strides: tuple = (1, 2, 1, 2)
    n_residual_blocks: int = 2
    latent_dim: int = 16
    gru_units: int = 32
    proj_units: int = 64

    def __post_init__(self):
        object.__setattr__(self, "kernel_sizes", tuple(int(k) for k in self.kernel_sizes))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.kernel_sizes) != len(self.strides):
            raise ConfigError("kernel_sizes and strides must have equal length")
        if any(s < 1 for s in self.strides) or any(k < 1 for k in self.kernel_sizes):
            raise ConfigError("kernel sizes and strides must be positive")

    @property
    def downsampling(self) -> int:
        return math.prod(self.strides)

    def latent_length(self, frames: int) -> int:
        for s in self.strides:
            frames = -(-frames // s)
        return frames

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        d["strides"] = list(self.strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


@dataclass
class ParameterSet:
    arrays: dict
    seed: int = 0
    config: EncoderConfig = field(default_factory=EncoderConfig)

    def copy(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self.arrays.items()}, self.seed, self.config)

    def __getitem__(self, name):
        return self.arrays[name]

    def names(self):
        return list(self.arrays)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


@dataclass
class ProsodyLatent:
    z_q_sequence: np.ndarray  # (T', D)
    embedding: np.ndarray  # (proj_units,)
    indices: np.ndarray  # (T',)
    z_e: np.ndarray | None = None


@dataclass
class LossBreakdown:
    recon: float
    codebook: float
    commitment: float

    @property
    def total(self) -> float:
        return self.recon + self.codebook + self.commitment


@dataclass
class Pinned:
    """Stop-gradient constants frozen at a base point.

    Evaluating the loss with these pinned turns the straight-through and
    stop-gradient rules into an ordinary differentiable function, so finite
    differences of it can be compared against :meth:`ProsodyNet.backward`.
    """

    indices: np.ndarray
    st_offset: np.ndarray  # z_q - z_e at the base point
    z_e: np.ndarray
    codes: np.ndarray  # selected codebook rows at the base point


def _uniform(rng, shape, fan_in, gain=1.0):
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: EncoderConfig = EncoderConfig(), seed: int = 0) -> ParameterSet:
    """Seeded fan-in uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    relu_gain = math.sqrt(2.0)
    p = {}
    c_in = config.n_mels
    C = config.conv_channels
    for i, k in enumerate(config.kernel_sizes):
        p[f"enc.conv{i}.w"] = _uniform(rng, (k, c_in, C), k * c_in, relu_gain)
        p[f"enc.conv{i}.b"] = np.zeros(C)
        c_in = C
    for r in range(config.n_residual_blocks):
        p[f"enc.res{r}.w"] = _uniform(rng, (3, C, C), 3 * C)
        p[f"enc.res{r}.b"] = np.zeros(C)
    D, H, P = config.latent_dim, config.gru_units, config.proj_units
    p["enc.latent.w"] = _uniform(rng, (C, D), C)
    p["enc.latent.b"] = np.zeros(D)
    p["gru.w_ih"] = _uniform(rng, (D, 3 * H), H)
    p["gru.w_hh"] = _uniform(rng, (H, 3 * H), H)
    p["gru.b_ih"] = np.zeros(3 * H)
    p["gru.b_hh"] = np.zeros(3 * H)
    p["proj.w"] = _uniform(rng, (H, P), H)
    p["proj.b"] = np.zeros(P)
    p["dec.in_z.w"] = _uniform(rng, (D, C), D, relu_gain)
    p["dec.in_emb.w"] = _uniform(rng, (P, C), P)
    p["dec.in.b"] = np.zeros(C)
    for i, s in enumerate(s for s in config.strides if s > 1):
        p[f"dec.conv{i}.w"] = _uniform(rng, (3, C, C), 3 * C, relu_gain)
        p[f"dec.conv{i}.b"] = np.zeros(C)
    p["dec.out.w"] = _uniform(rng, (C, config.n_mels), C)
    p["dec.out.b"] = np.zeros(config.n_mels)
    return ParameterSet(p, seed, config)


# -- layer primitives: forward returns (y, cache); backward returns dx and fills grads

def same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return out, total // 2, total - total // 2


def conv1d_forward(x, w, b, stride):
    B, T, Cin = x.shape
    K, _, Cout = w.shape
    out_len, left, right = same_padding(T, K, stride)
    xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
    idx = stride * np.arange(out_len)[:, None] + np.arange(K)[None, :]
    cols = xp[:, idx, :].reshape(B * out_len, K * Cin)
    y = (cols @ w.reshape(K * Cin, Cout)).reshape(B, out_len, Cout) + b
    return y, (cols, x.shape, xp.shape[1], left, stride, out_len)


def conv1d_backward(dy, w, cache, grads, prefix):
    cols, (B, T, Cin), padded_len, left, stride, out_len = cache
    K, _, Cout = w.shape
    dy2 = dy.reshape(B * out_len, Cout)
    grads[prefix + ".w"] += (cols.T @ dy2).reshape(K, Cin, Cout)
    grads[prefix + ".b"] += dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(K * Cin, Cout).T).reshape(B, out_len, K, Cin)
    dxp = np.zeros((B, padded_len, Cin))
    for k in range(K):
        dxp[:, k: k + stride * (out_len - 1) + 1: stride, :] += dcols[:, :, k, :]
    return dxp[:, left: left + T, :]


def gru_forward(x, w_ih, w_hh, b_ih, b_hh):
    B, T, _ = x.shape
    H = w_hh.shape[0]
    gi = x @ w_ih + b_ih
    h = np.zeros((B, H))
    hs = np.empty((B, T, H))
    cache = []
    for t in range(T):
        gh = h @ w_hh + b_hh
        r = _sigmoid(gi[:, t, :H] + gh[:, :H])
        z = _sigmoid(gi[:, t, H:2 * H] + gh[:, H:2 * H])
        n = np.tanh(gi[:, t, 2 * H:] + r * gh[:, 2 * H:])
        h_new = (1.0 - z) * n + z * h
        cache.append((h, r, z, n, gh[:, 2 * H:]))
        h = h_new
        hs[:, t] = h
    return hs, (x, cache)


def gru_backward(dhs, w_ih, w_hh, cache, grads):
    x, steps = cache
    B, T, _ = x.shape
    H = w_hh.shape[0]
    dgi = np.empty((B, T, 3 * H))
    dh_next = np.zeros((B, H))
    dw_hh = np.zeros_like(w_hh)
    db_hh = np.zeros(3 * H)
    for t in range(T - 1, -1, -1):
        h_prev, r, z, n, gh_n = steps[t]
        dh = dhs[:, t] + dh_next
        dn = dh * (1.0 - z)
        dz = dh * (h_prev - n)
        dn_pre = dn * (1.0 - n * n)
        dr_pre = dn_pre * gh_n * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        dgi[:, t] = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dw_hh += h_prev.T @ dgh
        db_hh += dgh.sum(axis=0)
        dh_next = dh * z + dgh @ w_hh.T
    grads["gru.w_hh"] += dw_hh
    grads["gru.b_hh"] += db_hh
    grads["gru.w_ih"] += x.reshape(B * T, -1).T @ dgi.reshape(B * T, -1)
    grads["gru.b_ih"] += dgi.sum(axis=(0, 1))
    return dgi @ w_ih.T


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _lengths_mask(lengths, T):
    return (np.arange(T)[None, :] < np.asarray(lengths)[:, None]).astype(np.float64)


class ProsodyNet:
    """Encoder/decoder pair operating on one :class:`ParameterSet`.

    ``forward`` runs the full training graph on a padded batch and records a
    tape; ``backward`` returns gradients for every parameter plus the
    codebook (key ``"codebook"``) and, for inspection, ``z_e``/``z_q``.
    """

    def __init__(self, params: ParameterSet):
        self.params = params
        self.config = params.config
        self._tape = None

    # ---- encoder pieces

    def _encode_continuous(self, x, tape):
        p = self.params.arrays
        h = x
        for i, s in enumerate(self.config.strides):
            pre, cache = conv1d_forward(h, p[f"enc.conv{i}.w"], p[f"enc.conv{i}.b"], s)
            h = np.maximum(pre, 0.0)
            tape.append(("conv", f"enc.conv{i}", cache, pre > 0))
        for r in range(self.config.n_residual_blocks):
            pre, cache = conv1d_forward(h, p[f"enc.res{r}.w"], p[f"enc.res{r}.b"], 1)
            h = h + np.maximum(pre, 0.0)
            tape.append(("res", f"enc.res{r}", cache, pre > 0))
        tape.append(("latent", h))
        return h @ p["enc.latent.w"] + p["enc.latent.b"]

    def _summarize(self, z_q, latent_lengths):
        p = self.params.arrays
        hs, cache = gru_forward(z_q, p["gru.w_ih"], p["gru.w_hh"], p["gru.b_ih"], p["gru.b_hh"])
        last = np.asarray(latent_lengths) - 1
        h_final = hs[np.arange(hs.shape[0]), last]
        emb = h_final @ p["proj.w"] + p["proj.b"]
        return emb, (cache, last, h_final, hs.shape)

    def _decode(self, z_q, emb, target_frames):
        p = self.params.arrays
        pre = z_q @ p["dec.in_z.w"] + (emb @ p["dec.in_emb.w"])[:, None, :] + p["dec.in.b"]
        u = np.maximum(pre, 0.0)
        stages = [("in", pre > 0)]
        for i, s in enumerate(s for s in self.config.strides if s > 1):
            u = np.repeat(u, s, axis=1)
            pre, cache = conv1d_forward(u, p[f"dec.conv{i}.w"], p[f"dec.conv{i}.b"], 1)
            u = np.maximum(pre, 0.0)
            stages.append((s, cache, pre > 0))
        y_full = u @ p["dec.out.w"] + p["dec.out.b"]
        full = y_full.shape[1]
        if target_frames <= full:
            y = y_full[:, :target_frames]
        else:
            y = np.pad(y_full, ((0, 0), (0, target_frames - full), (0, 0)))
        return y, (z_q, emb, stages, u, full)

    # ---- public single-utterance API

    def encode(self, mel, book: vq.Codebook) -> ProsodyLatent:
        x = np.asarray(getattr(mel, "frames", mel), dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.config.n_mels:
            raise ShapeError(f"mel {x.shape} vs configured n_mels={self.config.n_mels}")
        if book.D != self.config.latent_dim:
            raise ShapeError(f"codebook D={book.D} vs latent_dim={self.config.latent_dim}")
        z_e = self._encode_continuous(x[None], [])
        q = vq.quantize(z_e, book)
        emb, _ = self._summarize(q.z_q, [z_e.shape[1]])
        return ProsodyLatent(q.z_q[0], emb[0], q.indices[0], z_e[0])

    def summarize(self, z_q_sequence: np.ndarray) -> np.ndarray:
        z = np.asarray(z_q_sequence, dtype=np.float64)[None]
        emb, _ = self._summarize(z, [z.shape[1]])
        return emb[0]

    def with_latent(self, latent: ProsodyLatent, z_q_sequence: np.ndarray) -> ProsodyLatent:
        """Replace the quantised sequence and recompute the summary embedding."""
        return ProsodyLatent(np.asarray(z_q_sequence, dtype=np.float64),
                             self.summarize(z_q_sequence), latent.indices, latent.z_e)

    def decode(self, latent: ProsodyLatent, target_frames: int) -> np.ndarray:
        z = np.asarray(latent.z_q_sequence, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.config.latent_dim:
            raise ShapeError(f"latent {z.shape} vs latent_dim={self.config.latent_dim}")
        emb = np.asarray(latent.embedding, dtype=np.float64)
        if emb.shape != (self.config.proj_units,):
            raise ShapeError(f"embedding {emb.shape} vs proj_units={self.config.proj_units}")
        if target_frames < z.shape[0]:
            raise ShapeError(f"target_frames {target_frames} < latent length {z.shape[0]}")
        y, _ = self._decode(z[None], emb[None], target_frames)
        return y[0]

    # ---- training graph

    def forward(self, x, lengths, book: vq.Codebook, beta: float = vq.DEFAULT_BETA,
                pinned: Pinned | None = None) -> LossBreakdown:
        """Losses on a padded batch ``x`` of shape (B, T, n_mels).

        Reconstruction is the MSE over valid frames and mel bins; the VQ
        terms average over valid latent steps.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[2] != self.config.n_mels:
            raise ShapeError(f"batch {x.shape} vs configured n_mels={self.config.n_mels}")
        if book.D != self.config.latent_dim:
            raise ShapeError(f"codebook D={book.D} vs latent_dim={self.config.latent_dim}")
        lengths = np.asarray(lengths, dtype=np.int64)
        B, T, M = x.shape
        if lengths.shape != (B,) or lengths.min() < 1 or lengths.max() > T:
            raise ShapeError(f"lengths {lengths} incompatible with batch {x.shape}")
        enc_tape = []
        z_e = self._encode_continuous(x, enc_tape)
        Tq = z_e.shape[1]
        latent_lengths = np.array([self.config.latent_length(int(n)) for n in lengths])
        latent_mask = _lengths_mask(latent_lengths, Tq)

        if pinned is None:
            q = vq.quantize(z_e, book)
            idx, z_q = q.indices, q.z_q
            cb_diff = z_e - book.entries[idx]
            cm_diff = cb_diff
        else:
            idx = pinned.indices
            z_q = z_e + pinned.st_offset
            cb_diff = pinned.z_e - book.entries[idx]
            cm_diff = z_e - pinned.codes
        w = latent_mask / latent_mask.sum()
        codebook_loss = float(np.sum(w * np.sum(cb_diff * cb_diff, axis=-1)))
        commitment_loss = beta * float(np.sum(w * np.sum(cm_diff * cm_diff, axis=-1)))

        emb, gru_cache = self._summarize(z_q, latent_lengths)
        y, dec_cache = self._decode(z_q, emb, T)
        frame_mask = _lengths_mask(lengths, T)[..., None]
        denom = frame_mask.sum() * M
        resid = (y - x) * frame_mask
        recon = float(np.sum(resid * resid) / denom)

        self._tape = dict(enc=enc_tape, z_e=z_e, z_q=z_q, idx=idx, w=w, cb_diff=cb_diff,
                          cm_diff=cm_diff, beta=beta, gru=gru_cache, dec=dec_cache,
                          resid=resid, denom=denom, x_shape=x.shape, book_shape=book.entries.shape,
                          y=y)
        return LossBreakdown(recon, codebook_loss, commitment_loss)

    def backward(self, weights: dict | None = None) -> dict:
        """Gradients of the weighted loss sum; default weights are all 1.

        ``weights`` keys: ``recon``, ``codebook``, ``commitment``.  The
        codebook term reaches only ``"codebook"``; the commitment term only
        z_e and the encoder; reconstruction crosses the quantiser by the
        straight-through copy.
        """
        if self._tape is None:
            raise NoRecordedComputationError()
        tape, self._tape = self._tape, None
        wts = {"recon": 1.0, "codebook": 1.0, "commitment": 1.0}
        if weights:
            unknown = set(weights) - set(wts)
            if unknown:
                raise ConfigError(f"unknown loss terms {sorted(unknown)}")
            wts.update(weights)
        p = self.params.arrays
        grads = {k: np.zeros_like(v) for k, v in p.items()}

        dy = wts["recon"] * 2.0 * tape["resid"] / tape["denom"]
        dz_q, demb = self._decode_backward(dy, tape["dec"], grads)
        dz_q += self._summarize_backward(demb, tape["gru"], grads)

        w = tape["w"][..., None]
        dz_e = vq.straight_through(dz_q) + wts["commitment"] * 2.0 * tape["beta"] * w * tape["cm_diff"]

        d_book = np.zeros(tape["book_shape"])
        np.add.at(d_book, tape["idx"].reshape(-1),
                  (-2.0 * wts["codebook"] * w * tape["cb_diff"]).reshape(-1, d_book.shape[1]))
        grads["codebook"] = d_book

        dx = self._encode_backward(dz_e, tape["enc"], grads)
        grads["z_e"] = dz_e
        grads["z_q"] = dz_q
        # x is both the encoder input and the reconstruction target
        grads["input"] = dx - dy
        return grads

    def _decode_backward(self, dy, cache, grads):
        p = self.params.arrays
        z_q, emb, stages, u, full = cache
        B, T, M = dy.shape
        dy_full = np.zeros((B, full, M))
        n = min(T, full)
        dy_full[:, :n] = dy[:, :n]
        grads["dec.out.w"] += u.reshape(-1, u.shape[-1]).T @ dy_full.reshape(-1, M)
        grads["dec.out.b"] += dy_full.sum(axis=(0, 1))
        du = dy_full @ p["dec.out.w"].T
        conv_stages = stages[1:]
        for i in range(len(conv_stages) - 1, -1, -1):
            s, conv_cache, active = conv_stages[i]
            dpre = du * active
            du_up = conv1d_backward(dpre, p[f"dec.conv{i}.w"], conv_cache, grads, f"dec.conv{i}")
            Bu, Tu, C = du_up.shape
            du = du_up.reshape(Bu, Tu // s, s, C).sum(axis=2)
        dpre = du * stages[0][1]
        grads["dec.in.b"] += dpre.sum(axis=(0, 1))
        grads["dec.in_z.w"] += z_q.reshape(-1, z_q.shape[-1]).T @ dpre.reshape(-1, dpre.shape[-1])
        dpre_sum = dpre.sum(axis=1)
        grads["dec.in_emb.w"] += emb.T @ dpre_sum
        demb = dpre_sum @ p["dec.in_emb.w"].T
        dz_q = dpre @ p["dec.in_z.w"].T
        return dz_q, demb

    def _summarize_backward(self, demb, cache, grads):
        p = self.params.arrays
        gru_cache, last, h_final, hs_shape = cache
        grads["proj.w"] += h_final.T @ demb
        grads["proj.b"] += demb.sum(axis=0)
        dhs = np.zeros(hs_shape)
        dhs[np.arange(hs_shape[0]), last] = demb @ p["proj.w"].T
        return gru_backward(dhs, p["gru.w_ih"], p["gru.w_hh"], gru_cache, grads)

    def _encode_backward(self, dz_e, enc_tape, grads):
        p = self.params.arrays
        *layers, (_, h_latent) = enc_tape
        grads["enc.latent.w"] += h_latent.reshape(-1, h_latent.shape[-1]).T @ dz_e.reshape(-1, dz_e.shape[-1])
        grads["enc.latent.b"] += dz_e.sum(axis=(0, 1))
        dh = dz_e @ p["enc.latent.w"].T
        for kind, name, cache, active in reversed(layers):
            if kind == "res":
                dh = dh + conv1d_backward(dh * active, p[name + ".w"], cache, grads, name)
            else:
                dh = conv1d_backward(dh * active, p[name + ".w"], cache, grads, name)
        return dh

    def pin(self) -> Pinned:
        """Freeze the stop-gradient constants of the most recent forward pass."""
        if self._tape is None:
            raise NoRecordedComputationError()
        t = self._tape
        return Pinned(t["idx"].copy(), t["z_q"] - t["z_e"], t["z_e"].copy(), t["z_e"] - t["cb_diff"])


def encode(mel, params: ParameterSet, book: vq.Codebook) -> ProsodyLatent:
    return ProsodyNet(params).encode(mel, book)


def decode(latent: ProsodyLatent, target_frames: int, params: ParameterSet) -> np.ndarray:
    return ProsodyNet(params).decode(latent, target_frames)
