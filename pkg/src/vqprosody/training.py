"""Synthetic factor-labelled corpus, the training loop, and the
disentanglement / style-control experiments built on a trained model."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import dsp, metrics, vq
from .errors import ConfigError, DivergenceError, InsufficientDataError
from .net import EncoderConfig, ParameterSet, ProsodyNet, init_params

log = logging.getLogger(__name__)

FACTOR_NAMES = ("base_f0", "tempo", "pitch_var")
FACTOR_RANGES = {"base_f0": (120.0, 300.0), "tempo": (2.0, 6.0), "pitch_var": (0.0, 2.0)}
DURATION_RANGE = (2.0, 4.0)
VIBRATO_HZ = 5.0
HARMONIC_AMPS = (1.0, 0.5, 0.25)
SEMITONE_CHOICES = np.arange(-2, 3)
PEAK = 0.7
NOTE_GAP_S = 0.08  # silent pause closing every note
NOISE_STD = 1e-3  # -60 dB floor keeps empty mel bands stationary


@dataclass
class SyntheticUtterance:
    wave: dsp.Waveform
    factors: dict
    content_id: int
    notes: list = field(default_factory=list)  # (onset_s, duration_s, semitone)
    uid: str = ""

    def factor_vector(self) -> np.ndarray:
        return np.array([self.factors[k] for k in FACTOR_NAMES], dtype=np.float64)


def note_sequence(content_id: int, duration: float, tempo: float) -> list[tuple[float, float, int]]:
    rng = np.random.default_rng(content_id)
    note_len = 1.0 / tempo
    n = int(np.ceil(duration * tempo))
    steps = rng.choice(SEMITONE_CHOICES, size=n)
    return [(i * note_len, min(note_len, duration - i * note_len), int(k)) for i, k in enumerate(steps)]


def _envelope(t_in_note: np.ndarray, note_len: np.ndarray, gap: float) -> np.ndarray:
    """Raised-sine attack and release around a sounding segment, then a pause of ``gap`` seconds.

    The pause has fixed length, so the silent fraction of an utterance grows with tempo.
    """
    sounding = np.maximum(note_len - gap, 0.5 * note_len)
    ramp = np.minimum(0.02, 0.25 * sounding)
    up = np.clip(t_in_note / ramp, 0.0, 1.0)
    down = np.clip((sounding - t_in_note) / ramp, 0.0, 1.0)
    return np.sin(0.5 * np.pi * np.minimum(up, down)) ** 2


def synth_utterance(base_f0: float, tempo: float, pitch_var: float, content_id: int,
                    duration: float = 3.0, sample_rate: int = dsp.DEFAULT_SAMPLE_RATE,
                    uid: str = "") -> SyntheticUtterance:
    """Three-harmonic note melody around ``base_f0`` with 5 Hz vibrato of depth ``pitch_var`` semitones."""
    notes = note_sequence(content_id, duration, tempo)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    note_len = 1.0 / tempo
    which = np.minimum((t / note_len).astype(np.int64), len(notes) - 1)
    semis = np.array([k for _, _, k in notes], dtype=np.float64)[which]
    semis = semis + pitch_var * np.sin(2.0 * np.pi * VIBRATO_HZ * t)
    f_inst = base_f0 * 2.0 ** (semis / 12.0)
    phase = 2.0 * np.pi * np.cumsum(f_inst) / sample_rate
    x = sum(a * np.sin((h + 1) * phase) for h, a in enumerate(HARMONIC_AMPS))
    onsets = np.array([o for o, _, _ in notes])[which]
    lengths = np.array([d for _, d, _ in notes])[which]
    x = x * _envelope(t - onsets, lengths, NOTE_GAP_S)
    peak = np.max(np.abs(x))
    if peak > 0:
        x = x * (PEAK / peak)
    x = x + NOISE_STD * np.random.default_rng([content_id, 1]).standard_normal(n)
    factors = {"base_f0": float(base_f0), "tempo": float(tempo), "pitch_var": float(pitch_var)}
    return SyntheticUtterance(dsp.Waveform(x, sample_rate), factors, int(content_id), notes, uid)


def generate_corpus(n: int, seed: int = 0, sample_rate: int = dsp.DEFAULT_SAMPLE_RATE) -> list[SyntheticUtterance]:
    if n < 1:
        raise ConfigError("corpus size must be >= 1")
    children = np.random.SeedSequence(seed).spawn(n)
    out = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        f = {k: float(rng.uniform(*FACTOR_RANGES[k])) for k in FACTOR_NAMES}
        duration = float(rng.uniform(*DURATION_RANGE))
        content_id = int(rng.integers(0, 2**31 - 1))
        out.append(synth_utterance(f["base_f0"], f["tempo"], f["pitch_var"], content_id,
                                   duration, sample_rate, uid=f"utt{i:04d}"))
    return out


def expected_median_f0(utt: SyntheticUtterance) -> float:
    """Duration-weighted median of the nominal note pitches (vibrato ignored)."""
    pitches = np.array([utt.factors["base_f0"] * 2.0 ** (k / 12.0) for _, _, k in utt.notes])
    weights = np.array([d for _, d, _ in utt.notes])
    order = np.argsort(pitches, kind="stable")
    cum = np.cumsum(weights[order])
    return float(pitches[order][np.searchsorted(cum, 0.5 * cum[-1])])


@dataclass(frozen=True)
class FeatureNorm:
    """Standardisation of log-mel values with one global mean and scale.

    Stored per bin so a checkpoint could carry per-bin statistics, but
    :meth:`fit` uses a single scalar: per-bin scaling would blow bands that
    hold only the noise floor up to unit variance and let them dominate the
    reconstruction loss.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, mels: list[np.ndarray]) -> "FeatureNorm":
        stacked = np.concatenate(mels, axis=0)
        n_mels = stacked.shape[1]
        return cls(np.full(n_mels, stacked.mean()), np.full(n_mels, max(stacked.std(), 1e-3)))

    def apply(self, logmel: np.ndarray) -> np.ndarray:
        return (logmel - self.mean) / self.std

    def invert(self, normed: np.ndarray) -> np.ndarray:
        return normed * self.std + self.mean

    @property
    def pad_value(self) -> np.ndarray:
        return self.apply(np.full_like(self.mean, np.log(dsp.LOG_FLOOR)))


@dataclass(frozen=True)
class TrainConfig:
    """Plain gradient descent settings.

    ``codebook_scale`` multiplies the step size for the codebook only.  Under
    a shared step a code moves in proportion to the fraction of frames it
    wins, so rarely chosen codes never catch up with the encoder output and
    the codebook collapses to a handful of entries.
    """

    lr: float = 1e-2
    batch_size: int = 8
    steps: int = 2000
    beta: float = vq.DEFAULT_BETA
    seed: int = 0
    counter_mode: str = "mean_then_abs"
    codebook_scale: float = 100.0
    codebook_size: int = vq.DEFAULT_K
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if not self.lr >= 0 or not self.codebook_scale >= 0:
            raise ConfigError("lr and codebook_scale must be non-negative")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if self.counter_mode not in vq.COUNTER_MODES:
            raise ConfigError(f"unknown counter mode {self.counter_mode!r}")


LOG_FIELDS = ("step", "recon_loss", "codebook_loss", "commitment_loss", "total_loss")


@dataclass
class TrainLog:
    records: list = field(default_factory=list)  # tuples in LOG_FIELDS order
    counter: vq.CodebookCounter | None = None
    counter_deltas: np.ndarray | None = None  # (steps, D)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[LOG_FIELDS.index(name)] for r in self.records])

    def write_tsv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(LOG_FIELDS)
            for rec in self.records:
                w.writerow([rec[0]] + [repr(float(v)) for v in rec[1:]])


@dataclass
class TrainedModel:
    params: ParameterSet
    book: vq.Codebook
    counter: vq.CodebookCounter
    norm: FeatureNorm

    @property
    def net(self) -> ProsodyNet:
        return ProsodyNet(self.params)

    def normalized_mel(self, wave: dsp.Waveform) -> np.ndarray:
        return self.norm.apply(dsp.mel_spectrogram(wave, n_mels=self.params.config.n_mels).frames)


def make_batch(mels: list[np.ndarray], pad_value: np.ndarray):
    lengths = np.array([m.shape[0] for m in mels])
    batch = np.broadcast_to(pad_value, (len(mels), lengths.max(), pad_value.size)).copy()
    for i, m in enumerate(mels):
        batch[i, : m.shape[0]] = m
    return batch, lengths


def sgd_step(model: ProsodyNet, book: vq.Codebook, batch, lengths, lr: float, beta: float,
             codebook_lr: float | None = None):
    """One forward/backward/update.  Returns (losses, codebook before the update)."""
    losses = model.forward(batch, lengths, book, beta)
    grads = model.backward()
    before = book.copy()
    for name, arr in model.params.arrays.items():
        arr -= lr * grads[name]
    book.entries -= (lr if codebook_lr is None else codebook_lr) * grads["codebook"]
    return losses, before


def train(corpus, config: TrainConfig = TrainConfig(), checkpoint_every: int = 0,
          on_checkpoint=None, mels: list[np.ndarray] | None = None):
    """Plain gradient descent on reconstruction MSE + codebook + commitment loss.

    ``corpus`` is a list of :class:`SyntheticUtterance` or :class:`dsp.Waveform`.
    ``on_checkpoint(step, trained_model)`` fires every ``checkpoint_every``
    steps (0 disables) and once at the end.
    Returns ``(params, codebook, log, trained_model)``.
    """
    if not corpus and mels is None:
        raise InsufficientDataError("training corpus is empty")
    enc = config.encoder
    if mels is None:
        waves = [getattr(u, "wave", u) for u in corpus]
        mels = [dsp.mel_spectrogram(w, n_mels=enc.n_mels).frames for w in waves]
    norm = FeatureNorm.fit(mels)
    normed = [norm.apply(m) for m in mels]

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    params = init_params(enc, seed=int(seeds[0].generate_state(1)[0]))
    params.seed = config.seed
    book = vq.Codebook.random(config.codebook_size, enc.latent_dim, seed=seeds[1])
    rng = np.random.default_rng(seeds[2])
    counter = vq.CodebookCounter.zeros(enc.latent_dim, config.counter_mode)
    model = ProsodyNet(params)
    trained = TrainedModel(params, book, counter, norm)
    log_ = TrainLog(counter=counter)
    deltas = np.zeros((config.steps, enc.latent_dim))
    n = len(normed)

    for step in range(1, config.steps + 1):
        pick = rng.choice(n, size=config.batch_size, replace=n < config.batch_size)
        batch, lengths = make_batch([normed[i] for i in pick], norm.pad_value)
        losses, before = sgd_step(model, book, batch, lengths, config.lr, config.beta,
                                  codebook_lr=config.lr * config.codebook_scale)
        total = losses.recon + losses.codebook + losses.commitment
        if not np.isfinite(total):
            raise DivergenceError(step, f"non-finite loss {total}")
        if not params.all_finite() or not np.all(np.isfinite(book.entries)):
            raise DivergenceError(step, "non-finite parameters")
        deltas[step - 1] = counter.step_delta(before, book)
        counter.accum = counter.accum + deltas[step - 1]
        counter.steps += 1
        log_.records.append((step, losses.recon, losses.codebook, losses.commitment, total))
        if step % 100 == 0:
            log.info("step %d recon %.4f vq %.4f", step, losses.recon, losses.codebook)
        if on_checkpoint and checkpoint_every and step % checkpoint_every == 0 and step != config.steps:
            on_checkpoint(step, trained)
    log_.counter_deltas = deltas
    if on_checkpoint:
        on_checkpoint(config.steps, trained)
    return params, book, log_, trained


def utterance_latents(model: TrainedModel, waves) -> np.ndarray:
    """Time-averaged quantised latent per utterance, shape (N, D)."""
    net = model.net
    return np.stack([net.encode(model.normalized_mel(w), model.book).z_q_sequence.mean(axis=0)
                     for w in waves])


ATTRIBUTION_R = 0.5


@dataclass
class DisentangleReport:
    correlation: metrics.FactorCorrelation
    counter_ranking: list[int]
    factor_top_dims: dict  # factor name -> 1-indexed dimension
    factor_top_r: dict
    top3_overlap: int  # factors whose top dim is in the counter top-3
    top5_hits: int  # factors with |r| >= 0.5 whose top dim is in the counter top-5

    @property
    def attribution(self) -> bool:
        return any(r >= ATTRIBUTION_R for r in self.factor_top_r.values())

    @property
    def flag(self) -> str:
        return "attribution" if self.attribution else "no attribution"

    def rows(self):
        for name in FACTOR_NAMES:
            d = self.factor_top_dims[name]
            yield (name, d, self.factor_top_r[name], self.counter_ranking.index(d) + 1)


def disentangle_experiment(corpus, model: TrainedModel) -> DisentangleReport:
    if len(corpus) < 3:
        raise InsufficientDataError("insufficient data: need at least 3 utterances")
    latents = utterance_latents(model, [u.wave for u in corpus])
    factors = np.stack([u.factor_vector() for u in corpus])
    corr = metrics.factor_correlation(latents, factors)
    ranking = vq.rank_dimensions(model.counter)
    top_dims = {name: corr.top_dimension(j) for j, name in enumerate(FACTOR_NAMES)}
    top_r = {name: float(corr.matrix[top_dims[name] - 1, j]) for j, name in enumerate(FACTOR_NAMES)}
    top3 = set(ranking[:3])
    top5 = set(ranking[:5])
    return DisentangleReport(
        corr, ranking, top_dims, top_r,
        top3_overlap=sum(d in top3 for d in top_dims.values()),
        top5_hits=sum(top_dims[k] in top5 and top_r[k] >= ATTRIBUTION_R for k in FACTOR_NAMES),
    )


@dataclass
class StyleControlOutput:
    value: float
    mel: np.ndarray  # (T, n_mels) log-mel, de-normalised
    spectral_centroid_hz: float
    frames: int


def spectral_centroid(logmel: np.ndarray, centers_hz: np.ndarray) -> float:
    """Power-weighted mean mel-band frequency, averaged over frames."""
    power = np.exp(logmel - logmel.max(axis=1, keepdims=True))
    return float(np.mean(power @ centers_hz / power.sum(axis=1)))


def style_control_demo(model: TrainedModel, wave: dsp.Waveform, dim: int, values,
                       mode: str = "override") -> list[StyleControlOutput]:
    values = [float(v) for v in values]
    if any(not -4.0 <= v <= 4.0 for v in values):
        raise ConfigError("style-control values must lie in [-4, 4]")
    net = model.net
    mel = dsp.mel_spectrogram(wave, n_mels=model.params.config.n_mels)
    centers = mel.center_frequencies()
    latent = net.encode(model.norm.apply(mel.frames), model.book)
    out = []
    for v in values:
        z = vq.manipulate_latent(latent.z_q_sequence, dim, v, mode)
        recon = model.norm.invert(net.decode(net.with_latent(latent, z), mel.num_frames))
        out.append(StyleControlOutput(v, recon, spectral_centroid(recon, centers), recon.shape[0]))
    return out


def count_inversions(seq) -> int:
    """Adjacent direction changes against the dominant trend of ``seq``."""
    d = np.sign(np.diff(np.asarray(seq, dtype=np.float64)))
    trend = 1.0 if d.sum() >= 0 else -1.0
    return int(np.sum(d != trend))
