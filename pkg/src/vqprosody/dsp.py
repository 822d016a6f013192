"""Signal-processing front end: framing, STFT, log-mel, MFCC and YIN pitch.

Frame geometry is shared by every analysis here: a frame of ``frame_ms`` is
taken every ``hop_ms`` and only complete frames are kept, so a signal of
``n`` samples yields ``floor((n - frame) / hop) + 1`` frames.  Mel frames and
pitch frames therefore line up one-to-one, which FFE relies on.
"""

from __future__ import annotations

import wave as _wavemod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import ConfigError, InputTooShortError, ShapeError

DEFAULT_SAMPLE_RATE = 16000
FRAME_MS = 50.0
HOP_MS = 12.5
N_MELS = 80
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError(f"waveform must be 1-D, got shape {x.shape}")
        if int(self.sample_rate) <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if x.size and np.max(np.abs(x)) > 1.0 + 1e-6:
            raise ConfigError("waveform samples must lie in [-1, 1]")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MelSpectrogram:
    frames: np.ndarray  # (T, n_mels) natural-log mel energies
    n_mels: int = N_MELS
    frame_length_ms: float = FRAME_MS
    hop_ms: float = HOP_MS
    sample_rate: int = DEFAULT_SAMPLE_RATE
    fmin: float = 0.0
    fmax: float | None = None

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def center_frequencies(self) -> np.ndarray:
        """Centre frequency in Hz of every mel band."""
        fmax = self.sample_rate / 2 if self.fmax is None else self.fmax
        mels = np.linspace(hz_to_mel(self.fmin), hz_to_mel(fmax), self.n_mels + 2)
        return mel_to_hz(mels[1:-1])


@dataclass(frozen=True)
class MfccSequence:
    frames: np.ndarray  # (T, n_coeffs)
    n_coeffs: int
    includes_c0: bool = True

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != self.n_coeffs:
            raise ShapeError(f"mfcc frames {self.frames.shape} vs n_coeffs {self.n_coeffs}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class PitchTrack:
    f0_hz: np.ndarray
    voiced: np.ndarray
    hop_ms: float = HOP_MS
    f_min: float = field(default=60.0, compare=False)
    f_max: float = field(default=500.0, compare=False)

    def __post_init__(self):
        f0 = np.asarray(self.f0_hz, dtype=np.float64)
        v = np.asarray(self.voiced, dtype=bool)
        if f0.shape != v.shape or f0.ndim != 1:
            raise ShapeError(f"f0 {f0.shape} vs voiced {v.shape}")
        if np.any((f0 > 0) != v):
            raise ConfigError("f0 must be positive exactly on voiced frames")
        object.__setattr__(self, "f0_hz", f0)
        object.__setattr__(self, "voiced", v)

    def __len__(self):
        return self.f0_hz.size


def ms_to_samples(ms: float, sample_rate: int) -> int:
    return int(round(ms * sample_rate / 1000.0))


def num_frames(num_samples: int, frame_samples: int, hop_samples: int) -> int:
    if num_samples < frame_samples:
        raise InputTooShortError(f"{num_samples} samples < frame of {frame_samples}")
    return (num_samples - frame_samples) // hop_samples + 1


def frame_signal(x: np.ndarray, frame_samples: int, hop_samples: int) -> np.ndarray:
    """Return a (T, frame_samples) read-only view of complete frames."""
    if hop_samples < 1:
        raise ConfigError("hop_samples must be >= 1")
    if frame_samples < 1:
        raise ConfigError("frame_samples must be >= 1")
    n = num_frames(x.size, frame_samples, hop_samples)
    windows = np.lib.stride_tricks.sliding_window_view(x, frame_samples)
    return windows[: (n - 1) * hop_samples + 1 : hop_samples]


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n - 1).bit_length())


def hann(n: int) -> np.ndarray:
    # periodic Hann, the usual choice for spectral analysis
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(wave: Waveform, frame_samples: int, hop_samples: int, window: str = "hann") -> np.ndarray:
    """Complex STFT of shape (T, fft_size // 2 + 1), fft_size = next pow2 >= frame."""
    if window != "hann":
        raise ConfigError(f"unsupported window {window!r}")
    if wave.samples.size == 0 or wave.samples.size < frame_samples:
        raise InputTooShortError(f"{wave.samples.size} samples < frame of {frame_samples}")
    frames = frame_signal(wave.samples, frame_samples, hop_samples)
    n_fft = next_pow2(frame_samples)
    return np.fft.rfft(frames * hann(frame_samples), n=n_fft, axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int, fmin: float, fmax: float) -> np.ndarray:
    """Triangular HTK-scale filters, shape (n_mels, n_fft // 2 + 1).

    Each filter is normalised to unit sum, so a flat power spectrum maps to
    equal energy in every band.
    """
    if not (0.0 <= fmin < fmax <= sample_rate / 2):
        raise ConfigError(f"bad mel range: need 0 <= fmin < fmax <= {sample_rate / 2}, "
                          f"got fmin={fmin}, fmax={fmax}")
    if n_mels < 1:
        raise ConfigError("bad mel range: n_mels must be >= 1")
    bin_hz = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_hz[None, :] - lo) / (mid - lo)
    falling = (hi - bin_hz[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    sums = fb.sum(axis=1, keepdims=True)
    if np.any(sums == 0):
        empty = int(np.flatnonzero(sums[:, 0] == 0)[0])
        raise ConfigError(f"bad mel range: filter {empty} covers no FFT bin "
                          f"(too many mels for n_fft={n_fft})")
    return fb / sums


def mel_spectrogram(wave: Waveform, n_mels: int = N_MELS, fmin: float = 0.0,
                    fmax: float | None = None, frame_ms: float = FRAME_MS,
                    hop_ms: float = HOP_MS) -> MelSpectrogram:
    sr = wave.sample_rate
    fmax_eff = sr / 2 if fmax is None else float(fmax)
    if not (0.0 <= fmin < fmax_eff <= sr / 2):
        raise ConfigError(f"bad mel range: fmin={fmin}, fmax={fmax_eff}, nyquist={sr / 2}")
    frame = ms_to_samples(frame_ms, sr)
    hop = ms_to_samples(hop_ms, sr)
    spec = stft(wave, frame, hop)
    power = spec.real ** 2 + spec.imag ** 2
    fb = mel_filterbank(sr, next_pow2(frame), n_mels, fmin, fmax_eff)
    energies = power @ fb.T
    logmel = np.log(np.maximum(energies, LOG_FLOOR))
    return MelSpectrogram(logmel, n_mels=n_mels, frame_length_ms=frame_ms, hop_ms=hop_ms,
                          sample_rate=sr, fmin=fmin, fmax=fmax_eff)


def mfcc(mel: MelSpectrogram, n_coeffs: int = 13) -> MfccSequence:
    """Orthonormal DCT-II of each log-mel frame; c0 is kept in column 0."""
    if n_coeffs > mel.n_mels:
        raise ConfigError(f"too many coefficients: {n_coeffs} > n_mels={mel.n_mels}")
    if n_coeffs < 1:
        raise ConfigError("n_coeffs must be >= 1")
    cep = scipy.fft.dct(mel.frames, type=2, norm="ortho", axis=1)[:, :n_coeffs]
    return MfccSequence(np.ascontiguousarray(cep), n_coeffs=n_coeffs, includes_c0=True)


def yin_pitch(wave: Waveform, f_min: float = 60.0, f_max: float = 500.0,
              threshold: float = 0.1, frame_ms: float = FRAME_MS,
              hop_ms: float = HOP_MS) -> PitchTrack:
    """YIN f0 tracker on the shared frame grid.

    Per frame: squared-difference function over an integration window of
    ``frame - tau_max`` samples, cumulative-mean normalisation, first dip
    below ``threshold`` inside the lag band (followed down to its local
    minimum), then parabolic refinement.  Frames with no dip are unvoiced.
    """
    sr = wave.sample_rate
    if wave.samples.size == 0:
        raise InputTooShortError("empty waveform")
    if f_min < 40 or f_max > sr / 4 or f_min >= f_max:
        raise ConfigError(f"pitch band [{f_min}, {f_max}] outside [40, {sr / 4}]")
    if not 0.0 < threshold < 1.0:
        raise ConfigError("threshold must lie in (0, 1)")
    frame = ms_to_samples(frame_ms, sr)
    hop = ms_to_samples(hop_ms, sr)
    tau_min = max(2, int(np.floor(sr / f_max)))
    tau_max = int(np.ceil(sr / f_min))
    width = frame - tau_max
    if width < tau_max // 2 or width < 1:
        raise ConfigError(f"frame of {frame} samples too short for f_min={f_min}")

    frames = frame_signal(wave.samples, frame, hop)
    cmnd = _cmnd(frames, width, tau_max)

    n = frames.shape[0]
    f0 = np.zeros(n)
    band = cmnd[:, tau_min: tau_max + 1]
    below = band < threshold
    has_dip = below.any(axis=1)
    first = np.argmax(below, axis=1) + tau_min
    for t in np.flatnonzero(has_dip):
        row = cmnd[t]
        tau = int(first[t])
        while tau + 1 <= tau_max and row[tau + 1] < row[tau]:
            tau += 1
        f0[t] = sr / _parabolic(row, tau, tau_max)
    f0 = np.where(has_dip, np.clip(f0, f_min, f_max), 0.0)
    return PitchTrack(f0, has_dip, hop_ms=hop_ms, f_min=f_min, f_max=f_max)


def _cmnd(frames: np.ndarray, width: int, tau_max: int) -> np.ndarray:
    """Cumulative mean normalised difference, shape (T, tau_max + 1)."""
    n_frames, frame = frames.shape
    n_fft = next_pow2(frame + width)
    head = frames[:, :width]
    spec_full = np.fft.rfft(frames, n=n_fft, axis=1)
    spec_head = np.fft.rfft(head, n=n_fft, axis=1)
    corr = np.fft.irfft(np.conj(spec_head) * spec_full, n=n_fft, axis=1)[:, : tau_max + 1]

    sq = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(frames * frames, axis=1)], axis=1)
    lags = np.arange(tau_max + 1)
    energy_head = sq[:, width][:, None]
    energy_lag = sq[:, lags + width] - sq[:, lags]
    diff = np.maximum(energy_head + energy_lag - 2.0 * corr, 0.0)
    diff[:, 0] = 0.0

    running = np.cumsum(diff[:, 1:], axis=1)
    out = np.ones_like(diff)
    np.divide(diff[:, 1:] * lags[1:], running, out=out[:, 1:], where=running > 0)
    return out


def _parabolic(row: np.ndarray, tau: int, tau_max: int) -> float:
    if tau <= 1 or tau >= tau_max:
        return float(tau)
    a, b, c = row[tau - 1], row[tau], row[tau + 1]
    denom = a - 2.0 * b + c
    if denom <= 0:
        return float(tau)
    return tau + 0.5 * (a - c) / denom


def read_wav(path, expected_rate: int | None = None) -> Waveform:
    """Read 16-bit PCM mono WAV.  Mismatched rates are rejected, not resampled."""
    path = Path(path)
    with _wavemod.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise ConfigError(f"{path}: expected mono, got {fh.getnchannels()} channels")
        if fh.getsampwidth() != 2:
            raise ConfigError(f"{path}: expected 16-bit PCM, got {8 * fh.getsampwidth()}-bit")
        if fh.getcomptype() != "NONE":
            raise ConfigError(f"{path}: compressed WAV not supported")
        sr = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    if expected_rate is not None and sr != expected_rate:
        raise ConfigError(f"{path}: sample rate {sr} != expected {expected_rate} "
                          "(resampling is not supported)")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return Waveform(pcm / 32768.0, sr)


def write_wav(path, wave: Waveform) -> None:
    pcm = np.clip(np.round(wave.samples * 32768.0), -32768, 32767).astype("<i2")
    with _wavemod.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(wave.sample_rate)
        fh.writeframes(pcm.tobytes())
