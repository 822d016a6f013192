"""Objective evaluation: GPE, FFE, MCD and latent/factor correlation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Protocol, Sequence

import numpy as np

from . import dsp
from .errors import MetricError, ShapeError

GPE_TOLERANCE = 0.20
MCD_CONST = 10.0 / math.log(10.0) * math.sqrt(2.0)
MCD_ORDER = 13


@dataclass(frozen=True)
class MetricReport:
    gpe: float
    ffe: float
    mcd_db: float
    frames_compared: int
    mcd_alignment: str = "dtw"


@dataclass(frozen=True)
class FactorCorrelation:
    matrix: np.ndarray  # (D, F) absolute Pearson correlations
    dimension_ranking: list[int]  # 1-indexed, strongest first

    def top_dimension(self, factor: int) -> int:
        """1-indexed latent dimension with the largest |r| for ``factor`` (0-indexed)."""
        return int(np.argmax(self.matrix[:, factor])) + 1


def _check_tracks(ref: dsp.PitchTrack, gen: dsp.PitchTrack):
    if len(ref) != len(gen):
        raise ShapeError(f"pitch tracks differ in length: {len(ref)} vs {len(gen)}")


def _gross_errors(ref, gen, rel_tolerance):
    both = ref.voiced & gen.voiced
    gross = both & (np.abs(gen.f0_hz - ref.f0_hz) > rel_tolerance * ref.f0_hz)
    return both, gross


def gpe(ref: dsp.PitchTrack, gen: dsp.PitchTrack, rel_tolerance: float = GPE_TOLERANCE) -> float:
    """Fraction of co-voiced frames whose f0 deviates by more than ``rel_tolerance`` of ref."""
    _check_tracks(ref, gen)
    both, gross = _gross_errors(ref, gen, rel_tolerance)
    n = int(both.sum())
    if n == 0:
        raise MetricError("undefined GPE: no frames are voiced in both tracks")
    return int(gross.sum()) / n


def ffe(ref: dsp.PitchTrack, gen: dsp.PitchTrack, rel_tolerance: float = GPE_TOLERANCE) -> float:
    """Fraction of all frames with a voicing mismatch or a gross pitch error."""
    _check_tracks(ref, gen)
    if len(ref) == 0:
        raise MetricError("empty input: no frames to compare")
    _, gross = _gross_errors(ref, gen, rel_tolerance)
    errors = (ref.voiced != gen.voiced) | gross
    return int(errors.sum()) / len(ref)


def _cepstra(seq: dsp.MfccSequence) -> np.ndarray:
    # c1..c13; c0 (energy) is excluded by convention
    start = 1 if seq.includes_c0 else 0
    if seq.n_coeffs < start + MCD_ORDER:
        raise ShapeError(f"MCD needs c1..c{MCD_ORDER}; sequence has {seq.n_coeffs} coefficients "
                         f"(includes_c0={seq.includes_c0})")
    return seq.frames[:, start: start + MCD_ORDER]


def frame_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise per-frame MCD in dB, shape (len(a), len(b))."""
    diff = a[:, None, :] - b[None, :, :]
    return MCD_CONST * np.sqrt(np.sum(diff * diff, axis=-1))


def dtw(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Minimum-total-cost monotone alignment with steps (1,1), (1,0), (0,1).

    Returns the total cost and the path from (0, 0) to (n-1, m-1).  Ties
    prefer the diagonal step, then advancing the first sequence.
    """
    n, m = cost.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for i in range(1, n + 1):
        row = cost[i - 1]
        prev = acc[i - 1]
        cur = acc[i]
        for j in range(1, m + 1):
            cur[j] = row[j - 1] + min(prev[j - 1], prev[j], cur[j - 1])
    path = []
    i, j = n, m
    while i > 0 and j > 0:
        path.append((i - 1, j - 1))
        options = (acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
        k = int(np.argmin(options))
        if k == 0:
            i, j = i - 1, j - 1
        elif k == 1:
            i -= 1
        else:
            j -= 1
    path.reverse()
    return float(acc[n, m]), path


def mcd(ref: dsp.MfccSequence, gen: dsp.MfccSequence, use_dtw: bool = True) -> float:
    """Mean mel-cepstral distortion in dB over aligned frame pairs (c1..c13)."""
    if ref.num_frames == 0 or gen.num_frames == 0:
        raise MetricError("empty input: MCD needs non-empty sequences")
    a, b = _cepstra(ref), _cepstra(gen)
    if use_dtw:
        total, path = dtw(frame_distances(a, b))
        return total / len(path)
    n = min(len(a), len(b))
    diff = a[:n] - b[:n]
    return float(np.mean(MCD_CONST * np.sqrt(np.sum(diff * diff, axis=1))))


def factor_correlation(latents: np.ndarray, factors: np.ndarray) -> FactorCorrelation:
    latents = np.asarray(latents, dtype=np.float64)
    factors = np.asarray(factors, dtype=np.float64)
    if latents.ndim != 2 or factors.ndim != 2 or latents.shape[0] != factors.shape[0]:
        raise ShapeError(f"latents {latents.shape} vs factors {factors.shape}")
    if latents.shape[0] < 3:
        raise MetricError("factor correlation needs at least 3 observations")
    fc = factors - factors.mean(axis=0)
    fnorm = np.sqrt(np.sum(fc * fc, axis=0))
    if np.any(fnorm == 0):
        raise MetricError(f"degenerate factor: column {int(np.flatnonzero(fnorm == 0)[0])} is constant")
    lc = latents - latents.mean(axis=0)
    lnorm = np.sqrt(np.sum(lc * lc, axis=0))
    corr = (lc.T @ fc) / np.outer(np.where(lnorm > 0, lnorm, 1.0), fnorm)
    # a constant latent dimension carries no information about any factor
    corr[lnorm == 0, :] = 0.0
    corr = np.clip(np.abs(corr), 0.0, 1.0)
    ranking = np.argsort(-corr.max(axis=1), kind="stable") + 1
    return FactorCorrelation(corr, [int(d) for d in ranking])


class QualityScorer(Protocol):
    """Stand-in for a learned naturalness predictor; returns None when unavailable."""

    def score(self, wave: dsp.Waveform) -> float | None: ...


class NullQualityScorer:
    def score(self, wave: dsp.Waveform) -> float | None:
        return None


def evaluate_pair(ref: dsp.Waveform, gen: dsp.Waveform, use_dtw: bool = True,
                  rel_tolerance: float = GPE_TOLERANCE) -> MetricReport:
    """GPE/FFE on pitch tracks truncated to common length, plus MCD."""
    ref_track, gen_track = dsp.yin_pitch(ref), dsp.yin_pitch(gen)
    n = min(len(ref_track), len(gen_track))
    ref_track = dsp.PitchTrack(ref_track.f0_hz[:n], ref_track.voiced[:n], ref_track.hop_ms)
    gen_track = dsp.PitchTrack(gen_track.f0_hz[:n], gen_track.voiced[:n], gen_track.hop_ms)
    ref_c = dsp.mfcc(dsp.mel_spectrogram(ref), MCD_ORDER + 1)
    gen_c = dsp.mfcc(dsp.mel_spectrogram(gen), MCD_ORDER + 1)
    try:
        g = gpe(ref_track, gen_track, rel_tolerance)
    except MetricError:
        g = float("nan")
    return MetricReport(gpe=g, ffe=ffe(ref_track, gen_track, rel_tolerance),
                        mcd_db=mcd(ref_c, gen_c, use_dtw), frames_compared=n,
                        mcd_alignment="dtw" if use_dtw else "index")


REPORT_FIELDS = ("id", "gpe", "ffe", "mcd_db", "frames_compared")


def write_report(rows: Sequence[tuple[str, MetricReport]], tsv_path, summary_path) -> dict:
    """Write one TSV row per pair (sorted by id) and a JSON mean/median summary."""
    rows = sorted(rows, key=lambda r: r[0])
    with open(tsv_path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for uid, rep in rows:
            w.writerow([uid, f"{rep.gpe:.6f}", f"{rep.ffe:.6f}", f"{rep.mcd_db:.6f}", rep.frames_compared])
    summary = {"n_pairs": len(rows),
               "mcd_alignment": rows[0][1].mcd_alignment if rows else None}
    for name in ("gpe", "ffe", "mcd_db"):
        vals = np.array([getattr(rep, name) for _, rep in rows], dtype=np.float64)
        vals = vals[np.isfinite(vals)]
        summary[name] = {"mean": float(vals.mean()) if vals.size else None,
                         "median": float(np.median(vals)) if vals.size else None}
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def report_dict(rep: MetricReport) -> dict:
    return asdict(rep)
