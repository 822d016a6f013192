"""Vector-quantisation bottleneck.

Nearest-neighbour lookup, the two embedding losses with their stop-gradient
routing, the straight-through copy across the lookup, and the per-dimension
codebook-update counter used to attribute latent dimensions to prosody.

Dimensions are 1-indexed wherever they are reported to a user (rankings,
``manipulate_latent``); arrays themselves are indexed from 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyCounterError, ShapeError

DEFAULT_K = 256
DEFAULT_D = 16
DEFAULT_BETA = 0.25
COUNTER_MODES = ("mean_then_abs", "abs_then_mean")


@dataclass
class Codebook:
    entries: np.ndarray  # (K, D)

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=np.float64)
        if e.ndim != 2:
            raise ShapeError(f"codebook must be 2-D, got {e.shape}")
        if e.shape[0] < 2 or e.shape[1] < 1:
            raise ShapeError(f"codebook needs K >= 2 and D >= 1, got {e.shape}")
        if not np.all(np.isfinite(e)):
            raise ConfigError("codebook entries must be finite")
        self.entries = e

    @property
    def K(self) -> int:
        return self.entries.shape[0]

    @property
    def D(self) -> int:
        return self.entries.shape[1]

    @classmethod
    def random(cls, K: int = DEFAULT_K, D: int = DEFAULT_D, seed=0) -> "Codebook":
        """Uniform initialisation in [-1/K, 1/K]."""
        rng = np.random.default_rng(seed)
        return cls(rng.uniform(-1.0 / K, 1.0 / K, size=(K, D)))

    def copy(self) -> "Codebook":
        return Codebook(self.entries.copy())


@dataclass
class QuantizeResult:
    z_q: np.ndarray  # (..., D)
    indices: np.ndarray  # (...,)
    z_e: np.ndarray  # (..., D)


@dataclass(frozen=True)
class VqLossTerms:
    codebook_loss: float
    commitment_loss: float
    beta: float


def squared_distances(z: np.ndarray, entries: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Exact ||z_t - e_j||^2 by direct differencing, shape (T, K).

    The expanded form ||z||^2 - 2 z.e + ||e||^2 is avoided because its
    cancellation error can reorder near-ties.
    """
    out = np.empty((z.shape[0], entries.shape[0]))
    for s in range(0, z.shape[0], chunk):
        diff = z[s: s + chunk, None, :] - entries[None, :, :]
        out[s: s + chunk] = np.einsum("tkd,tkd->tk", diff, diff)
    return out


def quantize(z_e: np.ndarray, book: Codebook) -> QuantizeResult:
    """Replace each row (last axis) of ``z_e`` by its L2-nearest code; ties go to the lowest index."""
    z_e = np.asarray(z_e, dtype=np.float64)
    if z_e.ndim < 1 or z_e.shape[-1] != book.D:
        raise ShapeError(f"z_e last axis {z_e.shape[-1:]} != codebook D={book.D}")
    lead = z_e.shape[:-1]
    flat = z_e.reshape(-1, book.D)
    if flat.shape[0] < 1:
        raise ShapeError("z_e has no time steps")
    idx = np.argmin(squared_distances(flat, book.entries), axis=1)
    z_q = book.entries[idx]
    return QuantizeResult(z_q.reshape(z_e.shape), idx.reshape(lead), z_e)


def _weights(shape, mask):
    if mask is None:
        w = np.ones(shape)
    else:
        w = np.asarray(mask, dtype=np.float64)
        if w.shape != shape:
            raise ShapeError(f"mask shape {w.shape} != {shape}")
    total = w.sum()
    if total <= 0:
        raise ShapeError("mask selects no time steps")
    return w / total


def vq_loss(result: QuantizeResult, book: Codebook, beta: float = DEFAULT_BETA,
            mask: np.ndarray | None = None) -> VqLossTerms:
    """Codebook and commitment losses.

    Both are the mean over time steps of ||z_e[t] - e_k(t)||^2; the
    commitment term is scaled by ``beta``.  ``mask`` restricts the mean to
    valid (unpadded) steps.
    """
    if beta <= 0:
        raise ConfigError("beta must be > 0")
    if result.z_e.shape != result.z_q.shape or result.z_e.shape[-1] != book.D:
        raise ShapeError(f"z_e {result.z_e.shape}, z_q {result.z_q.shape}, D={book.D}")
    w = _weights(result.indices.shape, mask)
    diff = result.z_e - book.entries[result.indices]
    mean_sq = float(np.sum(w * np.sum(diff * diff, axis=-1)))
    return VqLossTerms(mean_sq, beta * mean_sq, beta)


def vq_loss_grads(result: QuantizeResult, book: Codebook, beta: float = DEFAULT_BETA,
                  mask: np.ndarray | None = None, scale: float = 1.0):
    """Gradients of the two VQ terms under stop-gradient routing.

    Returns ``(grad_z_e, grad_entries)``: the commitment term contributes
    only to z_e, the codebook term only to the selected codebook rows.
    """
    w = _weights(result.indices.shape, mask)[..., None] * scale
    diff = result.z_e - book.entries[result.indices]
    grad_z_e = 2.0 * beta * w * diff
    grad_entries = np.zeros_like(book.entries)
    np.add.at(grad_entries, result.indices.reshape(-1),
              (-2.0 * w * diff).reshape(-1, book.D))
    return grad_z_e, grad_entries


def straight_through(grad_wrt_z_q: np.ndarray) -> np.ndarray:
    """Adjoint of the lookup under the straight-through rule: an identity copy."""
    return np.array(grad_wrt_z_q, copy=True)


@dataclass
class CodebookCounter:
    """Accumulated |average codebook change| per latent dimension.

    ``mode="mean_then_abs"`` averages the signed change over codes before the
    absolute value; ``"abs_then_mean"`` averages absolute per-entry changes.
    """

    accum: np.ndarray
    steps: int = 0
    mode: str = "mean_then_abs"
    history: list = field(default_factory=list, repr=False)

    @classmethod
    def zeros(cls, D: int, mode: str = "mean_then_abs") -> "CodebookCounter":
        if mode not in COUNTER_MODES:
            raise ConfigError(f"unknown counter mode {mode!r}")
        return cls(np.zeros(D), 0, mode)

    def step_delta(self, before: Codebook, after: Codebook) -> np.ndarray:
        if before.entries.shape != after.entries.shape:
            raise ShapeError(f"codebook shapes {before.entries.shape} vs {after.entries.shape}")
        if before.D != self.accum.size:
            raise ShapeError(f"counter has {self.accum.size} dims, codebook {before.D}")
        delta = after.entries - before.entries
        if self.mode == "mean_then_abs":
            return np.abs(delta.mean(axis=0))
        return np.abs(delta).mean(axis=0)

    def update(self, before: Codebook, after: Codebook, keep_history: bool = False) -> "CodebookCounter":
        d = self.step_delta(before, after)
        self.accum = self.accum + d
        self.steps += 1
        if keep_history:
            self.history.append(d)
        return self


def counter_update(counter: CodebookCounter, book_before: Codebook, book_after: Codebook) -> CodebookCounter:
    """Return a new counter with one more step accumulated; ``counter`` is left untouched."""
    out = CodebookCounter(counter.accum.copy(), counter.steps, counter.mode)
    return out.update(book_before, book_after)


def rank_dimensions(counter: CodebookCounter) -> list[int]:
    """1-indexed dimensions by accumulated value, largest first; ties keep lower index first."""
    if counter.steps < 1:
        raise EmptyCounterError()
    return [int(d) + 1 for d in np.argsort(-counter.accum, kind="stable")]


def manipulate_latent(z_q: np.ndarray, dim: int, value: float, mode: str = "override") -> np.ndarray:
    """Set (``override``) or shift (``offset``) latent dimension ``dim`` (1-indexed) at every step."""
    z_q = np.asarray(z_q, dtype=np.float64)
    D = z_q.shape[-1]
    if not 1 <= dim <= D:
        raise ConfigError(f"bad dimension: {dim} not in 1..{D}")
    out = z_q.copy()
    if mode == "override":
        out[..., dim - 1] = value
    elif mode == "offset":
        out[..., dim - 1] += value
    else:
        raise ConfigError(f"unknown manipulation mode {mode!r}")
    return out
