"""Deterministic SVG output: counter bar chart and spectrogram panels.

Coordinates are written with fixed precision so identical inputs always
produce byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np


def _f(x: float) -> str:
    return f"{x:.2f}"


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{_f(width)}" height="{_f(height)}" '
            f'viewBox="0 0 {_f(width)} {_f(height)}">')
    return "\n".join([head, *body, "</svg>"]) + "\n"


def counter_bar_chart(accum: np.ndarray, title: str = "codebook counter") -> str:
    """Bars of accumulated counter value per 1-indexed latent dimension."""
    accum = np.asarray(accum, dtype=np.float64)
    D = accum.size
    bar, gap, left, bottom, top, plot_h = 24.0, 8.0, 60.0, 40.0, 30.0, 200.0
    width = left + D * (bar + gap) + gap
    height = top + plot_h + bottom
    peak = accum.max() if D and accum.max() > 0 else 1.0
    body = [f'<text x="{_f(width / 2)}" y="18.00" text-anchor="middle" font-size="14">{escape(title)}</text>',
            f'<line x1="{_f(left)}" y1="{_f(top + plot_h)}" x2="{_f(width)}" y2="{_f(top + plot_h)}" stroke="black"/>',
            f'<text x="{_f(left - 6)}" y="{_f(top + 4)}" text-anchor="end" font-size="10">{peak:.4g}</text>',
            f'<text x="{_f(left - 6)}" y="{_f(top + plot_h)}" text-anchor="end" font-size="10">0</text>']
    for d, v in enumerate(accum):
        h = plot_h * v / peak
        x = left + gap + d * (bar + gap)
        body.append(f'<rect x="{_f(x)}" y="{_f(top + plot_h - h)}" width="{_f(bar)}" height="{_f(h)}" '
                    f'fill="#4a78b5"><title>dim {d + 1}: {v:.6g}</title></rect>')
        body.append(f'<text x="{_f(x + bar / 2)}" y="{_f(top + plot_h + 16)}" text-anchor="middle" '
                    f'font-size="10">{d + 1}</text>')
    return _svg(width, height, body)


def _gray(v: float) -> str:
    g = int(round(255 * (1.0 - v)))
    return f"#{g:02x}{g:02x}{g:02x}"


def _panel(mel: np.ndarray, x0: float, y0: float, cell: float, lo: float, hi: float) -> list[str]:
    T, M = mel.shape
    scaled = np.clip((mel - lo) / (hi - lo if hi > lo else 1.0), 0.0, 1.0)
    out = []
    for t in range(T):
        for m in range(M):
            y = y0 + (M - 1 - m) * cell  # low frequencies at the bottom
            out.append(f'<rect x="{_f(x0 + t * cell)}" y="{_f(y)}" width="{_f(cell)}" '
                       f'height="{_f(cell)}" fill="{_gray(scaled[t, m])}"/>')
    return out


def spectrogram_grid(mels: list[np.ndarray], labels: list[str], cell: float = 3.0,
                     title: str = "") -> str:
    """Panels side by side on a shared colour scale, one label under each."""
    if len(mels) != len(labels):
        raise ValueError("one label per panel")
    lo = min(float(m.min()) for m in mels)
    hi = max(float(m.max()) for m in mels)
    pad, top = 12.0, 28.0
    widths = [m.shape[0] * cell for m in mels]
    height = top + max(m.shape[1] for m in mels) * cell + 30.0
    width = pad + sum(w + pad for w in widths)
    body = [f'<text x="{_f(width / 2)}" y="18.00" text-anchor="middle" font-size="14">{escape(title)}</text>']
    x = pad
    for mel, label, w in zip(mels, labels, widths):
        body.extend(_panel(mel, x, top, cell, lo, hi))
        body.append(f'<text x="{_f(x + w / 2)}" y="{_f(height - 10)}" text-anchor="middle" '
                    f'font-size="11">{escape(label)}</text>')
        x += w + pad
    return _svg(width, height, body)


def write_svg(text: str, path) -> Path:
    path = Path(path)
    path.write_text(text)
    return path
