"""Figure rendering for the report path.

PPM heatmaps (dsp.render_ppm) are the dependency-free contract output; the
functions here add matplotlib renderings alongside the delimited report for
human consumption: per-frame heatmap PNGs, the breathing spectrum, and the
posture timeline.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analytics import PostureClass, RespirationResult
from .dsp import image_to_rgb
from .core import PressureImage
from .pipeline import FrameRecord


def render_frame_png(image: PressureImage, path: str | Path, title: str = "") -> None:
    fig, (ax_p, ax_z) = plt.subplots(1, 2, figsize=(9, 4))
    im = ax_p.imshow(image.pressures, cmap="inferno", origin="upper")
    ax_p.set_title("pressure [kPa]")
    fig.colorbar(im, ax=ax_p, fraction=0.046)
    ax_z.imshow(image_to_rgb(image), origin="upper")
    ax_z.set_title("zones")
    for ax in (ax_p, ax_z):
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_respiration_png(
    series: np.ndarray,
    rate_hz: float,
    band: tuple[float, float],
    result: RespirationResult | None,
    path: str | Path,
) -> None:
    series = np.asarray(series, dtype=float)
    fig, (ax_t, ax_f) = plt.subplots(2, 1, figsize=(9, 6))
    t = np.arange(series.size) / rate_hz
    ax_t.plot(t, series, lw=0.8)
    ax_t.set_xlabel("time [s]")
    ax_t.set_ylabel("conductance sum [S]")
    ax_t.set_title("breathing channel")

    if series.size > 1:
        x = series - series.mean()
        mag = np.abs(np.fft.rfft(x * np.hanning(series.size)))
        freqs = np.fft.rfftfreq(series.size, d=1.0 / rate_hz)
        ax_f.plot(freqs * 60.0, mag, lw=0.8)
        ax_f.axvspan(band[0] * 60, band[1] * 60, color="tab:green", alpha=0.15,
                     label="search band")
        if result is not None and not result.no_signal:
            ax_f.axvline(result.bpm, color="tab:red", ls="--",
                         label=f"{result.bpm:.1f} bpm (conf {result.confidence:.2f})")
        ax_f.legend(loc="upper right")
    ax_f.set_xlabel("breaths per minute")
    ax_f.set_ylabel("magnitude")
    ax_f.set_xlim(0, band[1] * 60 * 2)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_posture_timeline_png(records: list[FrameRecord], path: str | Path) -> None:
    fig, (ax_c, ax_l) = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
    t = np.array([r.timestamp_ms for r in records]) / 1000.0
    order = [c.label for c in PostureClass]
    idx = np.array([order.index(r.posture) for r in records])
    ax_c.step(t, idx, where="post")
    ax_c.set_yticks(range(len(order)), order)
    ax_c.set_ylabel("posture")
    ax_l.plot(t, [r.total_load_n for r in records], lw=0.8)
    ax_l.set_ylabel("total load [N]")
    ax_l.set_xlabel("time [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
