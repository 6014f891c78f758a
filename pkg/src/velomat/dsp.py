"""Reconstruction pipeline: calibration / DC removal, median filtering,
count-to-pressure inversion, bilinear upsampling and zone labeling.

Pipeline order in `reconstruct` is median filter (count space) -> pressure
conversion -> bilinear upsample -> zone labels. Filtering before the 1/v
inversion keeps impulse noise from being amplified by the nonlinearity.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    MatGeometry,
    PressureImage,
    RawFrame,
    VelostatModel,
    ZONE_BLUE,
    ZONE_GREEN,
    ZONE_RED,
)
from .simkit import ideal_divider_voltage, saturation_voltage


@dataclass(frozen=True)
class Calibration:
    """Per-cell no-load baseline counts, averaged over k idle frames."""

    baseline: np.ndarray
    k: int

    def __post_init__(self) -> None:
        b = np.asarray(self.baseline, dtype=float)
        if b.ndim != 2:
            raise ValueError("baseline must be a 2-D grid")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        b = np.ascontiguousarray(b)
        b.setflags(write=False)
        object.__setattr__(self, "baseline", b)


def calibrate(idle_frames: list[RawFrame]) -> Calibration:
    """Per-cell arithmetic mean of a run of no-load frames."""
    if not idle_frames:
        raise ValueError("need at least one idle frame")
    shape = idle_frames[0].counts.shape
    for f in idle_frames[1:]:
        if f.counts.shape != shape:
            raise ValueError(f"mixed frame dimensions: {shape} vs {f.counts.shape}")
    stack = np.stack([f.counts.astype(float) for f in idle_frames])
    return Calibration(stack.mean(axis=0), len(idle_frames))


def dc_remove(frame: RawFrame, cal: Calibration) -> np.ndarray:
    """Signed per-cell deviation from the no-load baseline. Loaded cells
    deviate negative since load lowers the divider voltage."""
    if frame.counts.shape != cal.baseline.shape:
        raise ValueError(
            f"frame {frame.counts.shape} does not match baseline {cal.baseline.shape}"
        )
    return frame.counts.astype(float) - cal.baseline


def median_filter(grid: np.ndarray, window: int = 3) -> np.ndarray:
    """Square median filter with edge-replication padding; output dimensions
    match the input."""
    grid = np.asarray(grid)
    if window % 2 == 0 or window < 3:
        raise ValueError(f"window must be an odd integer >= 3, got {window}")
    if window > min(grid.shape):
        raise ValueError(f"window {window} exceeds grid {grid.shape}")
    half = window // 2
    padded = np.pad(grid, half, mode="edge")
    rows, cols = grid.shape
    windows = np.stack(
        [
            padded[di : di + rows, dj : dj + cols]
            for di in range(window)
            for dj in range(window)
        ]
    )
    return np.median(windows, axis=0).astype(grid.dtype if grid.dtype.kind == "f" else float)


def bilinear_upsample(grid: np.ndarray, factor: int) -> np.ndarray:
    """Bilinear interpolation to ((rows-1)*factor+1) x ((cols-1)*factor+1);
    original samples are preserved exactly at stride `factor`."""
    grid = np.asarray(grid, dtype=float)
    if factor < 2:
        raise ValueError(f"factor must be >= 2, got {factor}")
    rows, cols = grid.shape
    if rows < 2 or cols < 2:
        raise ValueError("need at least a 2x2 grid to interpolate")

    def axis_coords(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = np.arange((n - 1) * factor + 1) / factor
        i0 = np.minimum(pos.astype(int), n - 2)
        frac = pos - i0
        return i0, i0 + 1, frac

    r0, r1, fr = axis_coords(rows)
    c0, c1, fc = axis_coords(cols)
    fr = fr[:, None]
    fc = fc[None, :]
    out = (
        grid[np.ix_(r0, c0)] * (1 - fr) * (1 - fc)
        + grid[np.ix_(r1, c0)] * fr * (1 - fc)
        + grid[np.ix_(r0, c1)] * (1 - fr) * fc
        + grid[np.ix_(r1, c1)] * fr * fc
    )
    # exact sample preservation, immune to float round-off
    out[::factor, ::factor] = grid
    return out


@dataclass(frozen=True)
class ZoneThresholds:
    """Red below 1000 ohms equivalent cell resistance (strict); blue below
    `blue_fraction` of the red-threshold force; green in between."""

    red_resistance_ohm: float = 1000.0
    blue_fraction: float = 0.05

    def red_force(self, model: VelostatModel) -> float:
        return model.rho_k / self.red_resistance_ohm

    def blue_force(self, model: VelostatModel) -> float:
        return self.blue_fraction * self.red_force(model)


DEFAULT_ZONES = ZoneThresholds()


def counts_to_force(
    frame_counts: np.ndarray,
    geometry: MatGeometry,
    model: VelostatModel,
    cal: Calibration | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Invert counts to per-cell newtons; returns (forces, saturated mask).

    DC removal is folded in by re-referencing each cell's voltage so its
    calibration baseline maps to the ideal no-load voltage, which avoids
    negative-voltage artifacts from subtracting counts first.
    """
    counts = np.asarray(frame_counts, dtype=float)
    volts = counts / geometry.adc_max * geometry.v_in
    if cal is not None:
        if cal.baseline.shape != counts.shape:
            raise ValueError("calibration baseline does not match frame dimensions")
        v_noload = ideal_divider_voltage(model.r_max, geometry)
        baseline_v = cal.baseline / geometry.adc_max * geometry.v_in
        volts = volts + (v_noload - baseline_v)
    volts = np.clip(volts, 0.0, geometry.v_in)
    v_sat = saturation_voltage(geometry, model)
    saturated = volts <= v_sat
    safe_v = np.clip(volts, v_sat, geometry.v_in * (1 - 1e-12))
    r = geometry.r_fixed * safe_v / (geometry.v_in - safe_v)
    # the >= clamp needs a relative tolerance: a count that corresponds to
    # exactly r_max can reconstruct a hair below it in floating point
    forces = np.where(r >= model.r_max * (1.0 - 1e-9), 0.0, model.rho_k / r)
    forces = np.where(saturated, model.f_max, forces)
    return forces, saturated


def counts_to_pressure(
    frame: RawFrame,
    geometry: MatGeometry,
    model: VelostatModel,
    cal: Calibration | None = None,
    thresholds: ZoneThresholds = DEFAULT_ZONES,
) -> PressureImage:
    """Per-cell pressure in kPa straight from a raw frame (no filtering or
    upsampling); saturated cells are flagged and held at the model ceiling."""
    forces, saturated = counts_to_force(frame.counts, geometry, model, cal)
    pressures = force_to_pressure_kpa(forces, geometry)
    zones = label_zone_grid(forces, model, thresholds)
    return PressureImage(geometry, pressures, zones, saturated)


def force_to_pressure_kpa(forces: np.ndarray, geometry: MatGeometry) -> np.ndarray:
    return np.asarray(forces, dtype=float) / geometry.cell_area_m2 / 1000.0


def pressure_kpa_to_force(pressures: np.ndarray, geometry: MatGeometry) -> np.ndarray:
    return np.asarray(pressures, dtype=float) * geometry.cell_area_m2 * 1000.0


def label_zone_grid(
    forces: np.ndarray,
    model: VelostatModel,
    thresholds: ZoneThresholds = DEFAULT_ZONES,
) -> np.ndarray:
    """Blue/green/red labels from per-cell force equivalents. Red requires
    equivalent resistance strictly below the threshold, so a cell exactly at
    1000 ohms stays green."""
    forces = np.asarray(forces, dtype=float)
    zones = np.full(forces.shape, ZONE_GREEN, dtype=np.uint8)
    zones[forces > thresholds.red_force(model)] = ZONE_RED
    zones[forces < thresholds.blue_force(model)] = ZONE_BLUE
    return zones


def label_zones(
    image: PressureImage,
    model: VelostatModel,
    thresholds: ZoneThresholds = DEFAULT_ZONES,
) -> np.ndarray:
    forces = pressure_kpa_to_force(image.pressures, image.geometry)
    return label_zone_grid(forces, model, thresholds)


@dataclass(frozen=True)
class ReconstructOptions:
    median_window: int | None = 3
    upsample_factor: int | None = None
    thresholds: ZoneThresholds = DEFAULT_ZONES


def reconstruct(
    frame: RawFrame,
    cal: Calibration | None,
    geometry: MatGeometry,
    model: VelostatModel,
    options: ReconstructOptions = ReconstructOptions(),
) -> PressureImage:
    """Full denoising pipeline for one frame."""
    counts = frame.counts.astype(float)
    if options.median_window is not None:
        counts = median_filter(counts, options.median_window)
    forces, saturated = counts_to_force(counts, geometry, model, cal)
    pressures = force_to_pressure_kpa(forces, geometry)
    if options.upsample_factor is not None:
        pressures = bilinear_upsample(pressures, options.upsample_factor)
        forces = pressure_kpa_to_force(pressures, geometry)
        sat_force = model.f_max * (1 - 1e-9)
        saturated = forces >= sat_force
    zones = label_zone_grid(forces, model, options.thresholds)
    return PressureImage(geometry, pressures, zones, saturated)


# ---------------------------------------------------------------------------
# Rendering / export

_ZONE_RGB = {
    ZONE_BLUE: (40, 60, 255),
    ZONE_GREEN: (40, 200, 60),
    ZONE_RED: (255, 40, 30),
}


def image_to_rgb(image: PressureImage) -> np.ndarray:
    """Zone-colored heatmap: base zone color modulated by relative pressure."""
    p = image.pressures
    scale = p.max() if p.max() > 0 else 1.0
    intensity = 0.35 + 0.65 * (p / scale)
    rgb = np.zeros(p.shape + (3,), dtype=float)
    for zone, color in _ZONE_RGB.items():
        mask = image.zone_labels == zone
        for ch in range(3):
            rgb[..., ch][mask] = color[ch]
    return np.clip(rgb * intensity[..., None], 0, 255).astype(np.uint8)


def render_ppm(image: PressureImage, path: str | Path) -> None:
    """Write a binary PPM (P6) heatmap of the reconstructed image."""
    rgb = image_to_rgb(image)
    rows, cols = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def export_csv(image: PressureImage, path: str | Path) -> None:
    """Pressure grid in kPa as plain CSV, one row per mat row."""
    np.savetxt(path, image.pressures, fmt="%.6g", delimiter=",")
