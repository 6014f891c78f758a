"""Electrical simulation of the mat.

Models the scan the multiplexers perform: one row electrode is driven at
v_in, one column at a time is tied to ground through the fixed divider
resistor and sampled, and every other electrode is left floating (or
grounded / isolated, depending on the isolation mode). The recorded channel
voltage is the drop across the scanned cell, which for a perfectly isolated
cell is the plain divider value v_in * R / (R + r_fixed). Crosstalk through
unisolated neighbour cells adds parasitic conductance from the drive rail
into the measuring column, which can only pull the recorded voltage down,
i.e. inflate the apparent force.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .core import ForceMap, MatGeometry, RawFrame, VelostatModel


class SolverError(RuntimeError):
    """Linear solve failed or the diode iteration did not converge."""

    def __init__(self, message: str, last_iterate: np.ndarray | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate


class InvalidReadingError(ValueError):
    """A channel voltage outside the physically possible [0, v_in] range."""


class IsolationMode(str, Enum):
    FLOATING = "floating"
    GROUNDED_ROWS = "grounded_rows"
    DIODE = "diode"
    VIRTUAL_GROUND = "virtual_ground"


def force_to_resistance(f: float | np.ndarray, model: VelostatModel):
    """Velostat cell resistance for an applied force, clamped to the
    device's [r_min, r_max] range. Zero force reads the no-load ceiling."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("force must be non-negative")
    with np.errstate(divide="ignore"):
        r = np.where(f > 0, model.rho_k / np.maximum(f, 1e-300), model.r_max)
    r = np.clip(r, model.r_min, model.r_max)
    return float(r) if r.ndim == 0 else r


def ideal_divider_voltage(r_fsr: float | np.ndarray, geometry: MatGeometry):
    """Divider output across the cell: v_in * R / (R_fixed + R)."""
    r = np.asarray(r_fsr, dtype=float)
    if np.any(r < 0):
        raise ValueError("resistance must be non-negative")
    v = geometry.v_in * r / (geometry.r_fixed + r)
    return float(v) if v.ndim == 0 else v


def saturation_voltage(geometry: MatGeometry, model: VelostatModel) -> float:
    """Divider voltage at the r_min saturation floor; readings at or below
    this map to the model's maximum resolvable force."""
    return ideal_divider_voltage(model.r_min, geometry)


def voltage_to_force(v_out: float, geometry: MatGeometry, model: VelostatModel) -> float:
    """Invert the divider chain back to newtons.

    Readings at or above the r_max no-load voltage return 0 (clamp-aware);
    readings at or below the r_min saturation voltage (including 0 V) return
    the model's maximum resolvable force rather than raising.
    """
    if v_out > geometry.v_in:
        raise InvalidReadingError(
            f"reading {v_out} V exceeds drive voltage {geometry.v_in} V"
        )
    if v_out <= saturation_voltage(geometry, model):
        return model.f_max
    if v_out == geometry.v_in:
        return 0.0
    r = geometry.r_fixed * v_out / (geometry.v_in - v_out)
    if r >= model.r_max:
        return 0.0
    return model.rho_k / r


def is_saturated_voltage(v_out: float, geometry: MatGeometry, model: VelostatModel) -> bool:
    return v_out <= saturation_voltage(geometry, model)


# ---------------------------------------------------------------------------
# Scenes


@dataclass(frozen=True)
class Load:
    """One pressed shape: `total_force` newtons spread uniformly over the
    cells covered by an ellipse or rectangle footprint.

    Optional sinusoidal modulation (amp newtons at freq_hz) makes the load
    time-varying for scripted scenarios such as breathing.
    """

    shape: str  # "ellipse" | "rect"
    center: tuple[float, float]  # (row, col), cell coordinates
    extents: tuple[float, float]  # half-axes in cells
    total_force: float
    mod_amp: float = 0.0
    mod_freq_hz: float = 0.0
    mod_phase: float = 0.0

    def __post_init__(self) -> None:
        if self.shape not in ("ellipse", "rect"):
            raise ValueError(f"unknown load shape {self.shape!r}")
        if self.total_force < 0:
            raise ValueError("total_force must be non-negative")
        if self.extents[0] < 0 or self.extents[1] < 0:
            raise ValueError("extents must be non-negative")

    def force_at(self, t_s: float) -> float:
        if self.mod_amp == 0.0:
            return self.total_force
        return max(
            0.0,
            self.total_force
            + self.mod_amp * math.sin(2 * math.pi * self.mod_freq_hz * t_s + self.mod_phase),
        )


@dataclass(frozen=True)
class Scene:
    geometry: MatGeometry
    loads: tuple[Load, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "loads", tuple(self.loads))
        for load in self.loads:
            cr, cc = load.center
            er, ec = load.extents
            if not (0 <= cr - er and cr + er <= self.geometry.rows - 1 + 1e-9):
                raise ValueError(f"load {load} exceeds the grid rows")
            if not (0 <= cc - ec and cc + ec <= self.geometry.cols - 1 + 1e-9):
                raise ValueError(f"load {load} exceeds the grid cols")


def _footprint_mask(load: Load, geometry: MatGeometry) -> np.ndarray:
    rr, cc = np.meshgrid(
        np.arange(geometry.rows, dtype=float),
        np.arange(geometry.cols, dtype=float),
        indexing="ij",
    )
    cr, ccol = load.center
    er, ec = max(load.extents[0], 1e-9), max(load.extents[1], 1e-9)
    if load.shape == "ellipse":
        mask = ((rr - cr) / er) ** 2 + ((cc - ccol) / ec) ** 2 <= 1.0 + 1e-12
    else:
        mask = (np.abs(rr - cr) <= er + 1e-12) & (np.abs(cc - ccol) <= ec + 1e-12)
    if not mask.any():
        # degenerate footprint: the load lands on its nearest cell
        mask[int(round(cr)), int(round(ccol))] = True
    return mask


def rasterize_scene(scene: Scene, t_s: float = 0.0) -> ForceMap:
    """Rasterize scene loads into a per-cell force grid; each load's force
    at time t is split uniformly over the cells its footprint covers."""
    forces = np.zeros((scene.geometry.rows, scene.geometry.cols))
    for load in scene.loads:
        mask = _footprint_mask(load, scene.geometry)
        forces[mask] += load.force_at(t_s) / mask.sum()
    return ForceMap(scene.geometry, forces)


def parse_scene(text: str, geometry: MatGeometry) -> Scene:
    """Parse a plain-text scene file.

    Grammar, one load per line ('#' comments allowed):
        ellipse <crow> <ccol> <erow> <ecol> <force_N> [sin:<amp_N>:<freq_hz>[:<phase_rad>]]
        rect    <crow> <ccol> <erow> <ecol> <force_N> [sin:<amp_N>:<freq_hz>[:<phase_rad>]]
    """
    loads = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (6, 7):
            raise ValueError(f"scene line {lineno}: expected 6 or 7 fields, got {raw!r}")
        shape = parts[0]
        try:
            cr, cc, er, ec, force = (float(x) for x in parts[1:6])
        except ValueError as exc:
            raise ValueError(f"scene line {lineno}: bad number in {raw!r}") from exc
        amp = freq = phase = 0.0
        if len(parts) == 7:
            mod = parts[6].split(":")
            if mod[0] != "sin" or len(mod) not in (3, 4):
                raise ValueError(f"scene line {lineno}: bad modulation {parts[6]!r}")
            amp, freq = float(mod[1]), float(mod[2])
            phase = float(mod[3]) if len(mod) == 4 else 0.0
        loads.append(Load(shape, (cr, cc), (er, ec), force, amp, freq, phase))
    return Scene(geometry, loads)


def load_scene(path: str | Path, geometry: MatGeometry) -> Scene:
    return parse_scene(Path(path).read_text(), geometry)


# ---------------------------------------------------------------------------
# Nodal analysis


def build_network(
    r_grid: np.ndarray,
    geometry: MatGeometry,
    mode: IsolationMode,
    driven_row: int,
    measured_col: int,
    closed: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Assemble the node-conductance system for one scan step.

    Nodes are column buses 0..cols-1, followed (floating/diode modes) by the
    non-driven row buses. The driven row is eliminated at v_in, ground at 0;
    only the measured column carries the r_fixed tie to ground. `closed`
    masks cells whose series diode is conducting. Returns (A, b, n_cols).
    """
    rows, cols = r_grid.shape
    if not 0 <= driven_row < rows:
        raise ValueError(f"driven_row {driven_row} out of range")
    if not 0 <= measured_col < cols:
        raise ValueError(f"measured_col {measured_col} out of range")
    if closed is None:
        closed = np.ones_like(r_grid, dtype=bool)

    float_rows = mode in (IsolationMode.FLOATING, IsolationMode.DIODE)
    other_rows = [i for i in range(rows) if i != driven_row]
    n = cols + (len(other_rows) if float_rows else 0)
    row_node = {i: cols + k for k, i in enumerate(other_rows)} if float_rows else {}

    a = np.zeros((n, n))
    b = np.zeros(n)
    g_grid = 1.0 / r_grid
    for i in range(rows):
        for j in range(cols):
            if not closed[i, j]:
                continue
            g = g_grid[i, j]
            if i == driven_row:
                a[j, j] += g
                b[j] += g * geometry.v_in
            elif mode == IsolationMode.GROUNDED_ROWS:
                a[j, j] += g
            else:
                r = row_node[i]
                a[j, j] += g
                a[r, r] += g
                a[j, r] -= g
                a[r, j] -= g
    a[measured_col, measured_col] += 1.0 / geometry.r_fixed
    return a, b, cols


def solve_readout(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve the nodal system for the node voltages."""
    if a.shape[0] != a.shape[1] or a.shape[0] != b.shape[0]:
        raise SolverError(f"dimension mismatch: A {a.shape}, b {b.shape}")
    a = a.copy()
    # Nodes fully disconnected by open diodes get a harmless 0 V pin.
    dead = np.abs(np.diag(a)) < 1e-300
    if dead.any():
        idx = np.where(dead)[0]
        a[idx, idx] = 1.0
    try:
        v = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular nodal system: {exc}") from exc
    residual = np.abs(a @ v - b).max()
    if residual > 1e-8:
        raise SolverError(f"solver residual {residual:.3e} too large")
    return v


def _diode_solve(
    r_grid: np.ndarray,
    geometry: MatGeometry,
    driven_row: int,
    measured_col: int,
    max_iter: int = 100,
) -> np.ndarray:
    """Ideal-diode complementarity solve on the floating network: open every
    branch whose current would flow column-to-row, re-solve to fixpoint."""
    rows, cols = r_grid.shape
    closed = np.ones_like(r_grid, dtype=bool)
    g_grid = 1.0 / r_grid
    i_tol = 1e-12 * geometry.v_in / geometry.r_fixed
    v = None
    for _ in range(max_iter):
        a, b, _ = build_network(
            r_grid, geometry, IsolationMode.DIODE, driven_row, measured_col, closed
        )
        v = solve_readout(a, b)

        def node_v(i: int) -> float:
            if i == driven_row:
                return geometry.v_in
            k = [x for x in range(rows) if x != driven_row].index(i)
            return v[cols + k]

        changed = False
        for i in range(rows):
            vr = node_v(i)
            for j in range(cols):
                bias = vr - v[j]  # forward = row -> column
                if closed[i, j] and g_grid[i, j] * bias < -i_tol:
                    closed[i, j] = False
                    changed = True
                elif not closed[i, j] and bias > i_tol * r_grid[i, j]:
                    closed[i, j] = True
                    changed = True
        if not changed:
            return v
    raise SolverError("diode complementarity did not converge", last_iterate=v)


def readout_voltages(
    force_map: ForceMap, model: VelostatModel, mode: IsolationMode
) -> np.ndarray:
    """Scan the whole mat: per-cell recorded voltage (drop across the
    scanned cell) for the given isolation mode."""
    geometry = force_map.geometry
    r_grid = force_to_resistance(force_map.forces, model)
    r_grid = np.atleast_2d(r_grid)
    if mode == IsolationMode.VIRTUAL_GROUND:
        return ideal_divider_voltage(r_grid, geometry)
    rows, cols = r_grid.shape
    out = np.empty((rows, cols))
    for i in range(rows):
        for j in range(cols):
            if mode == IsolationMode.DIODE:
                v = _diode_solve(r_grid, geometry, i, j)
            else:
                a, b, _ = build_network(r_grid, geometry, mode, i, j)
                v = solve_readout(a, b)
            out[i, j] = geometry.v_in - v[j]
    return out


def quantize(voltages: np.ndarray, geometry: MatGeometry) -> np.ndarray:
    """ADC quantization: counts = round(v / v_in * (2^bits - 1)), clamped."""
    counts = np.rint(np.clip(voltages, 0.0, geometry.v_in) / geometry.v_in * geometry.adc_max)
    return counts.astype(np.uint16)


def scan_frame(
    scene: Scene,
    model: VelostatModel,
    mode: IsolationMode,
    sequence: int,
    timestamp_ms: int,
    t_s: float | None = None,
    rng: np.random.Generator | None = None,
    noise_sigma_v: float = 0.0,
) -> RawFrame:
    """Rasterize the scene at time t, solve the network once per scanned
    cell, add optional Gaussian readout noise, and quantize to ADC counts."""
    if t_s is None:
        t_s = timestamp_ms / 1000.0
    force_map = rasterize_scene(scene, t_s)
    volts = readout_voltages(force_map, model, mode)
    if rng is not None and noise_sigma_v > 0:
        volts = volts + rng.normal(0.0, noise_sigma_v, volts.shape)
    return RawFrame(sequence, timestamp_ms, quantize(volts, scene.geometry))
