"""Shared geometry, unit and frame types used by every other module.

Unit conventions (locked):
- force: newtons (N)
- resistance: ohms
- voltage: volts
- length: millimeters for pitch, cm^2 for contact areas
- pressure: kilopascals internally; kgf/cm^2 and psi supported for I/O
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Pressure conversion constants, anchored on kgf/cm^2.
KGF_CM2_TO_PSI = 14.2233
KGF_CM2_TO_KPA = 98.0665

_PRESSURE_UNITS = {
    "kgf/cm2": 1.0,
    "psi": KGF_CM2_TO_PSI,
    "kpa": KGF_CM2_TO_KPA,
}

_UNIT_ALIASES = {
    "kgf/cm2": "kgf/cm2",
    "kgf/cm^2": "kgf/cm2",
    "kg/cm2": "kgf/cm2",
    "kg/cm^2": "kgf/cm2",
    "psi": "psi",
    "kpa": "kpa",
}

MAX_CELLS = 128 * 68  # supported ceiling for the circuit resolution


class ConfigError(ValueError):
    """Invalid configuration value or file."""


def _canonical_unit(unit: str) -> str:
    key = unit.strip().lower()
    if key not in _UNIT_ALIASES:
        raise ConfigError(f"unknown pressure unit: {unit!r}")
    return _UNIT_ALIASES[key]


def pressure_units_convert(value: float, from_unit: str, to_unit: str) -> float:
    """Convert a pressure value between kgf/cm2, psi and kPa."""
    src = _canonical_unit(from_unit)
    dst = _canonical_unit(to_unit)
    # Pivot through kgf/cm2 with exact constant ratios.
    return value / _PRESSURE_UNITS[src] * _PRESSURE_UNITS[dst]


def body_pressure_estimate(mass_kg: float, contact_area_cm2: float) -> float:
    """Average contact pressure in psi for a body of `mass_kg` resting on
    `contact_area_cm2` of mat surface."""
    if mass_kg <= 0:
        raise ValueError(f"mass must be positive, got {mass_kg}")
    if contact_area_cm2 <= 0:
        raise ValueError(f"contact area must be positive, got {contact_area_cm2}")
    return pressure_units_convert(mass_kg / contact_area_cm2, "kgf/cm2", "psi")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MatGeometry:
    """Electrical and geometric description of the mat.

    rows/cols are the row and column electrode counts; each crossing is one
    sensing cell. r_fixed is the divider's fixed resistor, v_in the drive
    voltage.
    """

    rows: int
    cols: int
    cell_pitch_mm: float = 10.0
    r_fixed: float = 10_000.0
    v_in: float = 5.0
    adc_bits: int = 10
    frame_rate: float = 10.0

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"rows/cols must be >= 1, got {self.rows}x{self.cols}")
        if self.rows * self.cols > MAX_CELLS:
            raise ConfigError(
                f"{self.rows}x{self.cols} exceeds the supported {MAX_CELLS}-cell ceiling"
            )
        if self.cell_pitch_mm <= 0:
            raise ConfigError("cell_pitch_mm must be positive")
        if self.r_fixed <= 0 or self.v_in <= 0:
            raise ConfigError("r_fixed and v_in must be positive")
        if not 1 <= self.adc_bits <= 16:
            raise ConfigError(f"adc_bits must be in [1, 16], got {self.adc_bits}")
        if self.frame_rate <= 0:
            raise ConfigError("frame_rate must be positive")

    @property
    def adc_max(self) -> int:
        return (1 << self.adc_bits) - 1

    @property
    def cell_area_cm2(self) -> float:
        return (self.cell_pitch_mm / 10.0) ** 2

    @property
    def cell_area_m2(self) -> float:
        return (self.cell_pitch_mm / 1000.0) ** 2


@dataclass(frozen=True)
class VelostatModel:
    """Piezoresistive response of one Velostat cell.

    R(F) = clamp(rho_k / F, r_min, r_max); rho_k carries the resistivity and
    geometry factors as a single ohm-newton product.
    """

    rho_k: float = 2000.0
    r_min: float = 10.0
    r_max: float = 20_000.0

    def __post_init__(self) -> None:
        if self.rho_k <= 0:
            raise ConfigError("rho_k must be positive")
        if not 0 < self.r_min < self.r_max:
            raise ConfigError("need 0 < r_min < r_max")

    @property
    def f_max(self) -> float:
        """Largest resolvable per-cell force (resistance saturated at r_min)."""
        return self.rho_k / self.r_min

    @property
    def f_floor(self) -> float:
        """Force at the no-load resistance ceiling; anything at or below reads r_max."""
        return self.rho_k / self.r_max


@dataclass(frozen=True)
class ForceMap:
    """Ground-truth per-cell applied force grid, in newtons."""

    geometry: MatGeometry
    forces: np.ndarray

    def __post_init__(self) -> None:
        f = np.asarray(self.forces, dtype=float)
        if f.shape != (self.geometry.rows, self.geometry.cols):
            raise ValueError(
                f"force grid {f.shape} does not match geometry "
                f"{self.geometry.rows}x{self.geometry.cols}"
            )
        if np.any(f < 0):
            raise ValueError("forces must be non-negative")
        object.__setattr__(self, "forces", _frozen(f))


@dataclass(frozen=True)
class RawFrame:
    """One complete matrix scan of ADC counts."""

    sequence: int
    timestamp_ms: int
    counts: np.ndarray

    def __post_init__(self) -> None:
        c = np.asarray(self.counts)
        if c.ndim != 2:
            raise ValueError("counts must be a 2-D grid")
        if np.any(c < 0) or np.any(c > 0xFFFF):
            raise ValueError("counts out of 16-bit range")
        object.__setattr__(self, "counts", _frozen(c.astype(np.uint16)))

    @property
    def rows(self) -> int:
        return self.counts.shape[0]

    @property
    def cols(self) -> int:
        return self.counts.shape[1]


# Zone codes used in PressureImage.zone_labels
ZONE_BLUE = 0
ZONE_GREEN = 1
ZONE_RED = 2

ZONE_NAMES = {ZONE_BLUE: "blue", ZONE_GREEN: "green", ZONE_RED: "red"}


@dataclass(frozen=True)
class PressureImage:
    """Reconstructed per-cell pressure grid in kPa, possibly upsampled,
    with blue/green/red zone labels and per-cell saturation flags."""

    geometry: MatGeometry
    pressures: np.ndarray
    zone_labels: np.ndarray = field(default=None)  # type: ignore[assignment]
    saturated: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        p = np.asarray(self.pressures, dtype=float)
        if p.ndim != 2:
            raise ValueError("pressures must be a 2-D grid")
        if np.any(p < 0):
            raise ValueError("pressures must be non-negative")
        zones = self.zone_labels
        if zones is None:
            zones = np.full(p.shape, ZONE_BLUE, dtype=np.uint8)
        zones = np.asarray(zones, dtype=np.uint8)
        if zones.shape != p.shape:
            raise ValueError("zone_labels shape must match pressures")
        sat = self.saturated
        if sat is None:
            sat = np.zeros(p.shape, dtype=bool)
        sat = np.asarray(sat, dtype=bool)
        if sat.shape != p.shape:
            raise ValueError("saturated shape must match pressures")
        object.__setattr__(self, "pressures", _frozen(p))
        object.__setattr__(self, "zone_labels", _frozen(zones))
        object.__setattr__(self, "saturated", _frozen(sat))


DEFAULT_GEOMETRY = MatGeometry(rows=16, cols=16)
DEFAULT_MODEL = VelostatModel()


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment; blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


_GEOMETRY_KEYS = {
    "rows": int,
    "cols": int,
    "cell_pitch_mm": float,
    "r_fixed": float,
    "v_in": float,
    "adc_bits": int,
    "frame_rate": float,
}

_MODEL_KEYS = {"rho_k": float, "r_min": float, "r_max": float}


def geometry_from_mapping(kv: dict[str, str]) -> MatGeometry:
    kwargs = {}
    for key, cast in _GEOMETRY_KEYS.items():
        if key in kv:
            try:
                kwargs[key] = cast(kv[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {kv[key]!r}") from exc
    if "rows" not in kwargs or "cols" not in kwargs:
        raise ConfigError("geometry needs at least rows and cols")
    return MatGeometry(**kwargs)


def model_from_mapping(kv: dict[str, str]) -> VelostatModel:
    kwargs = {}
    for key, cast in _MODEL_KEYS.items():
        if key in kv:
            try:
                kwargs[key] = cast(kv[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {kv[key]!r}") from exc
    return VelostatModel(**kwargs)


def load_geometry(path: str | Path) -> MatGeometry:
    """Load geometry from a plain-text key-value file."""
    return geometry_from_mapping(parse_kv_text(Path(path).read_text()))


def load_model(path: str | Path) -> VelostatModel:
    """Load the Velostat model constants from a plain-text key-value file."""
    return model_from_mapping(parse_kv_text(Path(path).read_text()))
