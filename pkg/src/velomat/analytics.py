"""Higher-level inference over reconstructed frames: posture classification,
respiratory-rate estimation and the sustained-pressure alarm engine."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import MatGeometry, PressureImage, RawFrame, VelostatModel, ZONE_RED
from .dsp import DEFAULT_ZONES, ZoneThresholds, pressure_kpa_to_force


# ---------------------------------------------------------------------------
# Posture features and classification


@dataclass(frozen=True)
class PostureFeatures:
    total_load: float  # newtons over active cells
    active_area: int  # active cell count
    centroid: tuple[float, float]  # (row, col), grid coordinates
    bbox_aspect: float  # active bounding-box rows/cols extent ratio
    axis_ratio: float  # principal-axis eigenvalue ratio, >= 1
    left_right_symmetry: float  # [0, 1], 1 = balanced about the centroid column

    def shape_vector(self, geometry: MatGeometry) -> np.ndarray:
        """Scale-free feature vector used for classification; total load is
        deliberately excluded so the label is invariant under pressure scaling."""
        cells = geometry.rows * geometry.cols
        return np.array(
            [
                self.active_area / cells,
                self.centroid[0] / max(geometry.rows - 1, 1),
                self.centroid[1] / max(geometry.cols - 1, 1),
                self.bbox_aspect,
                self.axis_ratio,
                self.left_right_symmetry,
            ]
        )


def extract_features(
    image: PressureImage,
    model: VelostatModel,
    thresholds: ZoneThresholds = DEFAULT_ZONES,
) -> PostureFeatures:
    """Features over the cells above the blue/green force threshold; an empty
    active set yields zeroed features."""
    forces = pressure_kpa_to_force(image.pressures, image.geometry)
    active = forces >= thresholds.blue_force(model)
    if not active.any():
        return PostureFeatures(0.0, 0, (0.0, 0.0), 1.0, 1.0, 1.0)

    w = np.where(active, forces, 0.0)
    total = float(w.sum())
    rr, cc = np.nonzero(active)
    rows_idx, cols_idx = np.meshgrid(
        np.arange(image.pressures.shape[0], dtype=float),
        np.arange(image.pressures.shape[1], dtype=float),
        indexing="ij",
    )
    cr = float((w * rows_idx).sum() / total)
    ccol = float((w * cols_idx).sum() / total)

    bbox_aspect = (rr.max() - rr.min() + 1) / (cc.max() - cc.min() + 1)

    dr = rows_idx - cr
    dc = cols_idx - ccol
    cov = np.array(
        [
            [(w * dr * dr).sum(), (w * dr * dc).sum()],
            [(w * dr * dc).sum(), (w * dc * dc).sum()],
        ]
    ) / total
    eig = np.sort(np.linalg.eigvalsh(cov))
    axis_ratio = float(eig[1] / eig[0]) if eig[0] > 1e-12 else max(float(eig[1]) / 1e-12, 1.0)
    axis_ratio = max(axis_ratio, 1.0)
    axis_ratio = min(axis_ratio, 1e6)

    # mass strictly left of the centroid line; column j spans [j-0.5, j+0.5]
    edge = ccol + 0.5
    full = min(int(math.floor(edge)), w.shape[1])
    left = float(w[:, :full].sum())
    if full < w.shape[1]:
        left += (edge - full) * float(w[:, full].sum())
    right = total - left
    symmetry = 1.0 - abs(left - right) / total

    return PostureFeatures(
        total_load=total,
        active_area=int(active.sum()),
        centroid=(cr, ccol),
        bbox_aspect=float(bbox_aspect),
        axis_ratio=axis_ratio,
        left_right_symmetry=float(np.clip(symmetry, 0.0, 1.0)),
    )


class PostureClass(Enum):
    # tie-break order: lower value wins on equal distance
    SUPINE = 0
    PRONE = 1
    SIDE = 2
    SITTING = 3
    EMPTY = 4
    UNKNOWN = 5

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class PostureResult:
    posture: PostureClass
    confidence: float
    distance: float = 0.0


@dataclass(frozen=True)
class TemplateSet:
    """Nearest-centroid templates: one z-normalized shape vector per class."""

    classes: tuple[PostureClass, ...]
    vectors: np.ndarray  # raw shape vectors, one row per class
    mean: np.ndarray
    std: np.ndarray
    rejection_radius: float = 3.0

    @classmethod
    def from_features(
        cls,
        entries: dict[PostureClass, PostureFeatures],
        geometry: MatGeometry,
        rejection_radius: float = 3.0,
    ) -> "TemplateSet":
        if not entries:
            raise ValueError("template set is empty")
        classes = tuple(sorted(entries, key=lambda c: c.value))
        vectors = np.stack([entries[c].shape_vector(geometry) for c in classes])
        mean = vectors.mean(axis=0)
        std = vectors.std(axis=0)
        std = np.where(std < 1e-9, 1.0, std)
        return cls(classes, vectors, mean, std, rejection_radius)

    def normalize(self, vec: np.ndarray) -> np.ndarray:
        return (vec - self.mean) / self.std


def classify_posture(
    features: PostureFeatures,
    templates: TemplateSet,
    geometry: MatGeometry,
) -> PostureResult:
    """Nearest-centroid classification over z-normalized shape vectors.

    An empty active set short-circuits to EMPTY with confidence 1; distances
    beyond the rejection radius yield UNKNOWN. Equal distances resolve to the
    lower class index (supine < prone < side < sitting).
    """
    if templates is None or len(templates.classes) == 0:
        raise ValueError("no posture templates configured")
    if features.active_area == 0:
        return PostureResult(PostureClass.EMPTY, 1.0)
    z = templates.normalize(features.shape_vector(geometry))
    tz = (templates.vectors - templates.mean) / templates.std
    dists = np.linalg.norm(tz - z, axis=1)
    best = int(np.argmin(dists))  # argmin takes the first = lowest class index
    d = float(dists[best])
    if d > templates.rejection_radius:
        return PostureResult(PostureClass.UNKNOWN, 0.0, d)
    confidence = float(np.clip(1.0 - d / templates.rejection_radius, 0.0, 1.0))
    return PostureResult(templates.classes[best], confidence, d)


# ---------------------------------------------------------------------------
# Respiration


class InsufficientDataError(ValueError):
    """Not enough samples for a spectral estimate."""


def conductance_sum(frame: RawFrame, geometry: MatGeometry, model: VelostatModel) -> float:
    """Sum of per-cell conductance (siemens) recovered from ADC counts; the
    scalar breathing channel."""
    volts = frame.counts.astype(float) / geometry.adc_max * geometry.v_in
    volts = np.clip(volts, 0.0, geometry.v_in * (1 - 1e-12))
    with np.errstate(divide="ignore"):
        r = geometry.r_fixed * volts / (geometry.v_in - volts)
    r = np.clip(r, model.r_min, model.r_max)
    return float((1.0 / r).sum())


@dataclass(frozen=True)
class RespirationResult:
    bpm: float
    confidence: float
    no_signal: bool = False


def respiration_rate(
    samples: np.ndarray,
    rate_hz: float,
    band: tuple[float, float] = (0.1, 0.7),
    min_duration_s: float = 30.0,
) -> RespirationResult:
    """Breathing rate from a conductance time series.

    Linear detrend -> Hann window -> DFT -> strongest in-band bin refined by
    parabolic interpolation -> breaths/minute. Confidence is the peak's share
    of the total in-band magnitude.
    """
    x = np.asarray(samples, dtype=float)
    f_lo, f_hi = band
    if not 0 < f_lo < f_hi:
        raise ValueError(f"bad band {band}")
    if rate_hz < 4 * f_hi:
        raise ValueError(f"sample rate {rate_hz} Hz too low for band up to {f_hi} Hz")
    n = x.size
    if n / rate_hz < min_duration_s:
        raise InsufficientDataError(
            f"{n / rate_hz:.1f} s of samples, need at least {min_duration_s:.0f} s"
        )

    t = np.arange(n)
    x = x - np.polyval(np.polyfit(t, x, 1), t)
    window = np.hanning(n)
    mag = np.abs(np.fft.rfft(x * window))
    freqs = np.fft.rfftfreq(n, d=1.0 / rate_hz)

    in_band = (freqs >= f_lo) & (freqs <= f_hi)
    band_total = mag[in_band].sum()
    if band_total <= 1e-12 * max(np.abs(samples).max(), 1.0) or not in_band.any():
        return RespirationResult(0.0, 0.0, no_signal=True)

    k = int(np.flatnonzero(in_band)[np.argmax(mag[in_band])])
    delta = 0.0
    if 0 < k < mag.size - 1:
        denom = mag[k - 1] - 2 * mag[k] + mag[k + 1]
        if abs(denom) > 1e-30:
            delta = float(np.clip(0.5 * (mag[k - 1] - mag[k + 1]) / denom, -0.5, 0.5))
    freq = (k + delta) * rate_hz / n
    confidence = float(mag[k] / band_total)
    return RespirationResult(freq * 60.0, confidence)


# ---------------------------------------------------------------------------
# Sustained-pressure alarms


@dataclass(frozen=True)
class AlarmConfig:
    region_rows: int = 4
    region_cols: int = 4
    red_quorum: float = 0.25  # fraction of region cells that must be red
    relief_s: float = 10.0  # continuous unloaded time that resets a dwell
    dwell_threshold_s: float = 2 * 60 * 60.0  # clinical turning cadence


@dataclass(frozen=True)
class AlarmEvent:
    region_id: str
    onset_timestamp_ms: int
    dwell_ms: int
    fired_at_ms: int


@dataclass
class _RegionState:
    dwell_ms: float = 0.0
    relief_ms: float = 0.0
    onset_ms: int | None = None
    fired: bool = False
    loaded: bool = False


@dataclass
class AlarmEngine:
    """Streaming dwell tracker. The mat is tiled into fixed regions; a region
    whose red-cell quorum is met accumulates dwell time, and one alarm fires
    when dwell crosses the threshold. A continuous relief period resets the
    dwell and re-arms the region."""

    config: AlarmConfig = field(default_factory=AlarmConfig)
    _regions: dict[str, _RegionState] = field(default_factory=dict)
    _last_ts: int | None = None

    def region_loaded(self, zones: np.ndarray) -> dict[str, bool]:
        cfg = self.config
        rows, cols = zones.shape
        out = {}
        for r0 in range(0, rows, cfg.region_rows):
            for c0 in range(0, cols, cfg.region_cols):
                tile = zones[r0 : r0 + cfg.region_rows, c0 : c0 + cfg.region_cols]
                region_id = f"r{r0 // cfg.region_rows}c{c0 // cfg.region_cols}"
                out[region_id] = (tile == ZONE_RED).sum() >= cfg.red_quorum * tile.size
        return out

    def step(self, image: PressureImage, timestamp_ms: int) -> list[AlarmEvent]:
        if self._last_ts is not None and timestamp_ms < self._last_ts:
            raise ValueError(
                f"timestamp regression: {timestamp_ms} after {self._last_ts}"
            )
        dt = 0.0 if self._last_ts is None else timestamp_ms - self._last_ts
        self._last_ts = timestamp_ms

        events: list[AlarmEvent] = []
        threshold_ms = self.config.dwell_threshold_s * 1000.0
        relief_ms = self.config.relief_s * 1000.0
        for region_id, loaded in self.region_loaded(image.zone_labels).items():
            st = self._regions.setdefault(region_id, _RegionState())
            if loaded:
                if st.loaded:
                    st.dwell_ms += dt
                elif st.dwell_ms == 0.0:
                    st.onset_ms = timestamp_ms
                st.relief_ms = 0.0
            else:
                if st.dwell_ms > 0.0:
                    st.relief_ms += dt
                    if st.relief_ms >= relief_ms:
                        st.dwell_ms = 0.0
                        st.relief_ms = 0.0
                        st.onset_ms = None
                        st.fired = False
            st.loaded = loaded
            if loaded and not st.fired and st.dwell_ms >= threshold_ms:
                st.fired = True
                events.append(
                    AlarmEvent(
                        region_id=region_id,
                        onset_timestamp_ms=int(st.onset_ms if st.onset_ms is not None else timestamp_ms),
                        dwell_ms=int(st.dwell_ms),
                        fired_at_ms=int(timestamp_ms),
                    )
                )
        return events


def alarm_step(
    engine: AlarmEngine, image: PressureImage, timestamp_ms: int
) -> tuple[AlarmEngine, list[AlarmEvent]]:
    """Functional wrapper over AlarmEngine.step."""
    return engine, engine.step(image, timestamp_ms)
