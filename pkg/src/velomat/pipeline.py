"""Per-frame analysis shared by the `analyze` and `live` commands so both
paths produce identical frame records and alarm events for the same bytes."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .analytics import (
    AlarmConfig,
    AlarmEngine,
    AlarmEvent,
    InsufficientDataError,
    RespirationResult,
    TemplateSet,
    classify_posture,
    conductance_sum,
    extract_features,
    respiration_rate,
)
from .core import MatGeometry, PressureImage, RawFrame, VelostatModel, ZONE_RED
from .dsp import Calibration, ReconstructOptions, calibrate, reconstruct
from .templates import build_template_set


@dataclass(frozen=True)
class AnalyzeOptions:
    reconstruct: ReconstructOptions = ReconstructOptions()
    alarm: AlarmConfig = field(default_factory=AlarmConfig)
    respiration_band: tuple[float, float] = (0.1, 0.7)
    respiration_window_s: float | None = None  # None = whole session
    calib_frames: int = 10  # leading idle frames when no embedded baseline
    rejection_radius: float = 3.0


@dataclass(frozen=True)
class FrameRecord:
    sequence: int
    timestamp_ms: int
    posture: str
    confidence: float
    active_area: int
    total_load_n: float
    red_cells: int
    conductance_s: float

    def to_line(self) -> str:
        return (
            f"frame seq={self.sequence} ts={self.timestamp_ms}"
            f" posture={self.posture} conf={self.confidence:.4f}"
            f" active={self.active_area} load_n={self.total_load_n:.4f}"
            f" red={self.red_cells} gsum={self.conductance_s:.6e}"
        )


def alarm_line(ev: AlarmEvent) -> str:
    return (
        f"alarm region={ev.region_id} onset_ms={ev.onset_timestamp_ms}"
        f" dwell_ms={ev.dwell_ms} fired_ms={ev.fired_at_ms}"
    )


def respiration_line(res: RespirationResult | None, n_samples: int) -> str:
    if res is None:
        return f"respiration status=insufficient_data n={n_samples}"
    if res.no_signal:
        return f"respiration status=no_signal bpm=0.00 conf=0.0000 n={n_samples}"
    return (
        f"respiration status=ok bpm={res.bpm:.2f}"
        f" conf={res.confidence:.4f} n={n_samples}"
    )


class Analyzer:
    """Streaming per-frame analysis: reconstruct, classify, accumulate the
    breathing channel, and advance the alarm engine."""

    def __init__(
        self,
        geometry: MatGeometry,
        model: VelostatModel,
        options: AnalyzeOptions = AnalyzeOptions(),
        calibration: Calibration | None = None,
        templates: TemplateSet | None = None,
    ):
        self.geometry = geometry
        self.model = model
        self.options = options
        self.calibration = calibration
        self.templates = templates or build_template_set(
            geometry, model, options.reconstruct.thresholds, options.rejection_radius
        )
        self.alarm_engine = AlarmEngine(options.alarm)
        maxlen = None
        if options.respiration_window_s is not None:
            maxlen = max(int(options.respiration_window_s * geometry.frame_rate), 1)
        self.conductance: deque[float] = deque(maxlen=maxlen)
        self.records: list[FrameRecord] = []
        self.events: list[AlarmEvent] = []
        self._calib_buffer: list[RawFrame] = []

    def _process_one(self, frame: RawFrame) -> FrameRecord:
        opts = self.options
        image = self.reconstruct_frame(frame)
        features = extract_features(image, self.model, opts.reconstruct.thresholds)
        posture = classify_posture(features, self.templates, self.geometry)
        gsum = conductance_sum(frame, self.geometry, self.model)
        self.conductance.append(gsum)
        events = self.alarm_engine.step(image, frame.timestamp_ms)
        self.events.extend(events)
        record = FrameRecord(
            sequence=frame.sequence,
            timestamp_ms=frame.timestamp_ms,
            posture=posture.posture.label,
            confidence=posture.confidence,
            active_area=features.active_area,
            total_load_n=features.total_load,
            red_cells=int((image.zone_labels == ZONE_RED).sum()),
            conductance_s=gsum,
        )
        self.records.append(record)
        return record

    def reconstruct_frame(self, frame: RawFrame) -> PressureImage:
        return reconstruct(
            frame, self.calibration, self.geometry, self.model, self.options.reconstruct
        )

    def process(self, frame: RawFrame) -> list[FrameRecord]:
        """Feed one frame; returns the records that became available (frames
        can be buffered while self-calibrating from the leading idle run)."""
        if self.calibration is None:
            self._calib_buffer.append(frame)
            if len(self._calib_buffer) < self.options.calib_frames:
                return []
            self.calibration = calibrate(self._calib_buffer)
            buffered, self._calib_buffer = self._calib_buffer, []
            return [self._process_one(f) for f in buffered]
        return [self._process_one(frame)]

    def flush(self) -> list[FrameRecord]:
        """Process any frames still held back by an unfinished calibration
        run (short sessions)."""
        if self.calibration is None and self._calib_buffer:
            self.calibration = calibrate(self._calib_buffer)
            buffered, self._calib_buffer = self._calib_buffer, []
            return [self._process_one(f) for f in buffered]
        return []

    def respiration(self) -> RespirationResult | None:
        """Breathing estimate over the accumulated conductance series, or
        None when the series is too short."""
        series = np.array(self.conductance)
        try:
            return respiration_rate(
                series, self.geometry.frame_rate, self.options.respiration_band
            )
        except InsufficientDataError:
            return None

    def summary_lines(self) -> list[str]:
        lines = [alarm_line(ev) for ev in self.events]
        lines.append(respiration_line(self.respiration(), len(self.conductance)))
        return lines
