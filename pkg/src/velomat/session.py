"""Session files: a self-describing text header followed by raw wire frames.

Layout:

    #MATSESSION 1\n
    key = value lines (geometry, model, calibration, run metadata)
    #FRAMES\n
    <concatenated binary wire frames>

The wire codec stays the single source of framing truth; the header only
adds the context needed to interpret the frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import wire
from .core import (
    ConfigError,
    MatGeometry,
    RawFrame,
    VelostatModel,
    geometry_from_mapping,
    model_from_mapping,
    parse_kv_text,
)
from .dsp import Calibration

HEADER_MAGIC = b"#MATSESSION 1\n"
FRAMES_MARKER = b"#FRAMES\n"


class SessionFormatError(ValueError):
    """Session file is missing its header or frame marker."""


@dataclass(frozen=True)
class SessionHeader:
    geometry: MatGeometry
    model: VelostatModel
    calibration: Calibration | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = []
        g = self.geometry
        lines += [
            f"rows = {g.rows}",
            f"cols = {g.cols}",
            f"cell_pitch_mm = {g.cell_pitch_mm!r}",
            f"r_fixed = {g.r_fixed!r}",
            f"v_in = {g.v_in!r}",
            f"adc_bits = {g.adc_bits}",
            f"frame_rate = {g.frame_rate!r}",
        ]
        m = self.model
        lines += [f"rho_k = {m.rho_k!r}", f"r_min = {m.r_min!r}", f"r_max = {m.r_max!r}"]
        if self.calibration is not None:
            flat = ";".join(repr(float(x)) for x in self.calibration.baseline.ravel())
            lines.append(f"baseline = {flat}")
            lines.append(f"baseline_k = {self.calibration.k}")
        for key, value in sorted(self.meta.items()):
            if "\n" in value:
                raise ValueError(f"meta value for {key} may not contain newlines")
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SessionHeader":
        kv = parse_kv_text(text)
        geometry = geometry_from_mapping(kv)
        model = model_from_mapping(kv)
        calibration = None
        if "baseline" in kv:
            values = np.array([float(x) for x in kv["baseline"].split(";")])
            if values.size != geometry.rows * geometry.cols:
                raise SessionFormatError("baseline length does not match geometry")
            calibration = Calibration(
                values.reshape(geometry.rows, geometry.cols),
                int(kv.get("baseline_k", "1")),
            )
        known = {
            "rows", "cols", "cell_pitch_mm", "r_fixed", "v_in", "adc_bits",
            "frame_rate", "rho_k", "r_min", "r_max", "baseline", "baseline_k",
        }
        meta = {k: v for k, v in kv.items() if k not in known}
        return cls(geometry, model, calibration, meta)


class SessionWriter:
    """Streams a session to disk: header immediately, frames as they come."""

    def __init__(self, path: str | Path, header: SessionHeader):
        self.path = Path(path)
        self.header = header
        self._fh = open(self.path, "wb")
        self._fh.write(HEADER_MAGIC)
        self._fh.write(header.to_text().encode("utf-8"))
        self._fh.write(FRAMES_MARKER)

    def write_frame(self, frame: RawFrame) -> None:
        self._fh.write(wire.encode_frame(frame, self.header.geometry))

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "SessionWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass
class Session:
    header: SessionHeader
    frames: list[RawFrame]
    diagnostics: wire.StreamDiagnostics

    @property
    def sequence_gaps(self) -> list[tuple[int, int]]:
        """(expected, got) pairs where sequence numbers were not contiguous."""
        gaps = []
        for prev, cur in zip(self.frames, self.frames[1:]):
            if cur.sequence != prev.sequence + 1:
                gaps.append((prev.sequence + 1, cur.sequence))
        return gaps


def split_session_bytes(data: bytes) -> tuple[SessionHeader, bytes]:
    if not data.startswith(HEADER_MAGIC):
        raise SessionFormatError("not a session file (missing #MATSESSION header)")
    marker = data.find(FRAMES_MARKER)
    if marker < 0:
        raise SessionFormatError("session file has no #FRAMES marker")
    try:
        header_text = data[len(HEADER_MAGIC) : marker].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SessionFormatError(f"undecodable session header: {exc}") from exc
    try:
        header = SessionHeader.from_text(header_text)
    except ConfigError as exc:
        raise SessionFormatError(f"bad session header: {exc}") from exc
    return header, data[marker + len(FRAMES_MARKER) :]


def read_session(path: str | Path) -> Session:
    header, payload = split_session_bytes(Path(path).read_bytes())
    frames, diagnostics = wire.decode_stream(payload)
    return Session(header, frames, diagnostics)
