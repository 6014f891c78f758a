"""Microcontroller-link layer: mux channel scheduling, binary frame codec
and a resynchronizing stream parser.

Frame layout (little-endian, counts in row-major electrode order):

    offset  size  field
    0       2     magic 0x4D 0x54 ("MT")
    2       1     version (currently 1)
    3       1     rows
    4       1     cols
    5       4     sequence (u32)
    9       4     timestamp_ms (u32)
    13      2*n   payload: rows*cols u16 counts
    13+2n   2     CRC-16/CCITT-FALSE over bytes [0, 13+2n)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import MatGeometry, RawFrame

MAGIC = b"\x4d\x54"
VERSION = 1
HEADER_LEN = 13
CRC_LEN = 2
MAX_DIM = 255


class FrameEncodeError(ValueError):
    """Frame cannot be represented in the wire format."""


def crc16_ccitt_false(data: bytes) -> int:
    """CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, xorout 0."""
    crc = 0xFFFF
    for b in data:
        crc ^= b << 8
        for _ in range(8):
            crc = ((crc << 1) ^ 0x1021) if crc & 0x8000 else (crc << 1)
            crc &= 0xFFFF
    return crc


def frame_length(rows: int, cols: int) -> int:
    return HEADER_LEN + 2 * rows * cols + CRC_LEN


def encode_frame(frame: RawFrame, geometry: MatGeometry) -> bytes:
    if frame.counts.shape != (geometry.rows, geometry.cols):
        raise FrameEncodeError(
            f"frame {frame.counts.shape} does not match geometry "
            f"{geometry.rows}x{geometry.cols}"
        )
    if geometry.rows > MAX_DIM or geometry.cols > MAX_DIM:
        raise FrameEncodeError("rows/cols above 255 cannot be encoded")
    header = MAGIC + struct.pack(
        "<BBBII",
        VERSION,
        geometry.rows,
        geometry.cols,
        frame.sequence & 0xFFFFFFFF,
        frame.timestamp_ms & 0xFFFFFFFF,
    )
    payload = frame.counts.astype("<u2").tobytes()
    body = header + payload
    return body + struct.pack("<H", crc16_ccitt_false(body))


def decode_frame(buf: bytes) -> RawFrame:
    """Decode one complete frame; raises ValueError on any malformation."""
    if len(buf) < HEADER_LEN + CRC_LEN:
        raise ValueError("frame too short")
    if buf[:2] != MAGIC:
        raise ValueError("bad magic")
    version, rows, cols, sequence, timestamp = struct.unpack("<BBBII", buf[2:13])
    if version != VERSION:
        raise ValueError(f"unsupported version {version}")
    total = frame_length(rows, cols)
    if len(buf) != total:
        raise ValueError(f"expected {total} bytes, got {len(buf)}")
    (crc,) = struct.unpack("<H", buf[-2:])
    if crc != crc16_ccitt_false(buf[:-2]):
        raise ValueError("checksum mismatch")
    counts = np.frombuffer(buf, dtype="<u2", count=rows * cols, offset=HEADER_LEN)
    return RawFrame(sequence, timestamp, counts.reshape(rows, cols).copy())


@dataclass
class StreamDiagnostics:
    ok: int = 0
    bad_checksum_skipped: int = 0
    resync_bytes_skipped: int = 0
    truncated_tail: int = 0


@dataclass
class StreamDecoder:
    """Incremental frame extractor over an arbitrary, possibly corrupted
    byte stream. Feed chunks; valid frames come out, everything else is
    counted and skipped one byte at a time (resync). Never raises on input.
    """

    diagnostics: StreamDiagnostics = field(default_factory=StreamDiagnostics)
    _buf: bytearray = field(default_factory=bytearray)

    def feed(self, chunk: bytes) -> list[RawFrame]:
        self._buf.extend(chunk)
        return self._scan(eof=False)

    def finish(self) -> list[RawFrame]:
        """Mark end of stream. Candidates that were waiting on more bytes are
        re-scanned byte-by-byte so a garbage pseudo-header cannot swallow a
        complete frame sitting behind it; anything left is a truncated tail.
        """
        frames = self._scan(eof=True)
        self._buf.clear()
        return frames

    def _scan(self, eof: bool) -> list[RawFrame]:
        frames: list[RawFrame] = []
        buf = self._buf
        pos = 0
        tail_flagged = False

        def incomplete() -> bool:
            """Handle a candidate that extends past the buffer end."""
            nonlocal pos, tail_flagged
            if not eof:
                return True  # stop scanning, wait for more bytes
            if not tail_flagged:
                self.diagnostics.truncated_tail += 1
                tail_flagged = True
            self.diagnostics.resync_bytes_skipped += 1
            pos += 1
            return False

        while True:
            idx = buf.find(MAGIC, pos)
            if idx < 0:
                # keep one trailing byte: it may be half of a split magic
                end = len(buf) if eof else max(len(buf) - 1, pos)
                self.diagnostics.resync_bytes_skipped += end - pos
                pos = end
                break
            self.diagnostics.resync_bytes_skipped += idx - pos
            pos = idx
            if len(buf) - pos < HEADER_LEN:
                if incomplete():
                    break
                continue
            version, rows, cols = buf[pos + 2], buf[pos + 3], buf[pos + 4]
            if version != VERSION or rows == 0 or cols == 0:
                self.diagnostics.resync_bytes_skipped += 1
                pos += 1
                continue
            total = frame_length(rows, cols)
            if len(buf) - pos < total:
                if incomplete():
                    break
                continue
            try:
                frame = decode_frame(bytes(buf[pos : pos + total]))
            except ValueError:
                self.diagnostics.bad_checksum_skipped += 1
                self.diagnostics.resync_bytes_skipped += 1
                pos += 1
                continue
            frames.append(frame)
            self.diagnostics.ok += 1
            pos += total
        del buf[:pos]
        return frames


def decode_stream(data: bytes) -> tuple[list[RawFrame], StreamDiagnostics]:
    """One-shot decode of a complete byte buffer."""
    dec = StreamDecoder()
    frames = dec.feed(data)
    frames.extend(dec.finish())
    return frames, dec.diagnostics


# ---------------------------------------------------------------------------
# Multiplexer scheduling

CHANNELS_PER_MUX = 16
SELECT_BITS = 4


@dataclass(frozen=True)
class MuxMap:
    """Mapping from electrode index to (mux index, channel index) for a bank
    of 16-channel multiplexers addressed by 4 select bits."""

    ordering: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        seen = set()
        for mux, chan in self.ordering:
            if not 0 <= chan < CHANNELS_PER_MUX:
                raise ValueError(f"channel {chan} not encodable in {SELECT_BITS} bits")
            if (mux, chan) in seen:
                raise ValueError(f"duplicate mux slot {(mux, chan)}")
            seen.add((mux, chan))

    @classmethod
    def identity(cls, n_electrodes: int) -> "MuxMap":
        return cls(
            tuple((e // CHANNELS_PER_MUX, e % CHANNELS_PER_MUX) for e in range(n_electrodes))
        )

    @property
    def n_muxes(self) -> int:
        return 1 + max(mux for mux, _ in self.ordering) if self.ordering else 0


def mux_schedule(geometry: MatGeometry, mux_map: MuxMap) -> list[tuple[int, int]]:
    """Per-frame column scan order: (select_bits_value, electrode) pairs,
    visiting every column electrode exactly once."""
    if len(mux_map.ordering) < geometry.cols:
        raise ValueError(
            f"mux map covers {len(mux_map.ordering)} electrodes, geometry has {geometry.cols}"
        )
    schedule = []
    for electrode in range(geometry.cols):
        mux, chan = mux_map.ordering[electrode]
        schedule.append((chan, electrode))
    return schedule
