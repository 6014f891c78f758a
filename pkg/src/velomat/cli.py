"""Operator-facing command line: simulate, analyze, live, render, calibrate.

Option precedence is defaults < config file (--config, key = value lines) <
explicit flags. Exit codes: 0 ok, 1 usage, 2 corrupt input, 3 I/O.
"""

from __future__ import annotations

import argparse
import socket
import sys
from pathlib import Path

import numpy as np

from . import wire
from .core import (
    ConfigError,
    MatGeometry,
    RawFrame,
    VelostatModel,
    geometry_from_mapping,
    load_geometry,
    load_model,
    model_from_mapping,
    parse_kv_text,
)
from .analytics import AlarmConfig
from .dsp import (
    Calibration,
    ReconstructOptions,
    ZoneThresholds,
    calibrate as dsp_calibrate,
    export_csv,
    render_ppm,
)
from .pipeline import AnalyzeOptions, Analyzer, respiration_line
from .session import (
    FRAMES_MARKER,
    Session,
    SessionFormatError,
    SessionHeader,
    SessionWriter,
    read_session,
    split_session_bytes,
)
from .simkit import IsolationMode, Scene, load_scene, scan_frame

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CORRUPT = 2
EXIT_IO = 3


class UsageError(Exception):
    pass


class CorruptInputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--geometry", help="geometry key-value file")
    p.add_argument("--model", help="Velostat model key-value file")
    p.add_argument("--mode", choices=[m.value for m in IsolationMode], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--alarm-threshold", type=float, default=None,
                   help="dwell threshold in seconds before an alarm fires")
    p.add_argument("--relief", type=float, default=None,
                   help="continuous unloaded seconds that reset a dwell")
    p.add_argument("--upsample", type=int, default=None,
                   help="bilinear upsampling factor (omit to disable)")
    p.add_argument("--median-window", type=int, default=None,
                   help="median filter window (0 disables)")
    p.add_argument("--stride", type=int, default=None,
                   help="render every Nth frame")
    p.add_argument("--out", default=None, help="output file or directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="velomat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the mat simulator into a session file")
    p.add_argument("scene", help="scene/scenario file")
    p.add_argument("--duration", type=float, default=None, help="seconds of scene playback")
    p.add_argument("--idle", type=float, default=None,
                   help="seconds of leading no-load frames for calibration")
    p.add_argument("--noise", type=float, default=None,
                   help="Gaussian readout noise sigma in volts")
    _add_common(p)

    p = sub.add_parser("analyze", help="full report over a recorded session")
    p.add_argument("session", help="session file")
    p.add_argument("--no-figures", action="store_true",
                   help="skip matplotlib figure rendering")
    _add_common(p)

    p = sub.add_parser("live", help="incremental analysis over a byte stream")
    p.add_argument("--source", default="-",
                   help="file path, '-' for stdin, or tcp:host:port")
    p.add_argument("--timeout", type=float, default=5.0,
                   help="seconds to wait for bytes before giving up")
    p.add_argument("--window", type=float, default=120.0,
                   help="rolling respiration window in seconds")
    _add_common(p)

    p = sub.add_parser("render", help="heatmaps from a session, no analytics")
    p.add_argument("session", help="session file")
    p.add_argument("--no-figures", action="store_true")
    _add_common(p)

    p = sub.add_parser("calibrate", help="baseline from a session's leading frames")
    p.add_argument("session", help="session file")
    p.add_argument("--frames", type=int, default=None, help="frames to average")
    _add_common(p)

    return parser


# ---------------------------------------------------------------------------
# Option resolution


def _load_config(args: argparse.Namespace) -> dict[str, str]:
    if not getattr(args, "config", None):
        return {}
    return parse_kv_text(Path(args.config).read_text())


def _resolve(args, config: dict[str, str], name: str, default, cast=None):
    """defaults < config file < explicit flag."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in config:
        raw = config[name]
        try:
            return cast(raw) if cast else raw
        except ValueError as exc:
            raise UsageError(f"bad config value for {name}: {raw!r}") from exc
    return default


def _resolve_geometry(args, config: dict[str, str]) -> MatGeometry:
    if getattr(args, "geometry", None):
        return load_geometry(args.geometry)
    if "rows" in config and "cols" in config:
        return geometry_from_mapping(config)
    return MatGeometry(rows=16, cols=16)


def _resolve_model(args, config: dict[str, str]) -> VelostatModel:
    if getattr(args, "model", None):
        return load_model(args.model)
    return model_from_mapping(config)


def _resolve_analyze_options(args, config: dict[str, str],
                             window_s: float | None = None) -> AnalyzeOptions:
    median = _resolve(args, config, "median_window", 3, int)
    upsample = _resolve(args, config, "upsample", 0, int)
    recon = ReconstructOptions(
        median_window=median if median else None,
        upsample_factor=upsample if upsample and upsample >= 2 else None,
        thresholds=ZoneThresholds(
            red_resistance_ohm=float(config.get("red_resistance_ohm", 1000.0)),
            blue_fraction=float(config.get("blue_fraction", 0.05)),
        ),
    )
    alarm = AlarmConfig(
        region_rows=int(config.get("region_rows", 4)),
        region_cols=int(config.get("region_cols", 4)),
        red_quorum=float(config.get("red_quorum", 0.25)),
        relief_s=_resolve(args, config, "relief", 10.0, float),
        dwell_threshold_s=_resolve(args, config, "alarm_threshold", 7200.0, float),
    )
    return AnalyzeOptions(
        reconstruct=recon,
        alarm=alarm,
        respiration_band=(
            float(config.get("band_lo_hz", 0.1)),
            float(config.get("band_hi_hz", 0.7)),
        ),
        respiration_window_s=window_s,
        calib_frames=int(config.get("calib_frames", 10)),
    )


# ---------------------------------------------------------------------------
# Commands


def cmd_simulate(args) -> int:
    config = _load_config(args)
    geometry = _resolve_geometry(args, config)
    model = _resolve_model(args, config)
    mode = IsolationMode(_resolve(args, config, "mode", "virtual_ground"))
    seed = _resolve(args, config, "seed", 0, int)
    duration = _resolve(args, config, "duration", 10.0, float)
    idle_s = _resolve(args, config, "idle", 1.0, float)
    noise = _resolve(args, config, "noise", 0.0, float)
    out = _resolve(args, config, "out", None)
    if not out:
        raise UsageError("simulate needs --out <session file>")

    try:
        scene = load_scene(args.scene, geometry)
    except ValueError as exc:
        raise CorruptInputError(f"invalid scene {args.scene}: {exc}") from exc

    rng = np.random.default_rng(seed)
    empty = Scene(geometry)
    n_idle = max(int(round(idle_s * geometry.frame_rate)), 1)
    n_scene = int(round(duration * geometry.frame_rate))

    idle_frames = []
    for i in range(n_idle):
        ts = int(round(i * 1000.0 / geometry.frame_rate))
        idle_frames.append(
            scan_frame(empty, model, mode, i, ts, t_s=0.0, rng=rng, noise_sigma_v=noise)
        )
    calibration = dsp_calibrate(idle_frames)

    header = SessionHeader(
        geometry,
        model,
        calibration,
        meta={
            "mode": mode.value,
            "seed": str(seed),
            "noise_sigma_v": repr(noise),
            "scene": Path(args.scene).name,
            "idle_frames": str(n_idle),
        },
    )
    with SessionWriter(out, header) as writer:
        for frame in idle_frames:
            writer.write_frame(frame)
        for k in range(n_scene):
            seq = n_idle + k
            ts = int(round(seq * 1000.0 / geometry.frame_rate))
            t_s = k / geometry.frame_rate  # scenario clock starts with the scene
            writer.write_frame(
                scan_frame(scene, model, mode, seq, ts, t_s=t_s, rng=rng,
                           noise_sigma_v=noise)
            )
    print(f"wrote {n_idle + n_scene} frames to {out}")
    return EXIT_OK


def _render_outputs(analyzer: Analyzer, frame: RawFrame, out_dir: Path,
                    figures: bool) -> None:
    from . import report

    image = analyzer.reconstruct_frame(frame)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    stem = frames_dir / f"frame_{frame.sequence:06d}"
    render_ppm(image, stem.with_suffix(".ppm"))
    export_csv(image, stem.with_suffix(".csv"))
    if figures:
        report.render_frame_png(
            image, stem.with_suffix(".png"),
            title=f"seq {frame.sequence} @ {frame.timestamp_ms} ms",
        )


def _run_session_analysis(session: Session, options: AnalyzeOptions,
                          out_dir: Path, stride: int, figures: bool) -> int:
    analyzer = Analyzer(session.header.geometry, session.header.model, options,
                        calibration=session.header.calibration)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines: list[str] = []
    for frame in session.frames:
        for record in analyzer.process(frame):
            lines.append(record.to_line())
    for record in (analyzer.flush() or []):
        lines.append(record.to_line())
    if stride > 0:
        for frame in session.frames[::stride]:
            _render_outputs(analyzer, frame, out_dir, figures)

    diag = session.diagnostics
    corrupt = diag.bad_checksum_skipped > 0 or diag.truncated_tail > 0
    tail = analyzer.summary_lines()
    for expected, got in session.sequence_gaps:
        tail.append(f"gap expected_seq={expected} got_seq={got}")
    tail.append(
        f"summary frames={len(session.frames)} ok={diag.ok}"
        f" bad_checksum={diag.bad_checksum_skipped} truncated={diag.truncated_tail}"
        f" alarms={len(analyzer.events)}"
    )
    lines.extend(tail)
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")

    if figures and analyzer.records:
        from . import report

        report.render_respiration_png(
            np.array(analyzer.conductance),
            session.header.geometry.frame_rate,
            options.respiration_band,
            analyzer.respiration(),
            out_dir / "respiration.png",
        )
        report.render_posture_timeline_png(analyzer.records, out_dir / "posture_timeline.png")

    for line in tail:
        print(line)
    return EXIT_CORRUPT if corrupt else EXIT_OK


def cmd_analyze(args) -> int:
    config = _load_config(args)
    options = _resolve_analyze_options(args, config)
    stride = _resolve(args, config, "stride", 50, int)
    out_dir = Path(_resolve(args, config, "out", "report"))
    try:
        session = read_session(args.session)
    except SessionFormatError as exc:
        raise CorruptInputError(str(exc)) from exc
    return _run_session_analysis(session, options, out_dir, stride,
                                 figures=not args.no_figures)


def cmd_render(args) -> int:
    config = _load_config(args)
    options = _resolve_analyze_options(args, config)
    stride = max(_resolve(args, config, "stride", 1, int), 1)
    out_dir = Path(_resolve(args, config, "out", "render"))
    try:
        session = read_session(args.session)
    except SessionFormatError as exc:
        raise CorruptInputError(str(exc)) from exc
    analyzer = Analyzer(session.header.geometry, session.header.model, options,
                        calibration=session.header.calibration)
    out_dir.mkdir(parents=True, exist_ok=True)
    for frame in session.frames[::stride]:
        _render_outputs(analyzer, frame, out_dir, figures=not args.no_figures)
    print(f"rendered {len(session.frames[::stride])} frames to {out_dir}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = _load_config(args)
    n = _resolve(args, config, "frames", 10, int)
    out = _resolve(args, config, "out", "baseline.csv")
    try:
        session = read_session(args.session)
    except SessionFormatError as exc:
        raise CorruptInputError(str(exc)) from exc
    if not session.frames:
        raise CorruptInputError("session contains no decodable frames")
    cal = dsp_calibrate(session.frames[:n])
    np.savetxt(out, cal.baseline, fmt="%.6f", delimiter=",")
    print(f"baseline over {cal.k} frames written to {out}")
    return EXIT_OK


def _open_byte_source(source: str, timeout: float):
    """Yield byte chunks from a file, stdin, or tcp:host:port."""
    if source == "-":
        stream = sys.stdin.buffer
        while True:
            chunk = stream.read(4096)
            if not chunk:
                return
            yield chunk
    elif source.startswith("tcp:"):
        _, host, port = source.split(":")
        with socket.create_connection((host, int(port)), timeout=timeout) as sock:
            sock.settimeout(timeout)
            while True:
                try:
                    chunk = sock.recv(4096)
                except socket.timeout:
                    return
                if not chunk:
                    return
                yield chunk
    else:
        with open(source, "rb") as fh:
            while True:
                chunk = fh.read(4096)
                if not chunk:
                    return
                yield chunk


def cmd_live(args) -> int:
    config = _load_config(args)
    chunks = _open_byte_source(args.source, args.timeout)

    # Pull bytes until the session header (if any) is complete.
    head = bytearray()
    header: SessionHeader | None = None
    leftover = b""
    for chunk in chunks:
        head.extend(chunk)
        if FRAMES_MARKER in head:
            header, leftover = split_session_bytes(bytes(head))
            break
        if len(head) > 1 << 20 or not head.startswith(b"#MATSESSION"[: len(head)]):
            leftover = bytes(head)  # raw frame stream without a header
            break
    else:
        if not head:
            print("timeout: no bytes received before end of stream", file=sys.stderr)
            return EXIT_OK
        leftover = bytes(head)

    if header is not None:
        geometry, model, calibration = header.geometry, header.model, header.calibration
    else:
        geometry = _resolve_geometry(args, config)
        model = _resolve_model(args, config)
        calibration = None

    options = _resolve_analyze_options(args, config, window_s=args.window)
    analyzer = Analyzer(geometry, model, options, calibration=calibration)
    decoder = wire.StreamDecoder()

    def handle(frames: list[RawFrame]) -> None:
        for frame in frames:
            for record in analyzer.process(frame):
                print(record.to_line(), flush=True)
        for ev in analyzer.events[len(printed_events):]:
            print(
                f"alarm region={ev.region_id} onset_ms={ev.onset_timestamp_ms}"
                f" dwell_ms={ev.dwell_ms} fired_ms={ev.fired_at_ms}",
                flush=True,
            )
            printed_events.append(ev)

    printed_events: list = []
    handle(decoder.feed(leftover))
    for chunk in chunks:
        handle(decoder.feed(chunk))
    handle(decoder.finish())
    for record in analyzer.flush():
        print(record.to_line(), flush=True)

    diag = decoder.diagnostics
    print(respiration_line(analyzer.respiration(), len(analyzer.conductance)))
    print(
        f"summary frames={diag.ok} ok={diag.ok}"
        f" bad_checksum={diag.bad_checksum_skipped} truncated={diag.truncated_tail}"
        f" alarms={len(analyzer.events)}"
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "simulate": cmd_simulate,
        "analyze": cmd_analyze,
        "live": cmd_live,
        "render": cmd_render,
        "calibrate": cmd_calibrate,
    }
    try:
        return handlers[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorruptInputError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
