"""Velostat pressure-mat toolkit: electrical simulation, wire protocol,
image reconstruction and bed analytics."""

from .core import (
    ForceMap,
    MatGeometry,
    PressureImage,
    RawFrame,
    VelostatModel,
    body_pressure_estimate,
    pressure_units_convert,
)
from .simkit import (
    IsolationMode,
    Load,
    Scene,
    force_to_resistance,
    ideal_divider_voltage,
    rasterize_scene,
    scan_frame,
    voltage_to_force,
)
from .wire import MuxMap, StreamDecoder, decode_frame, decode_stream, encode_frame
from .dsp import (
    Calibration,
    ReconstructOptions,
    bilinear_upsample,
    calibrate,
    counts_to_pressure,
    dc_remove,
    median_filter,
    reconstruct,
)
from .analytics import (
    AlarmConfig,
    AlarmEngine,
    AlarmEvent,
    PostureClass,
    classify_posture,
    conductance_sum,
    extract_features,
    respiration_rate,
)
from .templates import build_template_set

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
