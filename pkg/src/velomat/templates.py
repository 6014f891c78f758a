"""Shipped synthetic posture templates.

The template scenes are authored on a 16x16 reference grid and scaled to the
configured geometry at load time; the classifier centroids are the shape
features of their rasterized pressure images, so the whole classifier is
reproducible from the scene files alone.
"""

from __future__ import annotations

from importlib import resources

from .analytics import PostureClass, TemplateSet, extract_features
from .core import MatGeometry, PressureImage, VelostatModel
from .dsp import DEFAULT_ZONES, ZoneThresholds, force_to_pressure_kpa, label_zone_grid
from .simkit import Load, Scene, parse_scene, rasterize_scene

REFERENCE_SIZE = 16

TEMPLATE_CLASSES = (
    PostureClass.SUPINE,
    PostureClass.PRONE,
    PostureClass.SIDE,
    PostureClass.SITTING,
)


def _template_text(name: str) -> str:
    return resources.files("velomat").joinpath(f"data/templates/{name}.scene").read_text()


def _scale_scene(scene: Scene, geometry: MatGeometry) -> Scene:
    sr = (geometry.rows - 1) / (REFERENCE_SIZE - 1)
    sc = (geometry.cols - 1) / (REFERENCE_SIZE - 1)
    loads = tuple(
        Load(
            shape=ld.shape,
            center=(ld.center[0] * sr, ld.center[1] * sc),
            extents=(ld.extents[0] * sr, ld.extents[1] * sc),
            total_force=ld.total_force,
        )
        for ld in scene.loads
    )
    return Scene(geometry, loads)


def load_template_scenes(geometry: MatGeometry) -> dict[PostureClass, Scene]:
    ref = MatGeometry(rows=REFERENCE_SIZE, cols=REFERENCE_SIZE)
    out = {}
    for cls in TEMPLATE_CLASSES:
        scene = parse_scene(_template_text(cls.label), ref)
        out[cls] = scene if (geometry.rows, geometry.cols) == (16, 16) else _scale_scene(
            scene, geometry
        )
    return out


def template_image(scene: Scene, model: VelostatModel,
                   thresholds: ZoneThresholds = DEFAULT_ZONES) -> PressureImage:
    """Ground-truth pressure image of a template scene (no readout chain)."""
    fmap = rasterize_scene(scene)
    pressures = force_to_pressure_kpa(fmap.forces, scene.geometry)
    zones = label_zone_grid(fmap.forces, model, thresholds)
    return PressureImage(scene.geometry, pressures, zones)


def build_template_set(
    geometry: MatGeometry,
    model: VelostatModel,
    thresholds: ZoneThresholds = DEFAULT_ZONES,
    rejection_radius: float = 3.0,
) -> TemplateSet:
    scenes = load_template_scenes(geometry)
    entries = {}
    for cls, scene in scenes.items():
        image = template_image(scene, model, thresholds)
        entries[cls] = extract_features(image, model, thresholds)
    return TemplateSet.from_features(entries, geometry, rejection_radius)
