from .camera import CameraConfig, in_frustum, pixel_rays, project, to_pixel
from .passes import (
    CounterfactualPair,
    LayerBundle,
    PassSet,
    RenderSettings,
    light_additivity_check,
    light_sample_points,
    recompose,
    render_counterfactual,
    render_full,
    render_layers,
    render_sequence,
    shade_points,
    to_display,
)

__all__ = [
    "CameraConfig", "CounterfactualPair", "LayerBundle", "PassSet", "RenderSettings", "in_frustum",
    "light_additivity_check", "light_sample_points", "pixel_rays", "project", "recompose",
    "render_counterfactual", "render_full", "render_layers", "render_sequence", "shade_points",
    "to_display", "to_pixel",
]
