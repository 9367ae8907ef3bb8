from .camera import Camera, look_at, read_camera, write_camera
from .pipeline import CHANNELS, LayerGrads, RenderResult, SceneLayer, backward_render, render, render_all
from .projection import LOWPASS, MIN_ALPHA, NEAR, Splat2D, Splats, project, project_backward, project_gaussians
from .raster import T_STOP, RasterRecord, rasterize, rasterize_backward
from .shading import ColorModel, canonical_view_dir, canonical_view_dirs, shade, view_basis

__all__ = [
    "Camera", "look_at", "read_camera", "write_camera",
    "CHANNELS", "LayerGrads", "RenderResult", "SceneLayer", "backward_render", "render", "render_all",
    "LOWPASS", "MIN_ALPHA", "NEAR", "Splat2D", "Splats", "project", "project_backward", "project_gaussians",
    "T_STOP", "RasterRecord", "rasterize", "rasterize_backward",
    "ColorModel", "canonical_view_dir", "canonical_view_dirs", "shade", "view_basis",
]
