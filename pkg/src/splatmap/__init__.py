"""Differentiable RGB + depth + semantic isotropic Gaussian splatting on the CPU."""
import warnings

warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

from .core import Camera, FrameSet, GaussianMap, GaussianPrimitive, MapValidationError  # noqa: E402
from .ply import MapFormatError, load_map, save_map  # noqa: E402
from .renderer import RenderConfig, RenderOutput, render, render_at_level, render_naive  # noqa: E402
from .backward import ParamGradients, backward, check_gradients  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "Camera", "FrameSet", "GaussianMap", "GaussianPrimitive", "MapValidationError", "MapFormatError",
    "load_map", "save_map", "RenderConfig", "RenderOutput", "render", "render_at_level", "render_naive",
    "ParamGradients", "backward", "check_gradients",
]
