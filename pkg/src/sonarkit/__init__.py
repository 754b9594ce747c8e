"""Forward-looking sonar toolkit: self-supervised denoising, guided refinement,
detector-free registration and panorama mosaicking from imagery alone."""

from .geometry import CartesianImage, PolarFrame, ScanConverter, SensorGeometry, polar_to_cartesian
from .ingest import FrameSequence, read_container, write_container
from .pose import Pose2D

__version__ = "0.1.0"

__all__ = [
    "CartesianImage", "FrameSequence", "PolarFrame", "Pose2D", "ScanConverter", "SensorGeometry",
    "polar_to_cartesian", "read_container", "write_container",
]
