"""Velocity estimation, motion-distortion correction and tracking for oscillating-scan lidar with a camera."""

__version__ = "0.1.0"
