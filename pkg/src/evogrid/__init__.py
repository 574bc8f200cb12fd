"""Evidential occupancy grid mapping from lidar point clouds."""

__version__ = "0.1.0"
