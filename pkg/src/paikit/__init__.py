"""Pedestrian accessible infrastructure inventory from mobile LiDAR and satellite imagery.

The pipeline turns geo-referenced point clouds into an infrastructure
inventory in four stages: classify ground/vegetation, render 2D image
representations (bird's-eye and synthetic street views plus fetched
satellite imagery), segment them through a promptable backend, then
re-project the masks to 3D, pool the labels and derive sidewalk geometry.
"""

__version__ = "0.1.0"
