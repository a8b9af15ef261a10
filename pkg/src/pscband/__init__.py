"""Numerical toolkit for positive scalar curvature on bands ``X x [0, 1]``."""

from .grid import Axis, AxisKind, Grid, Field, interval, periodic, sphere_pair
from .metric import MetricField, MetricSpec, sample
from .pipeline import PipelineParams, PipelineReport, Resolution, run

__all__ = ["Axis", "AxisKind", "Grid", "Field", "interval", "periodic", "sphere_pair",
           "MetricField", "MetricSpec", "sample", "PipelineParams", "PipelineReport", "Resolution", "run"]
__version__ = "0.1.0"
