"""Adaptive frame sampling for stable fast-forward of head-worn walking video.

The library turns a shaky first-person sequence into a stable fast-forward
by scoring every candidate frame transition (motion-direction offset from
image center, accumulated flow magnitude, color-histogram distance) and
solving a shortest path over the transition graph.  It also extracts
approximate stereo pairs from the lateral head sway of a walking wearer.
"""

from steadyskip.costgraph import SamplePlan, SamplingConfig
from steadyskip.epipolar import MotionDirection
from steadyskip.flow import FlowGrid, GridSpec, SwayCurve
from steadyskip.ingest import Frame, open_frame_source

__version__ = "0.1.0"

__all__ = [
    "Frame",
    "FlowGrid",
    "GridSpec",
    "MotionDirection",
    "SamplePlan",
    "SamplingConfig",
    "SwayCurve",
    "open_frame_source",
    "__version__",
]
