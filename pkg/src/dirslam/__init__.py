"""Direction-aware semi-dense RGB-D SLAM.

Surfels carry a position, a normal and a directional segment label.
Labels come from a Dirichlet-process mixture of von-Mises-Fisher
distributions smoothed by a planarity MRF, all sampled with Gibbs
sweeps; the camera is tracked by an ICP that adds surfels segment by
segment until the pose is well constrained.
"""

from dirslam.config import RunConfig
from dirslam.evaluation import evaluate_ate, evaluate_segmentation
from dirslam.lie import Pose
from dirslam.pipeline import run_slam

__all__ = ["Pose", "RunConfig", "evaluate_ate", "evaluate_segmentation", "run_slam"]
__version__ = "0.1.0"
