"""Point-cloud distance metrics: accuracy, completeness, and their mean.

Accuracy is the mean distance from each predicted point to its nearest
ground-truth point; completeness swaps the roles. Distances above the
inlier threshold are discarded as outliers before averaging. An empty
inlier set scores the threshold itself, the worst value the trimmed
mean can take, so a cloud with no inliers cannot outscore one with
some. Nearest neighbors come from a k-d tree; the test suite checks
the result against a quadratic brute-force scan for exact equality.
"""

from __future__ import annotations

from dataclasses import dataclass

from scipy.spatial import cKDTree

from .fusion import PointCloud

__all__ = ["MetricsReport", "evaluate_clouds"]


@dataclass(frozen=True)
class MetricsReport:
    """Cloud-to-cloud distances in mm; overall is their arithmetic mean."""

    accuracy: float
    completeness: float
    overall: float
    inlier_threshold: float

    def __post_init__(self) -> None:
        want = (self.accuracy + self.completeness) / 2.0
        if abs(self.overall - want) > 1e-12:
            raise ValueError(
                f"overall {self.overall} != mean of accuracy and completeness {want}"
            )
        if self.inlier_threshold <= 0:
            raise ValueError(f"inlier_threshold must be positive, got {self.inlier_threshold}")


def _directed_mean_distance(src: PointCloud, dst: PointCloud, threshold: float) -> float:
    dists, _ = cKDTree(dst.points).query(src.points, k=1)
    inliers = dists[dists <= threshold]
    if inliers.size == 0:
        return float(threshold)
    return float(inliers.mean())


def evaluate_clouds(
    pred: PointCloud, gt: PointCloud, inlier_threshold: float = 20.0
) -> MetricsReport:
    """Score a predicted cloud against ground truth; both must be non-empty."""
    if pred.count == 0 or gt.count == 0:
        raise ValueError(
            f"clouds must be non-empty, got {pred.count} predicted and {gt.count} gt points"
        )
    accuracy = _directed_mean_distance(pred, gt, inlier_threshold)
    completeness = _directed_mean_distance(gt, pred, inlier_threshold)
    return MetricsReport(
        accuracy=accuracy,
        completeness=completeness,
        overall=(accuracy + completeness) / 2.0,
        inlier_threshold=inlier_threshold,
    )
