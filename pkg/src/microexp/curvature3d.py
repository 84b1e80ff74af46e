"""Principal curvatures on point clouds and the derived quantized surface
features: nine-way HK surface typing and the nine-bin shape index.

Curvature sign convention: the local surface normal is oriented toward the
sensor (the -z half-space), so a patch bulging toward the sensor has
negative principal curvatures and lands at the convex end (1.0) of the
shape-index scale, while a pit maps toward 0.0.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .lbptop import FeatureVector
from .preprocess3d import PointCloudFrame

# Default 32-of-49 landmark subset used for the local 3-d features, indices
# into the 49-point markup (see synth.LANDMARK_LAYOUT): all 10 brow points,
# the 4 eye corners, 6 nose points, and 12 mouth points.
DEFAULT_LANDMARK_SUBSET = (
    0, 1, 2, 3, 4, 5, 6, 7, 8, 9,          # brows
    19, 22, 25, 28,                         # eye corners
    10, 12, 13, 14, 16, 18,                 # nose
    31, 33, 35, 37, 39, 41, 43, 44, 45, 46, 47, 48,  # mouth
)

SI_BIN_CENTERS = tuple(i / 8 for i in range(9))
SI_BIN_NAMES = ("Cup", "Trough", "Rut Saddle", "Rut", "Saddle",
                "Saddle Ridge", "Ridge", "Dome", "Cap")


def load_landmark_subset(path) -> tuple[int, ...]:
    """Read a landmark-subset file: one 0-based index per line, '#' comments."""
    from pathlib import Path

    indices = []
    for line_no, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            idx = int(line)
        except ValueError:
            raise ValueError(f"{path} line {line_no}: expected an integer index") from None
        if not 0 <= idx <= 48:
            raise ValueError(f"{path} line {line_no}: index {idx} outside 0..48")
        indices.append(idx)
    if not indices:
        raise ValueError(f"{path}: empty landmark subset")
    return tuple(indices)


class DegenerateSurfaceError(ValueError):
    """Neighborhood too flat/collinear for a surface fit."""


class SurfaceType(Enum):
    """Nine-way local surface classification from the signs of K and H.

    Enum order is the fixed histogram bin order of the HK feature.
    """

    PEAK = 0
    RIDGE = 1
    SADDLE_RIDGE = 2
    FLAT = 3
    MINIMAL_SURFACE = 4
    PIT = 5
    VALLEY = 6
    SADDLE_VALLEY = 7
    UNDEFINED = 8  # K > 0 with H = 0: contradictory, kept as a feature bin


@dataclass(frozen=True)
class PrincipalCurvatures:
    """Minimum and maximum normal curvature at a point, in 1/meters."""

    p_min: float
    p_max: float

    def __post_init__(self):
        if not (math.isfinite(self.p_min) and math.isfinite(self.p_max)):
            raise ValueError("principal curvatures must be finite")
        if self.p_min > self.p_max:
            raise ValueError(f"need p_min <= p_max, got {self.p_min} > {self.p_max}")


@dataclass(frozen=True)
class CurvatureConfig:
    """Radii and thresholds for the 3-d curvature features."""

    neighborhood_radius: float = 0.02   # meters, surface-fit neighborhood
    zero_eps: float = 0.5               # 1/meters, |.| <= eps counts as zero in HK signs
    landmark_region_radius: float = 0.02  # meters, sphere around each landmark

    def __post_init__(self):
        if not (self.neighborhood_radius > 0 and self.landmark_region_radius > 0):
            raise ValueError("radii must be positive")
        if not self.zero_eps > 0:
            raise ValueError("zero_eps must be positive")

    @property
    def fingerprint(self) -> str:
        key = (f"curv;nr={self.neighborhood_radius!r};eps={self.zero_eps!r};"
               f"rr={self.landmark_region_radius!r}")
        return hashlib.sha1(key.encode()).hexdigest()[:12]


def _curvatures_from_neighbors(neighbors: np.ndarray, point: np.ndarray,
                               toward: np.ndarray) -> PrincipalCurvatures:
    """Principal curvatures at ``point`` from its neighborhood.

    The neighborhood covariance gives a local frame (normal = smallest
    principal axis, oriented along ``toward``); the height field over the
    tangent plane is fit with a full cubic bivariate polynomial, and the
    Weingarten map is assembled from the fit's first- and second-order
    coefficients at the origin.
    """
    if neighbors.shape[0] < 10:
        raise ValueError(f"need at least 10 neighbors, got {neighbors.shape[0]}")

    centered = neighbors - neighbors.mean(axis=0)
    cov = centered.T @ centered
    eigvals, eigvecs = np.linalg.eigh(cov)
    normal = eigvecs[:, 0]
    if normal @ toward < 0:
        normal = -normal
    e1, e2 = eigvecs[:, 2], eigvecs[:, 1]

    rel = neighbors - point
    scale = max(np.linalg.norm(rel, axis=1).max(), 1e-12)
    u = (rel @ e1) / scale
    v = (rel @ e2) / scale
    z = (rel @ normal) / scale

    basis = np.column_stack([
        np.ones_like(u), u, v,
        u * u, u * v, v * v,
        u ** 3, u * u * v, u * v * v, v ** 3,
    ])
    coeffs, _, rank, _ = np.linalg.lstsq(basis, z, rcond=None)
    if rank < basis.shape[1]:
        raise DegenerateSurfaceError(
            f"rank-deficient cubic fit (rank {rank}); neighborhood is degenerate")

    # Derivatives at the origin; cubic terms contribute nothing there.
    h_u, h_v = coeffs[1], coeffs[2]
    h_uu = 2.0 * coeffs[3] / scale
    h_uv = coeffs[4] / scale
    h_vv = 2.0 * coeffs[5] / scale

    e = 1.0 + h_u * h_u
    f = h_u * h_v
    g = 1.0 + h_v * h_v
    norm = math.sqrt(1.0 + h_u * h_u + h_v * h_v)
    l = h_uu / norm
    m = h_uv / norm
    n = h_vv / norm

    det_i = e * g - f * f
    k = (l * n - m * m) / det_i
    h = (e * n - 2.0 * f * m + g * l) / (2.0 * det_i)
    disc = max(h * h - k, 0.0)
    root = math.sqrt(disc)
    return PrincipalCurvatures(p_min=h - root, p_max=h + root)


def estimate_principal_curvatures(cloud: PointCloudFrame, point, radius: float,
                                  toward=(0.0, 0.0, -1.0)) -> PrincipalCurvatures:
    """Principal curvatures of the cloud surface at ``point`` using neighbors
    within ``radius``. Raises if fewer than 10 neighbors are found or the
    neighborhood does not determine a surface."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    p = np.asarray(point, dtype=np.float64).reshape(3)
    tree = cKDTree(cloud.points)
    idx = tree.query_ball_point(p, r=radius)
    return _curvatures_from_neighbors(cloud.points[idx], p,
                                      np.asarray(toward, dtype=np.float64))


def gaussian_mean_curvature(pc: PrincipalCurvatures) -> tuple[float, float]:
    """(K, H): product and average of the principal curvatures."""
    return pc.p_min * pc.p_max, 0.5 * (pc.p_min + pc.p_max)


def hk_classify(k: float, h: float, zero_eps: float = 0.5) -> SurfaceType:
    """Nine-way surface type from the signs of K and H; values within
    zero_eps of zero count as zero."""
    if not zero_eps > 0:
        raise ValueError("zero_eps must be positive")
    sk = 0 if abs(k) <= zero_eps else (1 if k > 0 else -1)
    sh = 0 if abs(h) <= zero_eps else (1 if h > 0 else -1)
    table = {
        (1, 1): SurfaceType.PEAK,
        (0, 1): SurfaceType.RIDGE,
        (-1, 1): SurfaceType.SADDLE_RIDGE,
        (1, 0): SurfaceType.UNDEFINED,
        (0, 0): SurfaceType.FLAT,
        (-1, 0): SurfaceType.MINIMAL_SURFACE,
        (1, -1): SurfaceType.PIT,
        (0, -1): SurfaceType.VALLEY,
        (-1, -1): SurfaceType.SADDLE_VALLEY,
    }
    return table[(sk, sh)]


def shape_index(pc: PrincipalCurvatures) -> float:
    """Shape index in [0, 1]: 1/2 - (1/pi) * atan((p_max+p_min)/(p_max-p_min)).

    Umbilic points (p_max == p_min) take the limit value: 0 for a positive
    pair, 1 for a negative pair, and 0.5 for the flat point.
    """
    spread = pc.p_max - pc.p_min
    total = pc.p_max + pc.p_min
    if spread == 0.0:
        if total > 0.0:
            return 0.0
        if total < 0.0:
            return 1.0
        return 0.5
    si = 0.5 - math.atan(total / spread) / math.pi
    return min(max(si, 0.0), 1.0)


def quantize_si(si: float) -> int:
    """Nearest of the nine shape-index bin centers {0, 0.125, ..., 1};
    midpoints round toward the saddle (0.5)."""
    if not 0.0 <= si <= 1.0:
        raise ValueError(f"shape index must lie in [0, 1], got {si}")
    low = int(math.floor(si * 8))
    bins = [low] if low == 8 else [low, low + 1]
    best = bins[0]
    for b in bins[1:]:
        d_best = abs(si - SI_BIN_CENTERS[best])
        d_b = abs(si - SI_BIN_CENTERS[b])
        if d_b < d_best or (d_b == d_best
                            and abs(SI_BIN_CENTERS[b] - 0.5) < abs(SI_BIN_CENTERS[best] - 0.5)):
            best = b
    return best


def landmark_local_histogram(cloud: PointCloudFrame, landmark, region_radius: float,
                             kind: str, config: CurvatureConfig,
                             toward=(0.0, 0.0, -1.0), tree: cKDTree | None = None) -> np.ndarray:
    """Nine-bin curvature-feature frequencies over the spherical region
    around one landmark.

    ``kind`` is "si" (quantized shape index) or "hk" (surface types in
    SurfaceType order). Frequencies are counts divided by the number of
    region vertices with a valid estimate, so the histogram sums to 1.
    A prebuilt KD-tree over cloud.points may be passed to amortize repeated
    calls on the same frame.
    """
    kind = kind.lower()
    if kind not in ("si", "hk"):
        raise ValueError(f"kind must be 'si' or 'hk', got {kind!r}")
    if not region_radius > 0:
        raise ValueError("region radius must be positive")

    lm = np.asarray(landmark, dtype=np.float64).reshape(3)
    if tree is None:
        tree = cKDTree(cloud.points)
    region_idx = tree.query_ball_point(lm, r=region_radius)
    if len(region_idx) < 10:
        raise ValueError(
            f"landmark region at {lm.tolist()} has {len(region_idx)} points, need >= 10")

    toward_v = np.asarray(toward, dtype=np.float64)
    hist = np.zeros(9)
    n_ok = 0
    for i in region_idx:
        vertex = cloud.points[i]
        neigh_idx = tree.query_ball_point(vertex, r=config.neighborhood_radius)
        try:
            pc = _curvatures_from_neighbors(cloud.points[neigh_idx], vertex, toward_v)
        except (ValueError, DegenerateSurfaceError):
            continue  # speckle vertex; drop it from the frequency base
        if kind == "si":
            hist[quantize_si(shape_index(pc))] += 1
        else:
            k, h = gaussian_mean_curvature(pc)
            hist[hk_classify(k, h, config.zero_eps).value] += 1
        n_ok += 1

    if n_ok < 10:
        raise ValueError(
            f"landmark region at {lm.tolist()}: only {n_ok} vertices had a valid estimate")
    return hist / n_ok


def sequence_feature(sample, record, weights, kind: str, config: CurvatureConfig,
                     frames: str = "onset-apex", subset=None,
                     toward=(0.0, 0.0, -1.0)) -> FeatureVector:
    """Weighted landmark-local curvature feature of a whole sample.

    For each landmark of the 32-point subset, the per-frame nine-bin
    histograms over the selected frames are concatenated and scaled by that
    landmark's weight; landmark blocks are then concatenated in subset
    order. ``frames`` selects "onset-apex" (default; two frames) or "all"
    (every frame from onset to offset).
    """
    subset = tuple(subset) if subset is not None else DEFAULT_LANDMARK_SUBSET
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape[0] != len(subset):
        raise ValueError(f"need one weight per subset landmark "
                         f"({len(subset)}), got {weights.shape[0]}")
    if frames == "onset-apex":
        frame_ids = [record.onset, record.apex]
    elif frames == "all":
        frame_ids = list(range(record.onset, record.offset + 1))
    else:
        raise ValueError(f"frames must be 'onset-apex' or 'all', got {frames!r}")

    if sample.landmarks3d is None:
        raise ValueError("sample has no 3-d landmarks")
    for t in frame_ids:
        if t >= len(sample.clouds):
            raise ValueError(f"frame {t} not present in the sample ({len(sample.clouds)} frames)")

    trees = {t: cKDTree(sample.clouds[t].points) for t in set(frame_ids)}
    parts = []
    for j, lm_idx in enumerate(subset):
        for t in frame_ids:
            lm = sample.landmarks3d[t][lm_idx]
            try:
                hist = landmark_local_histogram(sample.clouds[t], lm,
                                                config.landmark_region_radius,
                                                kind, config, toward=toward,
                                                tree=trees[t])
            except ValueError as exc:
                raise ValueError(f"landmark {lm_idx} (frame {t}): {exc}") from None
            parts.append(weights[j] * hist)

    return FeatureVector(np.concatenate(parts), tag=f"3d-{kind.lower()}",
                         fingerprint=config.fingerprint)
