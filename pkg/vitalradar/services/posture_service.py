import logging
import math

import numpy as np

from vitalradar.core.exceptions import MappingException, MetricException
from vitalradar.models.body import BodyPart, posture_keypoints
from vitalradar.models.cloud_models import PointCloud
from vitalradar.models.posture_models import KEYPOINT_LABELS, InputTensor, Keypoints
from vitalradar.schemas.posture_schemas import Ellipse, VoxelBounds
from vitalradar.schemas.scene_schemas import Posture

logger = logging.getLogger(__name__)


def _endpoints_by(ellipse: Ellipse, key) -> tuple[np.ndarray, np.ndarray]:
    """Major-axis endpoints ordered so that key(first) <= key(second)"""
    p, q = ellipse.endpoints()
    return (p, q) if key(p) <= key(q) else (q, p)


def keypoints_from_ellipses(
    ellipses: list[Ellipse],
    body_range: float,
    posture: Posture = Posture.BAD,
) -> Keypoints:
    """
    Map labeled part ellipses to the 17-point skeleton.

    Centers and major-axis endpoints give the joints: the torso runs from the
    neck to below the chest, limb segments run proximal to distal, and the
    knee sits at the leg center. Parts without an ellipse fall back to the
    posture template shifted by the fitted torso offset.

    Args:
        ellipses: Labeled ellipses in the body plane (x, z)
        body_range: Depth of the body plane, used as every keypoint's y
        posture: Template used for missing parts

    Returns:
        Keypoints with y = body_range

    Raises:
        MappingException: If no ellipse is labeled torso
    """
    parts = {e.label: e for e in ellipses if e.label is not None}
    torso = parts.get(BodyPart.TORSO.value)
    if torso is None:
        raise MappingException("ellipse set has no torso")

    template = posture_keypoints(posture, body_range)
    offset = np.asarray(torso.center) - template["chest_center"][[0, 2]]
    joints: dict[str, np.ndarray] = {"chest_center": np.asarray(torso.center)}

    head = parts.get(BodyPart.HEAD.value)
    if head is not None:
        joints["head"] = np.asarray(head.center)
        lower, upper = _endpoints_by(torso, lambda p: np.linalg.norm(p - joints["head"]))
        joints["neck"], torso_end = lower, upper
    else:
        torso_end, joints["neck"] = _endpoints_by(torso, lambda p: p[1])
    joints["spine_mid"] = (joints["chest_center"] + torso_end) / 2.0

    pelvis = parts.get(BodyPart.PELVIS.value)
    if pelvis is not None:
        joints["pelvis"] = np.asarray(pelvis.center)

    for side in ("l", "r"):
        upper_arm = parts.get(f"{side}_upper_arm")
        forearm = parts.get(f"{side}_forearm")
        leg = parts.get(f"{side}_leg")
        if upper_arm is not None:
            shoulder, elbow = _endpoints_by(upper_arm, lambda p: np.linalg.norm(p - joints["neck"]))
            joints[f"{side}_shoulder"], joints[f"{side}_elbow"] = shoulder, elbow
        if forearm is not None:
            anchor = joints.get(f"{side}_elbow", joints["neck"])
            near, far = _endpoints_by(forearm, lambda p: np.linalg.norm(p - anchor))
            joints.setdefault(f"{side}_elbow", near)
            joints[f"{side}_wrist"] = far
        if leg is not None:
            ankle, hip = _endpoints_by(leg, lambda p: p[1])
            joints[f"{side}_hip"], joints[f"{side}_ankle"] = hip, ankle
            joints[f"{side}_knee"] = np.asarray(leg.center)

    missing = [name for name in KEYPOINT_LABELS if name not in joints]
    if missing:
        logger.warning("No ellipse for %s; using template positions", ", ".join(missing))
    coords = []
    for name in KEYPOINT_LABELS:
        x, z = joints[name] if name in joints else template[name][[0, 2]] + offset
        coords.append((x, body_range, z))
    return Keypoints(np.asarray(coords))


def voxelize_projections(cloud: PointCloud, bounds: VoxelBounds | None = None) -> InputTensor:
    """
    Power-weighted depth-azimuth and depth-elevation occupancy grids.

    Channel 0 bins (y, x), channel 1 bins (y, z); each plane is scaled so its
    maximum is 1. Points outside the bounds are dropped; an empty cloud gives
    a zero tensor.

    Args:
        cloud: Point cloud (single or accumulated)
        bounds: Scene box and grid size

    Returns:
        InputTensor of shape (2, size, size)
    """
    bounds = bounds or VoxelBounds()
    planes = np.zeros((2, bounds.size, bounds.size))
    if len(cloud):
        x, y, z = cloud.xyz.T
        for channel, (lateral, lateral_range) in enumerate(((x, bounds.x), (z, bounds.z))):
            hist, _, _ = np.histogram2d(
                y, lateral, bins=bounds.size, range=(bounds.y, lateral_range), weights=cloud.power
            )
            peak = hist.max()
            planes[channel] = hist / peak if peak > 0 else hist
    return InputTensor(planes)


def chest_from_keypoints(keypoints: Keypoints, radar_height: float) -> tuple[float, float]:
    """
    Azimuth and elevation of the chest center as seen from the radar.

    Args:
        keypoints: Estimated keypoints
        radar_height: Radar height in meters

    Returns:
        (azimuth, elevation) in degrees

    Raises:
        MetricException: If the chest is non-finite or vertically above/below the radar
    """
    x, y, z = keypoints.chest
    horizontal = math.hypot(x, y)
    if not np.all(np.isfinite((x, y, z))):
        raise MetricException("chest keypoint is not finite")
    if horizontal == 0.0:
        raise MetricException("chest angle undefined at the radar origin")
    return math.degrees(math.atan2(x, y)), math.degrees(math.atan2(z - radar_height, horizontal))


def keypoint_errors(predicted: Keypoints, truth: Keypoints) -> np.ndarray:
    """Euclidean error per keypoint, meters"""
    return np.linalg.norm(predicted.coords - truth.coords, axis=1)


def chest_angle_errors(
    predicted: Keypoints, truth: Keypoints, radar_height: float
) -> tuple[float, float]:
    """
    Absolute chest azimuth and elevation errors in degrees.

    Raises:
        MetricException: If either chest angle is undefined
    """
    az_pred, el_pred = chest_from_keypoints(predicted, radar_height)
    az_true, el_true = chest_from_keypoints(truth, radar_height)
    return abs(az_pred - az_true), abs(el_pred - el_true)
