"""
Articulated body template shared by the scene generator and the silhouette renderer.

Joint coordinates are (x, z) in the body plane: x lateral (left side of the
subject at +x), z height above the floor. The body plane sits at y = scene range.
"""

import math
from dataclasses import dataclass
from enum import Enum as PyEnum

import numpy as np

from vitalradar.models.posture_models import KEYPOINT_LABELS, Keypoints
from vitalradar.schemas.posture_schemas import Ellipse, normalize_rotation
from vitalradar.schemas.scene_schemas import Posture


class BodyPart(str, PyEnum):
    """Body parts modeled by one ellipse each"""

    HEAD = "head"
    TORSO = "torso"
    PELVIS = "pelvis"
    L_UPPER_ARM = "l_upper_arm"
    R_UPPER_ARM = "r_upper_arm"
    L_FOREARM = "l_forearm"
    R_FOREARM = "r_forearm"
    L_LEG = "l_leg"
    R_LEG = "r_leg"


_COMMON_JOINTS: dict[str, tuple[float, float]] = {
    "head": (0.0, 1.66),
    "neck": (0.0, 1.50),
    "chest_center": (0.0, 1.27),
    "spine_mid": (0.0, 1.155),
    "pelvis": (0.0, 0.95),
    "l_shoulder": (0.22, 1.44),
    "r_shoulder": (-0.22, 1.44),
    "l_hip": (0.10, 0.90),
    "r_hip": (-0.10, 0.90),
    "l_knee": (0.105, 0.48),
    "r_knee": (-0.105, 0.48),
    "l_ankle": (0.11, 0.06),
    "r_ankle": (-0.11, 0.06),
}
_ARM_DOWN = {"elbow": (0.27, 1.17), "wrist": (0.29, 0.92)}
_ARM_UP = {"elbow": (0.30, 1.71), "wrist": (0.32, 1.97)}

# (part, proximal joint, distal joint, minor semi-axis); head and pelvis are centered parts
_SEGMENTS: tuple[tuple[BodyPart, str, str, float], ...] = (
    (BodyPart.L_UPPER_ARM, "l_shoulder", "l_elbow", 0.045),
    (BodyPart.R_UPPER_ARM, "r_shoulder", "r_elbow", 0.045),
    (BodyPart.L_FOREARM, "l_elbow", "l_wrist", 0.04),
    (BodyPart.R_FOREARM, "r_elbow", "r_wrist", 0.04),
    (BodyPart.L_LEG, "l_hip", "l_ankle", 0.07),
    (BodyPart.R_LEG, "r_hip", "r_ankle", 0.07),
)
HEAD_AXES = (0.11, 0.08)
PELVIS_AXES = (0.17, 0.08)
TORSO_MINOR = 0.15

# Scatterer reflectivities per body region
CHEST_REFLECTIVITY = 1.0
_PART_REFLECTIVITY: dict[str, float] = {
    "head": 0.35,
    "torso": 0.5,
    "pelvis": 0.4,
    "upper_arm": 0.2,
    "forearm": 0.15,
    "leg": 0.25,
}


def _mirror(point: tuple[float, float]) -> tuple[float, float]:
    return (-point[0], point[1])


def posture_joints(posture: Posture) -> dict[str, np.ndarray]:
    """All 17 joints in the body plane for a posture"""
    joints = dict(_COMMON_JOINTS)
    left = _ARM_UP if posture == Posture.BAR else _ARM_DOWN
    right = _ARM_UP if posture in (Posture.BAR, Posture.OAR) else _ARM_DOWN
    joints["l_elbow"], joints["l_wrist"] = left["elbow"], left["wrist"]
    joints["r_elbow"], joints["r_wrist"] = _mirror(right["elbow"]), _mirror(right["wrist"])
    return {name: np.asarray(joints[name], dtype=float) for name in KEYPOINT_LABELS}


def _segment_ellipse(p: np.ndarray, q: np.ndarray, minor: float, label: str) -> Ellipse:
    d = q - p
    return Ellipse(
        center=tuple((p + q) / 2.0),
        semi_axes=(float(np.linalg.norm(d)) / 2.0, minor),
        rotation=normalize_rotation(math.atan2(d[1], d[0])),
        label=label,
    )


def posture_ellipses(posture: Posture) -> list[Ellipse]:
    """The 9 labeled part ellipses of a posture"""
    joints = posture_joints(posture)
    torso_bottom = 2.0 * joints["chest_center"] - joints["neck"]
    ellipses = [
        Ellipse(
            center=tuple(joints["head"]),
            semi_axes=HEAD_AXES,
            rotation=normalize_rotation(math.pi / 2),
            label=BodyPart.HEAD.value,
        ),
        _segment_ellipse(joints["neck"], torso_bottom, TORSO_MINOR, BodyPart.TORSO.value),
        Ellipse(
            center=tuple(joints["pelvis"]),
            semi_axes=PELVIS_AXES,
            rotation=0.0,
            label=BodyPart.PELVIS.value,
        ),
    ]
    for part, proximal, distal, minor in _SEGMENTS:
        ellipses.append(_segment_ellipse(joints[proximal], joints[distal], minor, part.value))
    return ellipses


def posture_keypoints(posture: Posture, body_range: float) -> Keypoints:
    """Exact 3D keypoints of a posture with the body plane at y = body_range"""
    joints = posture_joints(posture)
    coords = [(joints[name][0], body_range, joints[name][1]) for name in KEYPOINT_LABELS]
    return Keypoints(np.asarray(coords))


@dataclass(frozen=True)
class BodyScatterer:
    label: str
    position: tuple[float, float, float]
    reflectivity: float


def posture_scatterers(posture: Posture, body_range: float) -> list[BodyScatterer]:
    """
    Point scatterers of a posture: the chest plus static points on every part.

    The torso contributes at spine_mid so it never coincides with the chest.
    """
    joints = posture_joints(posture)

    def at(point: np.ndarray) -> tuple[float, float, float]:
        return (float(point[0]), body_range, float(point[1]))

    scatterers = [
        BodyScatterer("chest", at(joints["chest_center"]), CHEST_REFLECTIVITY),
        BodyScatterer("head", at(joints["head"]), _PART_REFLECTIVITY["head"]),
        BodyScatterer("torso", at(joints["spine_mid"]), _PART_REFLECTIVITY["torso"]),
        BodyScatterer("pelvis", at(joints["pelvis"]), _PART_REFLECTIVITY["pelvis"]),
    ]
    for side in ("l", "r"):
        shoulder, elbow, wrist = (joints[f"{side}_{j}"] for j in ("shoulder", "elbow", "wrist"))
        hip, knee, ankle = (joints[f"{side}_{j}"] for j in ("hip", "knee", "ankle"))
        scatterers += [
            BodyScatterer(f"{side}_upper_arm", at((shoulder + elbow) / 2), _PART_REFLECTIVITY["upper_arm"]),
            BodyScatterer(f"{side}_forearm", at((elbow + wrist) / 2), _PART_REFLECTIVITY["forearm"]),
            BodyScatterer(f"{side}_thigh", at((hip + knee) / 2), _PART_REFLECTIVITY["leg"]),
            BodyScatterer(f"{side}_shin", at((knee + ankle) / 2), _PART_REFLECTIVITY["leg"]),
        ]
    return scatterers
