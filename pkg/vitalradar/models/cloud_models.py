from dataclasses import dataclass, field

import numpy as np


@dataclass
class RangeAzimuthMap:
    """Linear power over (range bin, azimuth) for one frame"""

    power: np.ndarray
    azimuth_grid: np.ndarray
    range_resolution: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.power.shape


@dataclass
class Detection:
    """CFAR hit with its Capon elevation"""

    range_bin: int
    azimuth: float
    elevation: float
    power: float


@dataclass
class PointCloud:
    """
    Points as rows of (x, y, z, power) in meters / linear power.

    frames tags every point with the frame it came from; frame_index is the
    single source frame, or None for an accumulated cloud.
    """

    points: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))
    frames: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    frame_index: int | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 4)
        self.frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        if self.frames.size == 0 and self.points.shape[0] and self.frame_index is not None:
            self.frames = np.full(self.points.shape[0], self.frame_index, dtype=np.int64)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def power(self) -> np.ndarray:
        return self.points[:, 3]
