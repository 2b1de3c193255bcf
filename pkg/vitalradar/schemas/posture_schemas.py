import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator


class Ellipse(BaseModel):
    """Ellipse in the silhouette plane (x lateral, z height), rotation of the major axis"""

    center: tuple[float, float]
    semi_axes: tuple[float, float]
    rotation: float
    label: str | None = None

    @model_validator(mode="after")
    def check_shape(self) -> "Ellipse":
        a, b = self.semi_axes
        if not a >= b > 0:
            raise ValueError(f"semi axes must satisfy a >= b > 0, got ({a}, {b})")
        if not -math.pi / 2 <= self.rotation < math.pi / 2:
            raise ValueError(f"rotation {self.rotation} outside [-pi/2, pi/2)")
        return self

    @property
    def major_direction(self) -> np.ndarray:
        return np.array([math.cos(self.rotation), math.sin(self.rotation)])

    @property
    def perimeter(self) -> float:
        """Ramanujan's second approximation"""
        a, b = self.semi_axes
        h = ((a - b) / (a + b)) ** 2
        return math.pi * (a + b) * (1 + 3 * h / (10 + math.sqrt(4 - 3 * h)))

    def endpoints(self) -> tuple[np.ndarray, np.ndarray]:
        """Major-axis endpoints"""
        c = np.asarray(self.center)
        offset = self.semi_axes[0] * self.major_direction
        return c - offset, c + offset

    def boundary(self, n: int = 256) -> np.ndarray:
        """n points on the outline, shape (n, 2)"""
        t = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        a, b = self.semi_axes
        cos_r, sin_r = math.cos(self.rotation), math.sin(self.rotation)
        x = a * np.cos(t)
        z = b * np.sin(t)
        return np.column_stack(
            (self.center[0] + x * cos_r - z * sin_r, self.center[1] + x * sin_r + z * cos_r)
        )


def normalize_rotation(angle: float) -> float:
    """Map an axis angle into [-pi/2, pi/2)"""
    wrapped = (angle + math.pi / 2) % math.pi - math.pi / 2
    # the modulo can round up to pi just below -pi/2
    return -math.pi / 2 if wrapped >= math.pi / 2 else wrapped


class NetworkArchitecture(BaseModel):
    """Layer sizes of the keypoint regression network"""

    model_config = {"frozen": True}

    input_size: int = Field(default=32, gt=0)
    in_channels: int = Field(default=2, gt=0)
    conv_depths: tuple[int, ...] = (32, 64, 128)
    hidden: int = Field(default=128, gt=0)
    outputs: int = Field(default=51, gt=0)

    @model_validator(mode="after")
    def check_chain(self) -> "NetworkArchitecture":
        if not self.conv_depths or min(self.conv_depths) < 1:
            raise ValueError("conv_depths must list at least one positive depth")
        if self.input_size % (2 ** len(self.conv_depths)) != 0:
            raise ValueError(
                f"input_size {self.input_size} not divisible by 2^{len(self.conv_depths)} pooling"
            )
        return self

    @property
    def final_size(self) -> int:
        return self.input_size // (2 ** len(self.conv_depths))

    @property
    def flat_size(self) -> int:
        return self.final_size**2 * self.conv_depths[-1]


class TrainConfig(BaseModel):
    """Mini-batch training parameters"""

    learning_rate: float = Field(default=0.001, ge=0)
    batch_size: int = Field(default=100, ge=1)
    epochs: int = Field(default=200, ge=0)
    seed: int = 0
    dropout_rate: float = Field(default=0.2, ge=0, lt=1)
    optimizer: Literal["adam", "sgd"] = "adam"
    architecture: NetworkArchitecture = Field(default_factory=NetworkArchitecture)


class VoxelBounds(BaseModel):
    """Scene box projected onto the depth-azimuth and depth-elevation planes, meters"""

    x: tuple[float, float] = (-1.0, 1.0)
    y: tuple[float, float] = (1.0, 3.0)
    z: tuple[float, float] = (0.0, 2.2)
    size: int = Field(default=32, gt=0)

    @model_validator(mode="after")
    def check_extent(self) -> "VoxelBounds":
        for name in ("x", "y", "z"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} bounds must satisfy lo < hi, got ({lo}, {hi})")
        return self
