from dataclasses import dataclass, field

import numpy as np

from vitalradar.core.exceptions import ConfigurationException
from vitalradar.schemas.posture_schemas import NetworkArchitecture

KEYPOINT_LABELS: tuple[str, ...] = (
    "head",
    "neck",
    "chest_center",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "pelvis",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
    "spine_mid",
)
N_KEYPOINTS = len(KEYPOINT_LABELS)
CHEST_INDEX = KEYPOINT_LABELS.index("chest_center")


@dataclass
class Keypoints:
    """17 labeled 3D body key points, coords shape (17, 3) in meters"""

    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float).reshape(N_KEYPOINTS, 3)

    @classmethod
    def from_vector(cls, values: np.ndarray) -> "Keypoints":
        values = np.asarray(values, dtype=float)
        if values.size != 3 * N_KEYPOINTS:
            raise ConfigurationException(f"expected {3 * N_KEYPOINTS} values, got {values.size}")
        return cls(values.reshape(N_KEYPOINTS, 3))

    def as_vector(self) -> np.ndarray:
        return self.coords.reshape(-1).copy()

    def __getitem__(self, label: str) -> np.ndarray:
        return self.coords[KEYPOINT_LABELS.index(label)]

    @property
    def chest(self) -> np.ndarray:
        return self.coords[CHEST_INDEX]


@dataclass
class InputTensor:
    """Depth-azimuth and depth-elevation occupancy grids, shape (2, size, size), in [0, 1]"""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3 or self.data.shape[1] != self.data.shape[2]:
            raise ConfigurationException(f"input tensor shape {self.data.shape} is not (C, S, S)")
        if not np.all(np.isfinite(self.data)):
            raise ConfigurationException("input tensor contains non-finite values")


@dataclass
class NetworkParams:
    """
    Weights and biases of the keypoint network keyed by layer name.

    Conv weights are (out, in, 3, 3); fully connected weights are (out, in).
    """

    architecture: NetworkArchitecture
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        arch = self.architecture
        shapes: dict[str, tuple[int, ...]] = {}
        channels = arch.in_channels
        for i, depth in enumerate(arch.conv_depths, start=1):
            shapes[f"conv{i}.weight"] = (depth, channels, 3, 3)
            shapes[f"conv{i}.bias"] = (depth,)
            channels = depth
        shapes["fc1.weight"] = (arch.hidden, arch.flat_size)
        shapes["fc1.bias"] = (arch.hidden,)
        shapes["fc2.weight"] = (arch.outputs, arch.hidden)
        shapes["fc2.bias"] = (arch.outputs,)
        return shapes

    def validate(self) -> None:
        """
        Raises:
            ConfigurationException: If any tensor is missing or mis-shaped
        """
        for name, shape in self.expected_shapes().items():
            tensor = self.tensors.get(name)
            if tensor is None:
                raise ConfigurationException(f"missing parameter tensor {name}")
            if tensor.shape != shape:
                raise ConfigurationException(f"{name} has shape {tensor.shape}, expected {shape}")

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            architecture=self.architecture,
            tensors={k: v.copy() for k, v in self.tensors.items()},
        )


@dataclass
class ForwardCache:
    """Activations kept by the forward pass for backpropagation"""

    inputs: np.ndarray
    conv_inputs: list[np.ndarray] = field(default_factory=list)
    conv_pre: list[np.ndarray] = field(default_factory=list)
    pool_argmax: list[np.ndarray] = field(default_factory=list)
    pool_input_shapes: list[tuple[int, ...]] = field(default_factory=list)
    flat: np.ndarray | None = None
    mask1: np.ndarray | None = None
    hidden_pre: np.ndarray | None = None
    hidden: np.ndarray | None = None
    mask2: np.ndarray | None = None
    output: np.ndarray | None = None
