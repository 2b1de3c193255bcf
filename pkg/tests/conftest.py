import copy
import json

import numpy as np
import pytest

from vitalradar.schemas.posture_schemas import NetworkArchitecture
from vitalradar.schemas.radar_schemas import RadarConfig
from vitalradar.schemas.scene_schemas import Scatterer, SceneModel
from vitalradar.services.detection_service import DetectionService
from vitalradar.services.simulation_service import SimulationService, build_virtual_array

# Chest on boresight at the radar height, 2 m out: range bin 23, elevation 0
BORESIGHT_CHEST = (0.0, 2.0, 1.06)


@pytest.fixture
def radar_config():
    """Full-size measurement configuration"""
    return RadarConfig()


@pytest.fixture
def small_radar():
    """Measurement chirp with only a few chirps per frame, for fast synthesis"""
    return RadarConfig(chirps_per_frame=4)


@pytest.fixture
def geometry(small_radar):
    return build_virtual_array(small_radar)


@pytest.fixture
def simulator(small_radar, geometry):
    return SimulationService(small_radar, geometry)


@pytest.fixture
def detector(small_radar, geometry):
    return DetectionService(small_radar, geometry)


@pytest.fixture
def make_scene():
    """Factory for scenes holding a single chest scatterer plus optional extras"""

    def _make(position=BORESIGHT_CHEST, extra=None, **vitals) -> SceneModel:
        scatterers = [Scatterer(label="chest", position=position, reflectivity=1.0)]
        return SceneModel(scatterers=scatterers + list(extra or []), **vitals)

    return _make


@pytest.fixture
def boresight_scene(make_scene):
    return make_scene()


@pytest.fixture
def tiny_architecture():
    """Reduced network: 2x8x8 input, three 2-channel conv blocks, 8 hidden units"""
    return NetworkArchitecture(input_size=8, in_channels=2, conv_depths=(2, 2, 2), hidden=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# Small enough for an end-to-end run in a test: 110 frames of 2 chirps,
# 40 training frames, 8x8 projections
REDUCED_RUN = {
    "radar": {"chirps_per_frame": 2},
    "frames_total": 110,
    "frames_train": 40,
    "chest_frames": 10,
    "voxel_bounds": {"size": 8},
    "train": {
        "epochs": 3,
        "batch_size": 20,
        "architecture": {"input_size": 8, "conv_depths": [2, 2, 2], "hidden": 8},
    },
}


@pytest.fixture
def reduced_run_config():
    return copy.deepcopy(REDUCED_RUN)


@pytest.fixture
def write_config(tmp_path):
    """Write a run configuration dict to a JSON file and return its path"""

    def _write(data: dict, name: str = "run.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return _write
