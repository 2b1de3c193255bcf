import hashlib
import json
import logging
from typing import Optional

from pydantic import BaseModel, Field, model_validator

from vitalradar.core.exceptions import ConfigurationException
from vitalradar.schemas.posture_schemas import TrainConfig, VoxelBounds
from vitalradar.schemas.radar_schemas import RadarConfig
from vitalradar.schemas.scene_schemas import PRESETS, Posture, Scatterer

logger = logging.getLogger(__name__)


class InterfererConfig(BaseModel):
    """Non-vital mover (e.g. a swinging arm) placed off the chest elevation"""

    elevation_deg: float = Field(default=-20.0, ge=-60, le=60)
    azimuth_deg: float = Field(default=0.0, ge=-60, le=60)
    range: Optional[float] = Field(None, gt=0, description="m from the radar; scene range when omitted")
    reflectivity: float = Field(default=0.3, gt=0)
    frequency: float = Field(default=0.9, gt=0, description="Hz")
    amplitude: float = Field(default=0.2e-3, ge=0, description="m along line of sight")


class SceneConfig(BaseModel):
    """Scene section of the run configuration; None fields come from the preset"""

    posture: Optional[Posture] = None
    breathing_frequency: Optional[float] = None
    breathing_amplitude: float = Field(default=0.8e-3, ge=0)
    heart_frequency: Optional[float] = None
    heart_amplitude: float = Field(default=0.1e-3, ge=0)
    rbm_amplitude: float = Field(default=0.0, ge=0)
    rbm_seed: int = 0
    radar_height: float = Field(default=1.06, gt=0)
    range: float = Field(default=2.0, gt=0)
    dc_offset: tuple[float, float] = (0.0, 0.0)
    scatterers: Optional[list[Scatterer]] = Field(
        None, description="Explicit scatterers; the posture body is used when omitted"
    )
    interferer: Optional[InterfererConfig] = None


class PipelineConfig(BaseModel):
    """Run configuration for the end-to-end pipeline"""

    radar: RadarConfig = Field(default_factory=RadarConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    preset: Posture = Posture.BAD
    seed: Optional[int] = Field(None, ge=0)
    frames_total: Optional[int] = Field(None, gt=0)
    frames_train: Optional[int] = Field(None, ge=1)
    snr_db: float = 20.0
    noise_std: Optional[float] = Field(None, ge=0)
    chest_frames: int = Field(default=50, ge=1)
    voxel_bounds: VoxelBounds = Field(default_factory=VoxelBounds)
    max_ellipses: int = Field(default=9, ge=1)
    coverage_tol: float = Field(default=0.03, gt=0)
    train_postures: Optional[list[Posture]] = Field(
        default_factory=lambda: list(Posture),
        min_length=1,
        description="postures sharing the frames_train training frames; null trains on the run scene",
    )

    @model_validator(mode="after")
    def check_split(self) -> "PipelineConfig":
        if (
            self.frames_total is not None
            and self.frames_train is not None
            and self.frames_train >= self.frames_total
        ):
            raise ValueError("frames_train must be smaller than frames_total")
        arch = self.train.architecture
        if arch.input_size != self.voxel_bounds.size or arch.in_channels != 2:
            raise ValueError(
                f"network input {arch.in_channels}x{arch.input_size} does not match "
                f"the 2x{self.voxel_bounds.size} projection grid"
            )
        return self

    def resolved(
        self,
        default_seed: int,
        seed: Optional[int] = None,
        preset: Optional[Posture] = None,
        frames: Optional[int] = None,
    ) -> "PipelineConfig":
        """
        Fill preset-dependent fields and apply command-line overrides.

        Args:
            default_seed: Seed used when neither the file nor the flag gives one
            seed: --seed override
            preset: --preset override
            frames: --frames override of frames_total

        Returns:
            New config with every optional pipeline field set

        Raises:
            ConfigurationException: If an explicit frames_train does not fit
                inside frames_total
        """
        preset = preset or self.preset
        truth = PRESETS[preset]
        frames_total = frames or self.frames_total or truth.frames_total
        frames_train = self.frames_train or truth.frames_train
        if frames_train >= frames_total:
            if self.frames_train is not None:
                raise ConfigurationException(
                    f"frames_train {frames_train} must be smaller than frames_total {frames_total}"
                )
            halved = max(1, frames_total // 2)
            logger.warning(
                "Preset training split %d does not fit %d frames; training on %d",
                frames_train,
                frames_total,
                halved,
            )
            frames_train = halved
        if seed is None:
            seed = default_seed if self.seed is None else self.seed

        data = self.model_dump()
        data["scene"].update(
            posture=self.scene.posture or preset,
            breathing_frequency=self.scene.breathing_frequency or truth.breathing_truth,
            heart_frequency=self.scene.heart_frequency or truth.heart_truth,
        )
        data.update(preset=preset, seed=seed, frames_total=frames_total, frames_train=frames_train)
        return PipelineConfig.model_validate(data)

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_digest(self) -> bytes:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).digest()

    def config_hash(self) -> str:
        """SHA-256 hex digest of the canonical JSON dump"""
        return self.config_digest().hex()


class ChestEstimate(BaseModel):
    """Chest keypoint estimated from accumulated point clouds"""

    config_hash: str
    x: float
    y: float
    z: float
    azimuth_deg: float
    elevation_deg: float
    frames: list[int]


class ModeSummary(BaseModel):
    """Vital-sign estimates of one beam mode"""

    br_hz: float
    hr_hz: float
    papr_breath_db: float
    papr_heart_db: float
    low_confidence_breath: bool
    low_confidence_heart: bool
    br_error_hz: float
    hr_error_hz: float


class RunSummary(BaseModel):
    """Final report of a pipeline run"""

    config_hash: str
    preset: Posture
    range_bin: int
    range_m: float
    sample_rate_hz: float
    bin_resolution_hz: float
    chest_azimuth_deg: float
    chest_elevation_deg: float
    breathing_truth_hz: float
    heart_truth_hz: float
    modes: dict[str, ModeSummary]
    delta_papr_breath_db: float
    delta_papr_heart_db: float


class StageRecord(BaseModel):
    """Stage marker: completed stages plus the failing stage, if any"""

    config_hash: Optional[str] = None
    completed: list[str] = Field(default_factory=list)
    failed: Optional[str] = None
    error: Optional[str] = None
