from enum import Enum as PyEnum

from pydantic import BaseModel, Field, model_validator

from vitalradar.schemas.radar_schemas import Position

CHEST_LABEL = "chest"

BREATHING_BAND: tuple[float, float] = (0.1, 0.5)
HEART_BAND: tuple[float, float] = (0.8, 1.7)
CHEST_AMPLITUDE_RANGE: tuple[float, float] = (0.01e-3, 12e-3)


class Posture(str, PyEnum):
    """Arm postures of a standing human"""

    BAD = "BAD"  # both arms down
    OAR = "OAR"  # one (right) arm raised
    BAR = "BAR"  # both arms raised


class Scatterer(BaseModel):
    """Point scatterer at a rest position in scene coordinates (x, y=range axis, z=height)"""

    label: str = Field(..., min_length=1)
    position: Position
    reflectivity: float = Field(..., gt=0)
    oscillation_frequency: float = Field(default=0.0, ge=0, description="Hz, non-vital mover")
    oscillation_amplitude: float = Field(default=0.0, ge=0, description="m along line of sight")


class SceneModel(BaseModel):
    """
    Ground-truth scene: body scatterers plus the chest motion parameters.

    The chest scatterer follows breathing + heartbeat + random body motion
    along its line of sight; every other scatterer is static unless it carries
    its own oscillation.
    """

    scatterers: list[Scatterer] = Field(default_factory=list)
    breathing_frequency: float = Field(default=0.3, description="Hz")
    breathing_amplitude: float = Field(default=0.8e-3, ge=0, description="m")
    heart_frequency: float = Field(default=1.1, description="Hz")
    heart_amplitude: float = Field(default=0.1e-3, ge=0, description="m")
    rbm_amplitude: float = Field(default=0.0, ge=0, description="m")
    rbm_seed: int = 0
    posture: Posture = Posture.BAD
    radar_height: float = Field(default=1.06, gt=0, description="m")
    range: float = Field(default=2.0, gt=0, description="m")
    dc_offset: tuple[float, float] = (0.0, 0.0)

    @model_validator(mode="after")
    def check_vitals(self) -> "SceneModel":
        lo, hi = BREATHING_BAND
        if not lo <= self.breathing_frequency <= hi:
            raise ValueError(f"breathing_frequency {self.breathing_frequency} Hz outside [{lo}, {hi}]")
        lo, hi = HEART_BAND
        if not lo <= self.heart_frequency <= hi:
            raise ValueError(f"heart_frequency {self.heart_frequency} Hz outside [{lo}, {hi}]")
        total = self.breathing_amplitude + self.heart_amplitude + self.rbm_amplitude
        lo, hi = CHEST_AMPLITUDE_RANGE
        if not lo <= total <= hi:
            raise ValueError(f"chest displacement amplitude {total:.3e} m outside [{lo}, {hi}]")
        chests = sum(1 for s in self.scatterers if s.label == CHEST_LABEL)
        # An empty scene is allowed (noise-only captures); otherwise exactly one chest
        if self.scatterers and chests != 1:
            raise ValueError(f"scene must contain exactly one '{CHEST_LABEL}' scatterer, got {chests}")
        return self

    @property
    def chest(self) -> Scatterer | None:
        return next((s for s in self.scatterers if s.label == CHEST_LABEL), None)


class ScenarioPreset(BaseModel):
    """Named measurement scenario with its vital-sign truths"""

    name: Posture
    heart_truth: float = Field(..., description="Hz")
    breathing_truth: float = Field(default=0.3, description="Hz")
    frames_total: int = Field(default=350, gt=0)
    frames_train: int = Field(default=150, ge=0)

    @model_validator(mode="after")
    def check_split(self) -> "ScenarioPreset":
        if self.frames_train >= self.frames_total:
            raise ValueError("frames_train must be smaller than frames_total")
        if not HEART_BAND[0] <= self.heart_truth <= HEART_BAND[1]:
            raise ValueError(f"heart truth {self.heart_truth} Hz outside {HEART_BAND}")
        if not BREATHING_BAND[0] <= self.breathing_truth <= BREATHING_BAND[1]:
            raise ValueError(f"breathing truth {self.breathing_truth} Hz outside {BREATHING_BAND}")
        return self


PRESETS: dict[Posture, ScenarioPreset] = {
    Posture.BAD: ScenarioPreset(name=Posture.BAD, heart_truth=1.10),
    Posture.OAR: ScenarioPreset(name=Posture.OAR, heart_truth=1.25),
    Posture.BAR: ScenarioPreset(name=Posture.BAR, heart_truth=1.41),
}
