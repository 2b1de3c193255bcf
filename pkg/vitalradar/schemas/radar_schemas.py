from typing import Literal

from pydantic import BaseModel, Field, model_validator
from scipy.constants import speed_of_light

Position = tuple[float, float, float]

# AWR1843-like layout in half-wavelength units (x azimuth, y boresight, z elevation).
# The middle TX sits one half-wavelength higher, giving two elevation rows.
DEFAULT_TX_POSITIONS: list[Position] = [(0.0, 0.0, 0.0), (2.0, 0.0, 1.0), (4.0, 0.0, 0.0)]
DEFAULT_RX_POSITIONS: list[Position] = [
    (0.0, 0.0, 0.0),
    (1.0, 0.0, 0.0),
    (2.0, 0.0, 0.0),
    (3.0, 0.0, 0.0),
]


class RadarConfig(BaseModel):
    """
    Chirp, frame, array and detector parameters.

    Defaults reproduce the measurement setup (77 GHz start, 60 MHz/us slope,
    64 ADC samples at 2.2 Msps, 256 chirps per 240 ms frame, 3 TX x 4 RX).
    Antenna positions are given in half-wavelength units.
    """

    model_config = {"frozen": True}

    carrier_frequency: float = Field(default=77e9, gt=0, description="Hz")
    chirp_slope: float = Field(default=60e12, gt=0, description="Hz/s")
    idle_time: float = Field(default=250e-6, gt=0, description="s")
    adc_start_time: float = Field(default=10e-6, gt=0, description="s")
    ramp_end_time: float = Field(default=60e-6, gt=0, description="s")
    adc_sample_rate: float = Field(default=2.2e6, gt=0, description="samples/s")
    adc_samples_per_chirp: int = Field(default=64, gt=0)
    chirps_per_frame: int = Field(default=256, gt=0)
    frame_duration: float = Field(default=0.240, gt=0, description="s")
    n_tx: int = Field(default=3, gt=0)
    n_rx: int = Field(default=4, gt=0)
    tx_positions: list[Position] = Field(default_factory=lambda: list(DEFAULT_TX_POSITIONS))
    rx_positions: list[Position] = Field(default_factory=lambda: list(DEFAULT_RX_POSITIONS))
    cfar_guard: tuple[int, int] = (8, 8)
    cfar_training: tuple[int, int] = (8, 8)
    cfar_threshold_db: float = 10.0
    # Detections must be the local maximum within this many cells per side (range, azimuth)
    cfar_peak_neighborhood: tuple[int, int] = (1, 2)

    # Processing grid
    angle_step_deg: float = Field(default=1.0, gt=0)
    field_of_view_deg: float = Field(default=60.0, gt=0, le=90)
    cloud_range_window: Literal["rect", "hann"] = "hann"

    @model_validator(mode="after")
    def check_consistency(self) -> "RadarConfig":
        if self.adc_window > self.ramp_end_time - self.adc_start_time:
            raise ValueError(
                f"ADC window {self.adc_window:.3e} s does not fit the ramp "
                f"({self.ramp_end_time - self.adc_start_time:.3e} s after ADC start)"
            )
        if len(self.tx_positions) != self.n_tx:
            raise ValueError(f"{len(self.tx_positions)} TX positions given for n_tx={self.n_tx}")
        if len(self.rx_positions) != self.n_rx:
            raise ValueError(f"{len(self.rx_positions)} RX positions given for n_rx={self.n_rx}")
        if min(self.cfar_guard) < 0 or min(self.cfar_training) < 1:
            raise ValueError("CFAR guard must be >= 0 and training >= 1 cells")
        if min(self.cfar_peak_neighborhood) < 0:
            raise ValueError("CFAR peak neighborhood must be >= 0 cells")
        if self.chirps_per_frame * self.chirp_period > self.frame_duration:
            raise ValueError("chirps do not fit inside the frame duration")
        return self

    @property
    def wavelength(self) -> float:
        return speed_of_light / self.carrier_frequency

    @property
    def n_virtual(self) -> int:
        return self.n_tx * self.n_rx

    @property
    def chirp_period(self) -> float:
        return self.idle_time + self.ramp_end_time

    @property
    def adc_window(self) -> float:
        return self.adc_samples_per_chirp / self.adc_sample_rate

    @property
    def swept_bandwidth(self) -> float:
        return self.chirp_slope * self.ramp_end_time

    @property
    def effective_bandwidth(self) -> float:
        """Bandwidth seen by the ADC window; this is what sets range resolution"""
        return self.chirp_slope * self.adc_window

    @property
    def range_resolution(self) -> float:
        return speed_of_light / (2.0 * self.effective_bandwidth)

    @property
    def max_range(self) -> float:
        return self.range_resolution * self.adc_samples_per_chirp

    @property
    def frame_rate(self) -> float:
        return 1.0 / self.frame_duration
