"""Array geometry and raw data cube containers."""

from dataclasses import dataclass

import numpy as np

from vitalradar.core.exceptions import ConfigurationException
from vitalradar.schemas.radar_schemas import RadarConfig


@dataclass
class ArrayGeometry:
    """
    Virtual array of a TDM-MIMO radar.

    Attributes:
        virtual_positions: (n_tx*n_rx, 3) element positions in meters; element
            k*n_rx + j is tx k plus rx j
        wavelength: carrier wavelength in meters
    """

    virtual_positions: np.ndarray
    wavelength: float

    @property
    def n_elements(self) -> int:
        return int(self.virtual_positions.shape[0])

    def azimuth_row(self) -> np.ndarray:
        """
        Indices of the lowest elevation row, sorted by azimuth position.

        Raises:
            ConfigurationException: If the row holds duplicate azimuth positions
        """
        z = self.virtual_positions[:, 2]
        row = np.flatnonzero(np.isclose(z, z.min()))
        row = row[np.argsort(self.virtual_positions[row, 0], kind="stable")]
        x = self.virtual_positions[row, 0]
        if np.any(np.isclose(np.diff(x), 0.0)):
            raise ConfigurationException("azimuth row contains duplicate positions")
        return row


@dataclass
class DataCube:
    """
    Complex baseband samples indexed (frame, chirp, virtual channel, ADC sample).
    """

    samples: np.ndarray
    config: RadarConfig

    def __post_init__(self):
        expected = (
            self.config.chirps_per_frame,
            self.config.n_virtual,
            self.config.adc_samples_per_chirp,
        )
        if self.samples.ndim != 4 or self.samples.shape[1:] != expected:
            raise ConfigurationException(
                f"cube shape {self.samples.shape} does not match (n_frames, *{expected})"
            )
        if not np.all(np.isfinite(self.samples)):
            raise ConfigurationException("cube contains non-finite samples")

    @property
    def n_frames(self) -> int:
        return int(self.samples.shape[0])

    def frame(self, index: int) -> np.ndarray:
        return self.samples[index]

    def split(self, start: int, stop: int | None = None) -> "DataCube":
        """Frames [start, stop) as a new cube sharing the config"""
        return DataCube(samples=self.samples[start:stop], config=self.config)
