from dataclasses import dataclass
from enum import Enum as PyEnum

import numpy as np

from vitalradar.models.dsp_models import Spectrum


class BeamMode(str, PyEnum):
    """Beam steering mode for vital-sign extraction"""

    RA = "RA"  # range-azimuth: elevation fixed at 0
    RAE = "RAE"  # range-azimuth-elevation: steered to the chest elevation


@dataclass
class SteeringVector:
    """Unit-modulus weights, one per virtual channel"""

    weights: np.ndarray
    azimuth: float
    elevation: float


@dataclass
class VitalsResult:
    """Phase signals, band spectra and rate estimates for one beam mode"""

    mode: BeamMode
    phase_raw: np.ndarray
    phase_unwrapped: np.ndarray
    phase_diff: np.ndarray
    breath_spectrum: Spectrum
    heart_spectrum: Spectrum
    br_hz: float
    hr_hz: float
    papr_breath_db: float
    papr_heart_db: float
    low_confidence_breath: bool = False
    low_confidence_heart: bool = False


@dataclass
class RaRaeComparison:
    """Paired RA / RAE results and RAE-minus-RA PAPR deltas"""

    ra: VitalsResult
    rae: VitalsResult
    range_bin: int
    azimuth: float
    elevation: float

    @property
    def delta_papr_breath_db(self) -> float:
        return self.rae.papr_breath_db - self.ra.papr_breath_db

    @property
    def delta_papr_heart_db(self) -> float:
        return self.rae.papr_heart_db - self.ra.papr_heart_db
