from dataclasses import dataclass

import numpy as np


@dataclass
class Spectrum:
    """One-sided power spectrum on a uniform ascending frequency grid"""

    freqs: np.ndarray
    mags: np.ndarray
    resolution: float

    def band_mask(self, band: tuple[float, float]) -> np.ndarray:
        lo, hi = band
        return (self.freqs >= lo) & (self.freqs <= hi)

    def band(self, band: tuple[float, float]) -> "Spectrum":
        mask = self.band_mask(band)
        return Spectrum(freqs=self.freqs[mask], mags=self.mags[mask], resolution=self.resolution)
