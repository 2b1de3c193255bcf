import logging

import numpy as np

from vitalradar.core.dsp import (
    butterworth_bandpass,
    diff_phase,
    filter_apply,
    fit_circle_dc,
    papr,
    peak_pick,
    range_fft,
    spectrum,
    unwrap_phase,
)
from vitalradar.core.exceptions import ArgumentException, FitException, MetricException
from vitalradar.models.dsp_models import Spectrum
from vitalradar.models.radar_models import ArrayGeometry, DataCube
from vitalradar.models.vitals_models import BeamMode, RaRaeComparison, SteeringVector, VitalsResult
from vitalradar.schemas.dsp_schemas import BandpassSpec
from vitalradar.schemas.scene_schemas import BREATHING_BAND, HEART_BAND
from vitalradar.services.detection_service import unit_direction

logger = logging.getLogger(__name__)

MIN_FRAMES = 64
MIN_SAMPLE_RATE = 4.0
MIN_NFFT = 512
FILTER_ORDER = 5
LOW_CONFIDENCE_PAPR_DB = 1.0
MIN_FRAME_ARC = 1.0
MAX_FRAME_FIT_RESIDUAL = 0.05
STEERING_LIMIT_DEG = 60.0
TIE_TOLERANCE = 1e-12


def select_range_bin(cube: DataCube) -> int:
    """
    Range bin with the most power over all frames, chirps and channels.

    Ties within 1e-12 (relative) go to the lower bin.

    Args:
        cube: Raw data cube

    Returns:
        Selected range bin index

    Raises:
        ArgumentException: If the cube holds no frames
    """
    if cube.n_frames == 0:
        raise ArgumentException("cannot select a range bin from an empty cube")
    power = np.zeros(cube.config.adc_samples_per_chirp)
    for index in range(cube.n_frames):
        power += np.sum(np.abs(range_fft(cube.frame(index))) ** 2, axis=(0, 1))
    peak = power.max()
    if peak <= 0:
        logger.warning("Cube holds no power; selecting range bin 0")
        return 0
    selected = int(np.flatnonzero(power >= peak - TIE_TOLERANCE * peak)[0])
    logger.info(
        "Selected range bin %d (%.3f m)", selected, selected * cube.config.range_resolution
    )
    return selected


def bin_samples(cube: DataCube, range_bin: int) -> np.ndarray:
    """Slow-time samples at one range bin, shape (frames, chirps, channels)"""
    if not 0 <= range_bin < cube.config.adc_samples_per_chirp:
        raise ArgumentException(f"range bin {range_bin} out of range")
    n = cube.config.adc_samples_per_chirp
    # DFT at a single bin without transforming the whole cube
    kernel = np.exp(-2j * np.pi * range_bin * np.arange(n) / n)
    return cube.samples @ kernel


def dc_compensate(slow_time: np.ndarray) -> np.ndarray:
    """
    Remove the I/Q DC offset of each channel by circle fitting.

    Args:
        slow_time: Complex samples, (samples,) or (samples, channels)

    Returns:
        Samples with the fitted circle center subtracted per channel; a
        channel whose arc is degenerate is returned unchanged
    """
    samples = np.asarray(slow_time, dtype=complex)
    squeeze = samples.ndim == 1
    columns = samples[:, None] if squeeze else samples.reshape(samples.shape[0], -1)
    corrected = columns.copy()
    for k in range(columns.shape[1]):
        try:
            fit = fit_circle_dc(columns[:, k])
        except FitException as exc:
            logger.warning("DC compensation skipped on channel %d: %s", k, exc)
            continue
        corrected[:, k] = columns[:, k] - fit.center
    return corrected[:, 0] if squeeze else corrected.reshape(samples.shape)


def _arc_span(z: np.ndarray, center: complex) -> float:
    angles = np.unwrap(np.angle(z - center))
    return float(angles.max() - angles.min())


def dc_compensate_frames(samples: np.ndarray) -> np.ndarray:
    """
    Remove the I/Q DC offset frame by frame on chirp-domain samples.

    Each frame's circle is fitted per channel on that frame's chirps. A frame
    whose chirps cover less than MIN_FRAME_ARC radians around the center, or
    whose fit fails or leaves a residual above MAX_FRAME_FIT_RESIDUAL of the
    radius, keeps the last accepted center of its channel; frames before the
    first accepted fit use the center fitted over the whole record. A channel
    that cannot be fitted at all passes through unchanged with a warning.

    Args:
        samples: Complex samples at one range bin, (frames, chirps, channels)

    Returns:
        Compensated samples of the same shape

    Raises:
        ArgumentException: If samples is not three-dimensional
    """
    samples = np.asarray(samples, dtype=complex)
    if samples.ndim != 3:
        raise ArgumentException(f"expected (frames, chirps, channels), got shape {samples.shape}")
    frames, chirps, channels = samples.shape
    corrected = samples.copy()
    for k in range(channels):
        try:
            center: complex | None = fit_circle_dc(samples[:, :, k].ravel()).center
        except FitException as exc:
            logger.warning("Record-level DC fit failed on channel %d: %s", k, exc)
            center = None
        own_fits = 0
        for f in range(frames):
            chirp_values = samples[f, :, k]
            reference = center if center is not None else chirp_values.mean()
            if chirps >= 3 and _arc_span(chirp_values, reference) >= MIN_FRAME_ARC:
                try:
                    fit = fit_circle_dc(chirp_values)
                except FitException:
                    fit = None
                if (
                    fit is not None
                    and fit.residual <= MAX_FRAME_FIT_RESIDUAL * fit.radius
                    and _arc_span(chirp_values, fit.center) >= MIN_FRAME_ARC
                ):
                    center = fit.center
                    own_fits += 1
            if center is not None:
                corrected[f, :, k] = chirp_values - center
        if center is None:
            logger.warning("DC compensation skipped on channel %d: no usable arc", k)
        logger.debug("Channel %d: %d of %d frames fitted on their own chirps", k, own_fits, frames)
    return corrected


def steering_vector(geometry: ArrayGeometry, azimuth: float, elevation: float) -> SteeringVector:
    """
    Unit-modulus weights exp(j 2pi/lambda p.u(azimuth, elevation)).

    Raises:
        ArgumentException: If an angle lies outside +-60 degrees
    """
    for name, angle in (("azimuth", azimuth), ("elevation", elevation)):
        if not -STEERING_LIMIT_DEG <= angle <= STEERING_LIMIT_DEG:
            raise ArgumentException(f"{name} {angle} deg outside +-{STEERING_LIMIT_DEG}")
    u = unit_direction(azimuth, elevation)
    weights = np.exp(2j * np.pi / geometry.wavelength * geometry.virtual_positions @ u)
    return SteeringVector(weights=weights, azimuth=float(azimuth), elevation=float(elevation))


def beamform_chirps(samples: np.ndarray, steering: SteeringVector) -> np.ndarray:
    """
    Beamformed chirp sequence d_s[i] = sum_k y[i, k] conj(w_k).

    Args:
        samples: (chirps, channels) or (frames, chirps, channels)
        steering: Steering weights

    Returns:
        Beamformed values with the channel axis removed

    Raises:
        ArgumentException: If the channel count does not match the weights
    """
    samples = np.asarray(samples)
    if samples.shape[-1] != steering.weights.size:
        raise ArgumentException(
            f"{samples.shape[-1]} channels for a {steering.weights.size}-element steering vector"
        )
    return samples @ steering.weights.conj()


def frame_samples(beamformed: np.ndarray) -> np.ndarray:
    """One slow-time sample per frame: the mean over the frame's chirps"""
    return np.asarray(beamformed).mean(axis=-1)


def _band_branch(
    signal_in: np.ndarray, sample_rate: float, band: tuple[float, float], nfft: int
) -> tuple[Spectrum, float, float, bool]:
    sos = butterworth_bandpass(
        BandpassSpec(order=FILTER_ORDER, low=band[0], high=band[1], sample_rate=sample_rate)
    )
    filtered = filter_apply(sos, signal_in - np.mean(signal_in))
    band_spectrum = spectrum(filtered, sample_rate, nfft=nfft)
    rate = peak_pick(band_spectrum, band)
    try:
        ratio = papr(band_spectrum, band)
    except MetricException as exc:
        logger.warning("PAPR undefined in band %s: %s", band, exc)
        return band_spectrum, rate, 0.0, True
    return band_spectrum, rate, ratio, ratio < LOW_CONFIDENCE_PAPR_DB


def extract_vitals(
    frame_values: np.ndarray, sample_rate: float, mode: BeamMode = BeamMode.RAE
) -> VitalsResult:
    """
    Breathing and heart rates from per-frame beamformed samples.

    Breathing comes from the unwrapped phase, heartbeat from its first
    difference; each branch is band-pass filtered (5th-order Butterworth),
    transformed (nfft >= 512) and peak-picked inside its band.

    Args:
        frame_values: Complex beamformed value per frame
        sample_rate: Frame rate in Hz
        mode: Beam mode that produced the samples

    Returns:
        VitalsResult

    Raises:
        ArgumentException: If fewer than 64 frames are given or the rate is <= 4 Hz
    """
    values = np.asarray(frame_values, dtype=complex).ravel()
    if values.size < MIN_FRAMES:
        raise ArgumentException(f"vital-sign extraction needs >= {MIN_FRAMES} frames, got {values.size}")
    if sample_rate <= MIN_SAMPLE_RATE:
        raise ArgumentException(f"slow-time rate {sample_rate} Hz must exceed {MIN_SAMPLE_RATE} Hz")

    phase_raw = np.angle(values)
    phase_unwrapped = unwrap_phase(phase_raw)
    phase_differences = diff_phase(phase_unwrapped)
    nfft = max(MIN_NFFT, 1 << (values.size - 1).bit_length())

    breath_spectrum, br, papr_breath, low_breath = _band_branch(
        phase_unwrapped, sample_rate, BREATHING_BAND, nfft
    )
    heart_spectrum, hr, papr_heart, low_heart = _band_branch(
        phase_differences, sample_rate, HEART_BAND, nfft
    )
    logger.info(
        "%s: BR %.3f Hz (PAPR %.2f dB), HR %.3f Hz (PAPR %.2f dB)",
        mode.value,
        br,
        papr_breath,
        hr,
        papr_heart,
    )
    return VitalsResult(
        mode=mode,
        phase_raw=phase_raw,
        phase_unwrapped=phase_unwrapped,
        phase_diff=phase_differences,
        breath_spectrum=breath_spectrum,
        heart_spectrum=heart_spectrum,
        br_hz=br,
        hr_hz=hr,
        papr_breath_db=papr_breath,
        papr_heart_db=papr_heart,
        low_confidence_breath=low_breath,
        low_confidence_heart=low_heart,
    )


class VitalsService:
    """Range-bin selection, DC compensation and beamformed vital-sign extraction"""

    def __init__(self, geometry: ArrayGeometry):
        self.geometry = geometry

    def compensated_samples(self, cube: DataCube, range_bin: int) -> np.ndarray:
        """
        DC-compensated samples at the selected bin, (frames, chirps, channels).

        Circles are fitted per frame on the chirps of each channel.
        """
        return dc_compensate_frames(bin_samples(cube, range_bin))

    def vitals_for_mode(
        self,
        samples: np.ndarray,
        azimuth: float,
        elevation: float,
        mode: BeamMode,
        sample_rate: float,
    ) -> VitalsResult:
        steering = steering_vector(
            self.geometry, azimuth, elevation if mode == BeamMode.RAE else 0.0
        )
        return extract_vitals(frame_samples(beamform_chirps(samples, steering)), sample_rate, mode)

    def compare_ra_rae(
        self,
        cube: DataCube,
        chest_angles: tuple[float, float],
        sample_rate: float | None = None,
        range_bin: int | None = None,
    ) -> RaRaeComparison:
        """
        Run the vital-sign chain with azimuth-only and azimuth-elevation steering.

        Args:
            cube: Capture used for vital-sign extraction
            chest_angles: (azimuth, elevation) of the chest in degrees
            sample_rate: Slow-time rate; the frame rate when omitted
            range_bin: Range bin to use; selected from the cube when omitted

        Returns:
            RaRaeComparison with RAE-minus-RA PAPR deltas
        """
        azimuth, elevation = chest_angles
        sample_rate = sample_rate or cube.config.frame_rate
        if range_bin is None:
            range_bin = select_range_bin(cube)
        samples = self.compensated_samples(cube, range_bin)
        ra = self.vitals_for_mode(samples, azimuth, elevation, BeamMode.RA, sample_rate)
        rae = self.vitals_for_mode(samples, azimuth, elevation, BeamMode.RAE, sample_rate)
        comparison = RaRaeComparison(
            ra=ra, rae=rae, range_bin=range_bin, azimuth=azimuth, elevation=elevation
        )
        logger.info(
            "RAE - RA PAPR: breath %+.3f dB, heart %+.3f dB",
            comparison.delta_papr_breath_db,
            comparison.delta_papr_heart_db,
        )
        return comparison
