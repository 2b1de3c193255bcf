"""
Numeric kernels shared by detection and vital-sign extraction.

All functions are pure and re-entrant.
"""

import logging
from typing import Literal

import numpy as np
from scipy import fft, optimize, signal

from vitalradar.core.exceptions import (
    ArgumentException,
    FilterDesignException,
    FitException,
    MetricException,
)
from vitalradar.models.dsp_models import Spectrum
from vitalradar.schemas.dsp_schemas import BandpassSpec, CircleFit

logger = logging.getLogger(__name__)

Window = Literal["rect", "hann"]

# Band edges beyond this fraction of Nyquist are rejected
NYQUIST_MARGIN = 0.95
CIRCLE_XTOL = 1e-10
CIRCLE_MAX_ITERATIONS = 50


def get_window(window: Window, n: int) -> np.ndarray:
    if window == "rect":
        return np.ones(n)
    if window == "hann":
        return signal.get_window("hann", n)
    raise ArgumentException(f"unknown window '{window}'")


def range_fft(chirp: np.ndarray, window: Window = "rect") -> np.ndarray:
    """
    Windowed DFT over fast time (last axis).

    Bin k corresponds to range k * range_resolution. Works on a single chirp
    or on any stack of chirps.

    Args:
        chirp: Complex samples, last axis = ADC samples
        window: "rect" or "hann"

    Returns:
        Complex range profile(s), same shape as the input
    """
    chirp = np.asarray(chirp)
    n = chirp.shape[-1]
    return fft.fft(chirp * get_window(window, n), axis=-1)


def unwrap_phase(seq: np.ndarray) -> np.ndarray:
    """
    Unwrap a phase sequence so successive differences lie in (-pi, pi].

    Raises:
        ArgumentException: If the sequence is empty
    """
    seq = np.asarray(seq, dtype=float)
    if seq.size == 0:
        raise ArgumentException("cannot unwrap an empty phase sequence")
    return np.unwrap(seq)


def diff_phase(seq: np.ndarray) -> np.ndarray:
    """
    Consecutive phase differences, out[k] = seq[k+1] - seq[k].

    Raises:
        ArgumentException: If fewer than two samples are given
    """
    seq = np.asarray(seq, dtype=float)
    if seq.size < 2:
        raise ArgumentException("phase difference needs at least 2 samples")
    return np.diff(seq)


def fit_circle_dc(iq: np.ndarray) -> CircleFit:
    """
    Fit a circle to I/Q samples to locate their DC offset.

    Algebraic (Kasa) initialization, refined by Levenberg-Marquardt on the
    geometric distance. Coordinates are centered and scaled before fitting.

    Args:
        iq: Complex samples tracing an arc

    Returns:
        CircleFit with center, radius and RMS geometric residual

    Raises:
        FitException: If fewer than 3 points are given or the points are collinear
    """
    z = np.asarray(iq, dtype=complex).ravel()
    if z.size < 3:
        raise FitException(f"circle fit needs at least 3 points, got {z.size}")

    origin = z.mean()
    centered = z - origin
    scale = np.sqrt(np.mean(np.abs(centered) ** 2))
    if scale == 0 or not np.isfinite(scale):
        raise FitException("circle fit on coincident points", residual=0.0)
    x = centered.real / scale
    y = centered.imag / scale

    # Collinear points leave one direction without spread
    singular = np.linalg.svd(np.column_stack((x, y)), compute_uv=False)
    if singular[-1] <= 1e-9 * singular[0]:
        line_residual = float(singular[-1] * scale / np.sqrt(z.size))
        raise FitException("circle fit on collinear points", residual=line_residual)

    a = np.column_stack((x, y, np.ones_like(x)))
    b = x**2 + y**2
    (p0, p1, p2), *_ = np.linalg.lstsq(a, b, rcond=None)
    cx, cy = p0 / 2.0, p1 / 2.0
    r = np.sqrt(max(p2 + cx**2 + cy**2, np.finfo(float).tiny))

    def residuals(params: np.ndarray) -> np.ndarray:
        return np.hypot(x - params[0], y - params[1]) - params[2]

    def jacobian(params: np.ndarray) -> np.ndarray:
        d = np.maximum(np.hypot(x - params[0], y - params[1]), np.finfo(float).tiny)
        return np.column_stack(((params[0] - x) / d, (params[1] - y) / d, -np.ones_like(x)))

    solution = optimize.least_squares(
        residuals,
        x0=np.array([cx, cy, r]),
        jac=jacobian,
        method="lm",
        xtol=CIRCLE_XTOL,
        max_nfev=CIRCLE_MAX_ITERATIONS * 4,
    )
    cx, cy, r = solution.x
    residual = float(np.sqrt(np.mean(solution.fun**2)) * scale)
    radius = float(abs(r) * scale)
    if not np.isfinite(radius) or radius == 0:
        raise FitException("circle fit diverged", residual=residual)

    center = origin + complex(cx, cy) * scale
    return CircleFit(
        center_i=float(center.real),
        center_q=float(center.imag),
        radius=radius,
        residual=residual,
        iterations=int(solution.nfev),
    )


def butterworth_bandpass(spec: BandpassSpec) -> np.ndarray:
    """
    Design a digital Butterworth band-pass as cascaded second-order sections.

    Bilinear transform with prewarping puts the -3 dB points exactly on the
    band edges.

    Args:
        spec: Order, band edges and sample rate

    Returns:
        SOS coefficients, shape (n_sections, 6)

    Raises:
        FilterDesignException: If the upper edge is too close to Nyquist
    """
    nyquist = spec.sample_rate / 2.0
    if spec.high > NYQUIST_MARGIN * nyquist:
        raise FilterDesignException(
            f"upper edge {spec.high} Hz exceeds {NYQUIST_MARGIN} x Nyquist ({nyquist} Hz)"
        )
    return signal.butter(
        spec.order,
        [spec.low, spec.high],
        btype="bandpass",
        fs=spec.sample_rate,
        output="sos",
    )


def filter_apply(sos: np.ndarray, seq: np.ndarray) -> np.ndarray:
    """Single-pass causal filtering, direct-form II transposed biquads, zero initial state"""
    return signal.sosfilt(sos, np.asarray(seq, dtype=float))


def spectrum(
    seq: np.ndarray,
    sample_rate: float,
    nfft: int | None = None,
    window: Window = "hann",
) -> Spectrum:
    """
    One-sided power spectrum of a real sequence.

    The mean is removed first. Powers are scaled so that, with a rect window,
    their sum equals the energy of the mean-removed sequence.

    Args:
        seq: Real samples
        sample_rate: Hz
        nfft: Transform size (zero padding); defaults to the sequence length
        window: "hann" (default) or "rect"

    Returns:
        Spectrum with freqs from 0 to Nyquist

    Raises:
        ArgumentException: If the sequence is empty or nfft is too small
    """
    seq = np.asarray(seq, dtype=float)
    n = seq.size
    if n == 0:
        raise ArgumentException("spectrum of an empty sequence")
    nfft = n if nfft is None else int(nfft)
    if nfft < n:
        raise ArgumentException(f"nfft {nfft} shorter than sequence length {n}")

    x = (seq - seq.mean()) * get_window(window, n)
    power = np.abs(fft.rfft(x, nfft)) ** 2 / nfft
    power[1:] *= 2.0
    if nfft % 2 == 0:
        power[-1] /= 2.0
    freqs = fft.rfftfreq(nfft, d=1.0 / sample_rate)
    return Spectrum(freqs=freqs, mags=power, resolution=sample_rate / nfft)


def peak_pick(spec: Spectrum, band: tuple[float, float]) -> float:
    """
    Frequency of the strongest in-band bin; ties go to the lower frequency.

    Raises:
        ArgumentException: If no bin falls inside the band
    """
    mask = spec.band_mask(band)
    if not np.any(mask):
        raise ArgumentException(f"band {band} holds no spectrum bins")
    freqs = spec.freqs[mask]
    return float(freqs[int(np.argmax(spec.mags[mask]))])


def papr(spec: Spectrum, band: tuple[float, float]) -> float:
    """
    Peak-to-average power ratio of the in-band bins, in dB.

    Raises:
        ArgumentException: If fewer than two bins fall inside the band
        MetricException: If the band holds no power
    """
    mags = spec.mags[spec.band_mask(band)]
    if mags.size < 2:
        raise ArgumentException(f"PAPR needs at least 2 in-band bins, got {mags.size}")
    mean = float(mags.mean())
    if mean <= 0.0:
        raise MetricException(f"PAPR undefined: band {band} holds no power")
    return float(10.0 * np.log10(mags.max() / mean))
