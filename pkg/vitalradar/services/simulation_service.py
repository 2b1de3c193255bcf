import logging
import math

import numpy as np
from scipy.constants import speed_of_light

from vitalradar.core.exceptions import ArgumentException, ConfigurationException, SceneException
from vitalradar.models.body import posture_ellipses, posture_keypoints, posture_scatterers
from vitalradar.models.posture_models import Keypoints
from vitalradar.models.radar_models import ArrayGeometry, DataCube
from vitalradar.schemas.radar_schemas import RadarConfig
from vitalradar.schemas.scene_schemas import CHEST_LABEL, Posture, Scatterer, SceneModel

logger = logging.getLogger(__name__)

RBM_COMPONENTS = 6
RBM_BAND: tuple[float, float] = (0.01, 0.08)
SILHOUETTE_SPACING = 0.01


def build_virtual_array(config: RadarConfig) -> ArrayGeometry:
    """
    Build the TDM-MIMO virtual array.

    Virtual element k*n_rx + j sits at tx_positions[k] + rx_positions[j],
    converted from half-wavelength units to meters.

    Args:
        config: Radar configuration

    Returns:
        ArrayGeometry with n_tx*n_rx elements

    Raises:
        ConfigurationException: If two virtual elements coincide
    """
    tx = np.asarray(config.tx_positions, dtype=float)
    rx = np.asarray(config.rx_positions, dtype=float)
    units = (tx[:, None, :] + rx[None, :, :]).reshape(-1, 3)
    if len(np.unique(np.round(units, 9), axis=0)) != len(units):
        raise ConfigurationException("virtual array has duplicate element positions")

    wavelength = config.wavelength
    logger.info(
        "Virtual array: %d elements; swept bandwidth %.3f GHz, ADC-window bandwidth %.3f GHz "
        "-> range resolution %.2f cm",
        len(units),
        config.swept_bandwidth / 1e9,
        config.effective_bandwidth / 1e9,
        config.range_resolution * 100,
    )
    return ArrayGeometry(virtual_positions=units * wavelength / 2.0, wavelength=wavelength)


def _rbm_components(scene: SceneModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(scene.rbm_seed)
    freqs = rng.uniform(*RBM_BAND, size=RBM_COMPONENTS)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=RBM_COMPONENTS)
    weights = rng.uniform(0.5, 1.0, size=RBM_COMPONENTS)
    return freqs, phases, weights / weights.sum()


def chest_displacement(t: float | np.ndarray, scene: SceneModel) -> float | np.ndarray:
    """
    Line-of-sight chest displacement at time t.

    Breathing and heartbeat sinusoids plus seeded band-limited random body
    motion whose magnitude never exceeds rbm_amplitude.

    Args:
        t: Time in seconds (scalar or array), t >= 0
        scene: Scene with vital-sign parameters

    Returns:
        Displacement in meters, same shape as t
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ArgumentException("chest displacement is defined for t >= 0")
    d = scene.breathing_amplitude * np.sin(2 * np.pi * scene.breathing_frequency * t)
    d = d + scene.heart_amplitude * np.sin(2 * np.pi * scene.heart_frequency * t)
    if scene.rbm_amplitude > 0:
        freqs, phases, weights = _rbm_components(scene)
        rbm = np.sin(2 * np.pi * freqs[:, None] * t.reshape(1, -1) + phases[:, None])
        d = d + scene.rbm_amplitude * (weights @ rbm).reshape(t.shape)
    return float(d) if d.ndim == 0 else d


def build_scene(
    posture: Posture = Posture.BAD,
    radar_height: float = 1.06,
    body_range: float = 2.0,
    extra_scatterers: list[Scatterer] | None = None,
    **vitals,
) -> SceneModel:
    """
    Scene of a standing human in the given posture.

    Args:
        posture: Arm posture
        radar_height: Radar height above the floor in meters
        body_range: Distance of the body plane from the array in meters
        extra_scatterers: Additional scatterers (e.g. non-vital movers)
        **vitals: SceneModel vital-sign fields (breathing_frequency, ...)

    Returns:
        Validated SceneModel
    """
    scatterers = [
        Scatterer(label=s.label, position=s.position, reflectivity=s.reflectivity)
        for s in posture_scatterers(posture, body_range)
    ]
    scatterers += list(extra_scatterers or [])
    return SceneModel(
        scatterers=scatterers,
        posture=posture,
        radar_height=radar_height,
        range=body_range,
        **vitals,
    )


def render_silhouette(scene: SceneModel) -> tuple[np.ndarray, Keypoints]:
    """
    Render the 2D body outline used as ellipse-fitting ground truth.

    Args:
        scene: Scene whose posture and range define the body

    Returns:
        (points, keypoints): (N, 2) outline points in the (x, z) plane and the
        exact 17 keypoints of the same body
    """
    outlines = []
    for ellipse in posture_ellipses(scene.posture):
        outlines.append(ellipse.boundary(max(24, math.ceil(ellipse.perimeter / SILHOUETTE_SPACING))))
    return np.vstack(outlines), posture_keypoints(scene.posture, scene.range)


def noise_std_for_snr(snr_db: float, amplitude: float = 1.0) -> float:
    """Per-sample complex noise std giving snr_db against a scatterer of the given amplitude"""
    return amplitude / 10 ** (snr_db / 20.0)


class SimulationService:
    """Synthesizes raw FMCW data cubes for a scene"""

    def __init__(self, config: RadarConfig, geometry: ArrayGeometry | None = None):
        self.config = config
        self.geometry = geometry or build_virtual_array(config)
        if self.geometry.n_elements != config.n_virtual:
            raise ConfigurationException(
                f"geometry has {self.geometry.n_elements} elements, config expects {config.n_virtual}"
            )

    def chirp_times(self, frame_index: int) -> np.ndarray:
        cfg = self.config
        return frame_index * cfg.frame_duration + np.arange(cfg.chirps_per_frame) * cfg.chirp_period

    def _displacements(self, scene: SceneModel, times: np.ndarray) -> np.ndarray:
        disp = np.zeros((len(scene.scatterers), times.size))
        for s, scatterer in enumerate(scene.scatterers):
            if scatterer.label == CHEST_LABEL:
                disp[s] = chest_displacement(times, scene)
            elif scatterer.oscillation_amplitude > 0:
                disp[s] = scatterer.oscillation_amplitude * np.sin(
                    2 * np.pi * scatterer.oscillation_frequency * times
                )
        return disp

    def synthesize_frame(
        self,
        scene: SceneModel,
        frame_index: int,
        noise_std: float = 0.0,
        seed: int = 0,
    ) -> np.ndarray:
        """
        Synthesize one frame of dechirped samples.

        Every scatterer contributes a beat tone at 2*slope*R/c with carrier
        phase 4*pi*R/lambda plus the per-element steering phase; R follows the
        line-of-sight motion evaluated at each chirp start. TX slots are
        treated as simultaneous.

        Args:
            scene: Scene to render; positions are relative to the radar at
                (0, 0, radar_height)
            frame_index: Frame number (sets the chirp timestamps)
            noise_std: Std of complex white Gaussian noise per sample
            seed: Noise seed; the frame stream is derived from (seed, frame_index)

        Returns:
            Complex64 array (chirps, channels, samples)

        Raises:
            ArgumentException: If frame_index is negative
            SceneException: If a scatterer is not in front of the array
        """
        if frame_index < 0:
            raise ArgumentException(f"frame_index must be >= 0, got {frame_index}")
        cfg = self.config
        n_chirps, n_samples = cfg.chirps_per_frame, cfg.adc_samples_per_chirp
        frame = np.zeros((n_chirps, cfg.n_virtual, n_samples), dtype=complex)

        if scene.scatterers:
            rest = np.array([s.position for s in scene.scatterers], dtype=float)
            rel = rest - np.array([0.0, 0.0, scene.radar_height])
            if np.any(rel[:, 1] <= 0):
                bad = [s.label for s, y in zip(scene.scatterers, rel[:, 1]) if y <= 0]
                raise SceneException(f"scatterers behind the array plane: {bad}")
            r0 = np.linalg.norm(rel, axis=1)
            direction = rel / r0[:, None]

            times = self.chirp_times(frame_index)
            ranges = r0[:, None] + self._displacements(scene, times)
            beat = 2.0 * cfg.chirp_slope * ranges / speed_of_light
            fast_time = np.arange(n_samples) / cfg.adc_sample_rate
            phase = 2 * np.pi * beat[..., None] * fast_time + (
                4 * np.pi * ranges / self.geometry.wavelength
            )[..., None]
            tones = np.exp(1j * phase)  # (scatterer, chirp, sample)

            steering = np.exp(
                2j * np.pi / self.geometry.wavelength * direction @ self.geometry.virtual_positions.T
            )
            amplitude = np.array([s.reflectivity for s in scene.scatterers])
            frame += np.tensordot(tones, amplitude[:, None] * steering, axes=([0], [0])).transpose(
                0, 2, 1
            )

        frame += complex(*scene.dc_offset)
        if noise_std > 0:
            rng = np.random.default_rng([seed, frame_index])
            noise = rng.standard_normal((2, *frame.shape))
            frame += noise_std / np.sqrt(2.0) * (noise[0] + 1j * noise[1])
        return frame.astype(np.complex64)

    def synthesize_capture(
        self,
        scene: SceneModel,
        n_frames: int,
        noise_std: float = 0.0,
        seed: int = 0,
    ) -> DataCube:
        """
        Synthesize consecutive frames spaced frame_duration apart.

        Args:
            scene: Scene to render
            n_frames: Number of frames (>= 1)
            noise_std: Per-sample noise std
            seed: Noise seed

        Returns:
            DataCube of shape (n_frames, chirps, channels, samples)
        """
        if n_frames < 1:
            raise ArgumentException(f"n_frames must be >= 1, got {n_frames}")
        cfg = self.config
        samples = np.empty(
            (n_frames, cfg.chirps_per_frame, cfg.n_virtual, cfg.adc_samples_per_chirp),
            dtype=np.complex64,
        )
        logger.info("Synthesizing %d frames (%d scatterers)", n_frames, len(scene.scatterers))
        for index in range(n_frames):
            samples[index] = self.synthesize_frame(scene, index, noise_std, seed)
        return DataCube(samples=samples, config=cfg)
