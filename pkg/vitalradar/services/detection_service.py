import logging

import numpy as np
from scipy import ndimage, signal

from vitalradar.core.dsp import range_fft
from vitalradar.core.exceptions import ArgumentException, NumericException
from vitalradar.models.cloud_models import Detection, PointCloud, RangeAzimuthMap
from vitalradar.models.radar_models import ArrayGeometry
from vitalradar.schemas.radar_schemas import RadarConfig

logger = logging.getLogger(__name__)

CAPON_LOADING = 1e-3


def angle_grid(field_of_view_deg: float = 60.0, step_deg: float = 1.0) -> np.ndarray:
    """Symmetric angle grid in degrees covering [-fov, fov]"""
    half = int(round(field_of_view_deg / step_deg))
    return np.arange(-half, half + 1) * step_deg


def unit_direction(azimuth_deg, elevation_deg) -> np.ndarray:
    """Unit vectors (..., 3) for azimuth from boresight (+y) toward +x and elevation toward +z"""
    az = np.radians(np.asarray(azimuth_deg, dtype=float))
    el = np.radians(np.asarray(elevation_deg, dtype=float))
    az, el = np.broadcast_arrays(az, el)
    return np.stack((np.sin(az) * np.cos(el), np.cos(az) * np.cos(el), np.sin(el)), axis=-1)


def spherical_to_cartesian(
    rng: np.ndarray, azimuth_deg: np.ndarray, elevation_deg: np.ndarray, radar_height: float
) -> np.ndarray:
    """(range, azimuth, elevation) to scene (x, y, z) with the radar at (0, 0, radar_height)"""
    xyz = np.asarray(rng, dtype=float)[..., None] * unit_direction(azimuth_deg, elevation_deg)
    xyz[..., 2] += radar_height
    return xyz


def cartesian_to_spherical(
    xyz: np.ndarray, radar_height: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inverse of spherical_to_cartesian; returns (range, azimuth deg, elevation deg)"""
    xyz = np.asarray(xyz, dtype=float)
    x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2] - radar_height
    horizontal = np.hypot(x, y)
    return (
        np.sqrt(horizontal**2 + z**2),
        np.degrees(np.arctan2(x, y)),
        np.degrees(np.arctan2(z, horizontal)),
    )


def cfar_2d(
    power: np.ndarray,
    guard: tuple[int, int] = (8, 8),
    training: tuple[int, int] = (8, 8),
    threshold_db: float = 10.0,
) -> list[tuple[int, int]]:
    """
    Two-dimensional cell-averaging CFAR.

    A cell is detected when its power is at least
    mean(training ring) * 10^(threshold_db/10). The training ring is the
    (2(g+t)+1)-square window minus the (2g+1)-square guard window; at the
    edges it is truncated and the mean is taken over the cells that exist.
    Zero-power cells are never detected: over an all-zero ring the threshold
    is zero and every silent cell would otherwise pass.

    Args:
        power: Linear power map (rows, cols)
        guard: Guard cells per side (rows, cols)
        training: Training cells per side beyond the guard (rows, cols)
        threshold_db: Detection threshold over the local mean

    Returns:
        Detected (row, col) indices in row-major order

    Raises:
        ArgumentException: If the map is not larger than the window
    """
    power = np.asarray(power, dtype=float)
    if power.ndim != 2:
        raise ArgumentException(f"CFAR expects a 2D map, got shape {power.shape}")
    (g_r, g_c), (t_r, t_c) = guard, training
    outer_r, outer_c = g_r + t_r, g_c + t_c
    if power.shape[0] <= 2 * outer_r + 1 or power.shape[1] <= 2 * outer_c + 1:
        raise ArgumentException(
            f"map {power.shape} too small for CFAR window "
            f"({2 * outer_r + 1}, {2 * outer_c + 1})"
        )

    kernel = np.ones((2 * outer_r + 1, 2 * outer_c + 1))
    kernel[t_r : t_r + 2 * g_r + 1, t_c : t_c + 2 * g_c + 1] = 0.0

    ring_sum = signal.convolve2d(power, kernel, mode="same", boundary="fill", fillvalue=0.0)
    ring_count = signal.convolve2d(
        np.ones_like(power), kernel, mode="same", boundary="fill", fillvalue=0.0
    )
    threshold = ring_sum / ring_count * 10.0 ** (threshold_db / 10.0)
    hits = (power >= threshold) & (power > 0.0)
    return [(int(r), int(c)) for r, c in np.argwhere(hits)]


def local_peaks(power: np.ndarray, neighborhood: tuple[int, int] = (1, 2)) -> np.ndarray:
    """Mask of cells that hold the maximum of their (2r+1, 2c+1) neighborhood"""
    r, c = neighborhood
    return power >= ndimage.maximum_filter(power, size=(2 * r + 1, 2 * c + 1), mode="nearest")


class DetectionService:
    """Per-frame range-azimuth imaging, CFAR detection and Capon elevation"""

    def __init__(self, config: RadarConfig, geometry: ArrayGeometry):
        self.config = config
        self.geometry = geometry
        self.azimuth_grid = angle_grid(config.field_of_view_deg, config.angle_step_deg)
        self.elevation_grid = angle_grid(config.field_of_view_deg, config.angle_step_deg)
        self._azimuth_row = geometry.azimuth_row()

    def _check_frame(self, frame: np.ndarray) -> np.ndarray:
        frame = np.asarray(frame)
        if frame.ndim != 3 or frame.shape[1] != self.geometry.n_elements:
            raise ArgumentException(
                f"frame shape {frame.shape} does not match {self.geometry.n_elements} channels"
            )
        return frame

    def steering_matrix(self, azimuth_deg, elevation_deg, channels=None) -> np.ndarray:
        """Steering vectors (n_angles, n_channels), exp(j 2pi/lambda p.u)"""
        positions = self.geometry.virtual_positions
        if channels is not None:
            positions = positions[channels]
        u = unit_direction(azimuth_deg, elevation_deg).reshape(-1, 3)
        return np.exp(2j * np.pi / self.geometry.wavelength * u @ positions.T)

    def range_profiles(self, frame: np.ndarray) -> np.ndarray:
        """Windowed range FFT of a frame, (chirps, channels, range bins)"""
        return range_fft(self._check_frame(frame), window=self.config.cloud_range_window)

    def range_azimuth_map(self, frame: np.ndarray, profiles: np.ndarray | None = None) -> RangeAzimuthMap:
        """
        Conventional beamformer over the azimuth row, power averaged over chirps.

        Args:
            frame: One frame (chirps, channels, samples)
            profiles: Precomputed range profiles of the same frame

        Returns:
            RangeAzimuthMap with power shape (range bins, azimuth bins)

        Raises:
            ArgumentException: If the channel count does not match the geometry
        """
        if profiles is None:
            profiles = self.range_profiles(frame)
        row = self._azimuth_row
        steering = self.steering_matrix(self.azimuth_grid, 0.0, channels=row)
        beams = steering.conj() @ profiles[:, row, :]
        power = np.mean(np.abs(beams) ** 2, axis=0).T
        return RangeAzimuthMap(
            power=power,
            azimuth_grid=self.azimuth_grid.copy(),
            range_resolution=self.config.range_resolution,
        )

    def _loaded_inverses(self, profiles: np.ndarray, range_bins: np.ndarray) -> np.ndarray:
        """Inverse of the loaded spatial covariance at each range bin, (bins, N, N)"""
        snapshots = profiles[:, :, range_bins]
        n_chirps, n_channels = snapshots.shape[:2]
        covariance = np.einsum("ckb,clb->bkl", snapshots, snapshots.conj()) / n_chirps
        trace = np.real(np.trace(covariance, axis1=1, axis2=2))
        silent = ~np.isfinite(trace) | (trace <= 0.0)
        if np.any(silent):
            raise NumericException(f"covariance at bins {range_bins[silent].tolist()} has no power")
        covariance += (CAPON_LOADING * trace / n_channels)[:, None, None] * np.eye(n_channels)
        try:
            return np.linalg.inv(covariance)
        except np.linalg.LinAlgError as exc:
            raise NumericException(f"singular covariance at bins {range_bins.tolist()}") from exc

    def capon_elevations(
        self,
        frame: np.ndarray,
        range_bins,
        azimuths_deg,
        profiles: np.ndarray | None = None,
    ) -> np.ndarray:
        """
        Capon (MVDR) elevation at each detected cell.

        The spatial covariance is estimated across chirps at the detected range
        bin and diagonally loaded with 1e-3 * trace / N. Cells sharing a range
        bin share one inverse.

        Args:
            frame: One frame (chirps, channels, samples)
            range_bins: Detected range bins
            azimuths_deg: Detected azimuths; each held fixed during its elevation scan
            profiles: Precomputed range profiles of the same frame

        Returns:
            Elevations in degrees on the configured grid, one per cell

        Raises:
            ArgumentException: If the array has a single elevation row
            NumericException: If a covariance is singular after loading
        """
        if len(np.unique(np.round(self.geometry.virtual_positions[:, 2], 12))) < 2:
            raise ArgumentException("Capon elevation needs at least two elevation rows")
        range_bins = np.asarray(range_bins, dtype=int).ravel()
        azimuths = np.asarray(azimuths_deg, dtype=float).ravel()
        if range_bins.size != azimuths.size:
            raise ArgumentException(f"{range_bins.size} range bins for {azimuths.size} azimuths")
        if range_bins.size == 0:
            return np.empty(0)
        if profiles is None:
            profiles = self.range_profiles(frame)

        bins, index = np.unique(range_bins, return_inverse=True)
        inverses = self._loaded_inverses(profiles, bins)
        n_elevations = self.elevation_grid.size
        steering = self.steering_matrix(azimuths[:, None], self.elevation_grid[None, :]).reshape(
            azimuths.size, n_elevations, -1
        )
        denominator = np.real(np.einsum("dek,dkl,del->de", steering.conj(), inverses[index], steering))
        if not np.all(np.isfinite(denominator)) or np.any(denominator <= 0):
            raise NumericException(f"ill-conditioned covariance at bins {bins.tolist()}")
        return self.elevation_grid[np.argmax(1.0 / denominator, axis=1)]

    def capon_elevation(
        self,
        frame: np.ndarray,
        range_bin: int,
        azimuth_deg: float,
        profiles: np.ndarray | None = None,
    ) -> float:
        """Capon elevation of a single cell"""
        return float(self.capon_elevations(frame, [range_bin], [azimuth_deg], profiles)[0])

    def detect(self, frame: np.ndarray) -> list[Detection]:
        """
        CFAR detections of one frame with Capon elevations.

        Only CFAR cells that are also local peaks of the map are kept, so a
        scatterer's main lobe and sidelobes do not each become a point.
        Range bin 0 (DC) is never reported.
        """
        cfg = self.config
        profiles = self.range_profiles(frame)
        ra_map = self.range_azimuth_map(frame, profiles)
        peaks = local_peaks(ra_map.power, cfg.cfar_peak_neighborhood)
        cells = [
            (r, c)
            for r, c in cfar_2d(ra_map.power, cfg.cfar_guard, cfg.cfar_training, cfg.cfar_threshold_db)
            if r != 0 and peaks[r, c]
        ]
        if not cells:
            return []
        rows, cols = np.array(cells).T
        azimuths = ra_map.azimuth_grid[cols]
        elevations = self.capon_elevations(frame, rows, azimuths, profiles)
        return [
            Detection(
                range_bin=int(r),
                azimuth=float(az),
                elevation=float(el),
                power=float(ra_map.power[r, c]),
            )
            for r, c, az, el in zip(rows, cols, azimuths, elevations)
        ]

    def frame_pointcloud(
        self, frame: np.ndarray, radar_height: float, frame_index: int = 0
    ) -> PointCloud:
        """
        Point cloud of one frame: map, CFAR, Capon, then Cartesian conversion.

        Range bin 0 (DC) is never reported.

        Args:
            frame: One frame (chirps, channels, samples)
            radar_height: Radar height used for the z coordinate
            frame_index: Frame number stored on the cloud

        Returns:
            PointCloud with rows (x, y, z, power)
        """
        detections = self.detect(frame)
        if not detections:
            return PointCloud(frame_index=frame_index)
        ranges = np.array([d.range_bin for d in detections]) * self.config.range_resolution
        xyz = spherical_to_cartesian(
            ranges,
            np.array([d.azimuth for d in detections]),
            np.array([d.elevation for d in detections]),
            radar_height,
        )
        points = np.column_stack((xyz, [d.power for d in detections]))
        logger.debug("Frame %d: %d points", frame_index, len(points))
        return PointCloud(points=points, frame_index=frame_index)


def accumulate_pointclouds(clouds: list[PointCloud]) -> PointCloud:
    """
    Concatenate per-frame clouds, tagging every point with its source frame.

    Clouds without a frame index are tagged with their list position.

    Raises:
        ArgumentException: If no clouds are given
    """
    if not clouds:
        raise ArgumentException("cannot accumulate an empty list of point clouds")
    points, frames = [], []
    for position, cloud in enumerate(clouds):
        points.append(cloud.points)
        if cloud.frames.size == len(cloud):
            frames.append(cloud.frames)
        else:
            tag = position if cloud.frame_index is None else cloud.frame_index
            frames.append(np.full(len(cloud), tag, dtype=np.int64))
    return PointCloud(points=np.vstack(points), frames=np.concatenate(frames))
