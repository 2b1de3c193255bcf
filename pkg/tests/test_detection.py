import numpy as np
import pytest

from vitalradar.core.exceptions import ArgumentException, NumericException
from vitalradar.models.cloud_models import PointCloud
from vitalradar.schemas.radar_schemas import RadarConfig
from vitalradar.schemas.scene_schemas import Posture, SceneModel
from vitalradar.services.detection_service import (
    DetectionService,
    accumulate_pointclouds,
    angle_grid,
    cartesian_to_spherical,
    cfar_2d,
    local_peaks,
    spherical_to_cartesian,
)
from vitalradar.services.simulation_service import (
    SimulationService,
    build_scene,
    build_virtual_array,
    noise_std_for_snr,
)


def naive_cfar(power, guard, training, threshold_db):
    """Cell-by-cell CFAR over explicitly sliced windows"""
    rows, cols = power.shape
    (g_r, g_c), (t_r, t_c) = guard, training
    scale = 10 ** (threshold_db / 10)
    hits = []
    for r in range(rows):
        for c in range(cols):
            outer = (slice(max(0, r - g_r - t_r), r + g_r + t_r + 1),
                     slice(max(0, c - g_c - t_c), c + g_c + t_c + 1))
            inner = (slice(max(0, r - g_r), r + g_r + 1), slice(max(0, c - g_c), c + g_c + 1))
            ring_sum = power[outer].sum() - power[inner].sum()
            ring_count = power[outer].size - power[inner].size
            if power[r, c] > 0 and power[r, c] >= ring_sum / ring_count * scale:
                hits.append((r, c))
    return hits


class TestGeometryHelpers:
    """Tests for angle grids and coordinate conversion"""

    def test_angle_grid(self):
        """+-60 degrees in 1 degree steps has 121 symmetric points"""
        grid = angle_grid(60.0, 1.0)

        assert grid.size == 121
        assert grid[0] == -60.0 and grid[-1] == 60.0 and grid[60] == 0.0

    def test_spherical_round_trip(self):
        """Cartesian conversion inverts the spherical one"""
        rng, az, el = np.array([1.5, 2.0, 2.7]), np.array([-30.0, 0.0, 12.5]), np.array([5.0, -20.0, 0.0])

        back = cartesian_to_spherical(spherical_to_cartesian(rng, az, el, 1.06), 1.06)

        for expected, found in zip((rng, az, el), back):
            np.testing.assert_allclose(found, expected, atol=1e-12)

    def test_boresight_is_plus_y(self):
        """Zero azimuth and elevation point along +y at the radar height"""
        np.testing.assert_allclose(spherical_to_cartesian(2.0, 0.0, 0.0, 1.06), [0.0, 2.0, 1.06])


class TestCFAR:
    """Tests for two-dimensional cell-averaging CFAR"""

    def test_single_spike(self):
        """A 20x spike over a flat floor is the only detection"""
        power = np.ones((64, 121))
        power[30, 60] = 20.0

        assert cfar_2d(power) == [(30, 60)]

    def test_flat_map_has_no_detections(self):
        """Cells equal to their surroundings never reach a 10 dB threshold"""
        assert cfar_2d(np.full((64, 121), 3.0)) == []

    def test_zero_map_has_no_detections(self):
        """Zero power is never detected"""
        assert cfar_2d(np.zeros((64, 121))) == []

    def test_spike_in_silence(self):
        """Only the lit cell of an otherwise silent map is detected"""
        power = np.zeros((64, 121))
        power[20, 50] = 1.0

        assert cfar_2d(power) == [(20, 50)]

    def test_matches_naive_windows(self):
        """Convolution-based ring means agree with explicit windows, edges included"""
        rng = np.random.default_rng(21)
        power = rng.exponential(1.0, (40, 45))
        power[rng.integers(0, 40, 6), rng.integers(0, 45, 6)] *= 40.0

        expected = naive_cfar(power, (2, 3), (3, 2), 8.0)

        assert cfar_2d(power, (2, 3), (3, 2), 8.0) == expected
        assert expected

    def test_threshold_monotone(self):
        """Raising the threshold only removes detections"""
        rng = np.random.default_rng(4)
        power = rng.exponential(1.0, (64, 121))

        low = set(cfar_2d(power, threshold_db=6.0))
        high = set(cfar_2d(power, threshold_db=8.0))

        assert high <= low

    def test_scale_invariant(self):
        """Scaling the map by a positive constant keeps the detections"""
        rng = np.random.default_rng(8)
        power = rng.exponential(1.0, (64, 121))
        power[10, 10] = 50.0

        assert cfar_2d(power * 4.0) == cfar_2d(power)

    def test_map_smaller_than_window_rejected(self):
        """The map must exceed the 33x33 default window"""
        with pytest.raises(ArgumentException):
            cfar_2d(np.ones((33, 121)))


class TestRangeAzimuthMap:
    """Tests for conventional azimuth beamforming"""

    def test_boresight_target(self, simulator, detector, boresight_scene):
        """A boresight scatterer at 2.0 m peaks at bin 23, azimuth 0"""
        ra_map = detector.range_azimuth_map(simulator.synthesize_frame(boresight_scene, 0))

        r, a = np.unravel_index(np.argmax(ra_map.power), ra_map.shape)

        assert ra_map.shape == (64, 121)
        assert r == 23
        assert ra_map.azimuth_grid[a] == 0.0

    def test_off_axis_target(self, simulator, detector, make_scene):
        """A target at 20 degrees azimuth peaks near 20 degrees"""
        position = tuple(spherical_to_cartesian(2.0, 20.0, 0.0, 1.06))
        ra_map = detector.range_azimuth_map(simulator.synthesize_frame(make_scene(position), 0))

        _, a = np.unravel_index(np.argmax(ra_map.power), ra_map.shape)

        assert abs(ra_map.azimuth_grid[a] - 20.0) <= 2.0

    def test_channel_mismatch_rejected(self, detector):
        """Frames must carry one channel per virtual element"""
        with pytest.raises(ArgumentException):
            detector.range_azimuth_map(np.zeros((4, 11, 64), dtype=complex))


class TestCaponElevation:
    """Tests for Capon elevation estimation"""

    @pytest.fixture
    def capon_setup(self):
        config = RadarConfig(chirps_per_frame=16)
        geometry = build_virtual_array(config)
        return SimulationService(config, geometry), DetectionService(config, geometry)

    @pytest.mark.parametrize("elevation", [0.0, 15.0, -10.0])
    def test_noise_free_elevation(self, capon_setup, make_scene, elevation):
        """A single noise-free scatterer is found within 2 degrees"""
        simulator, detector = capon_setup
        position = tuple(spherical_to_cartesian(2.0, 0.0, elevation, 1.06))

        found = detector.capon_elevation(simulator.synthesize_frame(make_scene(position), 0), 23, 0.0)

        assert abs(found - elevation) <= 2.0

    @pytest.mark.parametrize("seed", range(5))
    def test_noisy_elevation(self, capon_setup, make_scene, seed):
        """At 20 dB per-sample SNR the chest elevation stays within 3 degrees"""
        simulator, detector = capon_setup
        position = tuple(spherical_to_cartesian(2.0, 0.0, 6.0, 1.06))
        frame = simulator.synthesize_frame(make_scene(position), 0, noise_std=0.1, seed=seed)

        assert abs(detector.capon_elevation(frame, 23, 0.0) - 6.0) <= 3.0

    def test_zero_frame_is_singular(self, detector):
        """A frame without power has no covariance to invert"""
        with pytest.raises(NumericException):
            detector.capon_elevation(np.zeros((4, 12, 64), dtype=complex), 23, 0.0)

    def test_single_row_array_rejected(self):
        """An array with a single elevation row cannot resolve elevation"""
        config = RadarConfig(
            chirps_per_frame=4, tx_positions=[(0, 0, 0), (4, 0, 0), (8, 0, 0)]
        )
        detector = DetectionService(config, build_virtual_array(config))

        with pytest.raises(ArgumentException):
            detector.capon_elevation(np.ones((4, 12, 64), dtype=complex), 23, 0.0)


class TestPointClouds:
    """Tests for per-frame point clouds and accumulation"""

    def test_chest_point(self, capon_setup_frame):
        """The cloud holds a point within 10 cm of the chest"""
        detector, frame, chest = capon_setup_frame

        cloud = detector.frame_pointcloud(frame, 1.06, frame_index=4)

        assert len(cloud) > 0
        assert np.all(cloud.frames == 4)
        assert np.all(cloud.xyz[:, 1] > 0)
        assert np.min(np.linalg.norm(cloud.xyz - chest, axis=1)) < 0.10

    @pytest.fixture
    def capon_setup_frame(self, make_scene):
        config = RadarConfig(chirps_per_frame=16)
        geometry = build_virtual_array(config)
        chest = np.array([0.0, 2.0, 1.27])
        frame = SimulationService(config, geometry).synthesize_frame(make_scene(tuple(chest)), 0)
        return DetectionService(config, geometry), frame, chest

    @pytest.mark.parametrize("posture", list(Posture))
    def test_body_frame_is_sparse(self, radar_config, posture):
        """A full-size body frame at 20 dB SNR gives a sparse cloud, not an azimuth smear"""
        geometry = build_virtual_array(radar_config)
        scene = build_scene(posture)
        frame = SimulationService(radar_config, geometry).synthesize_frame(
            scene, 0, noise_std=noise_std_for_snr(20.0), seed=7
        )

        cloud = DetectionService(radar_config, geometry).frame_pointcloud(frame, scene.radar_height)

        assert 5 <= len(cloud) <= 60
        assert np.min(np.linalg.norm(cloud.xyz - np.array([0.0, 2.0, 1.27]), axis=1)) < 0.5

    def test_one_point_per_lobe(self):
        """Neighboring cells of one lobe collapse to its peak"""
        power = np.ones((64, 121))
        power[30, 58:63] = [5.0, 20.0, 40.0, 20.0, 5.0]
        power[31, 60] = 30.0

        peaks = local_peaks(power, (1, 2))

        assert peaks[30, 60]
        assert not peaks[30, 59] and not peaks[30, 61] and not peaks[31, 60]

    def test_batched_capon_matches_single_cells(self, simulator, detector, boresight_scene):
        """Elevations of several cells agree with one-cell estimates"""
        frame = simulator.synthesize_frame(boresight_scene, 0, noise_std=0.05, seed=3)
        bins, azimuths = [23, 23, 24], [0.0, 10.0, -5.0]

        batched = detector.capon_elevations(frame, bins, azimuths)

        single = [detector.capon_elevation(frame, b, a) for b, a in zip(bins, azimuths)]
        np.testing.assert_array_equal(batched, single)

    def test_empty_scene_gives_empty_cloud(self, simulator, detector):
        """No scatterers and no noise gives no points"""
        cloud = detector.frame_pointcloud(simulator.synthesize_frame(SceneModel(), 0), 1.06)

        assert len(cloud) == 0

    def test_accumulate_tags_frames(self):
        """Accumulated points keep the frame they came from"""
        clouds = [
            PointCloud(points=np.ones((2, 4)), frame_index=0),
            PointCloud(frame_index=1),
            PointCloud(points=np.full((3, 4), 2.0), frame_index=2),
        ]

        merged = accumulate_pointclouds(clouds)

        assert len(merged) == 5
        assert merged.frames.tolist() == [0, 0, 2, 2, 2]

    def test_accumulate_single_cloud(self):
        """One cloud accumulates to itself"""
        cloud = PointCloud(points=np.arange(8.0).reshape(2, 4), frame_index=7)

        merged = accumulate_pointclouds([cloud])

        np.testing.assert_array_equal(merged.points, cloud.points)
        assert merged.frames.tolist() == [7, 7]

    def test_accumulate_nothing_rejected(self):
        """An empty list has nothing to accumulate"""
        with pytest.raises(ArgumentException):
            accumulate_pointclouds([])
