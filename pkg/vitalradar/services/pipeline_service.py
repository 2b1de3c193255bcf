"""
Stage orchestration: simulate -> pointcloud -> train -> estimate -> compare.

Every stage reads its inputs from the artifact directory, so running the
stages one by one produces the same files as a single end-to-end run.
"""

import json
import logging
from collections.abc import Callable
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from vitalradar.core.exceptions import (
    ArgumentException,
    ConfigurationException,
    SceneException,
    StageException,
    VitalRadarException,
)
from vitalradar.models.body import posture_ellipses
from vitalradar.models.cloud_models import PointCloud
from vitalradar.models.posture_models import KEYPOINT_LABELS, N_KEYPOINTS, InputTensor, Keypoints
from vitalradar.models.vitals_models import RaRaeComparison, VitalsResult
from vitalradar.repositories.cube_repository import CubeRepository
from vitalradar.repositories.network_repository import NetworkRepository
from vitalradar.repositories.report_repository import ReportRepository
from vitalradar.repositories.table_repository import TableRepository
from vitalradar.schemas.pipeline_schemas import (
    ChestEstimate,
    ModeSummary,
    PipelineConfig,
    RunSummary,
)
from vitalradar.schemas.scene_schemas import PRESETS, Posture, Scatterer, SceneModel
from vitalradar.services.cnn_service import predict, train
from vitalradar.services.detection_service import (
    DetectionService,
    accumulate_pointclouds,
    spherical_to_cartesian,
)
from vitalradar.services.ellipse_service import fit_ellipses
from vitalradar.services.posture_service import (
    chest_from_keypoints,
    keypoints_from_ellipses,
    voxelize_projections,
)
from vitalradar.services.simulation_service import (
    SimulationService,
    build_scene,
    noise_std_for_snr,
    render_silhouette,
)
from vitalradar.services.vitals_service import VitalsService

logger = logging.getLogger(__name__)

STAGES: tuple[str, ...] = ("simulate", "pointcloud", "train", "estimate", "compare")

CONFIG_FILE = "config.json"
SCENE_FILE = "scene.json"
TRUTH_FILE = "keypoints_truth.csv"
CLOUD_FILE = "pointcloud.csv"
HISTORY_FILE = "training_history.csv"
KEYPOINTS_FILE = "keypoints.csv"
CHEST_FILE = "chest.json"
COMPARISON_FILE = "comparison.csv"
SUMMARY_FILE = "summary.json"


def build_scene_model(config: PipelineConfig) -> SceneModel:
    """
    Scene of a resolved run configuration.

    Explicit scatterers replace the posture body; an interferer, when
    configured, is added at its azimuth/elevation as seen from the radar.
    """
    section = config.scene
    vitals = {
        "breathing_frequency": section.breathing_frequency,
        "breathing_amplitude": section.breathing_amplitude,
        "heart_frequency": section.heart_frequency,
        "heart_amplitude": section.heart_amplitude,
        "rbm_amplitude": section.rbm_amplitude,
        "rbm_seed": section.rbm_seed,
        "dc_offset": section.dc_offset,
    }
    extra: list[Scatterer] = []
    if section.interferer is not None:
        interferer = section.interferer
        position = spherical_to_cartesian(
            interferer.range or section.range,
            interferer.azimuth_deg,
            interferer.elevation_deg,
            section.radar_height,
        )
        extra.append(
            Scatterer(
                label="interferer",
                position=tuple(float(v) for v in position),
                reflectivity=interferer.reflectivity,
                oscillation_frequency=interferer.frequency,
                oscillation_amplitude=interferer.amplitude,
            )
        )
    if section.scatterers is not None:
        return SceneModel(
            scatterers=list(section.scatterers) + extra,
            posture=section.posture,
            radar_height=section.radar_height,
            range=section.range,
            **vitals,
        )
    return build_scene(
        section.posture,
        radar_height=section.radar_height,
        body_range=section.range,
        extra_scatterers=extra,
        **vitals,
    )


def truth_keypoints(scene: SceneModel, config: PipelineConfig) -> Keypoints:
    """Keypoints labeled by fitting ellipses to the scene's silhouette"""
    points, _ = render_silhouette(scene)
    ellipses = fit_ellipses(
        points,
        max_ellipses=config.max_ellipses,
        coverage_tol=config.coverage_tol,
        template=posture_ellipses(scene.posture),
    )
    return keypoints_from_ellipses(ellipses, scene.range, scene.posture)


def build_training_set(
    config: PipelineConfig,
    postures: tuple[Posture, ...] = tuple(Posture),
    frames_per_posture: int = 50,
) -> list[tuple[InputTensor, Keypoints]]:
    """
    Training samples pooled over several postures.

    Each posture is simulated with its preset vital-sign truths at the
    configured SNR; every frame contributes one sample accumulating up to
    chest_frames frames of point clouds.

    Args:
        config: Resolved run configuration (radar, scene geometry, seed)
        postures: Postures to include
        frames_per_posture: Frames simulated per posture

    Returns:
        List of (input tensor, ground-truth keypoints)

    Raises:
        ArgumentException: If frames_per_posture < 1
    """
    if frames_per_posture < 1:
        raise ArgumentException(f"frames_per_posture must be >= 1, got {frames_per_posture}")
    simulation = SimulationService(config.radar)
    detector = DetectionService(config.radar, simulation.geometry)
    section = config.scene
    dataset: list[tuple[InputTensor, Keypoints]] = []
    for index, posture in enumerate(postures):
        truth = PRESETS[posture]
        scene = build_scene(
            posture,
            radar_height=section.radar_height,
            body_range=section.range,
            breathing_frequency=truth.breathing_truth,
            breathing_amplitude=section.breathing_amplitude,
            heart_frequency=truth.heart_truth,
            heart_amplitude=section.heart_amplitude,
        )
        noise_std = (
            config.noise_std
            if config.noise_std is not None
            else noise_std_for_snr(config.snr_db, scene.chest.reflectivity)
        )
        cube = simulation.synthesize_capture(
            scene,
            frames_per_posture,
            noise_std=noise_std,
            seed=stage_seed(config.seed or 0, "simulate") + index,
        )
        clouds = [
            detector.frame_pointcloud(cube.frame(i), section.radar_height, frame_index=i)
            for i in range(cube.n_frames)
        ]
        labels = truth_keypoints(scene, config)
        for frame in range(cube.n_frames):
            window = clouds[max(0, frame - config.chest_frames + 1) : frame + 1]
            tensor = voxelize_projections(accumulate_pointclouds(window), config.voxel_bounds)
            dataset.append((tensor, labels))
        logger.info("Training set: %d frames of %s", cube.n_frames, posture.value)
    return dataset


def stage_seed(seed: int, stage: str) -> int:
    """Independent per-stage seed derived from the run seed"""
    sequence = np.random.SeedSequence([seed, STAGES.index(stage)])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def _keypoint_rows(frame: int, keypoints: Keypoints):
    for label, (x, y, z) in zip(KEYPOINT_LABELS, keypoints.coords):
        yield (frame, label, float(x), float(y), float(z))


class PipelineService:
    """Runs pipeline stages against one artifact directory"""

    def __init__(self, config: PipelineConfig, out_dir: Path):
        if config.seed is None or config.frames_total is None or config.frames_train is None:
            raise ConfigurationException("pipeline needs a resolved configuration")
        self.config = config
        self.out_dir = Path(out_dir)
        self.config_hash = config.config_hash()
        self.cubes = CubeRepository(self.out_dir)
        self.networks = NetworkRepository(self.out_dir)
        self.tables = TableRepository(self.out_dir)
        self.reports = ReportRepository(self.out_dir)
        self.simulation = SimulationService(config.radar)
        self.geometry = self.simulation.geometry

    # Stage plumbing

    def run_stage(self, stage: str, action: Callable[[], None]) -> None:
        """
        Run one stage and record it in the stage marker.

        Raises:
            VitalRadarException: Re-raised after the failure is recorded
        """
        logger.info("Stage %s: start", stage)
        try:
            action()
        except VitalRadarException as exc:
            self.reports.mark_failed(stage, f"{type(exc).__name__}: {exc}", self.config_hash)
            logger.error("Stage %s failed: %s", stage, exc)
            raise
        self.reports.mark_completed(stage, self.config_hash)
        logger.info("Stage %s: done", stage)

    def run(self, stage: str) -> None:
        actions = {
            "simulate": self.simulate,
            "pointcloud": self.pointcloud,
            "train": self.train,
            "estimate": self.estimate,
            "compare": self.compare,
        }
        if stage not in actions:
            raise ConfigurationException(f"unknown stage '{stage}'")
        self.run_stage(stage, actions[stage])

    def run_all(self) -> RunSummary:
        """End-to-end run; equivalent to invoking every stage in order"""
        for stage in STAGES:
            self.run(stage)
        return self.reports.load(SUMMARY_FILE, RunSummary, stage="compare")

    def _check_hash(self, found: str, artifact: str, stage: str) -> None:
        if found != self.config_hash:
            raise StageException(
                f"{artifact} was produced by a different configuration; rerun the {stage} stage",
                stage=stage,
            )

    def _load_cube(self):
        cube, digest = self.cubes.load(self.config.radar)
        self._check_hash(digest.hex(), self.cubes.FILENAME, "simulate")
        return cube

    # Stages

    def simulate(self) -> None:
        cfg = self.config
        try:
            scene = build_scene_model(cfg)
        except ValidationError as exc:
            raise SceneException(f"invalid scene: {exc}") from exc
        chest = scene.chest
        noise_std = (
            cfg.noise_std
            if cfg.noise_std is not None
            else noise_std_for_snr(cfg.snr_db, chest.reflectivity if chest else 1.0)
        )
        self.reports.save(
            CONFIG_FILE,
            {"config": cfg.model_dump(mode="json"), "config_hash": self.config_hash},
        )
        self.reports.save(SCENE_FILE, scene)

        labels = truth_keypoints(scene, cfg)
        rows = (row for frame in range(cfg.frames_total) for row in _keypoint_rows(frame, labels))
        self.tables.save(TRUTH_FILE, ("frame", "label", "x", "y", "z"), rows, self.config_hash)

        cube = self.simulation.synthesize_capture(
            scene, cfg.frames_total, noise_std=noise_std, seed=stage_seed(cfg.seed, "simulate")
        )
        self.cubes.save(cube, cfg.config_digest())

    def pointcloud(self) -> None:
        cube = self._load_cube()
        detector = DetectionService(self.config.radar, self.geometry)
        height = self.config.scene.radar_height
        clouds = [
            detector.frame_pointcloud(cube.frame(i), height, frame_index=i)
            for i in range(cube.n_frames)
        ]
        merged = accumulate_pointclouds(clouds)
        logger.info("Point clouds: %d points over %d frames", len(merged), cube.n_frames)
        rows = (
            (int(frame), *map(float, point)) for frame, point in zip(merged.frames, merged.points)
        )
        self.tables.save(CLOUD_FILE, ("frame", "x", "y", "z", "power"), rows, self.config_hash)

    def _load_clouds(self) -> dict[int, PointCloud]:
        found, _, rows = self.tables.load(CLOUD_FILE, stage="pointcloud")
        self._check_hash(found, CLOUD_FILE, "pointcloud")
        by_frame: dict[int, list[list[float]]] = {i: [] for i in range(self.config.frames_total)}
        for row in rows:
            by_frame.setdefault(int(row[0]), []).append([float(v) for v in row[1:]])
        return {
            frame: PointCloud(points=np.asarray(points).reshape(-1, 4), frame_index=frame)
            for frame, points in by_frame.items()
        }

    def _window_tensor(self, clouds: dict[int, PointCloud], frames: range) -> InputTensor:
        merged = accumulate_pointclouds([clouds[f] for f in frames])
        return voxelize_projections(merged, self.config.voxel_bounds)

    def _load_truth(self) -> dict[int, Keypoints]:
        found, _, rows = self.tables.load(TRUTH_FILE, stage="simulate")
        self._check_hash(found, TRUTH_FILE, "simulate")
        coords: dict[int, list[tuple[float, float, float]]] = {}
        for frame, _label, x, y, z in rows:
            coords.setdefault(int(frame), []).append((float(x), float(y), float(z)))
        return {f: Keypoints(np.asarray(c)) for f, c in coords.items() if len(c) == N_KEYPOINTS}

    def train(self) -> None:
        """
        Train on frames_train samples, each input accumulating up to chest_frames frames.

        With train_postures set (the default) the samples come from a fresh
        simulation of each listed posture, frames_train split evenly between
        them, so the labels vary between samples. Without it the run's own
        frames [0, frames_train) are used.
        """
        cfg = self.config
        if cfg.train_postures:
            per_posture = max(1, cfg.frames_train // len(cfg.train_postures))
            dataset = build_training_set(cfg, tuple(cfg.train_postures), per_posture)
        else:
            clouds = self._load_clouds()
            truth = self._load_truth()
            dataset = []
            for frame in range(cfg.frames_train):
                window = range(max(0, frame - cfg.chest_frames + 1), frame + 1)
                dataset.append((self._window_tensor(clouds, window), truth[frame]))
        train_cfg = cfg.train.model_copy(update={"seed": stage_seed(cfg.seed, "train")})
        params, history = train(dataset, train_cfg)
        self.networks.save(params, cfg.config_digest())
        self.tables.save(
            HISTORY_FILE, ("epoch", "loss"), enumerate(history), self.config_hash
        )

    def estimate(self) -> None:
        cfg = self.config
        params, digest = self.networks.load()
        self._check_hash(digest.hex(), self.networks.FILENAME, "train")
        clouds = self._load_clouds()
        stop = min(cfg.frames_train + cfg.chest_frames, cfg.frames_total)
        window = range(cfg.frames_train, stop)
        keypoints = predict(params, self._window_tensor(clouds, window))
        self.tables.save(
            KEYPOINTS_FILE,
            ("frame", "label", "x", "y", "z"),
            _keypoint_rows(cfg.frames_train, keypoints),
            self.config_hash,
        )
        azimuth, elevation = chest_from_keypoints(keypoints, cfg.scene.radar_height)
        x, y, z = keypoints.chest
        estimate = ChestEstimate(
            config_hash=self.config_hash,
            x=float(x),
            y=float(y),
            z=float(z),
            azimuth_deg=azimuth,
            elevation_deg=elevation,
            frames=list(window),
        )
        logger.info("Chest at azimuth %.2f deg, elevation %.2f deg", azimuth, elevation)
        self.reports.save(CHEST_FILE, estimate)

    def compare(self) -> None:
        cfg = self.config
        chest = self.reports.load(CHEST_FILE, ChestEstimate, stage="estimate")
        self._check_hash(chest.config_hash, CHEST_FILE, "estimate")
        cube = self._load_cube().split(cfg.frames_train)
        vitals = VitalsService(self.geometry)
        comparison = vitals.compare_ra_rae(cube, (chest.azimuth_deg, chest.elevation_deg))
        self._write_comparison(comparison, cube.n_frames)

    def _write_comparison(self, comparison: RaRaeComparison, n_frames: int) -> None:
        cfg = self.config
        truths = {"breath": cfg.scene.breathing_frequency, "heart": cfg.scene.heart_frequency}
        table = []
        modes: dict[str, ModeSummary] = {}
        for result in (comparison.ra, comparison.rae):
            mode = result.mode.value
            for band, spectrum, rate, papr_db in self._bands(result):
                self.tables.save(
                    f"spectrum_{mode}_{band}.csv",
                    ("freq_hz", "power"),
                    zip(spectrum.freqs.tolist(), spectrum.mags.tolist()),
                    self.config_hash,
                )
                table.append((mode, band, rate, papr_db, truths[band]))
            modes[mode] = ModeSummary(
                br_hz=result.br_hz,
                hr_hz=result.hr_hz,
                papr_breath_db=result.papr_breath_db,
                papr_heart_db=result.papr_heart_db,
                low_confidence_breath=result.low_confidence_breath,
                low_confidence_heart=result.low_confidence_heart,
                br_error_hz=result.br_hz - truths["breath"],
                hr_error_hz=result.hr_hz - truths["heart"],
            )
        self.tables.save(
            COMPARISON_FILE,
            ("mode", "band", "rate_hz", "papr_db", "truth_hz"),
            table,
            self.config_hash,
        )
        sample_rate = cfg.radar.frame_rate
        summary = RunSummary(
            config_hash=self.config_hash,
            preset=cfg.preset,
            range_bin=comparison.range_bin,
            range_m=comparison.range_bin * cfg.radar.range_resolution,
            sample_rate_hz=sample_rate,
            bin_resolution_hz=sample_rate / n_frames,
            chest_azimuth_deg=comparison.azimuth,
            chest_elevation_deg=comparison.elevation,
            breathing_truth_hz=truths["breath"],
            heart_truth_hz=truths["heart"],
            modes=modes,
            delta_papr_breath_db=comparison.delta_papr_breath_db,
            delta_papr_heart_db=comparison.delta_papr_heart_db,
        )
        self.reports.save(SUMMARY_FILE, summary)
        logger.info(
            "Summary: %s", json.dumps({m: (s.br_hz, s.hr_hz) for m, s in modes.items()})
        )

    @staticmethod
    def _bands(result: VitalsResult):
        yield "breath", result.breath_spectrum, result.br_hz, result.papr_breath_db
        yield "heart", result.heart_spectrum, result.hr_hz, result.papr_heart_db


