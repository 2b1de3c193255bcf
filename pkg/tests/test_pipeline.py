import json
import logging

import numpy as np
import pytest

from vitalradar.core.exceptions import (
    ArgumentException,
    ConfigurationException,
    FitException,
    SceneException,
    StageException,
    TrainingException,
)
from vitalradar.main import exit_code_for, main
from vitalradar.repositories.cube_repository import CubeRepository
from vitalradar.schemas.pipeline_schemas import PipelineConfig, RunSummary
from vitalradar.schemas.radar_schemas import RadarConfig
from vitalradar.schemas.scene_schemas import Posture
from vitalradar.services.cnn_service import predict, train
from vitalradar.services.pipeline_service import (
    STAGES,
    build_scene_model,
    build_training_set,
    stage_seed,
)
from vitalradar.services.posture_service import chest_angle_errors, keypoint_errors
from tests.conftest import REDUCED_RUN


def artifacts(directory) -> dict[str, bytes]:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.name != "stage.json"}


@pytest.fixture(scope="module")
def e2e_run(tmp_path_factory):
    """One reduced end-to-end run shared by the tests that only read its artifacts"""
    root = tmp_path_factory.mktemp("e2e")
    config = root / "run.json"
    config.write_text(json.dumps(REDUCED_RUN), encoding="utf-8")
    out = root / "out"
    code = main(["e2e", "--config", str(config), "--out", str(out)])
    return code, config, out


class TestExitCodes:
    """Tests for exception to exit code mapping"""

    @pytest.mark.parametrize(
        "exc, code",
        [
            (ConfigurationException("x"), 2),
            (SceneException("x"), 3),
            (ArgumentException("x"), 4),
            (FitException("x"), 5),
            (TrainingException("x"), 6),
            (StageException("x"), 7),
            (RuntimeError("x"), 1),
        ],
    )
    def test_mapping(self, exc, code):
        """Each error kind has its own exit code"""
        assert exit_code_for(exc) == code


class TestRunConfig:
    """Tests for run configuration resolution"""

    def test_preset_fills_truths(self):
        """The preset supplies posture, vital truths and frame split"""
        config = PipelineConfig().resolved(default_seed=7, preset=Posture.BAR)

        assert config.scene.posture == Posture.BAR
        assert config.scene.heart_frequency == 1.41
        assert config.scene.breathing_frequency == 0.3
        assert (config.frames_total, config.frames_train) == (350, 150)
        assert config.seed == 7

    def test_frames_override_keeps_split_valid(self, caplog):
        """Overriding frames below the preset split halves the training part and says so"""
        with caplog.at_level(logging.WARNING):
            config = PipelineConfig().resolved(default_seed=7, frames=100)

        assert (config.frames_total, config.frames_train) == (100, 50)
        assert "does not fit 100 frames" in caplog.text

    def test_explicit_split_not_rewritten(self):
        """A frames_train given in the file is never shrunk to fit --frames"""
        with pytest.raises(ConfigurationException):
            PipelineConfig(frames_train=120).resolved(default_seed=7, frames=100)

    def test_explicit_split_kept_when_it_fits(self, caplog):
        """A fitting explicit split is used as given without a warning"""
        with caplog.at_level(logging.WARNING):
            config = PipelineConfig(frames_train=30).resolved(default_seed=7, frames=100)

        assert config.frames_train == 30
        assert "does not fit" not in caplog.text

    def test_trains_on_every_posture_by_default(self):
        """Without train_postures in the file the network sees all three postures"""
        assert PipelineConfig().train_postures == list(Posture)
        assert PipelineConfig(train_postures=None).train_postures is None

    def test_hash_depends_on_seed(self):
        """Seed changes the config hash"""
        first = PipelineConfig().resolved(default_seed=7)
        second = PipelineConfig().resolved(default_seed=7, seed=8)

        assert first.config_hash() != second.config_hash()
        assert first.config_hash() == PipelineConfig().resolved(default_seed=7).config_hash()

    def test_split_must_leave_vitals_frames(self):
        """frames_train must be smaller than frames_total"""
        with pytest.raises(ValueError):
            PipelineConfig(frames_total=100, frames_train=100)

    def test_projection_grid_must_match_network(self):
        """Voxel grid size and network input size agree"""
        with pytest.raises(ValueError):
            PipelineConfig(voxel_bounds={"size": 16})

    def test_interferer_added_to_scene(self):
        """A configured interferer joins the posture scatterers below the chest"""
        config = PipelineConfig.model_validate({"scene": {"interferer": {}}}).resolved(default_seed=7)

        scene = build_scene_model(config)

        interferer = next(s for s in scene.scatterers if s.label == "interferer")
        assert interferer.position[2] < config.scene.radar_height
        assert interferer.oscillation_frequency == 0.9

    def test_stage_seeds_differ(self):
        """Each stage draws from its own seed"""
        seeds = {stage_seed(7, stage) for stage in STAGES}

        assert len(seeds) == len(STAGES)
        assert stage_seed(7, "train") == stage_seed(7, "train")


class TestCommandLine:
    """Tests for the command-line surface"""

    def test_estimate_without_network(self, tmp_path):
        """Estimating before training fails with exit code 7 and a stage marker"""
        code = main(["estimate", "--out", str(tmp_path)])

        marker = json.loads((tmp_path / "stage.json").read_text(encoding="utf-8"))
        assert code == 7
        assert marker["failed"] == "estimate"

    def test_invalid_config_file(self, tmp_path, write_config):
        """A config that fails validation exits with 2"""
        path = write_config({"frames_total": 10, "frames_train": 20})

        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "out")]) == 2

    def test_unreadable_config(self, tmp_path):
        """A missing config file exits with 2"""
        assert main(["simulate", "--config", str(tmp_path / "none.json")]) == 2

    def test_frames_flag_below_explicit_split(self, tmp_path, write_config):
        """--frames smaller than the file's frames_train exits with 2"""
        path = write_config({"radar": {"chirps_per_frame": 2}, "frames_train": 150})

        assert main(["simulate", "--config", str(path), "--frames", "100", "--out", str(tmp_path / "out")]) == 2

    def test_negative_frames_rejected(self, tmp_path):
        """--frames must be positive"""
        assert main(["simulate", "--frames", "0", "--out", str(tmp_path)]) == 4

    def test_invalid_scene_exit_code(self, tmp_path, write_config):
        """A scene with two chests exits with 3"""
        chest = {"label": "chest", "position": [0.0, 2.0, 1.27], "reflectivity": 1.0}
        path = write_config({"scene": {"scatterers": [chest, chest]}, "frames_total": 2, "frames_train": 1})

        assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "out")]) == 3

    def test_empty_scene_simulates_zero_cube(self, tmp_path, write_config):
        """No scatterers and no noise write an all-zero cube"""
        path = write_config(
            {
                "radar": {"chirps_per_frame": 2},
                "scene": {"scatterers": []},
                "noise_std": 0.0,
                "frames_total": 3,
                "frames_train": 1,
            }
        )
        out = tmp_path / "out"

        code = main(["simulate", "--config", str(path), "--out", str(out)])

        cube, _ = CubeRepository(out).load(RadarConfig(chirps_per_frame=2))
        assert code == 0
        assert cube.samples.shape == (3, 2, 12, 64)
        assert not np.any(cube.samples)

    def test_preset_flag(self, tmp_path, write_config):
        """--preset BAR sets the heart truth in the written config"""
        path = write_config({"radar": {"chirps_per_frame": 2}, "scene": {"scatterers": []}, "noise_std": 0.0})

        code = main(["simulate", "--config", str(path), "--preset", "BAR", "--frames", "2", "--out", str(tmp_path / "out")])

        written = json.loads((tmp_path / "out" / "config.json").read_text(encoding="utf-8"))
        assert code == 0
        assert written["config"]["scene"]["heart_frequency"] == 1.41
        assert written["config"]["preset"] == "BAR"

    def test_stale_upstream_rejected(self, tmp_path, write_config):
        """A stage refuses artifacts written under another configuration"""
        base = {"radar": {"chirps_per_frame": 2}, "scene": {"scatterers": []}, "noise_std": 0.0, "frames_total": 2, "frames_train": 1}
        out = str(tmp_path / "out")
        assert main(["simulate", "--config", str(write_config(base)), "--out", out]) == 0

        code = main(["pointcloud", "--config", str(write_config(base, "other.json")), "--seed", "99", "--out", out])

        assert code == 7

    def test_train_needs_pointcloud(self, tmp_path, write_config, reduced_run_config):
        """Skipping the pointcloud stage leaves train without input"""
        path = str(write_config({**reduced_run_config, "train_postures": None}))
        out = tmp_path / "out"
        assert main(["simulate", "--config", path, "--out", str(out)]) == 0

        code = main(["train", "--config", path, "--out", str(out)])

        marker = json.loads((out / "stage.json").read_text(encoding="utf-8"))
        assert code == 7
        assert marker["completed"] == ["simulate"]
        assert marker["failed"] == "train"


class TestEndToEnd:
    """Tests for a reduced end-to-end run"""

    def test_run_succeeds(self, e2e_run):
        """Every stage completes and writes its artifacts"""
        code, _, out = e2e_run
        marker = json.loads((out / "stage.json").read_text(encoding="utf-8"))

        assert code == 0
        assert marker["completed"] == list(STAGES)
        assert marker["failed"] is None
        for name in (
            "config.json",
            "scene.json",
            "cube.vbc",
            "keypoints_truth.csv",
            "pointcloud.csv",
            "network.vbnn",
            "training_history.csv",
            "keypoints.csv",
            "chest.json",
            "comparison.csv",
            "spectrum_RAE_heart.csv",
            "summary.json",
        ):
            assert (out / name).is_file(), name

    def test_tables_carry_config_hash(self, e2e_run):
        """Every CSV starts with the run's config hash"""
        _, _, out = e2e_run
        summary = RunSummary.model_validate_json((out / "summary.json").read_text(encoding="utf-8"))

        for table in out.glob("*.csv"):
            first = table.read_text(encoding="utf-8").splitlines()[0]
            assert first == f"# config_sha256={summary.config_hash}", table.name

    def test_summary(self, e2e_run):
        """The summary reports the chest bin and both beam modes"""
        _, _, out = e2e_run
        summary = RunSummary.model_validate_json((out / "summary.json").read_text(encoding="utf-8"))

        assert summary.range_bin == 23
        assert set(summary.modes) == {"RA", "RAE"}
        assert summary.bin_resolution_hz == pytest.approx((1 / 0.240) / 70)
        rae = summary.modes["RAE"]
        assert abs(rae.br_hz - 0.3) <= summary.bin_resolution_hz
        assert abs(rae.hr_hz - 1.1) <= summary.bin_resolution_hz
        assert rae.hr_error_hz == pytest.approx(rae.hr_hz - 1.1)

    @pytest.mark.parametrize("preset, heart", [(Posture.OAR, 1.25), (Posture.BAR, 1.41)])
    def test_arm_postures(self, tmp_path, write_config, reduced_run_config, preset, heart):
        """Raised-arm presets recover both rates within one frequency bin"""
        out = tmp_path / "out"

        code = main(
            ["e2e", "--config", str(write_config(reduced_run_config)), "--preset", preset.value, "--out", str(out)]
        )

        summary = RunSummary.model_validate_json((out / "summary.json").read_text(encoding="utf-8"))
        rae = summary.modes["RAE"]
        assert code == 0
        assert summary.preset == preset
        assert abs(rae.br_hz - 0.3) <= summary.bin_resolution_hz
        assert abs(rae.hr_hz - heart) <= summary.bin_resolution_hz

    def test_deterministic(self, e2e_run, tmp_path):
        """A second run with the same seed writes identical artifacts"""
        _, config, out = e2e_run
        again = tmp_path / "again"

        assert main(["e2e", "--config", str(config), "--out", str(again)]) == 0
        assert artifacts(again) == artifacts(out)

    def test_chained_stages_match_e2e(self, e2e_run, tmp_path):
        """Running the stages one by one gives the e2e artifacts byte for byte"""
        _, config, out = e2e_run
        chained = tmp_path / "chained"

        for stage in STAGES:
            assert main([stage, "--config", str(config), "--out", str(chained)]) == 0
        assert artifacts(chained) == artifacts(out)


class TestTrainingSet:
    """Tests for multi-posture training sets"""

    @pytest.fixture
    def config(self):
        return PipelineConfig.model_validate({**REDUCED_RUN, "noise_std": 0.0}).resolved(default_seed=7)

    def test_samples_per_posture(self, config):
        """Every frame of every posture yields one labeled sample"""
        dataset = build_training_set(config, (Posture.BAD, Posture.BAR), frames_per_posture=3)

        assert len(dataset) == 6
        assert all(tensor.data.shape == (2, 8, 8) for tensor, _ in dataset)
        bad, bar = dataset[0][1], dataset[3][1]
        assert bar["r_wrist"][2] > bad["r_wrist"][2]

    def test_needs_frames(self, config):
        """At least one frame per posture"""
        with pytest.raises(ArgumentException):
            build_training_set(config, (Posture.BAD,), frames_per_posture=0)

    def test_train_stage_without_upstream(self, tmp_path, write_config):
        """With train_postures the train stage simulates its own data"""
        path = write_config({**REDUCED_RUN, "frames_train": 5, "train_postures": ["BAD", "OAR"]})

        code = main(["train", "--config", str(path), "--out", str(tmp_path / "out")])

        assert code == 0
        assert (tmp_path / "out" / "network.vbnn").is_file()

    def test_three_posture_benchmark(self):
        """150 frames over three postures train a network that generalizes to held-out frames"""
        config = PipelineConfig.model_validate(
            {
                "radar": {"chirps_per_frame": 16},
                "chest_frames": 10,
                "voxel_bounds": {"size": 16},
                "train": {
                    "epochs": 200,
                    "batch_size": 25,
                    "seed": 1,
                    "architecture": {"input_size": 16, "conv_depths": [4, 8, 8], "hidden": 32},
                },
            }
        ).resolved(default_seed=7)
        training = build_training_set(config, tuple(Posture), 50)
        held_out = build_training_set(config.model_copy(update={"seed": 99}), tuple(Posture), 20)

        params, history = train(training, config.train)

        errors, angles = [], []
        for tensor, truth in held_out:
            estimate = predict(params, tensor)
            errors.append(keypoint_errors(estimate, truth).mean())
            angles.append(chest_angle_errors(estimate, truth, config.scene.radar_height))
        assert history[-1] < history[0]
        assert np.mean(errors) < 0.10
        assert np.max(angles) < 3.0
