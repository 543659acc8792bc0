"""
Tests for configuration loading: parameter files, ROOMGRAPH_ environment
overrides, typed validation and the .env-backed process settings.
"""

import json

import pytest

from mapping.pipeline import PipelineConfig, load_pipeline_config
from utils.config_utils import AppConfig, apply_env_overrides, build_dataclass, load_config_file
from utils.errors import ConfigError

TOML_CONFIG = """
mode = "sliding_window"
batch_size = 40

[segmenter]
trigger_threshold = 3.0

[oracle]
batch_scale_range = [0.9, 1.1]

[simulation.sequence]
visit_order = [0, 1, 0]
"""


@pytest.fixture
def toml_file(tmp_path):
    path = tmp_path / "params.toml"
    path.write_text(TOML_CONFIG)
    return path


@pytest.mark.unit
class TestParameterFiles:

    def test_defaults_without_file(self):
        config = load_pipeline_config(None, environ={})
        assert config.to_dict() == PipelineConfig().to_dict()

    def test_toml_sections(self, toml_file):
        config = load_pipeline_config(toml_file, environ={})
        assert config.mode == "sliding_window"
        assert config.batch_size == 40
        assert config.segmenter.trigger_threshold == 3.0
        assert config.segmenter.c_max == 8.0
        assert config.oracle.batch_scale_range == (0.9, 1.1)
        assert config.simulation.sequence.visit_order == (0, 1, 0)

    def test_json_file(self, tmp_path):
        path = tmp_path / "params.json"
        path.write_text(json.dumps({"seed": 7, "pgo": {"huber_delta": 0.5}}))
        config = load_pipeline_config(path, environ={})
        assert config.seed == 7
        assert config.pgo.huber_delta == 0.5

    def test_integer_accepted_for_float(self):
        config = build_dataclass(PipelineConfig, {"cloud_voxel": 1})
        assert isinstance(config.cloud_voxel, float)

    def test_unknown_key_names_its_path(self):
        with pytest.raises(ConfigError) as excinfo:
            build_dataclass(PipelineConfig, {"segmenter": {"bogus": 1}})
        assert excinfo.value.key == "segmenter.bogus"

    @pytest.mark.parametrize("data, key", [
        ({"batch_size": "big"}, "batch_size"),
        ({"enable_objects": 1}, "enable_objects"),
        ({"batch_size": True}, "batch_size"),
        ({"oracle": {"batch_scale_range": [1.0]}}, "oracle.batch_scale_range"),
        ({"segmenter": 3}, "segmenter"),
        ({"mode": None}, "mode"),
    ])
    def test_ill_typed_values(self, data, key):
        with pytest.raises(ConfigError) as excinfo:
            build_dataclass(PipelineConfig, data)
        assert excinfo.value.key == key

    def test_missing_and_unsupported_files(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config_file(tmp_path / "absent.toml")
        yaml = tmp_path / "params.yaml"
        yaml.write_text("mode: room_based\n")
        with pytest.raises(ConfigError):
            load_config_file(yaml)

    def test_malformed_files(self, tmp_path):
        bad_toml = tmp_path / "bad.toml"
        bad_toml.write_text("mode = \n")
        with pytest.raises(ConfigError):
            load_config_file(bad_toml)
        listed = tmp_path / "list.json"
        listed.write_text("[1, 2]")
        with pytest.raises(ConfigError):
            load_config_file(listed)


@pytest.mark.unit
class TestEnvironmentOverrides:
    """ROOMGRAPH_SECTION__KEY variables over file values."""

    def test_overrides_applied(self, toml_file):
        environ = {
            "ROOMGRAPH_BATCH_SIZE": "30",
            "ROOMGRAPH_SEGMENTER__TRIGGER_THRESHOLD": "2.5",
            "ROOMGRAPH_ENABLE_OBJECTS": "no",
            "ROOMGRAPH_ORACLE__BATCH_SCALE_RANGE": "0.95,1.05",
            "ROOMGRAPH_SIMULATION__SEQUENCE__VISIT_ORDER": "0;1;2",
            "ROOMGRAPH_OUTPUT_DIR": "/somewhere/else",
            "UNRELATED": "1",
        }
        config = load_pipeline_config(toml_file, environ=environ)
        assert config.batch_size == 30
        assert config.segmenter.trigger_threshold == 2.5
        assert config.enable_objects is False
        assert config.oracle.batch_scale_range == (0.95, 1.05)
        assert config.simulation.sequence.visit_order == (0, 1, 2)
        assert config.mode == "sliding_window"

    def test_file_mapping_not_mutated(self):
        data = {"segmenter": {"decay": 0.25}}
        merged = apply_env_overrides(PipelineConfig, data, {"ROOMGRAPH_SEGMENTER__DECAY": "0.75"})
        assert merged["segmenter"]["decay"] == 0.75
        assert data["segmenter"]["decay"] == 0.25

    @pytest.mark.parametrize("environ, key", [
        ({"ROOMGRAPH_NOPE": "1"}, "nope"),
        ({"ROOMGRAPH_BATCH_SIZE": "abc"}, "batch_size"),
        ({"ROOMGRAPH_BATCH_SIZE__X": "1"}, "batch_size.x"),
        ({"ROOMGRAPH_ENABLE_LOOP_CLOSURE": "maybe"}, "enable_loop_closure"),
        ({"ROOMGRAPH_ORACLE__BATCH_SCALE_RANGE": "1.0"}, "oracle.batch_scale_range"),
    ])
    def test_rejected_overrides(self, environ, key):
        with pytest.raises(ConfigError) as excinfo:
            load_pipeline_config(None, environ=environ)
        assert excinfo.value.key == key

    def test_optional_value_cleared(self):
        config = load_pipeline_config(None, environ={"ROOMGRAPH_EVALUATION__CHAMFER_TRUNCATION": "0.5"})
        assert config.evaluation.chamfer_truncation == 0.5
        config = load_pipeline_config(None, environ={"ROOMGRAPH_EVALUATION__CHAMFER_TRUNCATION": "none"})
        assert config.evaluation.chamfer_truncation is None


@pytest.mark.unit
class TestValidation:

    @pytest.mark.parametrize("data, key", [
        ({"mode": "bogus"}, "mode"),
        ({"provider": "network"}, "provider"),
        ({"batch_size": 1}, "batch_size"),
        ({"edges": {"k_pairs": 0}}, "edges.k_pairs"),
        ({"mode": "sliding_window", "batch_size": 5}, "segmenter.overlap_count"),
        ({"segmenter": {"trigger_threshold": 9.0}}, "segmenter"),
        ({"loop_closure": {"tau_s": 2.0}}, "loop_closure.tau_s"),
        ({"oracle": {"batch_scale_range": [0.0, 1.0]}}, "oracle.batch_scale_range"),
        ({"simulation": {"world": {"n_rooms": 1}}}, "simulation.world.n_rooms"),
    ])
    def test_invalid_values(self, tmp_path, data, key):
        path = tmp_path / "params.json"
        path.write_text(json.dumps(data))
        with pytest.raises(ConfigError) as excinfo:
            load_pipeline_config(path, environ={})
        assert excinfo.value.key == key


@pytest.mark.unit
class TestAppConfig:
    """Process-level settings from .env and the environment."""

    def test_environment_paths(self, isolated_env):
        config = AppConfig(isolated_env / "main.py")
        assert config.OUTPUT_DIR == (isolated_env / "runs").resolve()
        assert config.LOG_DIR == (isolated_env / "logs").resolve()
        assert config.DB_FILE_STR == str((isolated_env / "experiments.duckdb").resolve())

    def test_dotenv_file_loaded(self, isolated_env, monkeypatch):
        monkeypatch.delenv("ROOMGRAPH_OUTPUT_DIR")
        monkeypatch.delenv("ROOMGRAPH_DB_FILE")
        project = isolated_env / "project"
        project.mkdir()
        (project / ".env").write_text(f"ROOMGRAPH_OUTPUT_DIR={isolated_env / 'from_env'}\n")
        config = AppConfig(project / "main.py")
        assert config.env_file_path == (project / ".env").resolve()
        assert config.PROJECT_ROOT == project.resolve()
        assert config.OUTPUT_DIR == (isolated_env / "from_env").resolve()
        assert config.DB_FILE == config.OUTPUT_DIR / "experiments.duckdb"

    def test_typed_getters(self, isolated_env, monkeypatch):
        monkeypatch.setenv("ROOMGRAPH_TEST_INT", "12")
        monkeypatch.setenv("ROOMGRAPH_TEST_BAD_INT", "twelve")
        monkeypatch.setenv("ROOMGRAPH_TEST_FLAG", "Yes")
        config = AppConfig(isolated_env / "main.py")
        assert config.get_optional_int("ROOMGRAPH_TEST_INT") == 12
        assert config.get_optional_int("ROOMGRAPH_TEST_BAD_INT", 3) == 3
        assert config.get_optional_bool("ROOMGRAPH_TEST_FLAG") is True
        assert config.get_optional_bool("ROOMGRAPH_TEST_MISSING", default=True) is True
