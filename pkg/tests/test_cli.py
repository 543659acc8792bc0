"""
Integration tests for the command-line entry point.
"""

import json

import pytest

from geometry.file_io import read_ply
from main import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main
from optimization.g2o_io import read_g2o


@pytest.fixture
def params(isolated_env):
    path = isolated_env / "params.json"
    path.write_text(json.dumps({"simulation": {"sequence": {"visit_order": [0, 1, 2]}}}))
    return path


@pytest.mark.integration
@pytest.mark.slow
class TestCommandFlow:
    """simulate -> run -> eval -> export on one small sequence."""

    def test_full_flow(self, isolated_env, params, capsys):
        sim, run = isolated_env / "sim", isolated_env / "run"

        assert main(["simulate", "--config", str(params), "--out", str(sim)]) == EXIT_OK
        assert "2 traversals" in capsys.readouterr().out
        assert (sim / "frames.bin").is_file()
        assert (sim / "world.json").is_file()

        assert main(["run", "--config", str(params), "--input", str(sim), "--out", str(run)]) == EXIT_OK
        assert capsys.readouterr().out.startswith("3 rooms")
        assert (run / "scene_graph.json").is_file()
        assert (run / "trajectory.tum").is_file()

        assert main(["eval", "--run", str(run), "--gt", str(sim), "--csv"]) == EXIT_OK
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "room_id,gt_room,chamfer_m"
        assert len(lines) == 4
        assert (run / "report.json").is_file()

        assert main(["eval", "--run", str(run), "--gt", str(sim)]) == EXIT_OK
        assert "ATE (sim3)" in capsys.readouterr().out

        assert main(["export", "--run", str(run), "--format", "g2o"]) == EXIT_OK
        poses, factors, fixed = read_g2o(run / "room_graph.g2o")
        assert sorted(poses) == [0, 1, 2]
        assert fixed == [0]
        assert {(f.i, f.j) for f in factors} == {(0, 1), (1, 2)}

        assert main(["export", "--run", str(run), "--format", "ply", "--out", str(isolated_env / "map.ply")]) == EXIT_OK
        cloud = read_ply(isolated_env / "map.ply")
        assert set(cloud.labels.tolist()) == {0, 1, 2}

        assert (isolated_env / "logs" / "main.log").is_file()


@pytest.mark.integration
class TestExitCodes:

    def test_list_steps(self, isolated_env, capsys):
        assert main(["list-steps"]) == EXIT_OK
        assert "simulate" in capsys.readouterr().out

    def test_missing_command_is_usage_error(self, isolated_env):
        with pytest.raises(SystemExit) as excinfo:
            main([])
        assert excinfo.value.code == EXIT_USAGE

    def test_unknown_export_format(self, isolated_env):
        with pytest.raises(SystemExit) as excinfo:
            main(["export", "--run", str(isolated_env), "--format", "obj"])
        assert excinfo.value.code == EXIT_USAGE

    def test_configuration_error(self, isolated_env):
        code = main(["simulate", "--config", str(isolated_env / "absent.toml"), "--out", str(isolated_env / "s")])
        assert code == EXIT_USAGE

    def test_invalid_config_value(self, isolated_env):
        path = isolated_env / "bad.json"
        path.write_text(json.dumps({"batch_size": 1}))
        assert main(["simulate", "--config", str(path), "--out", str(isolated_env / "s")]) == EXIT_USAGE

    def test_input_without_frames_is_runtime_failure(self, isolated_env):
        (isolated_env / "empty").mkdir()
        code = main(["run", "--input", str(isolated_env / "empty"), "--out", str(isolated_env / "run")])
        assert code == EXIT_FAILURE

    def test_missing_input_directory_is_usage_error(self, isolated_env, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["run", "--input", str(isolated_env / "nope"), "--out", str(isolated_env / "run")])
        assert excinfo.value.code == EXIT_USAGE
        err = capsys.readouterr().err
        assert "usage" in err
        assert "--input" in err

    @pytest.mark.parametrize("argv", [
        ["eval", "--run", "nope", "--gt", "."],
        ["eval", "--run", ".", "--gt", "nope"],
        ["export", "--run", "nope", "--format", "ply"],
    ])
    def test_missing_directory_is_usage_error(self, isolated_env, capsys, argv):
        argv = [str(isolated_env / a) if a in ("nope", ".") else a for a in argv]
        with pytest.raises(SystemExit) as excinfo:
            main(argv)
        assert excinfo.value.code == EXIT_USAGE
        assert "usage" in capsys.readouterr().err
