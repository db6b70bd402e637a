"""Flat key=value run-configuration parsing and validation."""

import pytest

from polymim.config import RunConfig, config_summary, load_config, parse_config
from polymim.errors import ConfigError


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.mesh_family == "hex"
    assert cfg.alpha == 0.5


def test_parse_basic_file():
    cfg = parse_config(
        "# comment line\n"
        "mesh.family = cube\n"
        "mesh.level=2   # trailing comment\n"
        "\n"
        "time.dt = 450\n"
        "solver.tight = on\n"
        "output.vtk = off\n")
    assert cfg.mesh_family == "cube"
    assert cfg.mesh_level == 2
    assert cfg.dt == 450.0
    assert cfg.tight is True
    assert cfg.output_vtk is False


def test_summary_round_trips():
    cfg = parse_config("mesh.level = 4\nsolver.newton_iters = 6\n"
                       "advection.limiter = yes\ntime.alpha = 0.55\n")
    again = parse_config(config_summary(cfg))
    assert again == cfg


def test_unknown_key_rejected_with_line_number():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("mesh.level = 3\nmesh.levle = 4\n")


def test_bad_value_rejected():
    with pytest.raises(ConfigError):
        parse_config("mesh.level = three\n")
    with pytest.raises(ConfigError):
        parse_config("solver.tight = maybe\n")
    with pytest.raises(ConfigError):
        parse_config("just some words\n")


@pytest.mark.parametrize("text", [
    "mesh.family = octa\n",
    "advection.order = 3\n",
    "time.alpha = 1.5\n",
    "solver.newton_iters = 0\n",
])
def test_validation_rejects_out_of_range(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_from_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("time.days = 2.5\noutput.every_steps = 12\n")
    cfg = load_config(path)
    assert cfg.days == 2.5
    assert cfg.output_every == 12
