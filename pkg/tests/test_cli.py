import pytest

from acvar import __version__
from acvar.cli import EXIT_CONFIG, EXIT_PASS, main

CIRCLE_ENERGY = """
kind = "energy"
epsilon_schedule = [0.02, 0.01, 0.005]

[surface]
kind = "circle"
radius = 0.5
nodes_theta = 64
"""


@pytest.fixture
def energy_config(tmp_path):
    path = tmp_path / "energy.toml"
    path.write_text(CIRCLE_ENERGY)
    return path


def test_spectrum(capsys):
    assert main(["spectrum", "--kind", "circle", "--radius", "1", "--max-mode", "4"]) == EXIT_PASS
    lines = capsys.readouterr().out.splitlines()
    assert "morse_index=1" in lines[0]
    assert lines[1] == "k,lambda,multiplicity"
    assert len(lines) == 2 + 5


@pytest.mark.parametrize("args", [
    ["spectrum", "--kind", "circle", "--max-mode", "1"],
    ["spectrum", "--kind", "sphere", "--radius", "-1"],
])
def test_spectrum_bad_arguments(args):
    assert main(args) == EXIT_CONFIG


def test_experiment(energy_config, capsys):
    assert main(["energy", "--config", str(energy_config)]) == EXIT_PASS
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "# acvar kind=energy seed=0"
    assert len(lines) == 2 + 3


def test_experiment_human_format(energy_config, capsys):
    assert main(["energy", "--config", str(energy_config), "--format", "human"]) == EXIT_PASS
    out = capsys.readouterr().out
    assert "fitted_rate: n/a" in out
    assert "verdict: PASS" in out


def test_experiment_writes_out(energy_config, tmp_path, capsys):
    out = tmp_path / "energy.csv"
    assert main(["energy", "--config", str(energy_config), "--out", str(out)]) == EXIT_PASS
    assert capsys.readouterr().out == ""
    assert out.read_text().startswith("# acvar kind=energy")


def test_kind_must_match_config(energy_config):
    assert main(["stress", "--config", str(energy_config)]) == EXIT_CONFIG


def test_bad_config(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text('kind = "energy"\n[surface]\nkind = "circle"\nradius = 0.5\nwobble = 1\n')
    assert main(["energy", "--config", str(path)]) == EXIT_CONFIG


def test_missing_config(tmp_path):
    assert main(["energy", "--config", str(tmp_path / "nope.toml")]) == EXIT_CONFIG


def test_field_of_the_wrong_dimension_is_a_config_error(tmp_path, capsys):
    path = tmp_path / "first_var.toml"
    path.write_text(CIRCLE_ENERGY.replace('"energy"', '"first-var"')
                    + '\n[eta]\nfamily = "constant"\nvector = [1.0, 0.0, 0.0]\n')
    assert main(["first-var", "--config", str(path)]) == EXIT_CONFIG
    assert capsys.readouterr().out == ""


def test_unwritable_output(energy_config, tmp_path):
    out = tmp_path / "missing" / "energy.csv"
    assert main(["energy", "--config", str(energy_config), "--out", str(out)]) == 1


def test_identities(capsys):
    assert main(["identities", "--samples", "12", "--expansions", "3"]) in (0, 1)
    lines = capsys.readouterr().out.splitlines()
    assert lines[1] == "suite,check,value,passed"
    assert all(line.endswith("True") for line in lines[2:] if line.startswith("frame,"))


def test_version(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out
