import json
from pathlib import Path

import pytest

from modules.data_loader import ConfigError, load_defaults, load_experiment_config
from modules.experiment import Scenario

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def _write(tmp_path, text, name="exp.ini"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_default_parameters():
    defaults = load_defaults()
    assert defaults["SINR"]["alpha"] == 4.0
    assert defaults["SINR"]["beta"] == 10.0
    assert defaults["DISTRIBUTIONS"]["Random"] == {
        "tx_const": 0.15, "duration": 4600, "ref_delta": 36.6, "ref_mean_degree": 20.6, "ref_lb_runtime": 4592,
    }
    assert defaults["DISTRIBUTIONS"]["Cluster"]["duration"] == 12900
    assert defaults["PROTOCOLS"]["CRRCor"]["duration_prime_fraction"] == 0.125
    assert defaults["PROTOCOLS"]["YuCor"]["duration_prime_fraction"] == 0.0625
    assert len(defaults["DISTRIBUTIONS"]) == 7


def test_defaults_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_defaults(tmp_path / "missing.json")
    bad_version = tmp_path / "v2.json"
    bad_version.write_text(json.dumps({"CONFIG_VERSION": 2}), encoding="utf-8")
    with pytest.raises(ConfigError, match="版本"):
        load_defaults(bad_version)
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_defaults(broken)


def test_experiment_config_parsing(tmp_path):
    path = _write(tmp_path, """
[meta]
version = 1

[sweep]
scenario = factor_sweep
protocols = CRRandColor, mwcolor   # 不分大小寫
factors = 0.05, 0.6
area = 300x200
seed = 9
progress = no

[late]
scenario = wakeup
late_counts = 5; 10
""")
    sweep, late = load_experiment_config(path)
    assert sweep.name == "sweep"
    assert sweep.scenario is Scenario.FACTOR_SWEEP
    assert sweep.protocols == ("CRRandColor", "MWColor")
    assert sweep.factors == (0.05, 0.6)
    assert sweep.area == (300.0, 200.0)
    assert sweep.master_seed == 9
    assert sweep.progress is False
    assert late.late_counts == (5, 10)


@pytest.mark.parametrize("text, message", [
    ("[run]\nscenario = run\n", "meta"),
    ("[meta]\nversion = 2\n[run]\nscenario = run\n", "版本"),
    ("[meta]\nversion = 1\n", "沒有任何實驗"),
    ("[meta]\nversion = 1\n[run]\nprotocols = Rand4DColor\n", "scenario"),
    ("[meta]\nversion = 1\n[run]\nscenario = run\ncolour = red\n", "colour"),
    ("[meta]\nversion = 1\n[run]\nscenario = run\nruns = many\n", "runs"),
    ("[meta]\nversion = 1\n[run]\nscenario = run\nruns = 0\n", r"\[run\]"),
    ("[meta]\nversion = 1\n[run]\nscenario = teleport\n", "scenario"),
])
def test_experiment_config_errors(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message):
        load_experiment_config(_write(tmp_path, text))


def test_missing_experiment_config(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_experiment_config(tmp_path / "nope.ini")


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.ini")), ids=lambda p: p.name)
def test_shipped_configs_load(path):
    specs = load_experiment_config(path)
    assert specs
    assert len({spec.name for spec in specs}) == len(specs)
