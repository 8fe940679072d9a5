import math

import pytest

from lastinch.config import ScenarioConfig, builtin_config_dir, dump_config, load_config
from lastinch.errors import ConfigError, MissingArtifact


def write(tmp_path, text, name="case.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_unit_suffixes_convert(tmp_path):
    cfg = load_config(write(tmp_path, """
[scenario]
task = insertion
[receptacle]
clearance_mm = 0.5
[tracker]
sigma_trans_mm = 0.3   ; inline comment
sigma_rot_deg = 0.3
latency_ticks = 1
[disturbance]
push_tick = 10
push_offset_mm = 5 0 0
"""))
    assert cfg.clearance == pytest.approx(5e-4, rel=1e-15)
    assert cfg.sigma_trans == pytest.approx(3e-4, rel=1e-15)
    assert cfg.sigma_rot == pytest.approx(math.radians(0.3), rel=1e-15)
    assert cfg.push_offset == pytest.approx((0.005, 0.0, 0.0))
    assert cfg.latency_ticks == 1 and isinstance(cfg.latency_ticks, int)
    assert cfg.name == "case" and cfg.category == "gears"


def test_dump_load_round_trip(tmp_path):
    for path in sorted(builtin_config_dir().glob("*.cfg")):
        cfg = load_config(path)
        again = load_config(write(tmp_path, dump_config(cfg), path.name))
        assert again == cfg


def test_builtin_configs_load():
    names = {p.stem for p in builtin_config_dir().glob("*.cfg")}
    assert {"gear_0p5mm_closed", "gear_0p5mm_open"} <= names
    cfg = load_config(builtin_config_dir() / "gear_0p5mm_closed.cfg")
    assert cfg.seed == 7 and cfg.policy == "closed" and cfg.model_id == "gear_a"


@pytest.mark.parametrize("text", [
    "[scenario]\ntask = juggling\n",
    "[scenario]\ntask = insertion\ncategory = batteries\n",
    "[scenario]\npolicy = sideways\n",
    "[scenario]\nruns = 0\n",
    "[scenario]\nseed = -1\n",
    "[scenario]\nseed = 1.5\n",
    "[nowhere]\nx = 1\n",
    "[tracker]\nbogus = 1\n",
    "[tracker]\nsigma_trans = 1\nsigma_trans_mm = 1\n",
    "[tracker]\nsigma_trans_mm = lots\n",
    "[tracker]\nsigma_trans = -0.1\n",
    "[instance]\nscales = 1 2\n",
    "[instance]\nscales = 1 2 1\n",
    "[instance]\nmodel = gear_z\n",
    "[receptacle]\nclearance = 0\n",
    "[control]\nmax_step_trans = 0\n",
    "not an ini file",
])
def test_invalid_configs(tmp_path, text):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, text))


def test_missing_config(tmp_path):
    with pytest.raises(MissingArtifact):
        load_config(tmp_path / "absent.cfg")


def test_direct_construction_validates():
    with pytest.raises(ConfigError):
        ScenarioConfig(task="standing")  # default category is gears
    cfg = ScenarioConfig(task="standing", category="batteries")
    assert cfg.demo_model_id == "battery_aa" == cfg.model_id
    assert cfg.with_overrides(model="battery_c").model_id == "battery_c"
