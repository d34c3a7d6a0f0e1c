"""TOML configuration loading and validation."""

import numpy as np
import pytest

from sonartbd.config import load_run_config
from sonartbd.errors import ConfigError

FULL = """
[scenario]
f_s = 50000.0
emission_period = 1.0
num_emissions = 12
max_range = 120.0
U = 96
clutter = "rayleigh"
clutter_scale = 1.5
scr_db = 5.0
seed = 3

[scenario.waveform]
f_start = 10000.0
bandwidth = 10000.0
duration = 0.01

[[scenario.targets]]
position = [0.0, 100.0]
velocity = [1.0, -3.0]

[array]
count = 24
radius = 1.0

[cfar]
P_fa = 0.05
guard = [6, 5]
train = [12, 10]
min_area = 9
max_area = 2000
psi_r = 10.0
psi_theta = 6.0

[tracker]
sigma_r = 0.3
sigma_theta = 3.0
sigma_zeta = 1e-4
G_r = 10.0
G_theta = 10.0
G_s = 0.1
N_c = 5
d1 = 7
d2 = 15
v_max = 15.0

[eval]
d_assoc = 15.0
vel_tol = 0.2

[sweep]
param = "P_fa"
values = [0.02, 0.05, 0.1]
seeds = 4
"""


def write_cfg(tmp_path, text, name="run.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def drop_line(text, needle):
    return "\n".join(l for l in text.splitlines() if needle not in l)


class TestFullConfig:
    def test_round_trip(self, tmp_path):
        rc = load_run_config(write_cfg(tmp_path, FULL))
        scn = rc.scenario
        assert scn.f_s == 50_000.0
        assert scn.num_emissions == 12
        assert scn.num_beams == 96
        assert scn.clutter.kind == "rayleigh"
        assert scn.clutter.scale == 1.5
        assert scn.scr_db == 5.0
        assert scn.seed == 3
        assert scn.array.num_elements == 24
        assert np.allclose(np.linalg.norm(scn.array.positions, axis=1), 1.0)
        assert len(scn.targets) == 1
        assert np.allclose(scn.targets[0].velocity, [1.0, -3.0])

        assert rc.detect.cfar.p_fa == 0.05
        assert rc.detect.cfar.guard == (6, 5)
        assert rc.detect.cfar.train == (12, 10)
        assert rc.detect.min_area == 9
        assert rc.detect.psi_theta == pytest.approx(np.deg2rad(6.0))

        assert rc.tracker.noise.sigma_r == 0.3
        assert rc.tracker.noise.sigma_theta == pytest.approx(np.deg2rad(3.0))
        assert rc.tracker.g_theta == pytest.approx(np.deg2rad(10.0))
        assert rc.tracker.n_c == 5
        assert rc.tracker.v_max == 15.0

        assert rc.eval_params.d_assoc == 15.0
        assert rc.eval_params.vel_tol == 0.2
        assert rc.eval_params.label_fraction == 0.5  # default kept

        assert rc.sweep is not None
        assert rc.sweep.param == "p_fa"
        assert rc.sweep.values == (0.02, 0.05, 0.1)
        assert rc.sweep.seeds == (0, 1, 2, 3)

    def test_missing_sigma_theta_names_key(self, tmp_path):
        text = drop_line(FULL, "sigma_theta")
        with pytest.raises(ConfigError, match="sigma_theta"):
            load_run_config(write_cfg(tmp_path, text))

    def test_missing_sigma_r_names_key(self, tmp_path):
        text = drop_line(FULL, "sigma_r")
        with pytest.raises(ConfigError, match="sigma_r"):
            load_run_config(write_cfg(tmp_path, text))

    def test_unknown_key_rejected_per_section(self, tmp_path):
        for section, inject in (
            ("[scenario]", "bogus_key = 1"),
            ("[cfar]", "bogus_key = 1"),
            ("[tracker]", "bogus_key = 1"),
            ("[eval]", "bogus_key = 1"),
        ):
            text = FULL.replace(section, section + "\n" + inject)
            with pytest.raises(ConfigError, match="bogus_key"):
                load_run_config(write_cfg(tmp_path, text))

    def test_unknown_top_level_section_rejected(self, tmp_path):
        text = FULL + "\n[mystery]\nx = 1\n"
        with pytest.raises(ConfigError, match="mystery"):
            load_run_config(write_cfg(tmp_path, text))


class TestArraySection:
    def test_ring_geometry(self, tmp_path):
        rc = load_run_config(write_cfg(tmp_path, FULL))
        pos = rc.scenario.array.positions
        assert pos.shape == (24, 2)
        # first element on the x axis, equal angular spacing
        assert np.allclose(pos[0], [1.0, 0.0])

    def test_line_geometry(self, tmp_path):
        text = FULL.replace("count = 24\nradius = 1.0", "count = 4\nspacing = 0.5")
        rc = load_run_config(write_cfg(tmp_path, text))
        pos = rc.scenario.array.positions
        assert pos.shape == (4, 2)
        xs = np.sort(pos[:, 0])
        assert np.allclose(np.diff(xs), 0.5)

    def test_explicit_elements(self, tmp_path):
        text = FULL.replace(
            "count = 24\nradius = 1.0",
            "elements = [[-0.385, 0.0], [0.0, 0.395], [0.405, 0.0], [0.0, -0.405]]",
        )
        rc = load_run_config(write_cfg(tmp_path, text))
        assert rc.scenario.array.num_elements == 4

    def test_spacing_and_radius_conflict(self, tmp_path):
        text = FULL.replace("radius = 1.0", "radius = 1.0\nspacing = 0.5")
        with pytest.raises(ConfigError):
            load_run_config(write_cfg(tmp_path, text))

    def test_missing_array_uses_default_cross(self, tmp_path):
        text = drop_line(drop_line(drop_line(FULL, "[array]"), "count = 24"), "radius = 1.0")
        rc = load_run_config(write_cfg(tmp_path, text))
        assert rc.scenario.array.num_elements == 4
        assert np.allclose(rc.scenario.array.positions[0], [-0.385, 0.0])


class TestScenarioSection:
    def test_missing_scenario_section(self, tmp_path):
        with pytest.raises(ConfigError, match="scenario"):
            load_run_config(write_cfg(tmp_path, "[tracker]\nsigma_r = 0.3\nsigma_theta = 3.0\n"))

    def test_missing_waveform(self, tmp_path):
        text = FULL.replace("[scenario.waveform]", "[scenario.waveform_typo]")
        with pytest.raises(ConfigError):
            load_run_config(write_cfg(tmp_path, text))

    def test_bad_clutter_kind(self, tmp_path):
        text = FULL.replace('clutter = "rayleigh"', 'clutter = "weibull"')
        with pytest.raises(ConfigError, match="clutter"):
            load_run_config(write_cfg(tmp_path, text))

    def test_physical_validation_becomes_config_error(self, tmp_path):
        # 30 kHz sampling cannot represent the 20 kHz chirp top
        text = FULL.replace("f_s = 50000.0", "f_s = 30000.0")
        with pytest.raises(ConfigError):
            load_run_config(write_cfg(tmp_path, text))


class TestSweepSection:
    def test_seed_list(self, tmp_path):
        text = FULL.replace("seeds = 4", "seeds = [3, 5, 8]")
        rc = load_run_config(write_cfg(tmp_path, text))
        assert rc.sweep.seeds == (3, 5, 8)

    def test_n_c_sweep_name(self, tmp_path):
        text = FULL.replace('param = "P_fa"', 'param = "N_c"').replace(
            "values = [0.02, 0.05, 0.1]", "values = [2, 4, 6]"
        )
        rc = load_run_config(write_cfg(tmp_path, text))
        assert rc.sweep.param == "n_c"
        assert rc.sweep.values == (2, 4, 6)

    def test_bad_param_rejected(self, tmp_path):
        text = FULL.replace('param = "P_fa"', 'param = "speed"')
        with pytest.raises(ConfigError):
            load_run_config(write_cfg(tmp_path, text))

    def test_empty_values_rejected(self, tmp_path):
        text = FULL.replace("values = [0.02, 0.05, 0.1]", "values = []")
        with pytest.raises(ConfigError):
            load_run_config(write_cfg(tmp_path, text))

    def test_no_sweep_section_is_none(self, tmp_path):
        text = FULL.split("[sweep]")[0]
        rc = load_run_config(write_cfg(tmp_path, text))
        assert rc.sweep is None


class TestCommittedConfigs:
    def test_single_target_config_loads(self):
        rc = load_run_config("configs/single_target.toml")
        assert rc.scenario.clutter.kind == "rayleigh"
        assert rc.scenario.scr_db == 3.0
        assert rc.scenario.num_beams == 480
        assert rc.scenario.array.num_elements == 24
        assert rc.tracker.n_c == 5
        assert rc.sweep is not None and rc.sweep.param == "p_fa"

    def test_floater_ingest_config_loads(self):
        rc = load_run_config("configs/floater_ingest.toml")
        assert rc.scenario.f_s == 96_000.0
        assert rc.scenario.array.num_elements == 4
        assert rc.scenario.targets == ()
