import numpy as np
import pytest

from offsetfree import PRESET_NAMES, build_scenario, load_config, load_preset_config, preset
from offsetfree.errors import ConfigError
from offsetfree.scenarios import reference_samples, save_config


def assert_same_scenario(a, b):
    assert a.name == b.name and a.steps == b.steps and a.seed == b.seed and a.M == b.M
    for sa, sb in ((a.plant, b.plant), (a.model.system, b.model.system)):
        assert (sa.name, sa.params) == (sb.name, sb.params)
    assert a.model.disturbance == b.model.disturbance
    assert (a.model.sample_time, a.model.substeps) == (b.model.sample_time, b.model.substeps)
    np.testing.assert_array_equal(a.plant_x0, b.plant_x0)
    np.testing.assert_array_equal(a.theta0, b.theta0)
    for key in ("Q_x", "Q_theta", "Q_y", "P0", "x0"):
        if a.ekf[key] is None:
            assert b.ekf[key] is None
        else:
            np.testing.assert_array_equal(a.ekf[key], b.ekf[key])
    for key in ("N", "terminal", "sqp_tol", "sqp_max_iter", "regularization"):
        assert getattr(a.nmpc, key) == getattr(b.nmpc, key)
    np.testing.assert_array_equal(a.nmpc.W_x, b.nmpc.W_x)
    np.testing.assert_array_equal(a.nmpc.W_u, b.nmpc.W_u)
    assert a.reference.kind == b.reference.kind
    np.testing.assert_array_equal(a.reference.samples, b.reference.samples)
    np.testing.assert_array_equal(a.reference.nominal_input, b.reference.nominal_input)


@pytest.mark.parametrize("name", ["vdp-pwc-cdm", "vdp-generic-fnn", "cstr-generic-pdm"])
def test_config_round_trip(name, tmp_path):
    path = tmp_path / f"{name}.yaml"
    save_config(load_preset_config(name), path)
    assert_same_scenario(preset(name), build_scenario(load_config(path)))


def test_every_preset_builds():
    for name in PRESET_NAMES:
        sc = preset(name, steps=1)
        assert sc.name == name


def test_nine_presets():
    assert len(PRESET_NAMES) == 9
    assert "vdp-generic-pdm" in PRESET_NAMES and "cstr-generic-fnn" in PRESET_NAMES


def test_unknown_preset_rejected():
    with pytest.raises(ConfigError):
        load_preset_config("vdp-generic-rnn")


def test_missing_section_rejected():
    cfg = load_preset_config("vdp-pwc-cdm")
    del cfg["ekf"]
    with pytest.raises(ConfigError):
        build_scenario(cfg)


def test_unknown_family_rejected():
    cfg = load_preset_config("vdp-pwc-cdm")
    cfg["disturbance"]["family"] = "GP"
    with pytest.raises(ConfigError):
        build_scenario(cfg)


def test_table_covariances_in_presets():
    for name in PRESET_NAMES:
        ekf = load_preset_config(name)["ekf"]
        if name in ("vdp-generic-pdm", "vdp-generic-fnn"):
            assert (ekf["Q_x"], ekf["Q_theta"], ekf["Q_y"]) == (1e-10, 50.0, 0.25)
        else:
            assert (ekf["Q_x"], ekf["Q_theta"], ekf["Q_y"]) == (1.0, 1.0, 0.25)


def test_piecewise_constant_reference():
    r = reference_samples({"preset": "vdp-pwc"}, 200)
    assert r[0] == 0.5 and r[49] == 0.5 and r[50] == 1.5 and r[100] == -1.0 and r[199] == 0.8


def test_generic_reference_formula():
    r = reference_samples({"preset": "vdp-generic"}, 100)
    t = 0.5 * np.arange(100)
    np.testing.assert_allclose(r, 0.8 * np.sin(2 * np.pi * t / 40) + 0.4 * np.sin(2 * np.pi * t / 17), atol=1e-15)


def test_breakpoints_and_samples():
    np.testing.assert_array_equal(reference_samples({"breakpoints": [[0, 1.0], [3, 2.0]]}, 5), [1, 1, 1, 2, 2])
    np.testing.assert_array_equal(reference_samples({"samples": [1.0, 2.0]}, 4), [1, 2, 2, 2])
    np.testing.assert_array_equal(
        reference_samples({"samples": [1.0, 2.0, 3.0], "kind": "periodic", "period": 3}, 5), [1, 2, 3, 1, 2])


def test_csv_reference_relative_to_config(tmp_path):
    (tmp_path / "ref.csv").write_text("0.1\n0.2\n0.3\n")
    cfg = load_preset_config("vdp-generic-cdm")
    cfg["reference"] = {"csv": "ref.csv", "nominal_input": "none"}
    path = tmp_path / "run.yaml"
    save_config(cfg, path)
    sc = build_scenario(load_config(path), steps=2)
    np.testing.assert_array_equal(sc.reference.samples[:3, 0], [0.1, 0.2, 0.3])
    assert sc.reference.nominal_input is None
