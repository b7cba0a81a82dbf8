import numpy as np
import pytest
import yaml

from safe_ibvs import scenario as sm
from safe_ibvs.errors import ScenarioError

REPO_SCENARIO = "scenarios/reference_cbc.yaml"


def base_config():
    return {
        "name": "t",
        "camera": {"f": 500.0, "px": 320.0, "py": 240.0},
        "initial_pose": {"rpy": [np.pi, 0.0, 0.0], "xyz": [0.0, 0.0, 1.1]},
        "target_pose": {"rpy": [np.pi, 0.0, 0.4], "xyz": [-0.1, -0.1, 0.8]},
        "features_world": [[0.25, 0.25, 0.0], [-0.25, 0.25, 0.0], [-0.25, -0.25, 0.0], [0.25, -0.25, 0.0]],
        "obstacle": {"radius": 0.05, "center": [0.43, 0.23, 0.10]},
        "mode": "cbc",
        "mpc": {"horizon": 5, "q": 1.0, "r": 0.01, "f": 2.0, "v_max": 0.5, "dt": 0.05},
    }


def test_load_reference_file():
    sc = sm.load(REPO_SCENARIO)
    assert sc.m == 4 and sc.mode == "cbc"
    assert sm.validate_scenario(sc) == []


def test_yaml_matches_builder():
    sc_yaml = sm.load(REPO_SCENARIO)
    sc_ref = sm.reference_scenario(mode="cbc")
    assert np.allclose(sc_yaml.target_features, sc_ref.target_features, atol=1e-14)
    assert np.allclose(sc_yaml.obstacle.points, sc_ref.obstacle.points, atol=1e-12)
    assert sc_yaml.gamma == sc_ref.gamma
    assert sc_yaml.mpc.dt == sc_ref.mpc.dt


def test_unknown_key_rejected():
    cfg = base_config()
    cfg["unexpected_field"] = 1
    with pytest.raises(ScenarioError, match="unexpected_field"):
        sm.from_dict(cfg)


def test_nested_unknown_key_rejected():
    cfg = base_config()
    cfg["camera"]["zoom"] = 2.0
    with pytest.raises(ScenarioError, match="zoom"):
        sm.from_dict(cfg)


def test_missing_required_field():
    cfg = base_config()
    del cfg["obstacle"]
    with pytest.raises(ScenarioError, match="obstacle"):
        sm.from_dict(cfg)


def test_exactly_one_target_spec():
    cfg = base_config()
    cfg["target_features"] = [[0.0, 0.0]] * 4
    with pytest.raises(ScenarioError, match="target"):
        sm.from_dict(cfg)
    del cfg["target_pose"]
    del cfg["target_features"]
    with pytest.raises(ScenarioError, match="target"):
        sm.from_dict(cfg)


def test_negative_weight_named():
    cfg = base_config()
    cfg["mpc"]["q"] = -1.0
    with pytest.raises(ScenarioError, match="q"):
        sm.from_dict(cfg)


def test_bad_mode_rejected():
    cfg = base_config()
    cfg["mode"] = "newton"
    with pytest.raises(ScenarioError, match="mode"):
        sm.from_dict(cfg)


def test_bad_rotation_rejected():
    cfg = base_config()
    cfg["initial_pose"] = {"rotation": np.diag([1.0, 1.0, 2.0]).tolist(), "xyz": [0, 0, 1.1]}
    with pytest.raises(ScenarioError, match="initial_pose"):
        sm.from_dict(cfg)


def test_validate_rejects_too_few_features():
    cfg = base_config()
    cfg["features_world"] = cfg["features_world"][:2]
    cfg["mpc"]["q"] = 1.0
    sc = sm.from_dict(cfg)
    problems = sm.validate_scenario(sc)
    assert any("3 feature points" in p for p in problems)


def test_validate_rejects_initial_occlusion():
    cfg = base_config()
    # obstacle halfway along the line of sight of feature 1
    cfg["obstacle"] = {"radius": 0.08, "center": [0.125, 0.125, 0.55]}
    sc = sm.from_dict(cfg)
    problems = sm.validate_scenario(sc)
    assert any("occlusion-free" in p for p in problems)


def test_validate_prcbc_needs_noise():
    cfg = base_config()
    cfg["mode"] = "prcbc"
    sc = sm.from_dict(cfg)
    assert any("noise" in p for p in sm.validate_scenario(sc))


def test_noise_parsing_variants():
    cfg = base_config()
    cfg["noise"] = {"pixel_variance": 10.0, "sigma": 0.9}
    sc = sm.from_dict(cfg)
    assert np.allclose(sc.noise.feature_cov, 10.0 * np.eye(2))
    assert sc.noise.sigma == 0.9

    cfg["noise"] = {"feature_cov": [[4.0, 0.0], [0.0, 4.0]], "obstacle_cov": [[9.0, 0.0], [0.0, 9.0]]}
    sc = sm.from_dict(cfg)
    assert sc.noise.feature_cov[0, 0] == 4.0 and sc.noise.obstacle_cov[0, 0] == 9.0

    cfg["noise"] = {"pixel_variance": 10.0, "sigma": 1.5}
    with pytest.raises(ScenarioError):
        sm.from_dict(cfg)


def test_constant_velocity_obstacle():
    cfg = base_config()
    cfg["obstacle"] = {"radius": 0.05, "center": [0.5, 0.5, 0.1], "velocity": [-0.1, 0.0, 0.0]}
    sc = sm.from_dict(cfg)
    assert np.allclose(sc.obstacle.center_at(1.0), [0.4, 0.5, 0.1])


def test_radius_term_switch_parsed():
    cfg = base_config()
    assert sm.from_dict(cfg).prcbc_radius_term is True
    cfg["prcbc_radius_term"] = False
    assert sm.from_dict(cfg).prcbc_radius_term is False


def test_digest_stable_and_sensitive():
    sc1 = sm.reference_scenario()
    sc2 = sm.reference_scenario()
    assert sc1.digest() == sc2.digest()
    assert sc1.with_seed(999).digest() != sc1.digest()


def test_round_trip_through_yaml(tmp_path):
    sc = sm.load(REPO_SCENARIO)
    path = tmp_path / "copy.yaml"
    with open(REPO_SCENARIO) as fh:
        data = yaml.safe_load(fh)
    path.write_text(yaml.safe_dump(data))
    assert sm.load(path).digest() == sc.digest()


def test_load_missing_file():
    with pytest.raises(ScenarioError, match="not found"):
        sm.load("no/such/file.yaml")
