import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from riscf.scenario import (ConfigError, SystemConfig, check_config, dump_config,
                            generate_topology, load_config, validate_config, with_overrides)


def test_table_one_defaults_are_valid():
    cfg = SystemConfig()
    assert validate_config(cfg) == []
    assert (cfg.num_aps, cfg.ap_antennas, cfg.num_ues, cfg.ue_antennas) == (4, 4, 6, 2)
    assert cfg.streams == 2
    assert (cfg.quota_ue_per_ris, cfg.quota_ris_per_ue) == (3, 2)
    assert cfg.ris_elements == cfg.ris_grid_h * cfg.ris_grid_v == 100
    np.testing.assert_allclose(cfg.max_power_mw, 10 ** 2.3)
    np.testing.assert_allclose(cfg.noise_mw, 1e-10)


def test_antenna_budget_violation():
    cfg = SystemConfig(num_aps=1, ap_antennas=1, num_ues=2, ue_antennas=1)
    errors = validate_config(cfg)
    assert any("K·N_r > B·N_t" in e for e in errors)
    with pytest.raises(ConfigError):
        check_config(cfg)


def test_rejection_ratio_bound():
    errors = validate_config(SystemConfig(rejection_ratio=1.5))
    assert any("rejection_ratio out of (0,1)" in e for e in errors)


def test_every_violation_reported():
    cfg = SystemConfig(rejection_ratio=0.0, streams=3, ris_elements=99, mm_tol=-1.0)
    errors = validate_config(cfg)
    assert len(errors) == 4


def test_ap_square_vertices():
    topo = generate_topology(SystemConfig(), np.random.default_rng(0))
    xy = {tuple(p) for p in topo.ap_positions[:, :2]}
    assert xy == {(150.0, 150.0), (-150.0, 150.0), (-150.0, -150.0), (150.0, -150.0)}


def test_ris_ring_radius_and_heights():
    cfg = SystemConfig()
    topo = generate_topology(cfg, np.random.default_rng(3))
    np.testing.assert_allclose(np.hypot(*topo.ris_positions[:, :2].T), 100.0)
    assert np.all(topo.ap_positions[:, 2] == 10.0)
    assert np.all(topo.ris_positions[:, 2] == 6.0)
    assert np.all(topo.ue_positions[:, 2] == 1.5)


def test_ris_disk_placement_inside():
    cfg = SystemConfig(ris_placement="disk", num_ris=50)
    topo = generate_topology(cfg, np.random.default_rng(3))
    assert np.all(np.hypot(*topo.ris_positions[:, :2].T) <= 100.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), side=st.floats(1.0, 500.0))
def test_ue_inside_square_and_deterministic(seed, side):
    cfg = SystemConfig(side_ue=side)
    a = generate_topology(cfg, np.random.default_rng(seed))
    b = generate_topology(cfg, np.random.default_rng(seed))
    assert a == b
    assert np.all(np.abs(a.ue_positions[:, :2]) <= side / 2)
    d = np.linalg.norm(a.ap_positions[:, None] - a.ue_positions[None], axis=-1)
    assert np.all(d >= 10.0 - 1.5)


def test_overrides_rederive_auto_fields():
    cfg = with_overrides(SystemConfig(), {"num_ues": "4", "num_ris": 6})
    assert cfg.weights == (1.0,) * 4
    assert (cfg.quota_ue_per_ris, cfg.quota_ris_per_ue) == (2, 3)
    cfg = with_overrides(SystemConfig(), {"ris_elements": "200"})
    assert cfg.ris_grid_h * cfg.ris_grid_v == 200
    assert validate_config(cfg) == []


def test_unknown_override_key():
    with pytest.raises(ConfigError):
        with_overrides(SystemConfig(), {"bogus": "1"})


def test_config_file_round_trip(tmp_path):
    cfg = with_overrides(SystemConfig(), {"max_power_dbm": 26.0, "weights": "1,2,3,4,5,6"})
    path = tmp_path / "cfg.ini"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg
