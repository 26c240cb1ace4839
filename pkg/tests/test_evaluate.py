import numpy as np
import pytest

import riscf.evaluate as ev
from riscf.channel import CsiErrorSpec
from riscf.evaluate import (SCHEMES, empirical_cdf, monte_carlo, parse_grid, parse_scheme,
                            run_baseline, run_drop, run_two_stage, sweep_config, user_rate,
                            user_rates)
from riscf.scenario import ConfigError, SystemConfig, with_overrides

pytestmark = pytest.mark.filterwarnings("ignore::RuntimeWarning")


def crandn(rng, *shape):
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) / np.sqrt(2)


def test_rate_of_zero_precoder_is_zero():
    rng = np.random.default_rng(0)
    H = crandn(rng, 2, 2, 4)
    F = crandn(rng, 2, 4, 2)
    F[1] = 0
    assert user_rate(1, H, F, 1.0) == 0.0


def test_scalar_unit_snr_gives_one_bit():
    H = np.array([[[2.0]]])
    F = np.array([[[0.5]]])
    assert user_rate(0, H, F, 1.0) == pytest.approx(1.0)


def test_rate_matches_whitened_eigenvalues():
    rng = np.random.default_rng(1)
    H = crandn(rng, 3, 2, 6)
    F = crandn(rng, 3, 6, 2)
    noise = 0.3
    rates = user_rates(H, F, noise)
    for k in range(3):
        J = sum(H[k] @ F[i] @ F[i].conj().T @ H[k].conj().T for i in range(3) if i != k)
        Mx = J + noise * np.eye(2)
        w, V = np.linalg.eigh(Mx)
        Mis = V @ np.diag(w ** -0.5) @ V.conj().T
        S = H[k] @ F[k] @ F[k].conj().T @ H[k].conj().T
        lam = np.linalg.eigvalsh(Mis @ S @ Mis)
        assert rates[k] == pytest.approx(np.sum(np.log2(1 + lam)), rel=1e-10)


def test_perfect_csi_spec_designs_on_true_channels():
    cfg = SystemConfig()
    a = run_two_stage(cfg, 3)
    b = run_two_stage(cfg, 3, CsiErrorSpec(0.0, 0.0))
    assert a.wsr == b.wsr
    np.testing.assert_array_equal(a.association, b.association)


def test_same_seed_same_result():
    cfg = SystemConfig()
    a, b = run_two_stage(cfg, 11), run_two_stage(cfg, 11)
    assert a.to_dict() == b.to_dict()
    assert a.wsr == pytest.approx(np.dot(cfg.weight_array, a.per_ue_rates))


def test_schemes_do_not_depend_on_the_scheme_list():
    cfg = SystemConfig()
    alone = run_drop(cfg, 0, 2, ["random_phase"])[0]
    together = run_drop(cfg, 0, 2, list(SCHEMES))
    assert {r.scheme: r.wsr for r in together}["random_phase"] == alone.wsr


def test_without_ris_and_no_direct_link_gives_zero(monkeypatch):
    real = ev.generate_channels
    monkeypatch.setattr(ev, "generate_channels",
                        lambda *a, **k: real(*a, **k).without_direct())
    with pytest.warns(RuntimeWarning):
        res = run_baseline("without_ris", SystemConfig(), 0)
    assert res.wsr == 0.0
    assert res.csi_channels_acquired == 0


def test_overhead_counts():
    cfg = SystemConfig()
    res = {r.scheme: r for r in run_drop(cfg, 0, 0, list(SCHEMES))}
    assert res["full_association"].csi_channels_acquired == cfg.num_ris * cfg.num_ues
    assert res["proposed"].csi_channels_acquired <= cfg.quota_ris_per_ue * cfg.num_ues
    assert res["proposed"].csi_channels_acquired == res["proposed"].association.sum()
    assert res["random_phase"].csi_channels_acquired == res["proposed"].csi_channels_acquired
    np.testing.assert_array_equal(res["discrete1"].association, res["proposed"].association)


def test_exact_csi_keeps_interference_negligible():
    cfg = SystemConfig()
    ctx = ev._Drop(cfg, 0, 1, CsiErrorSpec())
    for blocked, (prefs, assoc, phases) in [(False, ctx.stage_one()),
                                             (True, ctx.stage_one(blocked=True))]:
        chans = ctx.true.without_direct() if blocked else ctx.true
        H = ev.effective_channels(chans, assoc, phases)
        pre = ev.joint_bd(H, cfg)
        for k in range(cfg.num_ues):
            signal = np.linalg.norm(H[k] @ pre.F[k]) ** 2
            leak = sum(np.linalg.norm(H[k] @ pre.F[i]) ** 2 for i in range(cfg.num_ues) if i != k)
            assert leak <= 1e-12 * max(signal, 1e-300) or signal == 0


def test_unknown_scheme():
    with pytest.raises(ValueError):
        run_baseline("magic", SystemConfig(), 0)
    assert parse_scheme("discrete3") == ("discrete", 3)
    with pytest.raises(ValueError):
        parse_scheme("discrete0")


def test_invalid_config_raises():
    with pytest.raises(ConfigError):
        run_two_stage(SystemConfig(num_ues=20), 0)


def test_single_drop_average():
    cfg = SystemConfig()
    mc = monte_carlo(cfg, ["proposed"], 1, seed=4)
    row = mc.rows()[0]
    assert row[2] == run_two_stage(cfg, 4).wsr
    assert row[3] == 0.0 and row[4] == 1


def test_results_independent_of_jobs():
    cfg = SystemConfig()
    a = monte_carlo(cfg, ["proposed", "without_ris"], 3, jobs=1)
    b = monte_carlo(cfg, ["proposed", "without_ris"], 3, jobs=2)
    assert a.rows() == b.rows()


def test_cdf_axioms():
    x, F = empirical_cdf([3.0, 1.0, 2.0, 2.0])
    np.testing.assert_array_equal(x, [1.0, 2.0, 2.0, 3.0])
    assert np.all(np.diff(F) >= 0) and F[-1] == 1.0 and F[0] > 0
    cdf = lambda t: np.searchsorted(x, t, side="right") / x.size
    assert cdf(-np.inf) == 0.0 and cdf(np.inf) == 1.0


def test_grid_parsing():
    assert parse_grid("12:3:27") == [12.0, 15.0, 18.0, 21.0, 24.0, 27.0]
    assert parse_grid("0:0.1:0.3") == [0.0, 0.1, 0.2, 0.3]
    assert parse_grid("50,200") == [50.0, 200.0]
    with pytest.raises(ValueError):
        parse_grid("1:0:3")


def test_sweep_axes():
    cfg, csi = SystemConfig(), CsiErrorSpec()
    assert sweep_config(cfg, csi, "power_dbm", 26.0)[0].max_power_dbm == 26.0
    assert sweep_config(cfg, csi, "ap_antennas_total", 24)[0].ap_antennas == 6
    assert sweep_config(cfg, csi, "ris_diameter", 50)[0].diameter_ris == 50
    assert sweep_config(cfg, csi, "ris_elements", 200)[0].ris_elements == 200
    assert sweep_config(cfg, csi, "csi_delta_r", 0.4)[1] == CsiErrorSpec(0.4, 0.0)
    assert sweep_config(cfg, csi, "csi_delta_d", 0.2)[1] == CsiErrorSpec(0.0, 0.2)
    assert sweep_config(cfg, csi, "weight_2", 3.0)[0].weights[2] == 3.0
    with pytest.raises(ValueError):
        sweep_config(cfg, csi, "ap_antennas_total", 18)


@pytest.fixture(scope="module")
def hundred_drops():
    return monte_carlo(SystemConfig(), ["proposed", "discrete1", "discrete2", "random_phase"], 100)


def test_finer_quantization_helps_on_average(hundred_drops):
    w1 = hundred_drops.wsr(None, "discrete1")
    w2 = hundred_drops.wsr(None, "discrete2")
    assert w2.mean() >= w1.mean()


def test_optimized_phases_beat_random_on_average(hundred_drops):
    assert hundred_drops.wsr(None, "proposed").mean() >= hundred_drops.wsr(None, "random_phase").mean()


def test_weight_increase_helps_that_ue():
    cfg = SystemConfig()
    mc = monte_carlo(cfg, ["proposed"], 100, axis="weight_0", grid=[1.0, 3.0])
    assert mc.rates(3.0, "proposed")[:, 0].mean() >= mc.rates(1.0, "proposed")[:, 0].mean()
