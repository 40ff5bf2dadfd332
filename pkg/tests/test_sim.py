import math

import numpy as np
import pytest

from coopfb.analysis import BoundInputs, csi_feedback_bounds, k_user_leakage, two_user_bound
from coopfb.bitpartition import virtual_slnr_lower_bound
from coopfb.channel import gen_channel
from coopfb.config import preset
from coopfb.errors import ConfigError
from coopfb.exchange import exchange_csi, klt_basis
from coopfb.precoding import slnr_continuous
from coopfb.sim import (
    ScenarioConfig,
    build_scenario,
    link_metrics,
    run_experiment,
    run_trial,
    trial_rng,
)


def _iid(**kw):
    base = dict(n_t=8, k_users=2, power_total=10.0, b_f=6, b_tot=40.0, trials=50, master_seed=1,
                schemes=("csi-feedback-zf", "csi-feedback-mmse", "precoder-rvq", "precoder-naive",
                         "precoder-adaptive"))
    base.update(kw)
    return ScenarioConfig(**base)


def test_single_user_no_leakage():
    cfg = _iid(k_users=1, trials=5)
    for t in range(5):
        m = run_trial(cfg, t)
        for s in cfg.schemes:
            np.testing.assert_array_equal(m.leakage[s], [0.0])
            assert m.sum_rate[s] > 0


def test_link_metrics_hand_example():
    H = np.array([[1.0, 0.0], [0.0, 2.0]], dtype=complex)
    W = np.array([[1.0, 0.6], [0.0, 0.8]], dtype=complex)
    leak, sinr, rate = link_metrics(H, W, 2.0)
    # |h_2^H w_1|^2 = 0, |h_1^H w_2|^2 = 0.36
    np.testing.assert_allclose(leak, [0.0, 0.72])
    np.testing.assert_allclose(sinr, [2.0 / 1.72, 2.0 * 2.56])
    assert rate == pytest.approx(np.log2(1 + 2 / 1.72) + np.log2(1 + 5.12))


def test_trial_determinism():
    cfg = _iid()
    a, b = run_trial(cfg, 7), run_trial(cfg, 7)
    for s in cfg.schemes:
        np.testing.assert_array_equal(a.leakage[s], b.leakage[s])
        assert a.sum_rate[s] == b.sum_rate[s]
    c = run_trial(cfg.replace(master_seed=2), 7)
    assert c.sum_rate["precoder-naive"] != a.sum_rate["precoder-naive"]


def test_trial_invariant_to_scheme_subset():
    # per-scheme substreams: dropping one scheme leaves the others unchanged
    cfg = _iid()
    full = run_trial(cfg, 3)
    part = run_trial(cfg.replace(schemes=("precoder-adaptive", "csi-feedback-zf")), 3)
    for s in part.leakage:
        np.testing.assert_array_equal(full.leakage[s], part.leakage[s])


def test_nonnegative_metrics():
    cfg = _iid(k_users=3, trials=20)
    for t in range(20):
        m = run_trial(cfg, t)
        for s in cfg.schemes:
            assert np.all(m.leakage[s] >= 0) and m.sum_rate[s] >= 0


def test_one_trial_aggregate():
    cfg = _iid(trials=1)
    agg = run_experiment(cfg)
    m = run_trial(cfg, 0)
    for s in cfg.schemes:
        assert agg.mean[s]["sum_rate"] == pytest.approx(m.sum_rate[s])
        assert agg.ci[s]["sum_rate"] == 0.0
    assert agg.trials == 1 and agg.skipped == 0


def test_ci_shrinks_with_trials():
    cfg = _iid(schemes=("precoder-naive",), trials=1000)
    a = run_experiment(cfg).ci["precoder-naive"]["sum_rate"]
    b = run_experiment(cfg.replace(trials=2000)).ci["precoder-naive"]["sum_rate"]
    assert b / a == pytest.approx(1 / math.sqrt(2), rel=0.15)


def test_ci_is_196_stderr():
    cfg = _iid(schemes=("csi-feedback-mmse",), trials=40)
    agg = run_experiment(cfg)
    x = np.array([run_trial(cfg, t).sum_rate["csi-feedback-mmse"] for t in range(40)])
    assert agg.ci["csi-feedback-mmse"]["sum_rate"] == pytest.approx(
        1.96 * x.std(ddof=1) / math.sqrt(40), rel=1e-12)


def test_worker_count_invariance():
    cfg = _iid(trials=24, codebook_reuse=5)
    a = run_experiment(cfg, workers=1).to_dict()
    b = run_experiment(cfg, workers=3).to_dict()
    assert a == b


def test_codebook_reuse_shares_draws():
    cfg = _iid(schemes=("precoder-rvq",), codebook_reuse=4, b_c=math.inf)
    from coopfb.sim import _codebooks
    assert _codebooks(cfg, 0)[0][0] is _codebooks(cfg, 0)[0][0]
    assert not np.array_equal(_codebooks(cfg, 0)[0][0].vectors, _codebooks(cfg, 1)[0][0].vectors)


def test_invalid_configs():
    for bad in ({"trials": 0}, {"power_total": -1.0}, {"schemes": ()}, {"schemes": ("nope",)},
                {"channel_model": "one-ring"}, {"backend": "lloyd"}, {"b_f": 0}):
        with pytest.raises(ConfigError):
            _iid(**bad)


# -- bound containment ------------------------------------------------------------

def test_perfect_exchange_leakage_bound():
    # with exact exchange the mean is rho N_t / (1 + (N_t-1) 2^B_f), only 0.06% under
    # the bound, so containment is checked up to the Monte Carlo CI
    cfg = ScenarioConfig(n_t=8, k_users=2, power_total=2.0, b_f=8, b_c=math.inf, trials=10_000,
                         master_seed=5, schemes=("precoder-rvq",))
    agg = run_experiment(cfg)
    m, ci = agg.mean["precoder-rvq"]["leakage"], agg.ci["precoder-rvq"]["leakage"]
    bound = two_user_bound(BoundInputs(8, 2, 8, math.inf, cfg.rho))
    exact = cfg.rho * 8 / (1 + 7 * 2.0**8)
    assert exact <= bound
    assert abs(m - exact) <= ci
    assert m <= bound + ci


def test_csi_feedback_zf_within_bracket():
    cfg = ScenarioConfig(n_t=8, k_users=2, power_total=2.0, b_f=8, trials=4000, master_seed=6,
                         schemes=("csi-feedback-zf",))
    agg = run_experiment(cfg)
    lo, hi = csi_feedback_bounds(BoundInputs(8, 2, 8, rho=cfg.rho))
    m, ci = agg.mean["csi-feedback-zf"]["leakage"], agg.ci["csi-feedback-zf"]["leakage"]
    assert lo * 0.98 - ci <= m <= hi * 1.02 + ci


def test_two_user_emulated_exchange_bound():
    cfg = ScenarioConfig(n_t=8, k_users=2, power_total=2.0, b_f=6, b_c=14.0, trials=4000,
                         master_seed=7, schemes=("precoder-rvq",))
    agg = run_experiment(cfg)
    assert agg.mean["precoder-rvq"]["leakage"] <= two_user_bound(BoundInputs(8, 2, 6, 14.0, cfg.rho))


def test_three_user_leakage_near_approximation():
    cfg = ScenarioConfig(n_t=16, k_users=3, power_total=3.0, b_f=8, b_c=30.0, trials=1500,
                         master_seed=8, schemes=("precoder-rvq",))
    agg = run_experiment(cfg)
    approx = k_user_leakage(BoundInputs(16, 3, 8, 30.0, cfg.rho), use_approx=True)
    assert agg.mean["precoder-rvq"]["leakage"] <= 1.25 * approx


# -- exchange schemes ----------------------------------------------------------------

def test_adaptive_identical_users_even_split():
    base = preset("table1").base
    cfg = base.replace(path_losses=(1.0, 1.0), schemes=("precoder-adaptive",))
    bits = build_scenario(cfg).adaptive.bits
    assert bits[0, 1] == pytest.approx(bits[1, 0], abs=1e-8)
    assert bits.sum() == pytest.approx(cfg.b_tot)


def test_naive_spec_definition():
    cfg = _iid(channel_model="one-ring", k_users=3, mean_azimuths_deg=(20.0, 50.0, 80.0),
               n_t=24, b_tot=60.0)
    sc = build_scenario(cfg)
    naive = sc.naive
    assert naive.broadcast
    for j in range(3):
        for k in range(3):
            if j != k:
                assert naive.bits[j, k] == pytest.approx(20.0)
                own = klt_basis(sc.stats[j], sc.subspaces[j])
                np.testing.assert_allclose(naive.bases[j][k].projector, own.projector)


def test_adaptive_spec_uses_receiver_subspace():
    cfg = _iid(channel_model="one-ring", mean_azimuths_deg=(30.0, 60.0), n_t=24)
    sc = build_scenario(cfg)
    basis = sc.adaptive.bases[0][1]
    # the sender's projected channel lives in the receiver's dominant subspace
    U = sc.subspaces[1]
    P = U @ U.conj().T
    np.testing.assert_allclose(P @ basis.projector, basis.projector, atol=1e-10)


def test_zf_direction_slnr_above_virtual_bound():
    cfg = preset("table1").base.replace(path_losses=(1.0, 0.3), schemes=("precoder-adaptive",))
    sc = build_scenario(cfg)
    spec = sc.adaptive
    p = spec.partition
    bound = virtual_slnr_lower_bound(_problem_of(sc), spec.bits)
    zf = np.zeros(2)
    opt = np.zeros(2)
    trials = 3000
    for t in range(trials):
        H = gen_channel(sc.stats, trial_rng(99, 0, t), t).channels
        rng = trial_rng(99, 2, t)
        for k, j in ((0, 1), (1, 0)):
            hj = exchange_csi(H[:, j], sc.stats[j].path_loss, spec.bases[j][k],
                              float(spec.bits[j, k]), spec.backend, rng).reconstructed
            Hk = np.column_stack([H[:, k], hj])
            w = (Hk @ np.linalg.inv(Hk.conj().T @ Hk))[:, 0]
            w /= np.linalg.norm(w)
            s = lambda v: abs(np.vdot(H[:, k], v)) ** 2 / (abs(np.vdot(H[:, j], v)) ** 2 + cfg.alpha)
            zf[k] += s(w)
            opt[k] += s(slnr_continuous(H[:, k], [hj], cfg.alpha))
    zf /= trials
    opt /= trials
    assert p is not None
    assert np.all(zf >= bound)
    assert np.all(opt >= zf)


def _problem_of(sc):
    from coopfb.bitpartition import build_problem
    cfg = sc.config
    bases = [[None if j == k else sc.adaptive.bases[j][k] for k in range(cfg.k_users)]
             for j in range(cfg.k_users)]
    return build_problem(sc.stats, bases, cfg.alpha, cfg.b_tot)
