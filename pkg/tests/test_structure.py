"""Structure checkers and the policy/threshold codec."""

import numpy as np
import pytest

from qamsched import (
    check_bounded_marginal,
    weight_condition_margins,
    check_first_order_dominance,
    check_monotone_b,
    check_monotone_h,
    check_q_lnatural,
    check_q_submodular,
    monotone_policy_from_thresholds,
    policy_to_thresholds,
    thresholds_to_policy,
    value_iteration,
)
from qamsched.structure import build_structure_report, transmit_cost_table
from qamsched.solvers import q_table

from conftest import canonical_channel, canonical_model, dominance_breaking_override, random_system


def test_monotone_checks_on_constant_policy():
    pol = np.full((8, 4), 2)
    assert check_monotone_b(pol) == (True, [])
    assert check_bounded_marginal(pol) == (True, [])
    assert check_monotone_h(pol) == (True, [])


def test_monotone_b_witness():
    pol = np.zeros((6, 2), dtype=int)
    pol[2, 0] = 3
    pol[3, 0] = 2  # decrease from b=2 to b=3 in channel state 1
    pol[4, 0] = pol[5, 0] = 3
    ok, witnesses = check_monotone_b(pol)
    assert not ok
    assert (2, 1) in witnesses


def test_bounded_marginal_witness():
    pol = np.zeros((6, 2), dtype=int)
    pol[3, 1] = 2  # jump of 2 between b=2 and b=3 in channel state 2
    pol[4, 1] = pol[5, 1] = 2
    ok, witnesses = check_bounded_marginal(pol)
    assert not ok
    assert witnesses == [(2, 2)]
    assert check_monotone_b(pol)[0]


def test_monotone_h_witness():
    pol = np.zeros((4, 3), dtype=int)
    pol[:, 0] = 2
    pol[:, 1] = 1  # drops from h=1 to h=2
    pol[:, 2] = 3
    ok, witnesses = check_monotone_h(pol)
    assert not ok
    assert all(w[1] == 1 for w in witnesses)


def test_dominance_identity_and_override():
    assert check_first_order_dominance(np.eye(5)) == (True, [])
    ch = dominance_breaking_override(canonical_channel())
    ok, witnesses = check_first_order_dominance(ch.transition)
    assert not ok
    assert any(w[0] == 7 for w in witnesses)
    with pytest.raises(ValueError):
        check_first_order_dominance(np.array([[0.5, 0.4], [0.5, 0.5]]))


def test_dominance_agrees_with_expectation_criterion():
    # CDF ordering must match E[u] ordering for nondecreasing u: random u when
    # the checker passes, constructed step functions at witnesses when it fails
    rng = np.random.default_rng(77)
    for _ in range(25):
        K = int(rng.integers(2, 7))
        if rng.random() < 0.5:
            P = build_tridiagonal(rng, K)
        else:
            P = rng.dirichlet(np.ones(K), size=K)
        ok, witnesses = check_first_order_dominance(P)
        if ok:
            for _ in range(1000 // 25):
                u = np.cumsum(rng.random(K))
                means = P @ u
                assert np.all(np.diff(means) >= -1e-9)
        else:
            h, col = witnesses[0]
            u = (np.arange(1, K + 1) > col).astype(float)  # nondecreasing step at the crossing
            means = P @ u
            assert means[h] - means[h - 1] < 1e-12


def build_tridiagonal(rng, K):
    P = np.zeros((K, K))
    for i in range(K):
        up = rng.uniform(0, 0.3) if i < K - 1 else 0.0
        down = rng.uniform(0, up if i < K - 1 else 0.3) if i > 0 else 0.0
        if i < K - 1:
            P[i, i + 1] = up
        if i > 0:
            P[i, i - 1] = down
        P[i, i] = 1.0 - up - down
    return P


def test_weight_condition_margins_at_bench_config():
    model = canonical_model(weight=1.0)
    margins = weight_condition_margins(model.config)
    # oracle: the closed-form bound at the top adjacent pair of SNR boundaries
    snr = model.config.channel.effective_snr_table()
    coeff = -np.log(5e-3) / 1.5
    bound = 2 * coeff * (1 / snr[-2] - 1 / snr[-1])
    assert margins["weight_bound_min"] == pytest.approx(bound, rel=1e-12)
    assert margins["weight_bound_margin"] == pytest.approx(bound - 1.0, rel=1e-9)
    assert margins["weight_bound_ok"]
    # the raw mixed difference is smaller than the closed-form bound (a = 0 term)
    assert margins["mixed_difference_min"] == pytest.approx(bound / 2, rel=1e-12)
    assert not margins["mixed_difference_ok"]

    heavy = canonical_model(weight=400.0)
    m400 = weight_condition_margins(heavy.config)
    assert not m400["weight_bound_ok"] and not m400["mixed_difference_ok"]

    featherweight = canonical_model(weight=1e-9)
    assert weight_condition_margins(featherweight.config)["weight_bound_ok"]
    assert weight_condition_margins(featherweight.config)["mixed_difference_ok"]


def test_mixed_difference_margin_matches_direct_table_computation():
    model = canonical_model(weight=2.0, num_states=5)
    ctr = transmit_cost_table(model.config)
    H, A = ctr.shape
    direct = min(
        ctr[h + 1, a] + ctr[h, a + 1] - ctr[h, a] - ctr[h + 1, a + 1]
        for h in range(H - 1) for a in range(A - 1)
    )
    margins = weight_condition_margins(model.config)
    assert margins["mixed_difference_min"] == pytest.approx(direct, rel=1e-12)


def test_single_state_margins_vacuous():
    model = canonical_model(weight=1.0, num_states=1, max_action=2)
    margins = weight_condition_margins(model.config)
    assert margins["weight_bound_ok"] and margins["mixed_difference_ok"]
    assert margins["weight_bound_margin"] == float("inf")


def test_q_lnatural_with_power_cost_only():
    # negligible weight leaves only the transmit cost, convex in the action
    model = canonical_model(weight=1e-12)
    B, H, _ = model.shape
    ok, witnesses = check_q_lnatural(model, np.zeros((B, H)))
    assert ok, witnesses[:5]


def test_q_checks_pass_at_bench_converged_value(bench_model_w1):
    values, _, _ = value_iteration(bench_model_w1, 1e-4)
    assert check_q_submodular(bench_model_w1, values)[0]
    assert check_q_lnatural(bench_model_w1, values)[0]


def test_q_submodular_detects_handcrafted_violation():
    # a value table with a steep supermodular (b, h) interaction
    model = canonical_model(weight=1.0, num_states=4, queue_size=6, max_action=2)
    B, H, _ = model.shape
    b = np.arange(B)[:, None]
    h = np.arange(H)[None, :]
    V = 50.0 * b * h
    ok, witnesses = check_q_submodular(model, V)
    assert not ok
    assert any(w[0] == "bh" for w in witnesses)


def test_q_lnatural_detects_concavity_in_b():
    model = canonical_model(weight=1.0, num_states=2, queue_size=8, max_action=1)
    B, H, _ = model.shape
    b = np.arange(B, dtype=float)[:, None]
    V = 100.0 * np.sqrt(b) * np.ones((1, H))  # concave in b
    ok, witnesses = check_q_lnatural(model, V)
    assert not ok


def test_threshold_roundtrip_on_random_monotone_policies():
    rng = np.random.default_rng(5)
    for _ in range(50):
        B = int(rng.integers(2, 12))
        H = int(rng.integers(1, 6))
        Am = int(rng.integers(1, 5))
        steps = rng.integers(0, 2, size=(B, H))
        pol = np.minimum(np.cumsum(steps, axis=0), Am)
        pol[0] = rng.integers(0, Am + 1, size=H)
        pol = np.maximum.accumulate(np.minimum(pol, Am), axis=0)
        th = policy_to_thresholds(pol, Am)
        back = thresholds_to_policy(th, B - 1)
        assert np.array_equal(back, pol)
        th2 = policy_to_thresholds(back, Am)
        assert np.array_equal(th2, th)


def test_threshold_edge_rows():
    # all-zero policy encodes as "never" everywhere
    th = policy_to_thresholds(np.zeros((5, 3), dtype=int), 2)
    assert np.all(th == 5)
    # zero thresholds decode to the maximum action everywhere
    pol = thresholds_to_policy(np.zeros((3, 2), dtype=int), 4)
    assert np.all(pol == 2)
    # "never" thresholds decode to the zero policy
    pol = thresholds_to_policy(np.full((3, 2), 5), 4)
    assert np.all(pol == 0)


def test_thresholds_to_policy_step_structure():
    th = np.array([[1, 3, 3, 6]])
    pol = thresholds_to_policy(th, 5)
    # direct evaluation oracle of the max-active-level rule
    expected = []
    for b in range(6):
        active = [i + 1 for i in range(4) if b >= th[0, i]]
        expected.append(max(active) if active else 0)
    assert pol[:, 0].tolist() == expected
    assert check_monotone_b(pol)[0]


def test_threshold_codec_errors():
    with pytest.raises(ValueError):
        thresholds_to_policy(np.array([[3, 1]]), 4)      # unsorted row
    with pytest.raises(ValueError):
        thresholds_to_policy(np.array([[0, 7]]), 4)      # beyond "never"
    bad = np.zeros((4, 2), dtype=int)
    bad[1, 0] = 2
    bad[2, 0] = 1
    bad[3, 0] = 2
    with pytest.raises(ValueError):
        policy_to_thresholds(bad, 2)                     # not monotone in b


def test_lenient_decode_accepts_unsorted_tables():
    th = np.array([[4, 1], [16, 0]])
    pol = monotone_policy_from_thresholds(th, 5)
    for b in range(6):
        for hcol in range(2):
            active = [i + 1 for i in range(2) if b >= th[hcol, i]]
            assert pol[b, hcol] == (max(active) if active else 0)
    assert check_monotone_b(pol)[0]


def test_dp_policy_thresholds_staircase(bench_model_w100):
    _, policy, _ = value_iteration(bench_model_w100, 1e-4)
    th = policy_to_thresholds(policy, bench_model_w100.config.max_action)
    assert np.all(th[:, 1:] >= th[:, :-1])  # feasible staircase
    assert np.array_equal(thresholds_to_policy(th, 15), policy)


def test_structure_report_consistency():
    rng = np.random.default_rng(31)
    model = random_system(rng, queue_range=(4, 8), k_range=(2, 4))
    values, policy, _ = value_iteration(model, 1e-4)
    rep = build_structure_report(model, policy, values)
    assert rep.monotone_in_b == (len(rep.violations["monotone_b"]) == 0)
    assert rep.bounded_marginal == (len(rep.violations["bounded_marginal"]) == 0)
    assert rep.monotone_in_h == (len(rep.violations["monotone_h"]) == 0)
    assert rep.dominance_ok == (len(rep.violations["dominance"]) == 0)
    assert rep.q_submodular_ok == (len(rep.violations["q_submodular"]) == 0)
    doc = rep.to_dict()
    assert set(doc["violations"]) >= {"monotone_b", "bounded_marginal", "monotone_h"}
