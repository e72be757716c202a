import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coexqkd.errors import InfeasibleError, PlanInvalidError
from coexqkd.linkplan import (ChannelPlan, ClassicalChannel, ClassicalReceiver, CoexElementLosses,
                              aggregate_launch_power, bidirectional_plan, budget_gap,
                              build_channel_plan, c_band_6ch_plan, classical_ber, dbm_sum,
                              load_grid, load_plan, max_coexistence_power, quantum_path_loss,
                              required_key_rate)
from coexqkd.spectral import builtin_profile

from .oracles import db_sum, q_factor_ber_mp


def test_default_25_channel_plan():
    plan = build_channel_plan({"preset": "load", "channels": 25, "aggregate_dbm": 12})
    assert plan.quantum.wavelength == 1538.0
    assert len(plan.classical) == 25
    wls = sorted(c.wavelength for c in plan.classical)
    assert wls[0] == 1540.56 and wls[-1] == pytest.approx(1598.89, abs=0.02)
    assert aggregate_launch_power(plan) == pytest.approx(12.0, abs=1e-9)
    assert aggregate_launch_power(plan.with_aggregate(3.0)) == pytest.approx(3.0, abs=1e-9)


def test_c6_plan_span():
    wls = sorted(c.wavelength for c in c_band_6ch_plan().classical)
    assert len(wls) == 6 and wls[0] == 1540.56 and wls[-1] == 1544.53


def test_bidirectional_plan_roles():
    plan = bidirectional_plan(9.0)
    roles = {c.role: c for c in plan.classical if c.role != "load"}
    assert roles["distill_down"].wavelength == 1554.94
    assert roles["distill_up"].wavelength == 1552.52
    assert roles["distill_up"].direction == "upstream"


def test_collision_with_quantum_channel():
    with pytest.raises(PlanInvalidError):
        build_channel_plan({"classical": [{"wavelength": 1538.0, "launch_power": 0}]})


def test_duplicate_wavelengths_rejected():
    with pytest.raises(PlanInvalidError):
        build_channel_plan({"classical": [{"wavelength": 1550.0, "launch_power": 0},
                                          {"wavelength": 1550.0, "launch_power": 1}]})


def test_bad_mu_and_direction():
    with pytest.raises(PlanInvalidError):
        build_channel_plan({"quantum": {"mu": 0.0}})
    with pytest.raises(PlanInvalidError):
        build_channel_plan({"classical": [{"wavelength": 1550.0, "launch_power": 0,
                                           "direction": "sideways"}]})
    with pytest.raises(PlanInvalidError):
        build_channel_plan({"preset": "nope"})


def test_empty_plan_is_valid():
    plan = build_channel_plan({"classical": []})
    assert plan.classical == ()
    assert aggregate_launch_power(plan) == -math.inf


def test_aggregate_arithmetic():
    plan = ChannelPlan(classical=tuple(ClassicalChannel(wl, -1.979) for wl in load_grid(25)))
    assert aggregate_launch_power(plan) == pytest.approx(12.0, abs=0.01)
    single = ChannelPlan(classical=(ClassicalChannel(1550.0, 5.0),))
    assert aggregate_launch_power(single) == pytest.approx(5.0, abs=1e-12)


def test_upstream_channels_not_in_aggregate():
    plan = ChannelPlan(classical=(ClassicalChannel(1550.0, 5.0),
                                  ClassicalChannel(1552.52, 10.0, "upstream", "distill_up")))
    assert aggregate_launch_power(plan) == pytest.approx(5.0)


@given(st.lists(st.floats(-30, 20), min_size=1, max_size=12),
       st.lists(st.floats(-30, 20), min_size=1, max_size=12))
def test_aggregate_union_is_db_sum(a, b):
    grid = load_grid(25)
    chans = [ClassicalChannel(wl, p) for wl, p in zip(grid, a + b)]
    na = min(len(a), len(chans))
    pa = ChannelPlan(classical=tuple(chans[:na]))
    pb = ChannelPlan(classical=tuple(chans[na:]))
    union = ChannelPlan(classical=tuple(chans))
    parts = [aggregate_launch_power(p) for p in (pa, pb) if p.classical]
    assert aggregate_launch_power(union) == pytest.approx(db_sum(parts), abs=1e-9)
    assert dbm_sum(parts) == pytest.approx(db_sum(parts), abs=1e-12)


def test_quantum_path_loss_examples():
    plan = load_plan(25)
    assert quantum_path_loss(plan, builtin_profile("hcf")) == pytest.approx(10.6, abs=1e-3)
    assert quantum_path_loss(plan, builtin_profile("smf")) == pytest.approx(3.22, abs=1e-9)
    zero = ChannelPlan(ce_losses=CoexElementLosses(0, 0, 0, 0, 0))
    assert quantum_path_loss(zero, builtin_profile("smf").with_length(0.0)) == 0.0


@given(st.floats(0.0, 50.0), st.floats(0.0, 50.0))
def test_path_loss_additive_over_segments(l1, l2):
    smf = builtin_profile("smf")
    zero = ChannelPlan(ce_losses=CoexElementLosses(0, 0, 0, 0, 0))
    whole = quantum_path_loss(zero, smf.with_length(l1 + l2))
    parts = quantum_path_loss(zero, smf.with_length(l1)) + quantum_path_loss(zero, smf.with_length(l2))
    assert whole == pytest.approx(parts, rel=1e-12, abs=1e-12)


def test_required_key_rate():
    assert required_key_rate(250e9, 64e9, 256) == 125.0
    assert 1000.0 >= required_key_rate(250e9, 64e9, 256)
    assert required_key_rate(0.0, 64e9, 256) == 0.0
    assert required_key_rate(500e9, 64e9, 256) == 2 * required_key_rate(250e9, 64e9, 256)
    with pytest.raises(ValueError):
        required_key_rate(1.0, 0.0, 256)


def test_classical_ber_anchor_and_oracle():
    assert abs(classical_ber(-23.6) - 1e-10) / 1e-10 < 1e-6
    v = classical_ber(-20.6)
    assert v < 1e-10
    assert v == pytest.approx(max(q_factor_ber_mp(-20.6), 1e-18), rel=1e-9)


@given(st.floats(-40.0, -18.0))
def test_classical_ber_matches_mpmath(rop):
    assert classical_ber(rop) == pytest.approx(max(q_factor_ber_mp(rop), 1e-18), rel=1e-8)


def test_classical_ber_monotone_and_floored():
    grid = [-40 + 0.1 * i for i in range(300)]
    bers = [classical_ber(r) for r in grid]
    assert all(a >= b for a, b in zip(bers, bers[1:]))
    assert bers[-1] == ClassicalReceiver().ber_floor


def test_receiver_validation():
    with pytest.raises(ValueError):
        ClassicalReceiver(reference_ber=1.5)
    with pytest.raises(ValueError):
        ClassicalReceiver(ber_floor=1e-9)


def test_max_power_synthetic_model():
    # skr = 1000 * 10^(-(p - 5)/10): target 1000 is met up to exactly 5 dBm
    plan = load_plan(25, 0.0)
    fn = lambda p: 1000.0 * 10 ** (-(aggregate_launch_power(p) - 5.0) / 10)  # noqa: E731
    lim = max_coexistence_power(plan, builtin_profile("hcf"), 1000.0, skr_fn=fn)
    assert not lim.unclamped
    assert lim.aggregate_dbm == pytest.approx(5.0, abs=0.1)


def test_max_power_unclamped_and_infeasible():
    plan = load_plan(25, 0.0)
    hcf = builtin_profile("hcf")
    assert max_coexistence_power(plan, hcf, 0.0, skr_fn=lambda p: 0.0).unclamped
    lim = max_coexistence_power(plan, hcf, 0.0)
    assert lim.unclamped and lim.aggregate_dbm == 30.0
    with pytest.raises(InfeasibleError):
        max_coexistence_power(plan, hcf, 1e12)


def test_max_power_calibrated_hcf_near_9_dbm(calibration):
    lim = max_coexistence_power(load_plan(25), calibration.profile("hcf"), 1000.0,
                                calibration.model())
    assert lim.aggregate_dbm == pytest.approx(9.0, abs=1.5)


@pytest.mark.parametrize("target", [300.0, 1000.0, 1500.0])
def test_max_power_bracket_invariant(calibration, target):
    model, hcf, plan = calibration.model(), calibration.profile("hcf"), load_plan(25)
    lim = max_coexistence_power(plan, hcf, target, model)
    assert model.evaluate(plan.with_aggregate(lim.aggregate_dbm - 0.2), hcf).skr >= target
    assert model.evaluate(plan.with_aggregate(lim.aggregate_dbm + 0.2), hcf).skr < target


def test_budget_gap_identity_and_antisymmetry(calibration):
    model, plan = calibration.model(), load_plan(25)
    hcf, smf = calibration.profile("hcf"), calibration.profile("smf")
    assert budget_gap(hcf, hcf, plan, 1000.0, model) == 0.0
    ab = budget_gap(hcf, smf, plan, 1000.0, model)
    ba = budget_gap(smf, hcf, plan, 1000.0, model)
    assert ab == -ba and ab > 0
