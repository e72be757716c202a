import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coexqkd.cow_sim import (DATA, MONITOR, DetectorModel, FrameConfig, TagStream, align,
                             analytic_rates, apply_dead_time, click_probabilities, generate_frames,
                             make_rng, propagate_and_detect, simulate, sync_recover)
from coexqkd.distill import alice_bits_at, sift
from coexqkd.errors import AlignmentRequiredError, SyncError
from coexqkd.spectral import NoiseBreakdown

SILENT = NoiseBreakdown()
NO_DARK = DetectorModel(dark_cps=0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        FrameConfig(mu=0.0)
    with pytest.raises(ValueError):
        FrameConfig(decoy_fraction=0.5)
    with pytest.raises(ValueError):
        FrameConfig(slots_per_frame=2048)
    with pytest.raises(ValueError):
        DetectorModel(data_split=0.7)
    with pytest.raises(ValueError):
        DetectorModel(efficiency=0.0)


def test_no_decoys_when_fraction_zero():
    sched = generate_frames(FrameConfig(decoy_fraction=0.0), 1000, make_rng(1, "alice"))
    assert not sched.decoy.any()


def test_schedule_deterministic():
    a = generate_frames(FrameConfig(), 500, make_rng(7, "alice"))
    b = generate_frames(FrameConfig(), 500, make_rng(7, "alice"))
    assert np.array_equal(a.bits, b.bits) and np.array_equal(a.decoy, b.decoy)
    c = generate_frames(FrameConfig(), 500, make_rng(8, "alice"))
    assert not np.array_equal(a.bits, c.bits)


def test_decoy_fraction_within_3_sigma():
    cfg = FrameConfig()
    sched = generate_frames(cfg, 100_000, make_rng(3, "alice"))
    n = sched.decoy.size
    sigma = math.sqrt(cfg.decoy_fraction * (1 - cfg.decoy_fraction) / n)
    assert abs(sched.decoy.mean() - cfg.decoy_fraction) < 3 * sigma


def test_occupancy_rules():
    sched = generate_frames(FrameConfig(), 200, make_rng(4, "alice"))
    occ = sched.occupied.reshape(200, -1, 2)
    per_pair = occ.sum(axis=2)
    assert np.all(per_pair[sched.decoy] == 2)
    assert np.all(per_pair[~sched.decoy] == 1)
    key = ~sched.decoy
    # bit 0 lights the first slot, bit 1 the second
    assert np.array_equal(occ[..., 1][key], sched.bits[key] == 1)


def test_click_probability_example():
    p_data, _ = click_probabilities(FrameConfig(), 10.6, DetectorModel())
    expected = 1 - math.exp(-0.1 * 10 ** -1.06 * 0.1 * 0.75)
    assert p_data == pytest.approx(expected, rel=1e-14)
    assert p_data == pytest.approx(6.5e-4, rel=0.01)


@given(st.floats(1e-6, 1.0), st.floats(0.0, 200.0), st.floats(1e-3, 1.0))
def test_click_probability_in_unit_interval(mu, loss, eff):
    pd, pm = click_probabilities(FrameConfig(mu=mu), loss, DetectorModel(efficiency=eff))
    assert 0.0 <= pd <= 1.0 and 0.0 <= pm <= 1.0


def test_no_light_no_dark_gives_empty_stream():
    sched = generate_frames(FrameConfig(), 2000, make_rng(1, "alice"))
    tags = propagate_and_detect(sched, math.inf, SILENT, NO_DARK, make_rng(1, "bob"))
    assert len(tags) == 0


def test_dark_counts_only():
    cfg = FrameConfig(rng_seed=11)
    n_frames = int(round(1e9 / cfg.frame_period_ns))  # 1 s
    _, tags = simulate(cfg, DetectorModel(), math.inf, SILENT, n_frames)
    assert tags.duration_ps == pytest.approx(1e12, rel=1e-6)
    assert abs(len(tags) - 1240) < 3 * math.sqrt(1240)
    assert abs(tags.line(DATA).size - tags.line(MONITOR).size) < 3 * math.sqrt(2 * 620)


def test_simulation_deterministic():
    cfg = FrameConfig(rng_seed=99)
    s1, t1 = simulate(cfg, DetectorModel(), 8.0, NoiseBreakdown.constant(1e5), 5000, batch_frames=777)
    s2, t2 = simulate(cfg, DetectorModel(), 8.0, NoiseBreakdown.constant(1e5), 5000, batch_frames=777)
    assert t1.to_bytes() == t2.to_bytes()
    assert np.array_equal(s1.bits, s2.bits)


def test_dead_time_invariant_holds_and_is_enforced():
    det = DetectorModel(dead_time_ns=50.0)
    _, tags = simulate(FrameConfig(rng_seed=5), det, 0.0, NoiseBreakdown.constant(1e6), 20_000)
    tags.check_invariants()
    for ln in (DATA, MONITOR):
        assert np.diff(tags.line(ln)).min() >= 50_000
    bad = dataclasses.replace(tags, timestamps=tags.timestamps.copy())
    first_data = np.flatnonzero(bad.lines == DATA)[:2]
    bad.timestamps[first_data[1]] = bad.timestamps[first_data[0]] + 10
    with pytest.raises(AssertionError):
        bad.check_invariants()


@settings(max_examples=50)
@given(st.lists(st.integers(0, 10**7), max_size=200), st.integers(1, 10**5))
def test_apply_dead_time_property(times, dead):
    t = np.array(sorted(times), dtype=np.int64)
    kept = apply_dead_time(t, dead)
    assert np.all(np.diff(kept) >= dead)
    if t.size:
        assert kept[0] == t[0]
        # every dropped click falls inside the dead window of some kept click
        idx = np.searchsorted(kept, t, side="right") - 1
        assert np.all(t - kept[idx] < dead) | np.isin(t, kept).all()


def test_noiseless_qber_is_intrinsic():
    a = analytic_rates(FrameConfig(), 10.6, SILENT, NO_DARK)
    assert a.expected_qber == pytest.approx(0.0067, rel=1e-12)
    # dead time weights slots unevenly, so V is intrinsic only without it
    assert a.expected_visibility == pytest.approx(NO_DARK.intrinsic_visibility, abs=1e-4)
    ideal = dataclasses.replace(NO_DARK, dead_time_ns=0.0)
    assert analytic_rates(FrameConfig(), 10.6, SILENT, ideal).expected_visibility == pytest.approx(
        ideal.intrinsic_visibility, rel=1e-12)


@pytest.mark.parametrize("noise", [1e12, 1e14])
def test_noise_limits(noise):
    a = analytic_rates(FrameConfig(), 10.6, NoiseBreakdown.constant(noise), DetectorModel())
    assert a.expected_qber == pytest.approx(0.5, abs=1e-3)
    assert a.expected_visibility == pytest.approx(0.0, abs=1e-3)


@given(st.floats(0.0, 40.0), st.floats(0.0, 1e9))
@settings(max_examples=40, deadline=None)
def test_analytic_outputs_in_range(loss, noise):
    a = analytic_rates(FrameConfig(), loss, NoiseBreakdown.constant(noise), DetectorModel())
    assert 0.0 <= a.expected_qber <= 0.5
    assert 0.0 <= a.expected_visibility <= 1.0
    assert min(a.data.signal, a.data.noise, a.data.dark, a.sifted_rate) >= 0.0
    # a non-paralyzable detector never exceeds 1 / dead time (iterative solve to ~1e-8)
    assert a.data.total <= 1e9 / DetectorModel().dead_time_ns * (1 + 1e-8)


def monte_carlo_stats(loss, noise, det, n_frames, seed):
    cfg = FrameConfig(rng_seed=seed)
    sched, tags = simulate(cfg, det, loss, NoiseBreakdown.constant(noise), n_frames)
    sk = sift(sched, tags)
    errors = int(np.count_nonzero(alice_bits_at(sched, sk.indices) != sk.bits))
    return cfg, sched, tags, sk, errors


@pytest.mark.parametrize("loss,noise,det", [
    (10.6, 5e4, DetectorModel()),
    (0.0, 0.0, DetectorModel()),
    (3.0, 1e6, DetectorModel()),
    (5.0, 2e5, DetectorModel(dead_time_ns=100.0, intrinsic_visibility=0.9)),
])
def test_monte_carlo_agrees_with_analytic(loss, noise, det):
    n_frames = 160_000  # > 1e7 slots
    cfg, sched, tags, sk, errors = monte_carlo_stats(loss, noise, det, n_frames, seed=1)
    a = analytic_rates(cfg, loss, NoiseBreakdown.constant(noise), det)
    dur = tags.duration_ps * 1e-12
    n = len(sk)
    assert abs(errors / n - a.expected_qber) < 3 * math.sqrt(a.expected_qber * (1 - a.expected_qber) / n)
    v, v_sigma = sk.monitor.visibility()
    assert abs(v - a.expected_visibility) < 3 * v_sigma
    for measured, rate in ((tags.line(DATA).size, a.data.total),
                           (tags.line(MONITOR).size, a.monitor.total), (n, a.sifted_rate)):
        assert abs(measured - rate * dur) < 3 * math.sqrt(rate * dur)


def test_tagstream_binary_round_trip(tmp_path):
    _, tags = simulate(FrameConfig(rng_seed=3), DetectorModel(), 5.0, NoiseBreakdown.constant(1e5),
                       3000)
    tags.write(tmp_path / "t.bin")
    back = TagStream.read(tmp_path / "t.bin")
    assert np.array_equal(back.timestamps, tags.timestamps)
    assert np.array_equal(back.lines, tags.lines)
    assert (back.duration_ps, back.seed, back.config_hash, back.aligned) == (
        tags.duration_ps, tags.seed, tags.config_hash, tags.aligned)
    raw = tags.to_bytes()
    assert raw[:4] == b"QTAG"
    with pytest.raises(ValueError):
        TagStream.from_bytes(raw[:-1])
    with pytest.raises(ValueError):
        TagStream.from_bytes(b"XXXX" + raw[4:])


def test_tagstream_csv(tmp_path):
    _, tags = simulate(FrameConfig(rng_seed=3), DetectorModel(), 5.0, SILENT, 500)
    tags.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "timestamp_ps,line"
    assert len(lines) == len(tags) + 1


def stream_with_offset(offset_ns, jitter_ns=0.0, seed=21):
    return simulate(FrameConfig(rng_seed=seed), DetectorModel(), 6.0, NoiseBreakdown.constant(2e4),
                    20_000, offset_ns=offset_ns, jitter_ns=jitter_ns)


@pytest.mark.parametrize("offset", [0.0, 13.0, 417.0, 1000.5])
def test_sync_recovers_offset(offset):
    _, tags = stream_with_offset(offset)
    got = sync_recover(tags, 1024.0)
    err = (got - offset + 512.0) % 1024.0 - 512.0
    assert abs(err) <= 0.5


@pytest.mark.parametrize("offset", [13.0, 700.25])
def test_sync_with_jitter(offset):
    _, tags = stream_with_offset(offset, jitter_ns=0.2)
    err = (sync_recover(tags, 1024.0) - offset + 512.0) % 1024.0 - 512.0
    assert abs(err) <= 0.5


def test_sync_needs_tags():
    empty = TagStream(np.zeros(0, np.int64), np.zeros(0, np.uint8), 10**9)
    with pytest.raises(SyncError):
        sync_recover(empty, 1024.0)


def test_unaligned_stream_must_be_aligned_before_sift():
    sched, tags = stream_with_offset(13.0)
    assert not tags.aligned
    with pytest.raises(AlignmentRequiredError):
        sift(sched, tags)
    fixed = align(tags, sync_recover(tags, 1024.0))
    sk = sift(sched, fixed)
    errors = np.count_nonzero(alice_bits_at(sched, sk.indices) != sk.bits)
    assert len(sk) > 100 and errors / len(sk) < 0.05
