#!/usr/bin/env python3
"""
Tests for equivalent-time interleaving and reference-tone jitter
compensation
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from acquisition import (
    RateRatio,
    iq_jitter_align,
    iq_jitter_compensate,
    iq_jitter_estimate,
    interleave_plan,
    interleave_reconstruct,
    sample_positions,
)
from errors import CoprimalityError, ValidationError, WeakReferenceError
from signalcore import RealWaveform
from synth import pulse_shape

F_SCOPE = 100_000_000_000
F_SYM = 28_000_000_000


def test_plan_arithmetic_100g_28g_prbs7():
    """25/7 points per symbol, 700 GSa/s, 3175 samples over 7 repetitions"""
    plan = interleave_plan(F_SCOPE, F_SYM, 127)
    assert (plan.ratio.p, plan.ratio.q) == (25, 7)
    assert plan.ratio.points_per_symbol == Fraction(25, 7)
    assert float(plan.ratio.points_per_symbol) == pytest.approx(3.571, abs=1e-3)
    assert plan.required_samples == 3175
    assert plan.covered_repetitions == 7
    assert plan.effective_rate == 700_000_000_000
    assert plan.out_dt == Fraction(1, 700_000_000_000)
    assert not plan.degenerate


def test_plan_positions_are_a_permutation():
    plan = interleave_plan(F_SCOPE, F_SYM, 127)
    np.testing.assert_array_equal(np.sort(plan.positions), np.arange(3175))
    assert plan.positions[1] == 7
    assert plan.positions[454] == (454 * 7) % 3175


def test_positions_permute_slots_for_random_valid_plans():
    """u_k = (k q) mod (p L) visits every slot once whenever gcd(q, L) = 1"""
    rng = np.random.default_rng(23)
    checked = 0
    while checked < 40:
        p, q, length = (int(v) for v in rng.integers([1, 1, 1], [60, 20, 300]))
        if math.gcd(p, q) != 1 or math.gcd(q, length) != 1:
            continue
        plan = interleave_plan(p * 1_000_000, q * 1_000_000, length)
        assert (plan.ratio.p, plan.ratio.q) == (p, q)
        k = np.arange(p * length)
        np.testing.assert_array_equal(plan.positions, (k * q) % (p * length))
        np.testing.assert_array_equal(np.sort(plan.positions), k)
        checked += 1


def test_plan_accepts_rational_strings():
    plan = interleave_plan("100000000000", "28000000000/1", 127)
    assert (plan.ratio.p, plan.ratio.q) == (25, 7)


def test_coprimality_violation_reports_achievable_positions():
    with pytest.raises(CoprimalityError) as info:
        interleave_plan(F_SCOPE, F_SYM, 126)
    assert info.value.achievable_positions == 25 * 126 // 7
    assert isinstance(info.value, ValidationError)


def test_synchronous_ratio_is_degenerate():
    plan = interleave_plan(112_000_000_000, F_SYM, 127)
    assert (plan.ratio.p, plan.ratio.q) == (4, 1)
    assert plan.degenerate
    assert plan.effective_rate == 112_000_000_000


def test_float_rates_rejected():
    with pytest.raises(ValidationError):
        interleave_plan(100e9, F_SYM, 127)
    with pytest.raises(ValidationError):
        interleave_plan(F_SCOPE, F_SYM, 0)


def test_rate_ratio_must_be_reduced():
    with pytest.raises(ValidationError):
        RateRatio(50, 14)
    assert RateRatio.from_rates(F_SCOPE, F_SYM) == RateRatio(25, 7)


def test_plan_json_omits_large_permutations():
    small = interleave_plan(F_SCOPE, F_SYM, 127).to_dict()
    assert len(small['positions']) == 3175
    assert small['effective_rate_hz'] == '700000000000'
    large = interleave_plan(F_SCOPE, F_SYM, 8191).to_dict()
    assert 'positions' not in large
    assert large['required_samples'] == 25 * 8191


def test_interleave_reconstruction_is_exact(prbs7_qpsk_frame):
    """Reordered 100 GSa/s record equals direct evaluation at 700 GSa/s"""
    plan = interleave_plan(F_SCOPE, F_SYM, 127)
    scope = pulse_shape(prbs7_qpsk_frame, 0.35, 8, Fraction(25, 7), 7, F_SYM)
    assert scope.n == plan.required_samples

    dense = interleave_reconstruct(scope, plan)
    direct = pulse_shape(prbs7_qpsk_frame, 0.35, 8, 25, 1, F_SYM)
    assert dense.n == direct.n
    assert dense.rate == direct.rate == 700_000_000_000
    assert float(np.max(np.abs(dense.samples - direct.samples))) < 1e-12


def test_average_mode_over_repeated_blocks(prbs7_qpsk_frame):
    plan = interleave_plan(F_SCOPE, F_SYM, 127)
    scope = pulse_shape(prbs7_qpsk_frame, 0.35, 8, Fraction(25, 7), 7, F_SYM)
    tiled = np.tile(scope.samples, 3)
    averaged = interleave_reconstruct(tiled, plan, mode='average')
    strict = interleave_reconstruct(scope, plan)
    np.testing.assert_allclose(averaged.samples, strict.samples, atol=1e-15)


def test_reconstruct_length_and_mode_checks(prbs7_qpsk_frame):
    plan = interleave_plan(F_SCOPE, F_SYM, 127)
    with pytest.raises(ValidationError):
        interleave_reconstruct(np.zeros(3174), plan)
    with pytest.raises(ValidationError):
        interleave_reconstruct(np.zeros(3175 * 2 + 1), plan, mode='average')
    with pytest.raises(ValidationError):
        interleave_reconstruct(np.zeros(3175), plan, mode='nearest')


def test_sample_positions_in_symbols():
    plan = interleave_plan(F_SCOPE, F_SYM, 127)
    pos = sample_positions(plan)
    assert pos[0] == 0.0
    assert pos[1] == pytest.approx(7 / 25)
    assert np.all((pos >= 0) & (pos < 127))


# ---------------------------------------------------------------------------
# Jitter compensation
# ---------------------------------------------------------------------------

DT = 10e-12  # 100 GSa/s
N_SAMPLES = 1000  # 10 ns: 10 reference cycles, 100 signal cycles
F_REF = 1e9
F_SIG = 10e9


def _records(delays):
    t = np.arange(N_SAMPLES) * DT
    refs = [RealWaveform(np.cos(2 * np.pi * F_REF * (t - d)), DT) for d in delays]
    sigs = [RealWaveform(np.sin(2 * np.pi * F_SIG * (t - d)), DT) for d in delays]
    return refs, sigs


def test_jitter_estimate_sign_and_centering():
    """A record delayed by d relative to the median reports +d"""
    refs, _ = _records([0.0, 2e-12, -1e-12])
    est = iq_jitter_estimate(refs, F_REF)
    np.testing.assert_allclose(est.per_record_dt, [0.0, 2e-12, -1e-12], atol=1e-18)
    assert est.ambiguity_range == pytest.approx(0.5e-9)
    assert not est.wrap_risk.any()
    np.testing.assert_allclose(est.amplitudes, 1.0, rtol=1e-9)


def test_jitter_compensation_100_records():
    """+/-1 ps jitter: residual timing < 10 fs rms and amplitude kept within 0.1%"""
    rng = np.random.default_rng(11)
    delays = rng.uniform(-1e-12, 1e-12, 100)
    refs, sigs = _records(delays)
    est = iq_jitter_estimate(refs, F_REF, threads=4)

    truth = delays - np.median(delays)
    residual_rms = float(np.sqrt(np.mean((est.per_record_dt - truth) ** 2)))
    raw_rms = float(np.sqrt(np.mean(truth ** 2)))
    assert residual_rms < 10e-15
    assert residual_rms * 100 < raw_rms

    compensated = iq_jitter_compensate(sigs, est)
    t = np.arange(N_SAMPLES) * DT
    reference = np.sin(2 * np.pi * F_SIG * (t - np.median(delays)))
    amplitude = np.sqrt(2 * np.mean(compensated.samples ** 2))
    assert amplitude == pytest.approx(1.0, rel=1e-3)
    np.testing.assert_allclose(compensated.samples, reference, atol=1e-6)


def test_threads_do_not_change_estimates():
    rng = np.random.default_rng(3)
    refs, _ = _records(rng.uniform(-1e-12, 1e-12, 16))
    serial = iq_jitter_estimate(refs, F_REF, threads=1)
    pooled = iq_jitter_estimate(refs, F_REF, threads=4)
    np.testing.assert_array_equal(serial.per_record_dt, pooled.per_record_dt)


def test_non_integer_cycle_records_use_taper():
    """10.5 reference cycles: the tapered fit still resolves relative delays"""
    t = np.arange(1050) * DT
    delays = [0.0, 0.8e-12, -0.6e-12]
    refs = [RealWaveform(np.cos(2 * np.pi * F_REF * (t - d)), DT) for d in delays]
    est = iq_jitter_estimate(refs, F_REF)
    np.testing.assert_allclose(est.per_record_dt, delays, atol=50e-15)


def test_wrap_risk_flagged_near_ambiguity():
    refs, _ = _records([0.0, 0.0, 0.3e-9])
    est = iq_jitter_estimate(refs, F_REF)
    np.testing.assert_array_equal(est.wrap_risk, [False, False, True])


def test_compensation_never_worse_than_plain_average():
    t = np.arange(N_SAMPLES) * DT
    for seed, spread in [(1, 0.1e-12), (2, 1e-12), (3, 5e-12), (4, 20e-12)]:
        delays = np.random.default_rng(seed).uniform(-spread, spread, 32)
        refs, sigs = _records(delays)
        truth = np.sin(2 * np.pi * F_SIG * (t - np.median(delays)))
        compensated = iq_jitter_compensate(sigs, iq_jitter_estimate(refs, F_REF))
        plain = np.mean([s.samples for s in sigs], axis=0)
        err_comp = float(np.sqrt(np.mean((compensated.samples - truth) ** 2)))
        err_plain = float(np.sqrt(np.mean((plain - truth) ** 2)))
        assert err_comp <= err_plain


def test_delay_past_half_period_wraps_to_opposite_sign():
    """0.6 / f_ref late reads as 0.4 / f_ref early and is flagged"""
    refs, _ = _records([0.0, 0.0, 0.6e-9])
    est = iq_jitter_estimate(refs, F_REF)
    assert est.per_record_dt[2] == pytest.approx(-0.4e-9, abs=1e-15)
    assert est.wrap_risk[2]
    assert not est.wrap_risk[:2].any()


def test_weak_reference_rejected():
    rng = np.random.default_rng(5)
    t = np.arange(N_SAMPLES) * DT
    x = 1e-3 * np.cos(2 * np.pi * F_REF * t) + rng.standard_normal(N_SAMPLES)
    with pytest.raises(WeakReferenceError):
        iq_jitter_estimate([RealWaveform(x, DT)], F_REF)


def test_reference_needs_eight_cycles_below_nyquist():
    short = RealWaveform(np.cos(2 * np.pi * F_REF * np.arange(500) * DT), DT)
    with pytest.raises(ValidationError):
        iq_jitter_estimate([short], F_REF)
    refs, _ = _records([0.0])
    with pytest.raises(ValidationError):
        iq_jitter_estimate(refs, 60e9)
    with pytest.raises(ValidationError):
        iq_jitter_estimate([], F_REF)


def test_align_requires_matching_counts():
    refs, sigs = _records([0.0, 1e-12])
    est = iq_jitter_estimate(refs, F_REF)
    with pytest.raises(ValidationError):
        iq_jitter_align(sigs[:1], est)
