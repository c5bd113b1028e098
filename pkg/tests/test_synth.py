#!/usr/bin/env python3
"""
Tests for ground-truth synthesis: PRBS, Gray constellations, RRC shaping,
AWGN and balanced photodiode pairs
"""

import math
from fractions import Fraction

import numpy as np
import pytest

from errors import ValidationError
from signalcore import RealWaveform, forward_transform
from synth import (
    PRBS_TAPS,
    QAM16,
    QPSK,
    SNR_NO_NOISE,
    MismatchSpec,
    PrbsSpec,
    SymbolFrame,
    add_awgn,
    impulse_stimulus,
    map_symbols,
    matched_filter,
    modulation_by_name,
    pattern_samples,
    prbs_generate,
    pulse_shape,
    rrc_pulse,
    synth_balanced_pair,
    two_pole_response,
)


def _longest_run(bits, value):
    padded = np.concatenate(([0], (bits == value).astype(np.int8), [0]))
    edges = np.flatnonzero(np.diff(padded))
    return int(np.max(edges[1::2] - edges[::2]))


@pytest.mark.parametrize("degree", [7, 9])
def test_prbs_period_balance_and_runs(degree):
    """Maximal length, 2^(d-1) ones per period, longest runs d and d-1"""
    spec = PrbsSpec(degree)
    period = spec.period
    bits = prbs_generate(spec, 2 * period)

    np.testing.assert_array_equal(bits[:period], bits[period:])
    # no shorter period divides 2^d - 1 (127 is prime, 511 = 7 * 73)
    for divisor in (d for d in range(1, period) if period % d == 0):
        assert not np.array_equal(bits[:period - divisor], bits[divisor:period]), \
            f"❌ PRBS{degree} repeats after {divisor} bits"

    one_period = bits[:period]
    assert int(one_period.sum()) == 2 ** (degree - 1)
    assert period - int(one_period.sum()) == 2 ** (degree - 1) - 1
    assert _longest_run(bits, 1) == degree
    assert _longest_run(bits, 0) == degree - 1


def test_prbs7_balance_64_63():
    bits = prbs_generate(PrbsSpec(7), 127)
    assert (int(bits.sum()), int(127 - bits.sum())) == (64, 63)


@pytest.mark.parametrize("degree", sorted(PRBS_TAPS))
def test_prbs_obeys_tap_recurrence(degree):
    """o[k] = o[k-a] XOR o[k-b] after the initial register"""
    spec = PrbsSpec(degree, seed=0b1011)
    a, b = spec.taps
    bits = prbs_generate(spec, 3 * degree + 50)
    k = np.arange(degree, bits.size)
    np.testing.assert_array_equal(bits[k], bits[k - a] ^ bits[k - b])


def test_prbs_initial_bits_are_seed_msb_first():
    bits = prbs_generate(PrbsSpec(7, seed=0b1000001), 7)
    np.testing.assert_array_equal(bits, [1, 0, 0, 0, 0, 0, 1])
    np.testing.assert_array_equal(prbs_generate(PrbsSpec(7), 7), np.ones(7))


def test_prbs_rejects_bad_parameters():
    with pytest.raises(ValidationError):
        PrbsSpec(8)
    with pytest.raises(ValidationError):
        PrbsSpec(7, seed=0)
    with pytest.raises(ValidationError):
        PrbsSpec(7, seed=1 << 7)
    with pytest.raises(ValidationError):
        prbs_generate(PrbsSpec(7), 0)


@pytest.mark.parametrize("mod", [QPSK, QAM16], ids=lambda m: m.name)
def test_constellation_unit_average_power(mod):
    assert float(np.mean(np.abs(mod.constellation) ** 2)) == pytest.approx(1.0, rel=1e-12)
    assert mod.order == len(mod.constellation)


def test_qam16_peak_power():
    assert QAM16.peak_power == pytest.approx(1.8, rel=1e-12)


@pytest.mark.parametrize("mod", [QPSK, QAM16], ids=lambda m: m.name)
def test_axis_levels_are_gray(mod):
    """Neighbouring levels on an axis differ in exactly one bit"""
    order = np.argsort(mod.axis_levels)
    for c1, c2 in zip(order[:-1], order[1:]):
        assert bin(int(c1) ^ int(c2)).count('1') == 1


def test_qpsk_mapping_table():
    frame = map_symbols([0, 0, 0, 1, 1, 0, 1, 1], QPSK)
    expected = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2)
    np.testing.assert_allclose(frame.symbols, expected, atol=1e-15)
    np.testing.assert_array_equal(frame.source_bits, [0, 0, 0, 1, 1, 0, 1, 1])


def test_qam16_mapping_corners():
    frame = map_symbols([0, 0, 0, 0, 1, 1, 1, 1, 1, 0, 1, 0], QAM16)
    expected = np.array([-3 - 3j, 1 + 1j, 3 + 3j]) / math.sqrt(10)
    np.testing.assert_allclose(frame.symbols, expected, atol=1e-15)


def test_map_symbols_validates_bits():
    with pytest.raises(ValidationError):
        map_symbols([0, 1, 1], QPSK)
    with pytest.raises(ValidationError):
        map_symbols([0, 2], QPSK)
    with pytest.raises(ValidationError):
        SymbolFrame([1 + 1j], QPSK, source_bits=[0, 1, 1, 0])


def test_modulation_lookup():
    assert modulation_by_name("QPSK") is QPSK
    assert modulation_by_name("16-QAM") is QAM16
    with pytest.raises(ValidationError):
        modulation_by_name("64qam")


def test_rrc_unit_energy_and_singular_points():
    """Pulse has unit energy and stays continuous at t = 0 and 1/(4 beta)"""
    beta = 0.25
    t = np.arange(-60, 60, 1 / 64)
    energy = float(np.sum(rrc_pulse(t, beta) ** 2) / 64)
    assert energy == pytest.approx(1.0, abs=2e-3)

    edge = 1 / (4 * beta)
    near = rrc_pulse(np.array([edge, edge + 1e-7, 0.0, 1e-7]), beta)
    assert near[0] == pytest.approx(near[1], abs=1e-5)
    assert near[2] == pytest.approx(near[3], abs=1e-5)


def test_rrc_rejects_bad_rolloff():
    with pytest.raises(ValidationError):
        rrc_pulse(np.zeros(3), 0.0)
    with pytest.raises(ValidationError):
        rrc_pulse(np.zeros(3), 1.5)


def test_pattern_samples_for_interleave_grid():
    """127 symbols at 25/7 samples/symbol close after 7 repetitions"""
    assert pattern_samples(127, Fraction(25, 7)) == 3175
    assert pattern_samples(127, 4) == 508
    with pytest.raises(ValidationError):
        pattern_samples(127, Fraction(25, 7), repetitions=2)


def test_pulse_shape_grid_and_rate(prbs7_qpsk_frame):
    w = pulse_shape(prbs7_qpsk_frame, 0.35, 8, "25/7", symbol_rate=28_000_000_000)
    assert w.n == 3175
    assert w.rate == Fraction(100_000_000_000)
    assert w.dt == pytest.approx(1e-11, rel=1e-15)


def test_pulse_shape_span_minimum(prbs7_qpsk_frame):
    with pytest.raises(ValidationError):
        pulse_shape(prbs7_qpsk_frame, 0.35, 3, 4)


def test_rrc_then_matched_filter_is_nyquist(prbs7_qpsk_frame):
    """Matched-filter output at symbol instants returns the symbols"""
    sps = 8
    shaped = pulse_shape(prbs7_qpsk_frame, 0.35, 24, sps)
    filtered = matched_filter(shaped, 0.35, 24, sps)
    at_symbols = filtered.samples[::sps]
    np.testing.assert_allclose(at_symbols, prbs7_qpsk_frame.symbols, atol=2e-2)


def test_matched_filter_needs_integer_sps(prbs7_qpsk_frame):
    shaped = pulse_shape(prbs7_qpsk_frame, 0.35, 8, "25/7")
    with pytest.raises(ValidationError):
        matched_filter(shaped, 0.35, 8, 3.5)


def test_awgn_snr_and_determinism(prbs7_qpsk_frame):
    bits = np.random.default_rng(1).integers(0, 2, 200_000, dtype=np.uint8)
    frame = map_symbols(bits, QPSK)
    noisy = add_awgn(frame, 10.0, seed=5)
    noise_power = float(np.mean(np.abs(noisy.symbols - frame.symbols) ** 2))
    assert noise_power == pytest.approx(0.1, rel=0.02)

    again = add_awgn(frame, 10.0, seed=5)
    np.testing.assert_array_equal(noisy.symbols, again.symbols)
    assert add_awgn(prbs7_qpsk_frame, SNR_NO_NOISE, seed=5) is prbs7_qpsk_frame


def test_awgn_real_input_gets_real_noise():
    w = RealWaveform(np.sin(np.arange(1000) / 10), 1.0)
    noisy = add_awgn(w, 20.0, seed=3)
    assert isinstance(noisy, RealWaveform)
    with pytest.raises(ValidationError):
        add_awgn(w, float('nan'), seed=3)


def test_mismatch_response_ripple():
    """ripple(f) = 1 + a sin(2 pi f / ripple_freq)"""
    spec = MismatchSpec(gain=2.0, ripple_amp=0.01, ripple_freq=10e9)
    h = spec.response(np.array([0.0, 2.5e9, 7.5e9]))
    np.testing.assert_allclose(h, [2.0, 2.02, 1.98], rtol=1e-12)
    with pytest.raises(ValidationError):
        MismatchSpec(gain=0.0)


def test_two_pole_response_dc_gain_and_bandwidth():
    """Unit DC gain and -3 dB at the requested bandwidth"""
    n, dt = 65536, 1 / 4096
    h = two_pole_response(dt, n, bandwidth_hz=1.0)
    assert float(np.sum(h.samples)) == pytest.approx(1.0, rel=1e-3)
    spec = forward_transform(h)
    at_bw = abs(spec.bins[16])  # df = 1/16 Hz
    assert at_bw == pytest.approx(1 / math.sqrt(2), rel=1e-2)


def test_balanced_pair_applies_mismatch():
    dt = 1e-11
    stim = impulse_stimulus(1024, dt)
    h = two_pole_response(dt, 1024, 20e9)
    vp, vn = synth_balanced_pair(stim, h, MismatchSpec())
    np.testing.assert_allclose(vn.samples, vp.samples, atol=1e-15)

    vp2, vn2 = synth_balanced_pair(stim, h, MismatchSpec(gain=2.0))
    np.testing.assert_allclose(vn2.samples, 2 * vp2.samples, atol=1e-14)
    assert vp.samples.max() > 0


def test_balanced_pair_grid_mismatch():
    with pytest.raises(ValidationError):
        synth_balanced_pair(impulse_stimulus(64, 1.0), two_pole_response(2.0, 64, 0.1), MismatchSpec())
