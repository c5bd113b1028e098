#!/usr/bin/env python3
"""
Tests for forward/reverse wave separation on a lossless line
"""

import numpy as np
import pytest

from errors import DegenerateGeometryError, ValidationError
from signalcore import RealWaveform, Spectrum, forward_transform, inverse_transform
from wavesplit import LineMeasurement, propagate, split_waves, synthesize_line

N = 256
DF = 100e6  # bin 100 is 10 GHz
DT = 1.0 / (N * DF)
VELOCITY = 2e8


def _grid(values):
    return Spectrum(np.broadcast_to(values, N // 2 + 1).astype(complex), DF, N, True)


def test_pure_forward_wave_has_no_reverse_component():
    """Positions 1 cm apart: the 10 GHz bin is a half-wavelength and gets masked"""
    forward = _grid(1.0)
    reverse = _grid(0.0)
    m = synthesize_line(forward, reverse, [0.0, 0.01], VELOCITY)
    result = split_waves(m)

    assert result.singular_mask[0]
    assert result.singular_mask[100]
    assert result.condition[100] > 1e3
    assert np.isnan(result.forward.bins[100])
    assert np.isnan(result.reverse.bins[0])

    ok = ~result.singular_mask
    np.testing.assert_allclose(result.forward.bins[ok], 1.0, atol=1e-9)
    np.testing.assert_allclose(result.reverse.bins[ok], 0.0, atol=1e-9)


def test_three_position_recovery():
    g = 0.3 * np.exp(1j * np.pi / 4)
    m = synthesize_line(_grid(1.0), _grid(g), [0.0, 0.007, 0.019], VELOCITY)
    result = split_waves(m)
    ok = ~result.singular_mask
    assert ok.sum() > 100
    np.testing.assert_allclose(result.forward.bins[ok], 1.0, atol=1e-10)
    np.testing.assert_allclose(result.reverse.bins[ok], g, atol=1e-10)
    assert np.all(result.residual_norm[ok] < 1e-10)
    assert np.all(np.isnan(result.residual_norm[~ok]))


def test_propagate_reproduces_measurements():
    g = 0.3 * np.exp(1j * np.pi / 4)
    positions = [0.0, 0.007, 0.019]
    m = synthesize_line(_grid(1.0), _grid(g), positions, VELOCITY)
    result = split_waves(m)
    ok = ~result.singular_mask

    at_middle = propagate(result, positions[1])
    np.testing.assert_allclose(at_middle.bins[ok], m.spectra[1].bins[ok], atol=1e-10)
    at_origin = propagate(result, 0.0)
    np.testing.assert_allclose(at_origin.bins[ok], 1.0 + g, atol=1e-10)
    assert np.all(np.isnan(at_origin.bins[~ok]))


def test_forward_only_magnitude_is_position_independent():
    m = synthesize_line(_grid(2.0), _grid(0.0), [0.0, 0.005, 0.013], VELOCITY)
    result = split_waves(m)
    ok = ~result.singular_mask
    for z in (0.0, 0.021, -0.4):
        np.testing.assert_allclose(np.abs(propagate(result, z).bins[ok]), 2.0, atol=1e-9)


def test_time_domain_pulse_survives_separation():
    n = np.arange(N)
    pulse = RealWaveform(np.exp(-0.5 * ((n - 60) / 4.0) ** 2), DT)
    forward = forward_transform(pulse)
    reverse = forward.replace_bins(0.5 * forward.bins)
    m = synthesize_line(forward, reverse, [0.0, 0.007, 0.019], VELOCITY)
    result = split_waves(m)
    np.testing.assert_array_equal(np.flatnonzero(result.singular_mask), [0])

    recovered = inverse_transform(result.filled().forward)
    assert int(np.argmax(recovered.samples)) == 60
    np.testing.assert_allclose(recovered.samples, pulse.samples - pulse.samples.mean(), atol=1e-9)


def _random_waves(rng):
    shape = N // 2 + 1
    f = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    g = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return Spectrum(f, DF, N, True), Spectrum(g, DF, N, True)


def test_random_waves_round_trip():
    rng = np.random.default_rng(17)
    for _ in range(10):
        forward, reverse = _random_waves(rng)
        positions = np.sort(rng.uniform(0.0, 0.05, 3))
        result = split_waves(synthesize_line(forward, reverse, positions, VELOCITY))
        ok = ~result.singular_mask
        scale = np.maximum(np.abs(forward.bins), np.abs(reverse.bins))[ok]
        assert np.all(np.abs(result.forward.bins[ok] - forward.bins[ok]) <= 1e-9 * scale)
        assert np.all(np.abs(result.reverse.bins[ok] - reverse.bins[ok]) <= 1e-9 * scale)


def test_third_position_does_not_raise_residual():
    rng = np.random.default_rng(29)
    forward, reverse = _random_waves(rng)
    two = split_waves(synthesize_line(forward, reverse, [0.0, 0.007], VELOCITY))
    three = split_waves(synthesize_line(forward, reverse, [0.0, 0.007, 0.019], VELOCITY))
    ok = ~two.singular_mask & ~three.singular_mask
    assert ok.sum() > 100
    assert np.all(three.residual_norm[ok] <= two.residual_norm[ok] + 1e-12)


def test_measurement_validation():
    spec = _grid(1.0)
    with pytest.raises(ValidationError):
        LineMeasurement([0.0], [spec], VELOCITY)
    with pytest.raises(ValidationError, match="Duplicate"):
        LineMeasurement([0.0, 0.01, 0.01], [spec] * 3, VELOCITY)
    with pytest.raises(ValidationError):
        LineMeasurement([0.0, 0.01], [spec], VELOCITY)
    with pytest.raises(ValidationError):
        LineMeasurement([0.0, 0.01], [spec] * 2, 0.0)
    other = Spectrum(np.ones(65, dtype=complex), DF, 128, True)
    with pytest.raises(ValidationError, match="Grid mismatch"):
        LineMeasurement([0.0, 0.01], [spec, other], VELOCITY)


def test_every_bin_degenerate_raises():
    m = synthesize_line(_grid(1.0), _grid(0.0), [0.0, 0.01], 1e20)
    with pytest.raises(DegenerateGeometryError):
        split_waves(m)


def test_condition_threshold_must_be_at_least_one():
    m = synthesize_line(_grid(1.0), _grid(0.0), [0.0, 0.01], VELOCITY)
    with pytest.raises(ValidationError):
        split_waves(m, cond_threshold=0.5)
