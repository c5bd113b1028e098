"""
Ground-truth signal synthesis.

Everything the analysis modules are checked against is generated here:
PRBS patterns, Gray-mapped QPSK/16-QAM frames, periodic root-raised-cosine
pulse shaping on exact rational sample grids, AWGN, and balanced
photodiode response pairs with controlled mismatch.

All randomness is local to a call and driven by an explicit seed.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import structlog

from errors import ValidationError
from signalcore import (
    ComplexWaveform,
    RealWaveform,
    delay_factor,
    exact_rational,
)

logger = structlog.get_logger(__name__)

# Feedback taps per degree (x^a + x^b + 1), ITU-T O.150 style
PRBS_TAPS = {
    7: (7, 6),
    9: (9, 5),
    15: (15, 14),
    23: (23, 18),
    31: (31, 28),
}

SNR_NO_NOISE = math.inf
MIN_SPAN_SYMBOLS = 4


# ---------------------------------------------------------------------------
# PRBS
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PrbsSpec:
    """
    Maximal-length LFSR pattern definition.

    Attributes:
        degree: register length, one of 7, 9, 15, 23, 31
        seed: initial register state (nonzero, fits in `degree` bits);
              defaults to all ones
    """

    degree: int = 7
    seed: Optional[int] = None

    def __post_init__(self):
        if self.degree not in PRBS_TAPS:
            raise ValidationError(
                f"Unsupported PRBS degree {self.degree}; choose from {sorted(PRBS_TAPS)}")
        seed = self.mask if self.seed is None else int(self.seed)
        if seed == 0:
            raise ValidationError("PRBS seed must be nonzero")
        if seed < 0 or seed > self.mask:
            raise ValidationError(f"PRBS seed {seed} does not fit in {self.degree} bits")
        object.__setattr__(self, 'seed', seed)

    @property
    def taps(self):
        return PRBS_TAPS[self.degree]

    @property
    def mask(self):
        return (1 << self.degree) - 1

    @property
    def period(self):
        return (1 << self.degree) - 1


def prbs_generate(spec, n):
    """
    First n output bits of the Fibonacci LFSR, MSB (last stage) first.

    The output obeys o[k] = o[k-a] XOR o[k-b]; the first `degree` bits are
    the initial register read from the last stage down. Blocks of b bits are
    produced at once since each depends only on bits at least b back.
    """
    if n < 1:
        raise ValidationError(f"PRBS length must be at least 1, got {n}")
    a, b = spec.taps
    deg = spec.degree
    total = max(n, deg)
    out = np.empty(total, dtype=np.uint8)
    out[:deg] = [(spec.seed >> (deg - 1 - i)) & 1 for i in range(deg)]

    k = deg
    while k < total:
        step = min(b, total - k)
        out[k:k + step] = out[k - a:k - a + step] ^ out[k - b:k - b + step]
        k += step
    return out[:n]


# ---------------------------------------------------------------------------
# Constellations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ModulationId:
    """
    Square Gray-mapped constellation.

    axis_levels[c] is the per-axis level for Gray code value c; a symbol
    index is (i_code << bits_per_axis) | q_code, so index order equals the
    MSB-first bit value of the symbol.
    """

    name: str
    bits_per_symbol: int
    axis_levels: np.ndarray
    constellation: np.ndarray = field(init=False)

    def __post_init__(self):
        levels = np.asarray(self.axis_levels, dtype=np.float64)
        levels.setflags(write=False)
        object.__setattr__(self, 'axis_levels', levels)
        codes = np.arange(self.order)
        i_code = codes >> self.bits_per_axis
        q_code = codes & ((1 << self.bits_per_axis) - 1)
        points = levels[i_code] + 1j * levels[q_code]
        points.setflags(write=False)
        object.__setattr__(self, 'constellation', points)

    @property
    def order(self):
        return 1 << self.bits_per_symbol

    @property
    def bits_per_axis(self):
        return self.bits_per_symbol // 2

    @property
    def peak_power(self):
        return float(np.max(np.abs(self.constellation) ** 2))


QPSK = ModulationId('QPSK', 2, np.array([1.0, -1.0]) / math.sqrt(2))
# per-axis Gray: 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3
QAM16 = ModulationId('QAM16', 4, np.array([-3.0, -1.0, 3.0, 1.0]) / math.sqrt(10))

MODULATIONS = {'qpsk': QPSK, 'qam16': QAM16, '16qam': QAM16}


def modulation_by_name(name):
    try:
        return MODULATIONS[name.strip().lower().replace('-', '')]
    except KeyError:
        raise ValidationError(f"Unknown modulation {name!r}; use qpsk or qam16") from None


@dataclass(frozen=True, eq=False)
class SymbolFrame:
    """
    Complex constellation points plus the modulation that produced them.

    Attributes:
        symbols: complex symbols, unit-average-power convention
        mod: ModulationId
        source_bits: optional transmitted bits (len = symbols * bits_per_symbol)
    """

    symbols: np.ndarray
    mod: ModulationId
    source_bits: Optional[np.ndarray] = None

    def __post_init__(self):
        symbols = np.array(self.symbols, dtype=np.complex128, copy=True)
        if symbols.ndim != 1:
            raise ValidationError("Symbol frame must be 1-D")
        if not np.all(np.isfinite(symbols)):
            raise ValidationError("Symbol frame contains non-finite values")
        symbols.setflags(write=False)
        object.__setattr__(self, 'symbols', symbols)
        if self.source_bits is not None:
            bits = np.array(self.source_bits, dtype=np.uint8, copy=True)
            if bits.size != symbols.size * self.mod.bits_per_symbol:
                raise ValidationError(
                    f"{bits.size} source bits do not match {symbols.size} "
                    f"{self.mod.name} symbols")
            bits.setflags(write=False)
            object.__setattr__(self, 'source_bits', bits)

    @property
    def n_symbols(self):
        return self.symbols.size


def bits_to_int(bits):
    """Rows of bits (MSB first) to integers"""
    bits = np.asarray(bits, dtype=np.int64)
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1)
    return bits @ weights


def int_to_bits(values, width):
    """Integers to rows of `width` bits, MSB first"""
    values = np.asarray(values, dtype=np.int64)
    shifts = np.arange(width - 1, -1, -1)
    return ((values[:, None] >> shifts) & 1).astype(np.uint8)


def map_symbols(bits, mod):
    """Gray-map a bit stream onto the constellation of `mod`"""
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.ndim != 1 or bits.size % mod.bits_per_symbol != 0:
        raise ValidationError(
            f"{bits.size} bits is not a multiple of {mod.bits_per_symbol} ({mod.name})")
    if np.any(bits > 1):
        raise ValidationError("Bit stream may only contain 0 and 1")
    index = bits_to_int(bits.reshape(-1, mod.bits_per_symbol))
    return SymbolFrame(mod.constellation[index], mod, bits)


# ---------------------------------------------------------------------------
# Pulse shaping
# ---------------------------------------------------------------------------

def rrc_pulse(t, rolloff):
    """
    Unit-energy root-raised-cosine pulse, t in symbol periods.

    Handles the removable singularities at t = 0 and |t| = 1/(4 rolloff).
    """
    if not 0 < rolloff <= 1:
        raise ValidationError(f"Roll-off must lie in (0, 1], got {rolloff!r}")
    t = np.asarray(t, dtype=np.float64)
    b = rolloff
    h = np.empty_like(t)

    at_zero = np.abs(t) < 1e-12
    at_edge = np.abs(np.abs(t) - 1.0 / (4 * b)) < 1e-12
    regular = ~(at_zero | at_edge)

    h[at_zero] = 1.0 - b + 4 * b / np.pi
    h[at_edge] = (b / np.sqrt(2)) * ((1 + 2 / np.pi) * np.sin(np.pi / (4 * b))
                                     + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b)))
    tr = t[regular]
    h[regular] = ((np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b)))
                  / (np.pi * tr * (1 - (4 * b * tr) ** 2)))
    return h


def pattern_samples(pattern_len, samples_per_symbol, repetitions=None):
    """
    Sample count for `repetitions` periods of an L-symbol pattern at p/q
    samples per symbol. With no repetitions given, the fewest periods that
    yield a whole number of samples are used (q / gcd(L p, q)).
    """
    sps = exact_rational(samples_per_symbol, "samples per symbol")
    p, q = sps.numerator, sps.denominator
    if repetitions is None:
        repetitions = q // math.gcd(pattern_len * p, q)
    if repetitions < 1 or (pattern_len * p * repetitions) % q:
        raise ValidationError(
            f"{repetitions} repetitions of {pattern_len} symbols at {sps} samples/symbol "
            "is not a whole number of samples")
    return pattern_len * p * repetitions // q


def pulse_shape(frame, rolloff, span_symbols, samples_per_symbol, repetitions=None,
                symbol_rate=1):
    """
    Periodic root-raised-cosine shaping of a symbol frame.

    The frame is treated as one period of a repeating pattern and the
    continuous waveform is evaluated on an exact rational grid of p/q samples
    per symbol. Sample k sits at symbol time ((k q) mod (p L)) / p, computed
    in integers, so two grids that share a sampling instant produce
    bit-identical values there.

    Args:
        frame: SymbolFrame (one pattern period of L symbols)
        rolloff: RRC roll-off in (0, 1]
        span_symbols: filter support in symbols (>= 4)
        samples_per_symbol: exact rational p/q (int, Fraction or "p/q")
        repetitions: pattern periods to cover (default: fewest giving whole samples)
        symbol_rate: exact symbol rate in Baud, sets the output dt

    Returns:
        ComplexWaveform
    """
    if span_symbols < MIN_SPAN_SYMBOLS:
        raise ValidationError(f"Filter span must be at least {MIN_SPAN_SYMBOLS} symbols")
    sps = exact_rational(samples_per_symbol, "samples per symbol")
    f_sym = exact_rational(symbol_rate, "symbol rate")
    p, q = sps.numerator, sps.denominator
    symbols = frame.symbols
    n_sym = symbols.size
    if n_sym == 0:
        raise ValidationError("Cannot shape an empty frame")

    n_samples = pattern_samples(n_sym, sps, repetitions)
    k = np.arange(n_samples, dtype=np.int64)
    t_sym = ((k * q) % (p * n_sym)) / p
    base = np.floor(t_sym).astype(np.int64)

    half_span = span_symbols / 2
    reach = int(math.ceil(half_span)) + 1
    out = np.zeros(n_samples, dtype=np.complex128)
    for j in range(-reach, reach + 1):
        m = base + j
        d = t_sym - m
        g = rrc_pulse(d, rolloff)
        g[np.abs(d) > half_span] = 0.0
        out += g * symbols[m % n_sym]

    rate = sps * f_sym
    return ComplexWaveform(out, float(1 / rate), 0.0, rate)


def matched_filter(w, rolloff, span_symbols, samples_per_symbol):
    """
    Receive-side RRC applied by circular convolution (integer samples per
    symbol). Taps are scaled by 1/sps so RRC then matched filter gives a
    unit-peak raised cosine.
    """
    sps = int(samples_per_symbol)
    if sps != samples_per_symbol or sps < 1:
        raise ValidationError("Matched filter needs an integer samples-per-symbol")
    half = (span_symbols * sps) // 2
    if 2 * half + 1 > w.n:
        raise ValidationError("Matched filter span exceeds the record length")
    offsets = np.arange(-half, half + 1)
    taps = rrc_pulse(offsets / sps, rolloff) / sps
    kernel = np.zeros(w.n, dtype=np.complex128)
    np.add.at(kernel, offsets % w.n, taps)
    filtered = np.fft.ifft(np.fft.fft(w.samples) * np.fft.fft(kernel))
    return ComplexWaveform(filtered, w.dt, w.t0, w.rate)


# ---------------------------------------------------------------------------
# Impairments
# ---------------------------------------------------------------------------

def add_awgn(x, snr_db, seed):
    """
    Add white Gaussian noise at the given SNR relative to the measured mean
    signal power. Complex inputs get circular noise; real inputs real noise.

    Args:
        x: ComplexWaveform, RealWaveform or SymbolFrame
        snr_db: SNR in dB; SNR_NO_NOISE (+inf) returns the input unchanged
        seed: integer seed for a call-local generator

    Returns:
        Same type as x
    """
    values = x.symbols if isinstance(x, SymbolFrame) else x.samples
    if not np.all(np.isfinite(values)):
        raise ValidationError("Cannot add noise to non-finite input")
    if snr_db == SNR_NO_NOISE:
        return x
    if not np.isfinite(snr_db):
        raise ValidationError(f"SNR must be finite or +inf, got {snr_db!r}")

    rng = np.random.default_rng(seed)
    power = float(np.mean(np.abs(values) ** 2))
    variance = power / 10 ** (snr_db / 10)
    n = values.size
    if np.iscomplexobj(values):
        noise = np.sqrt(variance / 2) * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
    else:
        noise = np.sqrt(variance) * rng.standard_normal(n)
    noisy = values + noise

    if isinstance(x, SymbolFrame):
        return SymbolFrame(noisy, x.mod, x.source_bits)
    return x.replace_samples(noisy)


# ---------------------------------------------------------------------------
# Balanced photodiode pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MismatchSpec:
    """
    Negative-arm mismatch relative to the positive arm.

    Attributes:
        gain: relative amplitude of the negative arm (> 0)
        delay: extra delay of the negative arm, seconds
        ripple_amp: magnitude ripple depth (>= 0)
        ripple_freq: frequency period of the ripple, Hz;
                     ripple(f) = 1 + ripple_amp * sin(2 pi f / ripple_freq)
    """

    gain: float = 1.0
    delay: float = 0.0
    ripple_amp: float = 0.0
    ripple_freq: float = 10e9

    def __post_init__(self):
        if not self.gain > 0:
            raise ValidationError(f"Mismatch gain must be positive, got {self.gain!r}")
        if not self.ripple_amp >= 0:
            raise ValidationError("Ripple amplitude must be non-negative")
        if not self.ripple_freq > 0:
            raise ValidationError("Ripple frequency period must be positive")

    def response(self, freqs):
        """Negative-arm transfer relative to the positive arm"""
        h = self.gain * delay_factor(freqs, self.delay)
        if self.ripple_amp:
            h = h * (1 + self.ripple_amp * np.sin(2 * np.pi * np.asarray(freqs) / self.ripple_freq))
        return h


def two_pole_response(dt, n, bandwidth_hz):
    """
    Critically damped two-pole photodiode impulse response (unit DC gain).

    |H|^2 = 1 / (1 + (f/fc)^2)^2 falls by 3 dB at bandwidth_hz when
    fc = bandwidth_hz / sqrt(sqrt(2) - 1).
    """
    if bandwidth_hz <= 0:
        raise ValidationError("Photodiode bandwidth must be positive")
    wc = 2 * np.pi * bandwidth_hz / math.sqrt(math.sqrt(2) - 1)
    t = np.arange(n) * dt
    return RealWaveform(wc ** 2 * t * np.exp(-wc * t) * dt, dt)


def impulse_stimulus(n, dt, amplitude=1.0, index=0, rate=None):
    """Single optical impulse, the idealised modelocked-laser excitation"""
    samples = np.zeros(n)
    samples[index] = amplitude
    return RealWaveform(samples, dt, 0.0, rate)


def synth_balanced_pair(stimulus, h, mismatch):
    """
    Positive and negative photodiode responses to a common stimulus.

    Vp = h (*) stimulus, Vn = mismatch.response applied to Vp in the frequency
    domain; (*) is circular convolution over the stimulus length, with h
    zero-padded to it.

    For even n the Nyquist bin of a real record is real, so irfft keeps only
    the real part of Vn there; Vn = response * Vp holds on every other bin.
    """
    if not np.isclose(stimulus.dt, h.dt, rtol=1e-12, atol=0.0):
        raise ValidationError(f"Stimulus dt {stimulus.dt!r} differs from response dt {h.dt!r}")
    n = stimulus.n
    if h.n > n:
        raise ValidationError("Impulse response is longer than the stimulus record")

    freqs = np.fft.rfftfreq(n, d=stimulus.dt)
    vp_bins = np.fft.rfft(stimulus.samples) * np.fft.rfft(h.samples, n=n)
    vn_bins = vp_bins * mismatch.response(freqs)

    vp = RealWaveform(np.fft.irfft(vp_bins, n=n), stimulus.dt, stimulus.t0, stimulus.rate)
    vn = RealWaveform(np.fft.irfft(vn_bins, n=n), stimulus.dt, stimulus.t0, stimulus.rate)
    logger.debug("balanced_pair_synthesised", n=n, gain=mismatch.gain,
                 delay=mismatch.delay, ripple_amp=mismatch.ripple_amp)
    return vp, vn
