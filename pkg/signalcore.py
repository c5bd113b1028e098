"""
Sampled-signal substrate shared by every analysis module.

Transform convention (fixed, used everywhere):
- forward pass: X[k] = sum_n x[n] exp(-j 2 pi k n / N), no normalization
- inverse pass divides by N
- df = 1 / (N dt)
- real records expose bins 0..N/2 only (single-sided flag set);
  complex records keep all N bins in FFT order (double-sided)

Fractional delay is a phase ramp in the frequency domain, so it is a
circular shift: samples pushed past the end of the record reappear at the
start. This is exact for the periodic test patterns used throughout.
No implicit zero padding is ever applied; callers own record lengths.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

import numpy as np
from scipy.signal import windows

from errors import ValidationError


def _frozen_array(values, dtype):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_dt(dt):
    if not np.isfinite(dt) or dt <= 0:
        raise ValidationError(f"Sample interval must be positive and finite, got {dt!r}")


@dataclass(frozen=True, eq=False)
class RealWaveform:
    """
    Uniformly sampled real time record.

    Attributes:
        samples: sample values in volts
        dt: sample interval in seconds
        t0: time of the first sample in seconds
        rate: exact sample rate in Hz when it is known (1/dt otherwise)
    """

    samples: np.ndarray
    dt: float
    t0: float = 0.0
    rate: Optional[Fraction] = None

    def __post_init__(self):
        samples = _frozen_array(self.samples, np.float64)
        if samples.ndim != 1 or samples.size == 0:
            raise ValidationError("Waveform samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("Waveform contains non-finite samples")
        _check_dt(self.dt)
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'dt', float(self.dt))
        object.__setattr__(self, 't0', float(self.t0))

    @property
    def n(self):
        return self.samples.size

    @property
    def duration(self):
        return self.n * self.dt

    def times(self):
        return self.t0 + np.arange(self.n) * self.dt

    def replace_samples(self, samples):
        """Same grid, new values (the type follows the new values)"""
        return make_waveform(samples, self.dt, self.t0, self.rate)


@dataclass(frozen=True, eq=False)
class ComplexWaveform:
    """Uniformly sampled complex baseband envelope (normalized units)"""

    samples: np.ndarray
    dt: float
    t0: float = 0.0
    rate: Optional[Fraction] = None

    def __post_init__(self):
        samples = _frozen_array(self.samples, np.complex128)
        if samples.ndim != 1 or samples.size == 0:
            raise ValidationError("Waveform samples must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(samples)):
            raise ValidationError("Waveform contains non-finite samples")
        _check_dt(self.dt)
        object.__setattr__(self, 'samples', samples)
        object.__setattr__(self, 'dt', float(self.dt))
        object.__setattr__(self, 't0', float(self.t0))

    @property
    def n(self):
        return self.samples.size

    @property
    def duration(self):
        return self.n * self.dt

    def times(self):
        return self.t0 + np.arange(self.n) * self.dt

    def replace_samples(self, samples):
        return make_waveform(samples, self.dt, self.t0, self.rate)


Waveform = Union[RealWaveform, ComplexWaveform]


def make_waveform(samples, dt, t0=0.0, rate=None):
    """Build a RealWaveform or ComplexWaveform depending on the sample dtype"""
    samples = np.asarray(samples)
    if np.iscomplexobj(samples):
        return ComplexWaveform(samples, dt, t0, rate)
    return RealWaveform(samples, dt, t0, rate)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """
    Frequency-domain record.

    Attributes:
        bins: complex bin values; NaN marks a masked ("not-a-value") bin
        df: bin spacing in Hz
        f0: frequency of the first bin in Hz
        length_meta: length N of the originating time record
        single_sided: True when only bins 0..N/2 of a real record are held
        t0: start time of the originating record
        rate: exact sample rate of the originating record, when known
    """

    bins: np.ndarray
    df: float
    length_meta: int
    single_sided: bool
    f0: float = 0.0
    t0: float = 0.0
    rate: Optional[Fraction] = None

    def __post_init__(self):
        bins = _frozen_array(self.bins, np.complex128)
        if bins.ndim != 1 or bins.size == 0:
            raise ValidationError("Spectrum bins must be a non-empty 1-D sequence")
        if np.any(np.isinf(bins)):
            raise ValidationError("Spectrum contains infinite bins")
        if not np.isfinite(self.df) or self.df <= 0:
            raise ValidationError(f"Bin spacing must be positive, got {self.df!r}")
        if int(self.length_meta) < 1:
            raise ValidationError("Spectrum length_meta must be at least 1")
        object.__setattr__(self, 'bins', bins)
        object.__setattr__(self, 'df', float(self.df))
        object.__setattr__(self, 'length_meta', int(self.length_meta))
        object.__setattr__(self, 'single_sided', bool(self.single_sided))

    @property
    def n_bins(self):
        return self.bins.size

    @property
    def dt(self):
        return 1.0 / (self.length_meta * self.df)

    @property
    def freqs(self):
        """Frequency of every bin in Hz (signed FFT order when double-sided)"""
        if self.single_sided:
            return self.f0 + self.df * np.arange(self.n_bins)
        return self.f0 + self.df * np.fft.fftfreq(self.n_bins, d=1.0 / self.n_bins)

    def replace_bins(self, bins):
        return Spectrum(bins, self.df, self.length_meta, self.single_sided,
                        self.f0, self.t0, self.rate)


def check_same_grid(a, b, what="spectra"):
    """Raise ValidationError unless two spectra share df, f0, length and sidedness"""
    if (a.n_bins != b.n_bins or a.length_meta != b.length_meta
            or a.single_sided != b.single_sided):
        raise ValidationError(
            f"Grid mismatch between {what}: {a.n_bins} vs {b.n_bins} bins")
    if not np.isclose(a.df, b.df, rtol=1e-12, atol=0.0) or not np.isclose(a.f0, b.f0, rtol=1e-12, atol=a.df * 1e-12):
        raise ValidationError(
            f"Grid mismatch between {what}: df {a.df!r} vs {b.df!r}, f0 {a.f0!r} vs {b.f0!r}")


def forward_transform(w):
    """
    Discrete Fourier transform of a waveform.

    Args:
        w: RealWaveform or ComplexWaveform

    Returns:
        Spectrum with df = 1/(N dt); single-sided for real input
    """
    x = w.samples
    if not np.all(np.isfinite(x)):
        raise ValidationError("Cannot transform a record with non-finite samples")
    n = x.size
    df = 1.0 / (n * w.dt)
    if isinstance(w, RealWaveform):
        return Spectrum(np.fft.rfft(x), df, n, True, 0.0, w.t0, w.rate)
    return Spectrum(np.fft.fft(x), df, n, False, 0.0, w.t0, w.rate)


def inverse_transform(s):
    """Inverse of forward_transform; divides by N"""
    n = s.length_meta
    dt = float(1 / s.rate) if s.rate else 1.0 / (n * s.df)
    if s.single_sided:
        if s.n_bins != n // 2 + 1:
            raise ValidationError(
                f"Single-sided spectrum of a {n}-sample record needs {n // 2 + 1} bins, has {s.n_bins}")
        return RealWaveform(np.fft.irfft(s.bins, n=n), dt, s.t0, s.rate)
    if s.n_bins != n:
        raise ValidationError(
            f"Double-sided spectrum of a {n}-sample record needs {n} bins, has {s.n_bins}")
    return ComplexWaveform(np.fft.ifft(s.bins), dt, s.t0, s.rate)


def delay_factor(freqs, tau):
    """Phase ramp exp(-j 2 pi f tau) realising a delay of tau seconds"""
    return np.exp(-2j * np.pi * np.asarray(freqs) * tau)


def fractional_delay(w, tau):
    """
    Delay a waveform by tau seconds (circular shift, any fraction of dt).

    The guard |tau| < duration/4 keeps the wrapped portion small.
    """
    if not np.isfinite(tau) or abs(tau) >= w.duration / 4:
        raise ValidationError(
            f"Delay {tau!r} s outside the guard range +/-{w.duration / 4!r} s")
    if tau == 0:
        return w.replace_samples(w.samples.copy())

    spec = forward_transform(w)
    shifted = spec.bins * delay_factor(spec.freqs, tau)
    # keep the caller's grid bit-for-bit; only the values move
    return w.replace_samples(inverse_transform(spec.replace_bins(shifted)).samples)


def waveform_energy(w):
    """sum |x|^2 dt"""
    return float(np.sum(np.abs(w.samples) ** 2) * w.dt)


def spectrum_energy(s):
    """Energy of the originating record computed from its bins (Parseval)"""
    power = np.abs(s.bins) ** 2
    if s.single_sided:
        # interior bins stand for a +f/-f pair
        weights = np.full(s.n_bins, 2.0)
        weights[0] = 1.0
        if s.length_meta % 2 == 0:
            weights[-1] = 1.0
        total = float(np.sum(weights * power))
    else:
        total = float(np.sum(power))
    return total * s.dt / s.length_meta


def cosine_taper(n, fraction=0.1):
    """Tukey window: flat centre, cosine edges covering `fraction` of the record"""
    return windows.tukey(n, alpha=fraction, sym=False)


def exact_rational(value, what="rate"):
    """
    Parse an exact positive rational: int, Fraction, or a string "num" / "num/den".

    Floats are rejected rather than snapped: the interleaving arithmetic
    depends on exact gcd reduction.
    """
    if isinstance(value, bool) or isinstance(value, (float, np.floating)):
        raise ValidationError(f"{what} must be an exact integer or 'num/den' string, got float {value!r}")
    try:
        if isinstance(value, str):
            text = value.strip()
            if not text or any(c in text for c in '.eE'):
                raise ValueError(text)
            result = Fraction(text)
        elif isinstance(value, (int, np.integer, Fraction)):
            result = Fraction(int(value)) if not isinstance(value, Fraction) else value
        else:
            raise TypeError(type(value).__name__)
    except (ValueError, TypeError, ZeroDivisionError):
        raise ValidationError(f"{what} is not an exact rational: {value!r}") from None
    if result <= 0:
        raise ValidationError(f"{what} must be positive, got {value!r}")
    return result
