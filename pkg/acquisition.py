"""
Digitizer-side algorithms.

Equivalent-time interleaving: a scope sampling a periodic L-symbol pattern
at p/q samples per symbol (gcd(p, q) = 1) visits, over q pattern
repetitions, every one of the p*L positions of a grid p times denser than
one symbol. Sample k lands in slot (k q) mod (p L); when gcd(q, L) = 1
that map is a permutation, and reordering gives a record at p samples per
symbol with no interpolation at all.

Trigger-jitter compensation: each acquisition carries a reference
sinusoid on a second channel. The phase of that tone (in-phase and
quadrature projections) gives the record's timing offset relative to the
ensemble median; signal records are shifted back and averaged. Correction
is per record, not per sample.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import structlog

from errors import CoprimalityError, ValidationError, WeakReferenceError
from signalcore import cosine_taper, exact_rational, fractional_delay, make_waveform

logger = structlog.get_logger(__name__)

PLAN_POSITIONS_JSON_LIMIT = 10_000
MIN_REFERENCE_CYCLES = 8
WEAK_REFERENCE_FRACTION = 0.01
TAPER_FRACTION = 0.1
WRAP_RISK_FRACTION = 0.5  # of the ambiguity range


@dataclass(frozen=True)
class RateRatio:
    """scope rate / symbol rate = p / q, fully reduced"""

    p: int
    q: int

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ValidationError(f"Rate ratio terms must be positive, got {self.p}/{self.q}")
        if math.gcd(self.p, self.q) != 1:
            raise ValidationError(f"Rate ratio {self.p}/{self.q} is not reduced")

    @classmethod
    def from_rates(cls, f_scope, f_sym):
        ratio = exact_rational(f_scope, "scope rate") / exact_rational(f_sym, "symbol rate")
        return cls(ratio.numerator, ratio.denominator)

    @property
    def points_per_symbol(self):
        return Fraction(self.p, self.q)


@dataclass(frozen=True, eq=False)
class InterleavePlan:
    """
    Attributes:
        ratio: reduced scope/symbol rate ratio p/q
        pattern_len: pattern length L in symbols
        f_scope, f_sym: exact rates in Hz
        positions: slot u_k = (k q) mod (p L) for every sample k < p L
        degenerate: q == 1, synchronous sampling; interleaving adds nothing
    """

    ratio: RateRatio
    pattern_len: int
    f_scope: Fraction
    f_sym: Fraction
    positions: np.ndarray = field(repr=False)
    degenerate: bool = False

    @property
    def required_samples(self):
        return self.ratio.p * self.pattern_len

    @property
    def covered_repetitions(self):
        return self.ratio.q

    @property
    def effective_rate(self):
        return self.ratio.p * self.f_sym

    @property
    def out_dt(self):
        return 1 / self.effective_rate

    def to_dict(self):
        data = {
            'p': self.ratio.p,
            'q': self.ratio.q,
            'pattern_len': self.pattern_len,
            'f_scope_hz': str(self.f_scope),
            'f_sym_hz': str(self.f_sym),
            'points_per_symbol': str(self.ratio.points_per_symbol),
            'required_samples': self.required_samples,
            'covered_repetitions': self.covered_repetitions,
            'effective_rate_hz': str(self.effective_rate),
            'out_dt_s': str(self.out_dt),
            'degenerate': self.degenerate,
        }
        # large permutations are regenerable from (p, q, L)
        if self.required_samples <= PLAN_POSITIONS_JSON_LIMIT:
            data['positions'] = self.positions.tolist()
        return data


def interleave_plan(f_scope, f_sym, pattern_len):
    """
    Plan an equivalent-time reconstruction.

    Args:
        f_scope: exact scope sample rate (int, Fraction or "num/den")
        f_sym: exact symbol rate
        pattern_len: pattern length L in symbols

    Raises:
        CoprimalityError: gcd(q, L) != 1; carries the achievable slot count
    """
    if int(pattern_len) != pattern_len or pattern_len < 1:
        raise ValidationError(f"Pattern length must be a positive integer, got {pattern_len!r}")
    pattern_len = int(pattern_len)
    f_scope = exact_rational(f_scope, "scope rate")
    f_sym = exact_rational(f_sym, "symbol rate")
    ratio = RateRatio.from_rates(f_scope, f_sym)
    p, q = ratio.p, ratio.q

    common = math.gcd(q, pattern_len)
    if common != 1:
        achievable = p * pattern_len // common
        raise CoprimalityError(
            f"Pattern length {pattern_len} shares factor {common} with q={q}; "
            f"only {achievable} distinct positions are reachable",
            achievable_positions=achievable)

    degenerate = q == 1
    if degenerate:
        logger.warning("degenerate_rate_ratio", p=p, q=q,
                       note="synchronous sampling, effective rate equals scope rate")

    n = p * pattern_len
    positions = (np.arange(n, dtype=np.int64) * q) % n
    positions.setflags(write=False)
    return InterleavePlan(ratio, pattern_len, f_scope, f_sym, positions, degenerate)


def sample_positions(plan, n_samples=None):
    """Symbol-time position (in symbols, modulo L) of each scope sample"""
    n = plan.required_samples if n_samples is None else n_samples
    k = np.arange(n, dtype=np.int64)
    return ((k * plan.ratio.q) % plan.required_samples) / plan.ratio.p


def interleave_reconstruct(samples, plan, mode='strict'):
    """
    Reorder scope samples onto the dense grid.

    strict: exactly plan.required_samples inputs, output[u_k] = input[k]
    average: any whole number of blocks; slots are averaged over blocks

    Returns a waveform with dt = plan.out_dt (exact rate attached).
    """
    values = samples.samples if hasattr(samples, 'samples') else np.asarray(samples)
    n = plan.required_samples
    if mode == 'strict':
        if values.size != n:
            raise ValidationError(
                f"Strict reconstruction needs exactly {n} samples, got {values.size}")
        block = values
    elif mode == 'average':
        if values.size == 0 or values.size % n:
            raise ValidationError(
                f"Average reconstruction needs a multiple of {n} samples, got {values.size}")
        block = values.reshape(-1, n).mean(axis=0)
    else:
        raise ValidationError(f"Unknown reconstruction mode {mode!r}")

    out = np.empty_like(block)
    out[plan.positions] = block
    rate = plan.effective_rate
    return make_waveform(out, float(1 / rate), 0.0, rate)


# ---------------------------------------------------------------------------
# I/Q trigger-jitter compensation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class JitterEstimate:
    """
    Attributes:
        per_record_dt: delay of each record relative to the ensemble median, s
        f_ref: reference tone frequency, Hz
        amplitudes: fitted reference amplitude per record
        wrap_risk: estimate lies in the outer half of the ambiguity range,
                   so the true offset may have wrapped
    """

    per_record_dt: np.ndarray
    f_ref: float
    amplitudes: np.ndarray
    wrap_risk: np.ndarray

    @property
    def ambiguity_range(self):
        return 1.0 / (2 * self.f_ref)


def _iq_phase(record, f_ref):
    n = record.n
    cycles = n * record.dt * f_ref
    if cycles < MIN_REFERENCE_CYCLES:
        raise ValidationError(
            f"Reference record spans {cycles:.2f} cycles; at least {MIN_REFERENCE_CYCLES} needed")
    if f_ref >= 1 / (2 * record.dt):
        raise ValidationError(f"Reference frequency {f_ref:g} Hz is above the record Nyquist")

    x = record.samples
    if abs(cycles - round(cycles)) > 1e-9:
        weights = cosine_taper(n, TAPER_FRACTION)
    else:
        weights = np.ones(n)
    arg = 2 * np.pi * f_ref * np.arange(n) * record.dt
    scale = 2.0 / weights.sum()
    i = scale * np.sum(weights * x * np.cos(arg))
    q = -scale * np.sum(weights * x * np.sin(arg))

    tone_power = (i * i + q * q) / 2
    if tone_power <= WEAK_REFERENCE_FRACTION * float(np.mean(x * x)):
        raise WeakReferenceError(
            f"Reference tone power {tone_power:.3e} is below the noise floor of the record")
    return math.atan2(q, i), math.hypot(i, q)


def _wrap(phase):
    return (np.asarray(phase) + np.pi) % (2 * np.pi) - np.pi


def iq_jitter_estimate(ref_records, f_ref, threads=1):
    """
    Per-record timing offsets from a reference tone.

    A tone delayed by d has phase -2 pi f_ref d, so
    per_record_dt = -wrap(phi_i - median phi) / (2 pi f_ref). Phases are
    referred to the first record before taking the median so that the
    median is not split by the +/-pi seam.
    """
    if not ref_records:
        raise ValidationError("No reference records supplied")
    if not f_ref > 0:
        raise ValidationError("Reference frequency must be positive")

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fits = list(pool.map(lambda r: _iq_phase(r, f_ref), ref_records))
    else:
        fits = [_iq_phase(r, f_ref) for r in ref_records]

    phases = np.array([phi for phi, _ in fits])
    amplitudes = np.array([amp for _, amp in fits])
    relative = _wrap(phases - phases[0])
    centred = _wrap(relative - np.median(relative))
    per_record_dt = -centred / (2 * np.pi * f_ref)

    ambiguity = 1.0 / (2 * f_ref)
    wrap_risk = np.abs(per_record_dt) > WRAP_RISK_FRACTION * ambiguity
    if np.any(wrap_risk):
        logger.warning("jitter_near_ambiguity", records=np.flatnonzero(wrap_risk).tolist(),
                       ambiguity_s=ambiguity)
    return JitterEstimate(per_record_dt, float(f_ref), amplitudes, wrap_risk)


def iq_jitter_align(signal_records, estimate):
    """Shift each record by -per_record_dt[i]"""
    if len(signal_records) != estimate.per_record_dt.size:
        raise ValidationError(
            f"{len(signal_records)} signal records but {estimate.per_record_dt.size} estimates")
    if not signal_records:
        raise ValidationError("No signal records supplied")
    first = signal_records[0]
    for rec in signal_records[1:]:
        if rec.n != first.n or not np.isclose(rec.dt, first.dt, rtol=1e-12, atol=0.0):
            raise ValidationError("Signal records do not share a common grid")
    return [fractional_delay(rec, -float(d)) for rec, d in zip(signal_records, estimate.per_record_dt)]


def iq_jitter_compensate(signal_records, estimate):
    """Align every record to the median timing, then average"""
    aligned = iq_jitter_align(signal_records, estimate)
    mean = np.mean([rec.samples for rec in aligned], axis=0)
    return signal_records[0].replace_samples(mean)
