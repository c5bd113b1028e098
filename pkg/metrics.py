"""
Constellation metrics: EVM, SNR from EVM, analytic BER for square Gray
QAM, hard decisions and counted bit errors.

The counted-versus-predicted comparison (ber_sweep) is the desk-scale
version of checking error counting against the EVM-derived BER curve.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
import structlog
from scipy.special import erfc
from scipy.stats import norm

from errors import ValidationError
from synth import SNR_NO_NOISE, add_awgn, int_to_bits, map_symbols

logger = structlog.get_logger(__name__)

NORMALIZATIONS = ('average', 'peak')
EVM_MODES = ('data_aided', 'decision_directed')
SUPPORTED_ORDERS = (4, 16)
RECORD_SYMBOLS = 1 << 18
AGREEMENT_SIGMAS = 3.0

SWEEP_COLUMNS = ['snr_db', 'evm_rms', 'ber_counted', 'ber_from_evm', 'ci_lo', 'ci_hi']


@dataclass(frozen=True)
class EvmResult:
    evm_rms: float
    normalization: str
    mode: str
    n_symbols: int

    def __post_init__(self):
        if not (math.isfinite(self.evm_rms) and self.evm_rms >= 0):
            raise ValidationError(f"EVM must be finite and non-negative, got {self.evm_rms!r}")

    @property
    def evm_percent(self):
        return 100.0 * self.evm_rms


@dataclass(frozen=True)
class SnrEstimate:
    """linear SNR (inf for a perfect frame) plus an optional bias warning"""

    linear: float
    db: float
    warning: Optional[str] = None


@dataclass(frozen=True)
class BerEstimate:
    """
    Attributes:
        ber: bit error ratio in [0, 1]
        source: 'counted' or 'evm_predicted'
        n_bits, n_errors, wilson_ci95: set for counted estimates only
    """

    ber: float
    source: str
    n_bits: Optional[int] = None
    n_errors: Optional[int] = None
    wilson_ci95: Optional[tuple] = None

    def __post_init__(self):
        if not 0.0 <= self.ber <= 1.0:
            raise ValidationError(f"BER must lie in [0, 1], got {self.ber!r}")


@dataclass(frozen=True)
class BinomialAgreement:
    z_score: float
    agrees: bool


def decide_symbols(received):
    """
    Hard decisions on a square constellation.

    Each axis is decided independently against the Gray-ordered axis
    levels, which is the nearest-point rule for a rectangular grid.
    np.argmin keeps the first of equal distances, so ties fall to the
    smaller code value and therefore the smaller bit value.

    Returns:
        (decided symbols, bits MSB-first per symbol)
    """
    mod = received.mod
    levels = mod.axis_levels
    r = received.symbols
    i_code = np.argmin(np.abs(r.real[:, None] - levels[None, :]), axis=1)
    q_code = np.argmin(np.abs(r.imag[:, None] - levels[None, :]), axis=1)
    index = (i_code << mod.bits_per_axis) | q_code
    bits = int_to_bits(index, mod.bits_per_symbol).reshape(-1)
    return mod.constellation[index], bits


def evm(received, reference=None, normalization='average', mode='data_aided'):
    """
    RMS error-vector magnitude as a fraction.

    evm_rms = sqrt(mean |r - s|^2 / P_norm), with s the reference symbol
    (data-aided) or the nearest constellation point (decision-directed), and
    P_norm the mean reference power (average) or the constellation peak
    power (peak).
    """
    if normalization not in NORMALIZATIONS:
        raise ValidationError(f"Unknown EVM normalization {normalization!r}")
    if mode not in EVM_MODES:
        raise ValidationError(f"Unknown EVM mode {mode!r}")
    n = received.n_symbols
    if n == 0:
        raise ValidationError("Cannot compute EVM of an empty frame")

    if mode == 'data_aided':
        if reference is None:
            raise ValidationError("Data-aided EVM needs a reference frame")
        if reference.n_symbols != n:
            raise ValidationError(
                f"Length mismatch: {n} received vs {reference.n_symbols} reference symbols")
        ideal = reference.symbols
    else:
        ideal, _ = decide_symbols(received)

    error_power = float(np.mean(np.abs(received.symbols - ideal) ** 2))
    if normalization == 'average':
        p_norm = float(np.mean(np.abs(ideal) ** 2))
    else:
        p_norm = received.mod.peak_power
    if p_norm == 0:
        raise ValidationError("Reference symbols carry no power")
    return EvmResult(math.sqrt(error_power / p_norm), normalization, mode, n)


def snr_from_evm(e):
    """SNR = 1 / evm_rms^2; flagged unless data-aided with average normalization"""
    warning = None
    if e.mode != 'data_aided':
        warning = "decision-directed EVM is biased low at poor SNR"
    elif e.normalization != 'average':
        warning = "peak-normalized EVM does not map to SNR directly"
    if warning:
        logger.warning("snr_from_evm_biased", mode=e.mode, normalization=e.normalization)

    if e.evm_rms == 0:
        return SnrEstimate(SNR_NO_NOISE, SNR_NO_NOISE, warning)
    linear = 1.0 / e.evm_rms ** 2
    return SnrEstimate(linear, 10 * math.log10(linear), warning)


def q_function(x):
    return 0.5 * erfc(np.asarray(x) / math.sqrt(2))


def ber_from_snr(snr_linear, order):
    """Gray-coded nearest-neighbour BER of square M-QAM (exact for QPSK)"""
    if order not in SUPPORTED_ORDERS:
        raise ValidationError(f"BER prediction supports M in {SUPPORTED_ORDERS}, got {order}")
    if snr_linear == SNR_NO_NOISE:
        return 0.0
    bits = math.log2(order)
    coeff = (4 / bits) * (1 - 1 / math.sqrt(order))
    return float(min(1.0, coeff * q_function(math.sqrt(3 * snr_linear / (order - 1)))))


def ber_from_evm(e, mod):
    return BerEstimate(ber_from_snr(snr_from_evm(e).linear, mod.order), 'evm_predicted')


def wilson_interval(n_errors, n_bits, confidence=0.95):
    z = float(norm.ppf(0.5 + confidence / 2))
    p = n_errors / n_bits
    denom = 1 + z * z / n_bits
    centre = (p + z * z / (2 * n_bits)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n_bits + z * z / (4 * n_bits * n_bits))
    # closed ends are exact; the subtraction leaves rounding residue
    lo = 0.0 if n_errors == 0 else max(0.0, centre - half)
    hi = 1.0 if n_errors == n_bits else min(1.0, centre + half)
    return lo, hi


def count_bit_errors_from_totals(n_errors, n_bits):
    return BerEstimate(n_errors / n_bits, 'counted', n_bits, n_errors,
                       wilson_interval(n_errors, n_bits))


def count_bit_errors(decided, truth):
    """Exact Hamming distance / length with a Wilson 95% interval"""
    decided = np.asarray(decided, dtype=np.uint8)
    truth = np.asarray(truth, dtype=np.uint8)
    if decided.shape != truth.shape:
        raise ValidationError(f"Length mismatch: {decided.size} decided vs {truth.size} true bits")
    n_bits = int(truth.size)
    if n_bits == 0:
        raise ValidationError("Cannot count errors on an empty bit stream")
    return count_bit_errors_from_totals(int(np.count_nonzero(decided != truth)), n_bits)


def binomial_agreement(counted, predicted, sigmas=AGREEMENT_SIGMAS):
    """Is the counted BER within `sigmas` binomial deviations of the prediction?"""
    if counted.n_bits is None:
        raise ValidationError("Agreement needs a counted estimate")
    p = predicted.ber
    sigma = math.sqrt(p * (1 - p) / counted.n_bits)
    diff = counted.ber - p
    if sigma == 0:
        return BinomialAgreement(0.0 if diff == 0 else math.inf, diff == 0)
    z = diff / sigma
    return BinomialAgreement(z, abs(z) <= sigmas)


# ---------------------------------------------------------------------------
# Monte-Carlo campaign
# ---------------------------------------------------------------------------

def _record_sizes(n_symbols):
    full, rest = divmod(n_symbols, RECORD_SYMBOLS)
    return [RECORD_SYMBOLS] * full + ([rest] if rest else [])


def _run_record(mod, snr_db, n_symbols, seed, snr_index, record_index):
    """(bit errors, bits, error power, reference power) for one seeded record"""
    bit_rng = np.random.default_rng(np.random.SeedSequence([seed, snr_index, record_index, 0]))
    noise_seed = np.random.SeedSequence([seed, snr_index, record_index, 1])
    bits = bit_rng.integers(0, 2, n_symbols * mod.bits_per_symbol, dtype=np.uint8)
    reference = map_symbols(bits, mod)
    noisy = add_awgn(reference, snr_db, noise_seed)
    _, decided = decide_symbols(noisy)
    errors = int(np.count_nonzero(decided != bits))
    err_power = float(np.sum(np.abs(noisy.symbols - reference.symbols) ** 2))
    ref_power = float(np.sum(np.abs(reference.symbols) ** 2))
    return errors, bits.size, err_power, ref_power


def ber_sweep(mod, snr_db_list, n_symbols, seed, threads=1):
    """
    Counted versus EVM-predicted BER over a list of SNRs.

    Each record's generator is seeded from (seed, snr_index, record_index),
    and totals are accumulated in index order, so the table does not depend
    on the thread count.

    Returns:
        DataFrame with SWEEP_COLUMNS, one row per SNR
    """
    if n_symbols < 1:
        raise ValidationError("Sweep needs at least one symbol per SNR point")
    if seed is None:
        raise ValidationError("A campaign seed is required")
    sizes = _record_sizes(n_symbols)
    jobs = [(i, r, snr, size)
            for i, snr in enumerate(snr_db_list)
            for r, size in enumerate(sizes)]

    def work(job):
        i, r, snr, size = job
        return _run_record(mod, snr, size, seed, i, r)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, jobs))
    else:
        outcomes = [work(job) for job in jobs]

    rows = []
    per_snr = len(sizes)
    for i, snr in enumerate(snr_db_list):
        chunk = outcomes[i * per_snr:(i + 1) * per_snr]
        n_errors = sum(c[0] for c in chunk)
        n_bits = sum(c[1] for c in chunk)
        e = EvmResult(math.sqrt(sum(c[2] for c in chunk) / sum(c[3] for c in chunk)),
                      'average', 'data_aided', n_symbols)
        counted = count_bit_errors_from_totals(n_errors, n_bits)
        predicted = ber_from_evm(e, mod)
        rows.append({
            'snr_db': float(snr),
            'evm_rms': e.evm_rms,
            'ber_counted': counted.ber,
            'ber_from_evm': predicted.ber,
            'ci_lo': counted.wilson_ci95[0],
            'ci_hi': counted.wilson_ci95[1],
        })
        logger.debug("ber_sweep_point", snr_db=snr, n_bits=n_bits, n_errors=n_errors)
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)
