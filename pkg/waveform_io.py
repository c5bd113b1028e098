"""
Waveform, spectrum, symbol and bit files.

A waveform file is UTF-8 CSV with `# key=value` header lines, one column
header row and numeric rows:

    # kind=real
    # fs_hz=100000000000/1
    # t0_s=0
    time_s,value
    0,0.25
    1e-11,0.5

kind=complex uses `time_s,re,im`; kind=spectrum uses `freq_hz,re,im` with
`df_hz`, `f0_hz`, `n_time` and `sided` (single|double). Rates are exact
rational strings. Values are written with 17 significant digits so a
write/parse round trip is bit-exact.

Readers collect every problem with its line number, then raise one
ValidationError listing them.
"""

import hashlib
import io
import json
import math
from fractions import Fraction
from pathlib import Path

import numpy as np
import pandas as pd
import structlog

from errors import ValidationError
from signalcore import ComplexWaveform, RealWaveform, Spectrum, exact_rational
from synth import SymbolFrame, modulation_by_name

logger = structlog.get_logger(__name__)

FLOAT_FORMAT = '%.17g'
AXIS_RTOL = 1e-12
MAX_REPORTED_ISSUES = 20

COLUMNS = {
    'real': ['time_s', 'value'],
    'complex': ['time_s', 're', 'im'],
    'spectrum': ['freq_hz', 're', 'im'],
}
HEADER_KEYS = {
    'real': ('kind', 'fs_hz', 't0_s'),
    'complex': ('kind', 'fs_hz', 't0_s'),
    'spectrum': ('kind', 'df_hz', 'f0_hz', 'n_time', 'sided'),
}
BIT_COLUMNS = ['index', 'bit']


class FileIssues:
    """Line-numbered problems found while reading one file"""

    def __init__(self, path):
        self.path = str(path)
        self.errors = []
        self.warnings = []

    def error(self, line, message):
        self.errors.append(f"line {line}: {message}" if line else message)

    def warn(self, message):
        self.warnings.append(message)

    def raise_if_any(self):
        for warning in self.warnings:
            logger.warning("waveform_file_warning", path=self.path, detail=warning)
        if self.errors:
            shown = self.errors[:MAX_REPORTED_ISSUES]
            more = len(self.errors) - len(shown)
            listing = "\n  - ".join(shown)
            suffix = f"\n  ... and {more} more" if more else ""
            raise ValidationError(f"{self.path}: invalid waveform file\n  - {listing}{suffix}")


def _exact_rational_text(value):
    """Exact 'num/den' text for a Fraction, int or binary float"""
    frac = value if isinstance(value, Fraction) else Fraction(value)
    return f"{frac.numerator}/{frac.denominator}"


def _split_header(text, issues):
    header = {}
    lines = text.split('\n')
    if lines and lines[-1] == '':
        lines.pop()
    n_header = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.startswith('#'):
            break
        n_header += 1
        body = line[1:].strip()
        if not body:
            continue
        key, sep, value = body.partition('=')
        if not sep:
            issues.error(lineno, f"header line is not key=value: {line!r}")
            continue
        key = key.strip()
        if key in header:
            issues.error(lineno, f"duplicate header key {key!r}")
        header[key] = value.strip()
    return header, lines, n_header


def read_header(path):
    """Header key/value pairs of a waveform file"""
    issues = FileIssues(path)
    header, _, _ = _split_header(Path(path).read_text(encoding='utf-8'), issues)
    issues.raise_if_any()
    return header


def _parse_rational(header, key, issues):
    try:
        return exact_rational(header[key], key)
    except ValidationError as exc:
        issues.error(None, str(exc))
        return None


def _parse_float(header, key, issues):
    try:
        return float(header[key])
    except ValueError:
        issues.error(None, f"{key} is not a number: {header[key]!r}")
        return None


def _read_table(lines, n_header, columns, issues):
    col_line = n_header + 1
    if len(lines) <= n_header:
        issues.error(col_line, "missing column header row")
        return None
    names = [c.strip() for c in lines[n_header].split(',')]
    if names != columns:
        issues.error(col_line, f"expected columns {','.join(columns)}, found {lines[n_header]!r}")
        return None

    data_lines = lines[n_header + 1:]
    if not data_lines:
        issues.error(col_line + 1, "no data rows")
        return None
    n_sep = len(columns) - 1
    for offset, line in enumerate(data_lines):
        if line.count(',') != n_sep:
            issues.error(col_line + 1 + offset,
                         f"ragged row, expected {len(columns)} fields: {line!r}")
            if len(issues.errors) >= MAX_REPORTED_ISSUES:
                break
    if issues.errors:
        return None

    df = pd.read_csv(io.StringIO('\n'.join(data_lines)), header=None, names=columns,
                     float_precision='round_trip', keep_default_na=False,
                     na_values=['nan', 'NaN'], skipinitialspace=True)
    for col in columns:
        if df[col].dtype.kind != 'f' and df[col].dtype.kind != 'i':
            numeric = pd.to_numeric(df[col], errors='coerce')
            for row in np.flatnonzero(numeric.isna() & df[col].notna()):
                issues.error(col_line + 1 + int(row), f"{col} is not a number: {df[col].iloc[row]!r}")
    if issues.errors:
        return None
    return df.astype(np.float64)


def _check_axis(actual, expected, step, col_line, name, issues):
    tol = AXIS_RTOL * np.maximum(np.abs(expected), step)
    bad = np.flatnonzero(~(np.abs(actual - expected) <= tol))
    if bad.size:
        row = int(bad[0])
        issues.error(col_line + 1 + row,
                     f"{name} {actual[row]!r} inconsistent with declared rate "
                     f"(expected {expected[row]!r}); {bad.size} row(s) affected")


def parse_waveform_file(path):
    """
    Read a waveform or spectrum file.

    Returns:
        RealWaveform, ComplexWaveform or Spectrum; rates stay exact rationals

    Raises:
        ValidationError: missing keys, ragged rows, non-numeric values or an
            axis inconsistent with the declared rate (first bad row named)
        OSError: the file cannot be read
    """
    path = Path(path)
    issues = FileIssues(path)
    header, lines, n_header = _split_header(path.read_text(encoding='utf-8'), issues)

    kind = header.get('kind')
    if kind not in COLUMNS:
        issues.error(None, f"header key kind must be one of {sorted(COLUMNS)}, got {kind!r}")
        issues.raise_if_any()
    missing = [k for k in HEADER_KEYS[kind] if k not in header]
    for key in missing:
        issues.error(None, f"missing header key {key!r}")
    extra = set(header) - set(HEADER_KEYS[kind]) - {'fs_hz', 'modulation', 'symbol_rate_hz'}
    if extra:
        issues.warn(f"unrecognised header keys ignored: {sorted(extra)}")
    issues.raise_if_any()

    table = _read_table(lines, n_header, COLUMNS[kind], issues)
    issues.raise_if_any()
    col_line = n_header + 1

    if kind == 'spectrum':
        return _build_spectrum(header, table, col_line, issues)

    fs = _parse_rational(header, 'fs_hz', issues)
    t0 = _parse_float(header, 't0_s', issues)
    issues.raise_if_any()
    dt = float(1 / fs)
    times = table['time_s'].to_numpy()
    expected = t0 + np.arange(times.size) * dt
    _check_axis(times, expected, dt, col_line, 'time_s', issues)
    issues.raise_if_any()

    if kind == 'real':
        values = table['value'].to_numpy()
        if not np.all(np.isfinite(values)):
            row = int(np.flatnonzero(~np.isfinite(values))[0])
            issues.error(col_line + 1 + row, "waveform values must be finite")
            issues.raise_if_any()
        return RealWaveform(values, dt, t0, fs)
    values = table['re'].to_numpy() + 1j * table['im'].to_numpy()
    if not np.all(np.isfinite(values)):
        row = int(np.flatnonzero(~np.isfinite(values))[0])
        issues.error(col_line + 1 + row, "waveform values must be finite")
        issues.raise_if_any()
    return ComplexWaveform(values, dt, t0, fs)


def _build_spectrum(header, table, col_line, issues):
    df_hz = _parse_rational(header, 'df_hz', issues)
    f0 = _parse_float(header, 'f0_hz', issues)
    sided = header['sided']
    if sided not in ('single', 'double'):
        issues.error(None, f"sided must be single or double, got {sided!r}")
    try:
        n_time = int(header['n_time'])
    except ValueError:
        issues.error(None, f"n_time is not an integer: {header['n_time']!r}")
        n_time = None
    rate = _parse_rational(header, 'fs_hz', issues) if 'fs_hz' in header else None
    issues.raise_if_any()

    bins = table['re'].to_numpy() + 1j * table['im'].to_numpy()
    n_bins = bins.size
    expected_bins = n_time // 2 + 1 if sided == 'single' else n_time
    if n_bins != expected_bins:
        issues.error(None, f"{sided}-sided spectrum of n_time={n_time} needs "
                           f"{expected_bins} rows, found {n_bins}")
        issues.raise_if_any()

    spec = Spectrum(bins, float(df_hz), n_time, sided == 'single', f0, 0.0, rate)
    _check_axis(table['freq_hz'].to_numpy(), spec.freqs, spec.df, col_line, 'freq_hz', issues)
    issues.raise_if_any()
    return spec


def _write_table(path, header, frame):
    path = Path(path)
    with path.open('w', encoding='utf-8', newline='\n') as f:
        for key, value in header.items():
            f.write(f"# {key}={value}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, na_rep='nan', lineterminator='\n')
    return path


def write_waveform(path, w, extra=None):
    """Write a RealWaveform, ComplexWaveform or Spectrum"""
    if isinstance(w, Spectrum):
        return write_spectrum(path, w, extra)
    fs = w.rate if w.rate is not None else 1 / Fraction(w.dt)
    header = {
        'kind': 'complex' if isinstance(w, ComplexWaveform) else 'real',
        'fs_hz': _exact_rational_text(fs),
        't0_s': repr(w.t0),
    }
    header.update(extra or {})
    if isinstance(w, ComplexWaveform):
        frame = pd.DataFrame({'time_s': w.times(), 're': w.samples.real, 'im': w.samples.imag})
    else:
        frame = pd.DataFrame({'time_s': w.times(), 'value': w.samples})
    return _write_table(path, header, frame)


def write_spectrum(path, s, extra=None):
    df_exact = s.rate / s.length_meta if s.rate is not None else Fraction(s.df)
    header = {
        'kind': 'spectrum',
        'df_hz': _exact_rational_text(df_exact),
        'f0_hz': repr(s.f0),
        'n_time': str(s.length_meta),
        'sided': 'single' if s.single_sided else 'double',
    }
    if s.rate is not None:
        header['fs_hz'] = _exact_rational_text(s.rate)
    header.update(extra or {})
    frame = pd.DataFrame({'freq_hz': s.freqs, 're': s.bins.real, 'im': s.bins.imag})
    return _write_table(path, header, frame)


def write_symbol_frame(path, frame, symbol_rate=1):
    """Symbols as a complex waveform sampled at the symbol rate"""
    rate = exact_rational(symbol_rate, "symbol rate")
    w = ComplexWaveform(frame.symbols, float(1 / rate), 0.0, rate)
    return write_waveform(path, w, {'modulation': frame.mod.name.lower()})


def read_symbol_frame(path, mod=None):
    header = read_header(path)
    if mod is None:
        if 'modulation' not in header:
            raise ValidationError(f"{path}: no modulation header key; pass the modulation explicitly")
        mod = modulation_by_name(header['modulation'])
    w = parse_waveform_file(path)
    if not isinstance(w, ComplexWaveform):
        raise ValidationError(f"{path}: symbol files must be kind=complex")
    return SymbolFrame(w.samples, mod)


def write_bits(path, bits):
    bits = np.asarray(bits, dtype=np.uint8)
    frame = pd.DataFrame({'index': np.arange(bits.size), 'bit': bits})
    path = Path(path)
    frame.to_csv(path, index=False, lineterminator='\n')
    return path


def read_bits(path):
    """Two-column CSV index,bit with contiguous indices from 0"""
    issues = FileIssues(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise ValidationError(f"{path}: empty bit file") from None
    if list(frame.columns) != BIT_COLUMNS:
        issues.error(1, f"expected columns index,bit, found {','.join(frame.columns)}")
        issues.raise_if_any()
    bits = frame['bit'].str.strip()
    bad = np.flatnonzero(~bits.isin(['0', '1']).to_numpy())
    for row in bad[:MAX_REPORTED_ISSUES]:
        issues.error(int(row) + 2, f"bit must be 0 or 1, got {bits.iloc[row]!r}")
    index = pd.to_numeric(frame['index'], errors='coerce').to_numpy()
    out_of_order = np.flatnonzero(index != np.arange(index.size))
    if out_of_order.size:
        issues.error(int(out_of_order[0]) + 2, "index column must count up from 0")
    issues.raise_if_any()
    return (bits == '1').to_numpy().astype(np.uint8)


NONFINITE_TEXT = {math.inf: 'inf', -math.inf: '-inf'}
NONFINITE_VALUES = {'inf': math.inf, '-inf': -math.inf, 'nan': math.nan}


def encode_nonfinite(data):
    """Replace inf/nan floats with the strings 'inf', '-inf', 'nan' (strict JSON has no such tokens)"""
    if isinstance(data, dict):
        return {k: encode_nonfinite(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [encode_nonfinite(v) for v in data]
    if isinstance(data, float) and not math.isfinite(data):
        return 'nan' if math.isnan(data) else NONFINITE_TEXT[data]
    return data


def decode_nonfinite(data):
    """Inverse of encode_nonfinite"""
    if isinstance(data, dict):
        return {k: decode_nonfinite(v) for k, v in data.items()}
    if isinstance(data, list):
        return [decode_nonfinite(v) for v in data]
    if isinstance(data, str) and data in NONFINITE_VALUES:
        return NONFINITE_VALUES[data]
    return data


def _reject_constant(token):
    raise ValueError(f"non-standard JSON constant {token}")


def write_json(path, data):
    path = Path(path)
    with path.open('w', encoding='utf-8') as f:
        json.dump(encode_nonfinite(data), f, indent=2, ensure_ascii=False, allow_nan=False)
        f.write('\n')
    return path


def read_json(path):
    """Strict JSON: Infinity and NaN tokens are rejected"""
    with Path(path).open(encoding='utf-8') as f:
        text = f.read()
    try:
        return json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    except ValueError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from None


def file_digest(path):
    """sha256 hex digest of a file's bytes"""
    digest = hashlib.sha256()
    with Path(path).open('rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()
