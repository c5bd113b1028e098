#!/usr/bin/env python3
"""
Waveform metrology command-line tool v1.0

Synthesizes ground-truth test signals and runs the analyses of this
repository on waveform files, one subcommand per analysis:

    synth        PRBS-driven QPSK/16-QAM waveforms, or balanced photodiode pairs
    prbs         raw PRBS bit patterns with balance/run statistics
    cmrr         scaled, time-shifted CMRR of a balanced photodetector
    interleave   equivalent-time interleave planning and reconstruction
    jitter-comp  reference-tone trigger-jitter compensation
    evm          error-vector magnitude of a received symbol frame
    ber-predict  analytic BER from EVM or SNR
    ber-count    counted BER with a Wilson interval
    ber-sweep    Monte-Carlo counted-versus-predicted BER table
    wavesplit    forward/reverse travelling-wave separation
    replay       re-run a manifest and verify its output digests

Directory Structure:
- /templates: Jinja2 templates for the per-run text summaries
- --out DIR: one directory per run holding outputs, summary.txt and
  manifest.json (never overwritten without --force)

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.

Usage:
    python metrology.py interleave --fs 100000000000 --fsym 28000000000 --pattern-len 127 --plan-only
    python metrology.py ber-sweep --mod qpsk --snr-db 8,10,12 --symbols 1000000 --seed 7 --out runs/sweep
"""

import argparse
import json
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd
import structlog
from jinja2 import Environment, FileSystemLoader

import acquisition
import cmrr
import metrics
import synth
import wavesplit
import waveform_io
from errors import MetrologyError, ReplayMismatchError, ValidationError
from signalcore import RealWaveform, exact_rational

TOOL_VERSION = '1.0'
TEMPLATES_DIR = Path(__file__).resolve().parent / 'templates'
TABLE_FLOAT_FORMAT = '%.17g'
EXIT_IO_ERROR = 4

# Arguments that name input files; stored as absolute paths in manifests
INPUT_ARGS = ('vp', 'vn', 'input', 'ref', 'sig', 'received', 'reference',
              'decided', 'truth', 'line')
# Arguments that never enter a manifest
RUN_ARGS = ('command', 'out', 'force', 'quiet', 'json_errors')

logger = structlog.get_logger(__name__)


def configure_logging(quiet=False):
    """Library diagnostics go to standard error as key=value lines"""
    structlog.configure(
        processors=[
            structlog.processors.add_log_level,
            structlog.dev.ConsoleRenderer(colors=False),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            logging.WARNING if quiet else logging.INFO),
        logger_factory=structlog.PrintLoggerFactory(sys.stderr),
        cache_logger_on_first_use=False,
    )


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


class RunWorkspace:
    """Output directory of one run: files, digests, summary and manifest"""

    def __init__(self, out_dir, force=False, quiet=False):
        self.out_dir = Path(out_dir)
        self.force = force
        self.quiet = quiet
        self.env = Environment(loader=FileSystemLoader(str(TEMPLATES_DIR)),
                               trim_blocks=True, lstrip_blocks=True,
                               keep_trailing_newline=True)
        self.inputs = {}
        self.outputs = {}
        self.stats = {
            'files_written': 0,
            'inputs_read': 0,
            'start_time': datetime.now(),
        }

    def say(self, message):
        if not self.quiet:
            print(message)

    def banner(self, title):
        self.say("\n" + "=" * 60)
        self.say(title)
        self.say("=" * 60)

    def prepare(self):
        if self.out_dir.exists():
            if not self.out_dir.is_dir():
                raise ValidationError(f"Output path {self.out_dir} exists and is not a directory")
            if any(self.out_dir.iterdir()) and not self.force:
                raise ValidationError(
                    f"Output directory {self.out_dir} is not empty; pass --force to overwrite")
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.say(f"📁 Output directory: {self.out_dir}")

    def read_input(self, path, reader=waveform_io.parse_waveform_file):
        """Read an input file and record its digest"""
        path = Path(path)
        result = reader(path)
        self.inputs[str(path)] = waveform_io.file_digest(path)
        self.stats['inputs_read'] += 1
        self.say(f"📂 Loaded: {path}")
        return result

    def _register(self, path):
        self.outputs[path.name] = waveform_io.file_digest(path)
        self.stats['files_written'] += 1
        self.say(f"✓ Wrote: {path}")
        return path

    def write_waveform(self, name, w, extra=None):
        return self._register(waveform_io.write_waveform(self.out_dir / name, w, extra))

    def write_symbols(self, name, frame, symbol_rate):
        return self._register(waveform_io.write_symbol_frame(self.out_dir / name, frame, symbol_rate))

    def write_bits(self, name, bits):
        return self._register(waveform_io.write_bits(self.out_dir / name, bits))

    def write_table(self, name, frame):
        path = self.out_dir / name
        frame.to_csv(path, index=False, float_format=TABLE_FLOAT_FORMAT, na_rep='nan',
                     lineterminator='\n')
        return self._register(path)

    def write_json(self, name, data):
        return self._register(waveform_io.write_json(self.out_dir / name, data))

    def render(self, name, template_name, **context):
        template = self.env.get_template(template_name)
        path = self.out_dir / name
        path.write_text(template.render(**context), encoding='utf-8')
        return self._register(path)

    def summary(self, command, title, sections, seed=None, notes=()):
        return self.render('summary.txt', 'run_summary.txt', title=title, command=command,
                           tool_version=TOOL_VERSION, seed=seed, notes=list(notes),
                           sections={k: {key: _fmt(v) for key, v in rows.items()}
                                     for k, rows in sections.items()})

    def write_manifest(self, command, params):
        """manifest.json: everything needed to replay the run"""
        manifest = {
            'subcommand': command,
            'params': params,
            'seed': params.get('seed'),
            'tool_version': TOOL_VERSION,
            'inputs': self.inputs,
            'outputs': dict(sorted(self.outputs.items())),
            'created_at': datetime.now(timezone.utc).isoformat(),
            'python_version': sys.version,
        }
        path = waveform_io.write_json(self.out_dir / 'manifest.json', manifest)
        self.say(f"✓ Manifest created: {path}")
        return manifest

    def print_statistics(self):
        duration = (datetime.now() - self.stats['start_time']).total_seconds()
        self.banner("📊 RUN STATISTICS")
        self.say(f"Inputs read: {self.stats['inputs_read']}")
        self.say(f"Files written: {self.stats['files_written']}")
        self.say(f"Duration: {duration:.2f} seconds")
        self.say(f"Output directory: {self.out_dir}")
        self.say("=" * 60 + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _require_seed(args, reason):
    if args.seed is None:
        raise ValidationError(f"--seed is required {reason}")


def _noise_seed(seed, stream):
    return np.random.SeedSequence([seed, stream])


def _symbol_pattern(mod, degree, prbs_seed, n_symbols):
    bits = synth.prbs_generate(synth.PrbsSpec(degree, prbs_seed), n_symbols * mod.bits_per_symbol)
    return synth.map_symbols(bits, mod)


def cmd_synth(args, ws):
    if args.what == 'pair':
        return _synth_pair(args, ws)

    mod = synth.modulation_by_name(args.mod)
    prbs = synth.PrbsSpec(args.prbs_degree, args.prbs_seed)
    n_symbols = args.symbols or prbs.period
    frame = _symbol_pattern(mod, args.prbs_degree, args.prbs_seed, n_symbols)
    wave = synth.pulse_shape(frame, args.rolloff, args.span, args.sps, args.repetitions, args.fsym)
    if args.snr_db != synth.SNR_NO_NOISE:
        _require_seed(args, "when --snr-db is finite")
        wave = synth.add_awgn(wave, args.snr_db, _noise_seed(args.seed, 0))

    ws.write_bits('bits.csv', frame.source_bits)
    ws.write_symbols('symbols.csv', frame, args.fsym)
    ws.write_waveform('waveform.csv', wave)
    ws.summary('synth', "SYNTHESIZED WAVEFORM", {
        'Pattern': {
            'modulation': mod.name,
            'prbs_degree': args.prbs_degree,
            'symbols': n_symbols,
            'bits': frame.source_bits.size,
        },
        'Waveform': {
            'samples': wave.n,
            'sample_rate_hz': wave.rate,
            'rolloff': args.rolloff,
            'span_symbols': args.span,
            'snr_db': args.snr_db,
        },
    }, seed=args.seed)


def _synth_pair(args, ws):
    fs = exact_rational(args.fs, "sample rate")
    dt = float(1 / fs)
    stimulus = synth.impulse_stimulus(args.n, dt, 1.0, args.impulse_index, fs)
    h = synth.two_pole_response(dt, args.n, args.bandwidth)
    mismatch = synth.MismatchSpec(args.gain, args.delay, args.ripple_amp, args.ripple_freq)
    vp, vn = synth.synth_balanced_pair(stimulus, h, mismatch)
    if args.snr_db != synth.SNR_NO_NOISE:
        _require_seed(args, "when --snr-db is finite")
        vp = synth.add_awgn(vp, args.snr_db, _noise_seed(args.seed, 0))
        vn = synth.add_awgn(vn, args.snr_db, _noise_seed(args.seed, 1))

    ws.write_waveform('vp.csv', vp)
    ws.write_waveform('vn.csv', vn)
    ws.summary('synth', "SYNTHESIZED BALANCED PAIR", {
        'Photodiode': {'samples': args.n, 'sample_rate_hz': fs, 'bandwidth_hz': args.bandwidth},
        'Mismatch': {
            'gain': args.gain,
            'delay_s': args.delay,
            'ripple_amp': args.ripple_amp,
            'ripple_freq_hz': args.ripple_freq,
        },
    }, seed=args.seed)


def _longest_run(bits, value):
    padded = np.concatenate(([0], (bits == value).astype(np.int8), [0]))
    edges = np.flatnonzero(np.diff(padded))
    return int(np.max(edges[1::2] - edges[::2])) if edges.size else 0


def cmd_prbs(args, ws):
    spec = synth.PrbsSpec(args.degree, args.prbs_seed)
    length = args.length or spec.period
    bits = synth.prbs_generate(spec, length)
    ws.write_bits('prbs.csv', bits)
    ws.summary('prbs', f"PRBS{args.degree}", {
        'Pattern': {
            'degree': args.degree,
            'taps': f"x^{spec.taps[0]} + x^{spec.taps[1]} + 1",
            'period': spec.period,
            'length': length,
        },
        'Statistics': {
            'ones': int(np.count_nonzero(bits)),
            'zeros': int(length - np.count_nonzero(bits)),
            'longest_run_ones': _longest_run(bits, 1),
            'longest_run_zeros': _longest_run(bits, 0),
        },
    })


def _read_real(ws, path, what):
    w = ws.read_input(path)
    if not isinstance(w, RealWaveform):
        raise ValidationError(f"{what} must be a real waveform file: {path}")
    return w


def cmd_cmrr(args, ws):
    vp = _read_real(ws, args.vp, "Vp")
    vn = _read_real(ws, args.vn, "Vn")
    band = None
    if args.band_lo is not None or args.band_hi is not None:
        if args.band_lo is None or args.band_hi is None:
            raise ValidationError("--band-lo and --band-hi must be given together")
        band = (args.band_lo, args.band_hi)

    params, trace, summary = cmrr.cmrr_report(vp, vn, band, args.tau_window)
    ws.write_table('cmrr_trace.csv', trace.to_frame())
    ws.write_json('alignment.json', {
        'alpha': params.alpha,
        'tau_s': params.tau,
        'residual': params.residual,
        'at_boundary': params.at_boundary,
        'band_hz': list(summary.band),
        'min_rejection_db': summary.min_rejection_db,
        'median_rejection_db': summary.median_rejection_db,
        'floor_limited': summary.floor_limited,
        'photocurrent_ratio': summary.photocurrent_ratio,
        'alpha_dc': summary.alpha_dc,
        'standard_min_rejection_db': summary.standard_min_rejection_db,
        'dc_balanced_min_rejection_db': summary.dc_balanced_min_rejection_db,
        'excluded_bins': trace.n_excluded,
    })
    notes = []
    if params.at_boundary:
        notes.append("tau* lies on the search window edge; widen --tau-window")
    if summary.floor_limited:
        notes.append("some bins reached the numerical floor; min rejection ignores them")
    ws.summary('cmrr', "COMMON-MODE REJECTION", {
        'Alignment': {'alpha': params.alpha, 'tau_s': params.tau, 'alpha_dc': summary.alpha_dc},
        'Rejection (dB, positive)': {
            'optimized_min': summary.min_rejection_db,
            'optimized_median': summary.median_rejection_db,
            'standard_min': summary.standard_min_rejection_db,
            'dc_balanced_min': summary.dc_balanced_min_rejection_db,
        },
        'Band': {'f_lo_hz': summary.band[0], 'f_hi_hz': summary.band[1], 'bins': summary.n_bins},
    }, notes=notes)


def _plan_line(plan):
    return (f"p={plan.ratio.p} q={plan.ratio.q} "
            f"points_per_symbol={plan.ratio.points_per_symbol} "
            f"required_samples={plan.required_samples} "
            f"covered_repetitions={plan.covered_repetitions} "
            f"effective_rate={plan.effective_rate}")


def cmd_interleave(args, ws):
    plan = acquisition.interleave_plan(args.fs, args.fsym, args.pattern_len)
    notes = []
    if args.input:
        scope = ws.read_input(args.input)
        if scope.rate is not None and scope.rate != plan.f_scope:
            raise ValidationError(
                f"Input sample rate {scope.rate} Hz differs from --fs {plan.f_scope} Hz")
        dense = acquisition.interleave_reconstruct(scope, plan, args.mode)
    else:
        mod = synth.modulation_by_name(args.mod)
        frame = _symbol_pattern(mod, args.prbs_degree, None, args.pattern_len)
        sps = plan.f_scope / plan.f_sym
        scope = synth.pulse_shape(frame, args.rolloff, args.span, sps,
                                  plan.covered_repetitions, plan.f_sym)
        dense = acquisition.interleave_reconstruct(scope, plan, 'strict')
        direct = synth.pulse_shape(frame, args.rolloff, args.span, plan.ratio.p, 1, plan.f_sym)
        error = float(np.max(np.abs(dense.samples - direct.samples)))
        notes.append(f"max |interleaved - direct| = {error:.3e}")

    ws.write_json('plan.json', plan.to_dict())
    ws.write_waveform('scope_record.csv', scope)
    ws.write_waveform('interleaved.csv', dense)
    ws.write_table('positions.csv', pd.DataFrame({
        'sample_index': np.arange(plan.required_samples),
        'slot': plan.positions,
        'symbol_position': acquisition.sample_positions(plan),
    }))
    if plan.degenerate:
        notes.append("q = 1: synchronous sampling, interleaving adds no resolution")
    ws.summary('interleave', "EQUIVALENT-TIME INTERLEAVE", {
        'Plan': {
            'p': plan.ratio.p,
            'q': plan.ratio.q,
            'points_per_symbol': plan.ratio.points_per_symbol,
            'required_samples': plan.required_samples,
            'covered_repetitions': plan.covered_repetitions,
            'effective_rate_hz': plan.effective_rate,
        },
        'Records': {'scope_samples': scope.n, 'interleaved_samples': dense.n},
    }, notes=notes)


def cmd_jitter_comp(args, ws):
    refs = [_read_real(ws, p, "Reference record") for p in args.ref]
    sigs = [ws.read_input(p) for p in args.sig]
    estimate = acquisition.iq_jitter_estimate(refs, args.fref, args.threads)
    compensated = acquisition.iq_jitter_compensate(sigs, estimate)

    ws.write_table('jitter.csv', pd.DataFrame({
        'record': np.arange(estimate.per_record_dt.size),
        'dt_s': estimate.per_record_dt,
        'ref_amplitude': estimate.amplitudes,
        'wrap_risk': estimate.wrap_risk.astype(int),
    }))
    ws.write_waveform('compensated.csv', compensated)
    notes = []
    if np.any(estimate.wrap_risk):
        notes.append(f"{int(np.count_nonzero(estimate.wrap_risk))} record(s) near the phase ambiguity limit")
    ws.summary('jitter-comp', "TRIGGER-JITTER COMPENSATION", {
        'Estimate': {
            'records': estimate.per_record_dt.size,
            'f_ref_hz': estimate.f_ref,
            'rms_dt_s': float(np.sqrt(np.mean(estimate.per_record_dt ** 2))),
            'ambiguity_range_s': estimate.ambiguity_range,
        },
    }, notes=notes)


def _read_symbols(ws, path, mod_name):
    mod = synth.modulation_by_name(mod_name) if mod_name else None
    return ws.read_input(path, lambda p: waveform_io.read_symbol_frame(p, mod))


def cmd_evm(args, ws):
    received = _read_symbols(ws, args.received, args.mod)
    reference = _read_symbols(ws, args.reference, args.mod) if args.reference else None
    mode = args.mode or ('data_aided' if reference is not None else 'decision_directed')
    result = metrics.evm(received, reference, args.normalization, mode)
    snr = metrics.snr_from_evm(result)
    ber = metrics.ber_from_evm(result, received.mod)
    ws.write_json('evm.json', {
        'evm_rms': result.evm_rms,
        'evm_percent': result.evm_percent,
        'normalization': result.normalization,
        'mode': result.mode,
        'n_symbols': result.n_symbols,
        'snr_linear': snr.linear,
        'snr_db': snr.db,
        'snr_warning': snr.warning,
        'ber_from_evm': ber.ber,
    })
    ws.summary('evm', "ERROR-VECTOR MAGNITUDE", {
        'EVM': {'evm_percent': result.evm_percent, 'mode': result.mode,
                'normalization': result.normalization, 'symbols': result.n_symbols},
        'Derived': {'snr_db': snr.db, 'ber_from_evm': ber.ber},
    }, notes=[snr.warning] if snr.warning else [])


def cmd_ber_predict(args, ws):
    mod = synth.modulation_by_name(args.mod)
    if args.evm_rms is not None:
        e = metrics.EvmResult(args.evm_rms, 'average', 'data_aided', 0)
    else:
        e = metrics.EvmResult(10 ** (-args.snr_db / 20), 'average', 'data_aided', 0)
    snr = metrics.snr_from_evm(e)
    ber = metrics.ber_from_evm(e, mod)
    ws.write_json('ber_predict.json', {
        'modulation': mod.name,
        'evm_rms': e.evm_rms,
        'snr_db': snr.db,
        'ber': ber.ber,
        'source': ber.source,
    })
    ws.summary('ber-predict', "PREDICTED BER", {
        'Prediction': {'modulation': mod.name, 'evm_rms': e.evm_rms,
                       'snr_db': snr.db, 'ber': ber.ber},
    })


def cmd_ber_count(args, ws):
    truth = ws.read_input(args.truth, waveform_io.read_bits)
    if args.decided:
        decided = ws.read_input(args.decided, waveform_io.read_bits)
    else:
        received = _read_symbols(ws, args.received, args.mod)
        _, decided = metrics.decide_symbols(received)
    ber = metrics.count_bit_errors(decided, truth)
    ws.write_json('ber_count.json', {
        'ber': ber.ber,
        'n_bits': ber.n_bits,
        'n_errors': ber.n_errors,
        'wilson_ci95': list(ber.wilson_ci95),
    })
    ws.summary('ber-count', "COUNTED BER", {
        'Count': {'bits': ber.n_bits, 'errors': ber.n_errors, 'ber': ber.ber,
                  'ci95_lo': ber.wilson_ci95[0], 'ci95_hi': ber.wilson_ci95[1]},
    })


def _snr_list(text):
    try:
        values = [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty SNR list")
    return values


def cmd_ber_sweep(args, ws):
    _require_seed(args, "for ber-sweep")
    mod = synth.modulation_by_name(args.mod)
    table = metrics.ber_sweep(mod, args.snr_db, args.symbols, args.seed, args.threads)
    ws.write_table('ber_sweep.csv', table)

    n_bits = args.symbols * mod.bits_per_symbol
    rows = []
    for row in table.itertuples(index=False):
        counted = metrics.count_bit_errors_from_totals(round(row.ber_counted * n_bits), n_bits)
        agreement = metrics.binomial_agreement(
            counted, metrics.BerEstimate(row.ber_from_evm, 'evm_predicted'))
        rows.append({**row._asdict(), 'z': agreement.z_score, 'agrees': agreement.agrees})
    ws.render('summary.txt', 'ber_sweep.txt', modulation=mod.name, n_symbols=args.symbols,
              seed=args.seed, sigmas=metrics.AGREEMENT_SIGMAS, rows=rows)


def _read_line_manifest(path):
    data = waveform_io.read_json(path)
    missing = [k for k in ('velocity', 'positions', 'spectra') if k not in data]
    if missing:
        raise ValidationError(f"{path}: line manifest is missing {missing}")
    return data


def cmd_wavesplit(args, ws):
    line = ws.read_input(args.line, _read_line_manifest)
    base = Path(args.line).parent
    spectra = [ws.read_input(base / name) for name in line['spectra']]
    measurement = wavesplit.LineMeasurement(line['positions'], spectra, line['velocity'])
    result = wavesplit.split_waves(measurement, args.cond_threshold)

    ws.write_waveform('forward.csv', result.forward)
    ws.write_waveform('reverse.csv', result.reverse)
    ws.write_table('wavesplit_bins.csv', pd.DataFrame({
        'freq_hz': result.forward.freqs,
        'condition': result.condition,
        'singular': result.singular_mask.astype(int),
        'residual_norm': result.residual_norm,
    }))
    ws.summary('wavesplit', "TRAVELLING-WAVE SEPARATION", {
        'Geometry': {'positions': measurement.positions.size,
                     'velocity_m_per_s': measurement.velocity},
        'Solve': {'bins': result.singular_mask.size,
                  'masked_bins': int(np.count_nonzero(result.singular_mask)),
                  'cond_threshold': args.cond_threshold},
    })


COMMANDS = {
    'synth': cmd_synth,
    'prbs': cmd_prbs,
    'cmrr': cmd_cmrr,
    'interleave': cmd_interleave,
    'jitter-comp': cmd_jitter_comp,
    'evm': cmd_evm,
    'ber-predict': cmd_ber_predict,
    'ber-count': cmd_ber_count,
    'ber-sweep': cmd_ber_sweep,
    'wavesplit': cmd_wavesplit,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="Output directory for this run")
    common.add_argument("--force", action="store_true", help="Overwrite a non-empty output directory")
    common.add_argument("--seed", type=int, default=None, help="Campaign seed (required for stochastic runs)")
    common.add_argument("--threads", type=int, default=1, help="Worker threads for parallel loops")
    common.add_argument("--json-errors", action="store_true", help="Report errors as one JSON object")
    common.add_argument("--quiet", action="store_true", help="Suppress progress output")
    return common


def build_parser():
    parser = argparse.ArgumentParser(prog="metrology.py", description="Waveform metrology toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()

    p = sub.add_parser("synth", parents=[common], help="Synthesize test waveforms")
    p.add_argument("--what", choices=["symbols", "pair"], default="symbols")
    p.add_argument("--mod", default="qpsk", help="qpsk or qam16")
    p.add_argument("--prbs-degree", type=int, default=7)
    p.add_argument("--prbs-seed", type=int, default=None)
    p.add_argument("--symbols", type=int, default=None, help="Pattern length L (default: PRBS period)")
    p.add_argument("--rolloff", type=float, default=0.35)
    p.add_argument("--span", type=int, default=8, help="RRC span in symbols")
    p.add_argument("--sps", default="4", help="Samples per symbol, integer or p/q")
    p.add_argument("--fsym", default="28000000000", help="Symbol rate in Baud, integer or num/den")
    p.add_argument("--repetitions", type=int, default=None)
    p.add_argument("--snr-db", type=float, default=synth.SNR_NO_NOISE)
    p.add_argument("--n", type=int, default=4096, help="Balanced pair record length")
    p.add_argument("--fs", default="100000000000", help="Balanced pair sample rate in Hz")
    p.add_argument("--bandwidth", type=float, default=20e9, help="Photodiode 3 dB bandwidth in Hz")
    p.add_argument("--gain", type=float, default=1.0)
    p.add_argument("--delay", type=float, default=0.0, help="Negative-arm delay in s")
    p.add_argument("--ripple-amp", type=float, default=0.0)
    p.add_argument("--ripple-freq", type=float, default=10e9)
    p.add_argument("--impulse-index", type=int, default=0)

    p = sub.add_parser("prbs", parents=[common], help="Generate a PRBS bit pattern")
    p.add_argument("--degree", type=int, default=7)
    p.add_argument("--prbs-seed", type=int, default=None)
    p.add_argument("--length", type=int, default=None, help="Bits to emit (default: one period)")

    p = sub.add_parser("cmrr", parents=[common], help="Optimized CMRR of a balanced pair")
    p.add_argument("--vp", required=True, help="Positive-arm waveform file")
    p.add_argument("--vn", required=True, help="Negative-arm waveform file")
    p.add_argument("--band-lo", type=float, default=None, help="Band start in Hz")
    p.add_argument("--band-hi", type=float, default=None, help="Band end in Hz")
    p.add_argument("--tau-window", type=float, default=None, help="Delay search half-width in s")

    p = sub.add_parser("interleave", parents=[common], help="Equivalent-time interleaving")
    p.add_argument("--fs", required=True, help="Scope sample rate in Hz, integer or num/den")
    p.add_argument("--fsym", required=True, help="Symbol rate in Baud, integer or num/den")
    p.add_argument("--pattern-len", type=int, required=True)
    p.add_argument("--plan-only", action="store_true", help="Print the plan and exit")
    p.add_argument("--input", default=None, help="Scope record to reconstruct (default: synthesize)")
    p.add_argument("--mode", choices=["strict", "average"], default="strict")
    p.add_argument("--mod", default="qpsk")
    p.add_argument("--prbs-degree", type=int, default=7)
    p.add_argument("--rolloff", type=float, default=0.35)
    p.add_argument("--span", type=int, default=8)

    p = sub.add_parser("jitter-comp", parents=[common], help="Reference-tone jitter compensation")
    p.add_argument("--ref", nargs="+", required=True, help="Reference-channel records")
    p.add_argument("--sig", nargs="+", required=True, help="Signal-channel records")
    p.add_argument("--fref", type=float, required=True, help="Reference tone frequency in Hz")

    p = sub.add_parser("evm", parents=[common], help="EVM of a symbol frame")
    p.add_argument("--received", required=True, help="Received symbol file")
    p.add_argument("--reference", default=None, help="Reference symbol file (data-aided)")
    p.add_argument("--mod", default=None, help="Override the modulation header")
    p.add_argument("--normalization", choices=list(metrics.NORMALIZATIONS), default="average")
    p.add_argument("--mode", choices=list(metrics.EVM_MODES), default=None)

    p = sub.add_parser("ber-predict", parents=[common], help="BER predicted from EVM or SNR")
    p.add_argument("--mod", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--evm-rms", type=float, help="RMS EVM as a fraction")
    group.add_argument("--snr-db", type=float)

    p = sub.add_parser("ber-count", parents=[common], help="Counted BER")
    p.add_argument("--truth", required=True, help="Transmitted bit file")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--decided", help="Decided bit file")
    group.add_argument("--received", help="Received symbol file (hard decisions applied)")
    p.add_argument("--mod", default=None)

    p = sub.add_parser("ber-sweep", parents=[common], help="Counted vs predicted BER sweep")
    p.add_argument("--mod", required=True)
    p.add_argument("--snr-db", type=_snr_list, required=True, help="Comma-separated SNR list in dB")
    p.add_argument("--symbols", type=int, required=True, help="Symbols per SNR point")

    p = sub.add_parser("wavesplit", parents=[common], help="Forward/reverse wave separation")
    p.add_argument("--line", required=True,
                   help="JSON with velocity, positions and spectra (files relative to it)")
    p.add_argument("--cond-threshold", type=float, default=wavesplit.COND_THRESHOLD_DEFAULT)

    p = sub.add_parser("replay", parents=[common], help="Re-run a manifest and verify outputs")
    p.add_argument("manifest", help="manifest.json of an earlier run")

    return parser


def _normalize_inputs(args):
    """Make input paths absolute so a manifest replays from any directory"""
    for name in INPUT_ARGS:
        value = getattr(args, name, None)
        if isinstance(value, list):
            setattr(args, name, [str(Path(v).resolve()) for v in value])
        elif isinstance(value, str):
            setattr(args, name, str(Path(value).resolve()))


def _params(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in RUN_ARGS}


def execute(args):
    """Run one analysis subcommand into its output directory"""
    if args.out is None:
        raise ValidationError("--out is required")
    ws = RunWorkspace(args.out, args.force, args.quiet)
    ws.banner(f"🔬 METROLOGY {args.command.upper()} v{TOOL_VERSION}")
    ws.prepare()
    COMMANDS[args.command](args, ws)
    ws.write_manifest(args.command, _params(args))
    logger.info("run_complete", command=args.command, outputs=len(ws.outputs))
    ws.print_statistics()
    ws.say("✅ Run completed successfully!\n")
    return ws


def replay(args):
    """Re-execute a manifest and compare output digests"""
    manifest = waveform_io.read_json(args.manifest)
    if manifest.get('tool_version') != TOOL_VERSION:
        raise ValidationError(
            f"Manifest was written by tool version {manifest.get('tool_version')!r}, "
            f"this is {TOOL_VERSION}")
    command = manifest.get('subcommand')
    if command not in COMMANDS:
        raise ValidationError(f"Manifest names unknown subcommand {command!r}")
    for path, digest in manifest.get('inputs', {}).items():
        if waveform_io.file_digest(path) != digest:
            raise ValidationError(f"Input {path} changed since the recorded run")

    run_args = argparse.Namespace(command=command, out=args.out, force=args.force,
                                  quiet=args.quiet, json_errors=args.json_errors,
                                  **waveform_io.decode_nonfinite(manifest['params']))
    ws = execute(run_args)
    expected = manifest.get('outputs', {})
    differing = sorted(name for name in set(expected) | set(ws.outputs)
                       if expected.get(name) != ws.outputs.get(name))
    if differing:
        raise ReplayMismatchError(f"Replay did not reproduce: {', '.join(differing)}")
    ws.say(f"✅ Replay reproduced all {len(expected)} output(s) byte-for-byte\n")
    return 0


def _report_error(exc, exit_code, json_errors):
    if json_errors:
        print(json.dumps({'error': type(exc).__name__, 'message': str(exc),
                          'exit_code': exit_code}), file=sys.stderr)
    else:
        print(f"❌ {type(exc).__name__}: {exc}", file=sys.stderr)


def run_subcommand(argv):
    """
    Parse argv and run one subcommand.

    Returns:
        exit code: 0 success, 2 validation, 3 numerical failure, 4 I/O error
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    configure_logging(args.quiet)
    try:
        if args.command == 'interleave' and args.plan_only:
            plan = acquisition.interleave_plan(args.fs, args.fsym, args.pattern_len)
            print(_plan_line(plan))
            return 0
        if args.command == 'replay':
            return replay(args)
        _normalize_inputs(args)
        execute(args)
        return 0
    except MetrologyError as exc:
        _report_error(exc, exc.exit_code, args.json_errors)
        return exc.exit_code
    except OSError as exc:
        _report_error(exc, EXIT_IO_ERROR, args.json_errors)
        return EXIT_IO_ERROR


def main():
    """Main entry point"""
    return run_subcommand(sys.argv[1:])


if __name__ == '__main__':
    sys.exit(main())
