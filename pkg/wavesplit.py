"""
Forward/reverse travelling-wave separation on a lossless line.

At every frequency the voltage measured at position z_i is modelled as

    V(z_i) = F exp(-j beta z_i) + G exp(+j beta z_i),   beta = 2 pi f / v

which is an N x 2 complex least-squares problem per bin. All bins are
solved together with a batched SVD; bins whose condition number exceeds
the threshold (the two columns are nearly parallel, e.g. beta * dz = n pi
for two positions, and always at DC) are masked with NaN.
"""

from dataclasses import dataclass

import numpy as np
import structlog

from errors import DegenerateGeometryError, ValidationError
from signalcore import check_same_grid

logger = structlog.get_logger(__name__)

COND_THRESHOLD_DEFAULT = 1e3


@dataclass(frozen=True, eq=False)
class LineMeasurement:
    """
    Attributes:
        positions: measurement positions z_i in meters (distinct)
        spectra: one Spectrum per position, all on one grid
        velocity: phase velocity in m/s
    """

    positions: np.ndarray
    spectra: tuple
    velocity: float

    def __post_init__(self):
        positions = np.array(self.positions, dtype=np.float64, copy=True).reshape(-1)
        spectra = tuple(self.spectra)
        if positions.size < 2:
            raise ValidationError("At least two measurement positions are needed")
        if not np.all(np.isfinite(positions)):
            raise ValidationError("Measurement positions must be finite")
        if np.unique(positions).size != positions.size:
            raise ValidationError(f"Duplicate measurement positions: {positions.tolist()}")
        if len(spectra) != positions.size:
            raise ValidationError(
                f"{positions.size} positions but {len(spectra)} spectra")
        for i, spec in enumerate(spectra[1:], start=1):
            check_same_grid(spectra[0], spec, f"position 0 and position {i}")
        if not (np.isfinite(self.velocity) and self.velocity > 0):
            raise ValidationError(f"Phase velocity must be positive, got {self.velocity!r}")
        positions.setflags(write=False)
        object.__setattr__(self, 'positions', positions)
        object.__setattr__(self, 'spectra', spectra)
        object.__setattr__(self, 'velocity', float(self.velocity))

    @property
    def grid(self):
        return self.spectra[0]


@dataclass(frozen=True, eq=False)
class WaveSplitResult:
    """
    Attributes:
        forward, reverse: F and G spectra; masked bins hold NaN
        condition: per-bin condition number of the position matrix
        singular_mask: True where the bin was not solved
        residual_norm: per-bin norm of the least-squares residual (NaN if masked)
        velocity: phase velocity used, m/s
    """

    forward: object
    reverse: object
    condition: np.ndarray
    singular_mask: np.ndarray
    residual_norm: np.ndarray
    velocity: float

    def filled(self, value=0.0):
        """Copy with masked bins replaced by `value`, for inverse transforms"""
        fwd = np.where(self.singular_mask, value, self.forward.bins)
        rev = np.where(self.singular_mask, value, self.reverse.bins)
        return WaveSplitResult(self.forward.replace_bins(fwd), self.reverse.replace_bins(rev),
                               self.condition, self.singular_mask, self.residual_norm,
                               self.velocity)


def _phase_columns(freqs, positions, velocity):
    """(n_bins, n_positions, 2) model matrices"""
    beta = 2 * np.pi * np.asarray(freqs) / velocity
    phase = np.outer(beta, positions)
    return np.stack([np.exp(-1j * phase), np.exp(1j * phase)], axis=-1)


def split_waves(m, cond_threshold=COND_THRESHOLD_DEFAULT):
    """
    Least-squares (F, G) per bin.

    Raises:
        ValidationError: cond_threshold < 1
        DegenerateGeometryError: every bin exceeds the condition threshold
    """
    if not cond_threshold >= 1:
        raise ValidationError(f"Condition threshold must be >= 1, got {cond_threshold!r}")

    grid = m.grid
    a = _phase_columns(grid.freqs, m.positions, m.velocity)
    v = np.stack([s.bins for s in m.spectra], axis=-1)  # (n_bins, n_positions)

    u, s, vh = np.linalg.svd(a, full_matrices=False)
    with np.errstate(divide='ignore', invalid='ignore'):
        condition = s[:, 0] / s[:, 1]
    condition = np.where(s[:, 1] > 0, condition, np.inf)
    singular = ~(condition <= cond_threshold) | ~np.all(np.isfinite(v), axis=1)

    if np.all(singular):
        raise DegenerateGeometryError(
            f"All {singular.size} bins exceed condition number {cond_threshold:g}; "
            "measurement positions cannot separate the waves")

    # x = V S^-1 U^H b, only over solvable bins
    ok = ~singular
    proj = np.einsum('kij,ki->kj', u[ok].conj(), v[ok]) / s[ok]
    x = np.einsum('kji,kj->ki', vh[ok].conj(), proj)

    coeffs = np.full((grid.n_bins, 2), np.nan + 0j)
    coeffs[ok] = x
    residual = np.full(grid.n_bins, np.nan)
    residual[ok] = np.linalg.norm(np.einsum('kij,kj->ki', a[ok], x) - v[ok], axis=1)

    n_masked = int(np.count_nonzero(singular))
    if n_masked:
        logger.info("wavesplit_bins_masked", count=n_masked, total=grid.n_bins,
                    cond_threshold=cond_threshold)
    return WaveSplitResult(grid.replace_bins(coeffs[:, 0]), grid.replace_bins(coeffs[:, 1]),
                           condition, singular, residual, m.velocity)


def propagate(result, z):
    """V(z) = F exp(-j beta z) + G exp(+j beta z); masked bins stay NaN"""
    freqs = result.forward.freqs
    beta = 2 * np.pi * freqs / result.velocity
    bins = result.forward.bins * np.exp(-1j * beta * z) + result.reverse.bins * np.exp(1j * beta * z)
    return result.forward.replace_bins(bins)


def synthesize_line(forward, reverse, positions, velocity):
    """Noiseless LineMeasurement for given F and G spectra"""
    check_same_grid(forward, reverse, "forward and reverse waves")
    positions = np.asarray(positions, dtype=np.float64)
    a = _phase_columns(forward.freqs, positions, velocity)
    v = a[..., 0] * forward.bins[:, None] + a[..., 1] * reverse.bins[:, None]
    spectra = [forward.replace_bins(v[:, i]) for i in range(positions.size)]
    return LineMeasurement(positions, spectra, velocity)
