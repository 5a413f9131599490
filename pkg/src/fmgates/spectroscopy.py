"""CPMG noise spectroscopy: filter kernels, forward model, PSD inversion.

A CPMG sequence of L pi pulses at interval tau_tilde acts as a narrowband
filter peaked near f = 1 / (2 tau_tilde).  The Ramsey contrast after the
sequence is exp(-chi) with

    chi = 4 int_0^inf S(f) |y(f)|^2 df,

so sweeping the interval maps out S(f).  The default inversion treats the
filter as narrowband, S(1/(2 tau_tilde)) ~ chi / (4 int |y|^2 df); an
optional joint fit adjusts a log-space tabulated PSD against all
measurements at once.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .noise import NoisePSD


@dataclass(frozen=True)
class CPMGSequence:
    """L pi pulses; default timestamps (i - 1/2) tau_tilde."""

    pulse_count: int
    interval: float
    timestamps: np.ndarray = None

    def __post_init__(self):
        if self.pulse_count < 1:
            raise ValueError("pulse_count must be >= 1")
        if self.interval <= 0:
            raise ValueError("interval must be positive")
        if self.timestamps is None:
            stamps = (np.arange(1, self.pulse_count + 1) - 0.5) * self.interval
            object.__setattr__(self, "timestamps", stamps)
        else:
            stamps = np.asarray(self.timestamps, dtype=float)
            if len(stamps) != self.pulse_count or np.any(np.diff(stamps) <= 0):
                raise ValueError("need pulse_count strictly increasing timestamps")
            object.__setattr__(self, "timestamps", stamps)

    @property
    def total_time(self) -> float:
        return self.pulse_count * self.interval

    @property
    def peak_frequency(self) -> float:
        return 0.5 / self.interval

    def boundaries(self) -> np.ndarray:
        """tau_0 = 0, the pulse timestamps, tau_{L+1} = L tau_tilde."""
        return np.concatenate(([0.0], self.timestamps, [self.total_time]))


def cpmg_filter(seq: CPMGSequence, freqs) -> np.ndarray:
    """Complex filter amplitude y(f); |y|^2 is the sequence filter function.

    The f = 0 limit is handled analytically (zero for the standard CPMG
    spacing: an echo is blind to static dephasing).
    """
    f = np.atleast_1d(np.asarray(freqs, dtype=float))
    bounds = seq.boundaries()
    signs = (-1.0) ** np.arange(seq.pulse_count + 1)
    out = np.empty(f.shape, dtype=complex)
    nonzero = f != 0.0
    fz = f[nonzero]
    phases = np.exp(2j * np.pi * fz[:, None] * bounds[None, :])
    out[nonzero] = (
        np.sum(signs * (phases[:, :-1] - phases[:, 1:]), axis=1)
        / (2.0 * np.pi * fz)
    )
    if np.any(~nonzero):
        out[~nonzero] = 1j * np.sum(signs * (bounds[:-1] - bounds[1:]))
    return out


def _filter_grid(seq: CPMGSequence, f_max: float) -> np.ndarray:
    """Linear grid resolving the filter lobes up to f_max."""
    step = 1.0 / (16.0 * seq.total_time)
    return np.arange(step, f_max + step, step)


def filter_norm(seq: CPMGSequence, f_max: float | None = None) -> float:
    """int_0^inf |y(f)|^2 df (truncated where the lobes have decayed)."""
    if f_max is None:
        f_max = 200.0 * seq.peak_frequency
    grid = _filter_grid(seq, f_max)
    return float(np.trapezoid(np.abs(cpmg_filter(seq, grid)) ** 2, grid))


def forward_contrast(
    psd: NoisePSD, seq: CPMGSequence, rel_tol: float = 1e-3
) -> tuple[float, float]:
    """(chi, contrast) for the PSD seen through the CPMG filter.

    Composite trapezoid on a lobe-resolving grid, refined by doubling until
    the decay exponent changes by less than ``rel_tol``.
    """
    if psd.kind == "monotone_line":
        y2 = np.abs(cpmg_filter(seq, [psd.line_frequency])[0]) ** 2
        chi = 4.0 * 0.5 * psd.line_amplitude**2 * y2  # two-sided line power
        return float(chi), float(np.exp(-chi))
    f_lo = psd.f_min if psd.f_min else 1e-2 / seq.total_time
    f_hi = psd.f_max if psd.f_max else 200.0 * seq.peak_frequency
    f_hi = min(f_hi, 2000.0 * seq.peak_frequency)

    def quad(points_scale):
        step = 1.0 / (16.0 * points_scale * seq.total_time)
        grid = np.arange(max(f_lo, step / 4), f_hi + step, step)
        vals = psd.values(grid) * np.abs(cpmg_filter(seq, grid)) ** 2
        return 4.0 * np.trapezoid(vals, grid)

    chi = quad(1)
    for scale in (2, 4, 8):
        refined = quad(scale)
        if abs(refined - chi) <= rel_tol * max(abs(refined), 1e-300):
            chi = refined
            break
        chi = refined
    return float(chi), float(np.exp(-chi))


@dataclass(frozen=True)
class ContrastMeasurement:
    pulse_count: int
    interval: float
    contrast: float
    contrast_std: float = 0.0

    @property
    def sequence(self) -> CPMGSequence:
        return CPMGSequence(self.pulse_count, self.interval)


def read_measurements_csv(path) -> list[ContrastMeasurement]:
    data = np.genfromtxt(path, delimiter=",", names=True)
    data = np.atleast_1d(data)
    has_std = "contrast_std" in data.dtype.names
    return [
        ContrastMeasurement(
            pulse_count=int(row["L"]),
            interval=float(row["tau_tilde_s"]),
            contrast=float(row["contrast"]),
            contrast_std=float(row["contrast_std"]) if has_std else 0.0,
        )
        for row in data
    ]


def write_measurements_csv(path, measurements) -> None:
    rows = np.array(
        [
            (m.pulse_count, m.interval, m.contrast, m.contrast_std)
            for m in measurements
        ]
    )
    np.savetxt(
        path, rows, delimiter=",",
        header="L,tau_tilde_s,contrast,contrast_std", comments="",
    )


def invert_psd(
    measurements: list[ContrastMeasurement], joint_fit: bool = False
) -> NoisePSD:
    """Tabulated PSD estimate from CPMG contrast measurements.

    Narrowband estimator per point: S(1/(2 tau_tilde)) = chi / (4 int|y|^2).
    Points whose contrast lies outside (0, 1] are skipped with a warning;
    estimates landing on the same filter-peak frequency (overlapping bands
    from different L) are averaged.  ``joint_fit`` refines the table by a
    smoothness-regularized log-space least squares against all chis.
    """
    freqs, values, stds = [], [], []
    usable = []
    for m in measurements:
        if not 0.0 < m.contrast <= 1.0:
            warnings.warn(
                f"skipping measurement (L={m.pulse_count}, "
                f"tau={m.interval:.3e}): contrast {m.contrast} outside (0, 1]"
            )
            continue
        usable.append(m)
        seq = m.sequence
        chi = -np.log(m.contrast)
        denom = 4.0 * filter_norm(seq)
        freqs.append(seq.peak_frequency)
        values.append(chi / denom)
        stds.append((m.contrast_std / m.contrast) / denom)
    if len(freqs) < 1:
        raise ValueError("no usable contrast measurements")

    freqs = np.asarray(freqs)
    values = np.asarray(values)
    stds = np.asarray(stds)
    order = np.argsort(freqs)
    freqs, values, stds = freqs[order], values[order], stds[order]

    # Average overlapping bands (same peak frequency from different L).
    out_f, out_s, out_std = [], [], []
    i = 0
    while i < len(freqs):
        j = i
        while j + 1 < len(freqs) and abs(freqs[j + 1] - freqs[i]) <= 1e-9 * freqs[i]:
            j += 1
        out_f.append(freqs[i])
        out_s.append(np.mean(values[i : j + 1]))
        out_std.append(np.sqrt(np.sum(stds[i : j + 1] ** 2)) / (j - i + 1))
        i = j + 1
    out_f = np.asarray(out_f)
    out_s = np.asarray(out_s)
    out_std = np.asarray(out_std)

    if joint_fit and len(out_f) >= 3:
        out_s = _joint_fit(usable, out_f, out_s)
    return NoisePSD.tabulated(out_f, out_s, out_std)


def _joint_fit(measurements, meas_f, s_narrow, smoothness: float = 0.3):
    """Regularized least squares of a tabulated PSD against all chis.

    chi is linear in the tabulated values, so the fit is a nonnegative
    linear least-squares problem.  Knots are the measured peak frequencies
    plus log-midpoints (to absorb inter-knot curvature); the basis is
    piecewise linear in log f with a 1/f tail above the last knot, values
    are parameterized as corrections to the narrowband estimate, and a
    second-difference penalty keeps the corrections smooth.
    """
    mids = np.sqrt(meas_f[:-1] * meas_f[1:])
    knots = np.sort(np.concatenate([meas_f, mids]))
    s0 = np.exp(np.interp(np.log(knots), np.log(meas_f), np.log(np.maximum(s_narrow, 1e-300))))
    nk = len(knots)
    lk = np.log(knots)

    def basis(f):
        b = np.zeros((len(f), nk))
        inside = (f >= knots[0]) & (f <= knots[-1])
        idx = np.clip(np.searchsorted(knots, f[inside], side="right") - 1, 0, nk - 2)
        t = (np.log(f[inside]) - lk[idx]) / (lk[idx + 1] - lk[idx])
        rows = np.where(inside)[0]
        b[rows, idx] = 1.0 - t
        b[rows, idx + 1] = t
        b[f < knots[0], 0] = 1.0
        above = f > knots[-1]
        b[above, nk - 1] = knots[-1] / f[above]
        return b

    f_hi = 10.0 * knots[-1]
    amat = np.zeros((len(measurements), nk))
    chis = np.zeros(len(measurements))
    for i, m in enumerate(measurements):
        seq = m.sequence
        grid = _filter_grid(seq, f_hi)
        y2 = np.abs(cpmg_filter(seq, grid)) ** 2
        amat[i] = 4.0 * np.trapezoid(y2[:, None] * basis(grid), grid, axis=0)
        chis[i] = -np.log(m.contrast)
    rows = amat * s0[None, :] / chis[:, None]
    penalty = np.zeros((nk - 2, nk))
    for i in range(nk - 2):
        penalty[i, i : i + 3] = (1.0, -2.0, 1.0)
    lhs = np.vstack([rows, smoothness * penalty])
    rhs = np.concatenate([np.ones(len(measurements)), np.zeros(nk - 2)])
    x, _ = nnls(lhs, rhs)
    s_full = s0 * x
    return np.exp(
        np.interp(np.log(meas_f), lk, np.log(np.maximum(s_full, 1e-300)))
    )
