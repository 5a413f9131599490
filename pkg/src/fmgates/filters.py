"""Filter functions and first-order gate-error predictions.

Four filter functions map noise PSDs into gate error: F_alpha / F_theta
for mode-frequency (and laser-phase) noise and G_alpha / G_theta for
laser-intensity noise.  With the two-sided spectra of ``noise`` (every
spectral quantity in rad/s except the Hz frequency axis):

    mode_freq:        E_nu = int df  S_delta(f) / (2 pi f)^2 * F_nu(f)
    laser_phase:      E_nu = int df  S_phi(f)                * F_nu(f; r_k = 1)
    laser_intensity:  E_nu = int df  S_Omega(f) / Omega^2    * G_nu(f)

The mode-frequency weight carries (2 pi f)^2 because the detuning noise
(rad/s) enters through its time integral, an angle.  The angle filter
functions are even in f; the displacement filter functions are NOT (their
offset expansion has complex coefficients), and the integrals above run
over both signs of f.  Predictions integrate by trapezoid on a
PSD-adapted grid between the PSD's infrared and high-frequency cutoffs;
Dirac-line PSDs are evaluated exactly with no quadrature.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .metrics import _check_pair, _eta
from .modes import ModeStructure
from .noise import NoisePSD
from .pulses import FMPulse
from .segments import SegmentGeometry

CHANNELS = ("mode_freq", "laser_phase", "laser_intensity")


def _ff_alpha(pulse, modes, pair, freqs, rk) -> np.ndarray:
    j1, j2 = _check_pair(modes, pair)
    geo = SegmentGeometry(pulse, modes.mode_frequencies)
    eta = _eta(modes, [j1, j2])
    eta_sq = np.sum(eta**2, axis=1)
    integral = geo.fourier_integral(freqs)
    return (
        pulse.carrier_rabi**2
        * 0.25
        * np.sum(eta_sq * rk**2 * np.abs(integral) ** 2, axis=-1)
    )


def _ff_theta(pulse, modes, pair, freqs, rk) -> np.ndarray:
    j1, j2 = _check_pair(modes, pair)
    geo = SegmentGeometry(pulse, modes.mode_frequencies)
    eta = modes.lamb_dicke
    q = geo.angle_filter_doubles(np.abs(freqs), kind="difference")
    x = np.sum(0.25 * rk * eta[:, j1] * eta[:, j2] * q, axis=-1)
    return pulse.carrier_rabi**4 * np.abs(x) ** 2


def f_alpha(pulse: FMPulse, modes: ModeStructure, pair, freqs) -> np.ndarray:
    """Displacement filter function for mode-frequency noise.

    Evaluated at signed f: F_alpha(f) equals the exact displacement error
    under static offsets delta_k = 2 pi f r_k, so positive and negative f
    generally differ; error integrals consume both.
    """
    return _ff_alpha(pulse, modes, pair, np.asarray(freqs, dtype=float),
                     modes.scaling_factors)


def f_theta(pulse: FMPulse, modes: ModeStructure, pair, freqs) -> np.ndarray:
    """Angle filter function for mode-frequency noise."""
    return _ff_theta(pulse, modes, pair, freqs, modes.scaling_factors)


def g_alpha(pulse: FMPulse, modes: ModeStructure, pair, freqs) -> np.ndarray:
    """Displacement filter function for intensity noise (= F_alpha at r_k = 1)."""
    return _ff_alpha(pulse, modes, pair, np.asarray(freqs, dtype=float),
                     np.ones(modes.mode_count))


def g_theta(pulse: FMPulse, modes: ModeStructure, pair, freqs) -> np.ndarray:
    """Angle filter function for intensity noise; nonzero at f = 0."""
    j1, j2 = _check_pair(modes, pair)
    geo = SegmentGeometry(pulse, modes.mode_frequencies)
    eta = modes.lamb_dicke
    q = geo.angle_filter_doubles(np.abs(freqs), kind="sum")
    y = np.sum(eta[:, j1] * eta[:, j2] * q, axis=-1) / 2j
    return 0.25 * pulse.carrier_rabi**4 * np.abs(y) ** 2


@dataclass(frozen=True)
class FilterFunctionTable:
    """Sampled filter functions on a frequency grid, plus a provenance hash."""

    frequencies_hz: np.ndarray
    f_alpha: np.ndarray
    f_theta: np.ndarray
    g_alpha: np.ndarray
    g_theta: np.ndarray
    fingerprint: str

    def write_csv(self, path) -> None:
        np.savetxt(
            path,
            np.column_stack(
                [self.frequencies_hz, self.f_alpha, self.f_theta,
                 self.g_alpha, self.g_theta]
            ),
            delimiter=",",
            header="f_hz,F_alpha,F_theta,G_alpha,G_theta",
            comments="",
        )

    @classmethod
    def read_csv(cls, path) -> "FilterFunctionTable":
        data = np.genfromtxt(path, delimiter=",", names=True)
        return cls(
            frequencies_hz=data["f_hz"],
            f_alpha=data["F_alpha"],
            f_theta=data["F_theta"],
            g_alpha=data["G_alpha"],
            g_theta=data["G_theta"],
            fingerprint="",
        )


def table_fingerprint(pulse: FMPulse, modes: ModeStructure, pair) -> str:
    blob = (
        pulse.to_json()
        + repr(modes.to_dict())
        + repr(tuple(int(j) for j in pair))
    ).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def compute_filter_table(
    pulse: FMPulse, modes: ModeStructure, pair, frequencies_hz
) -> FilterFunctionTable:
    f = np.asarray(frequencies_hz, dtype=float)
    return FilterFunctionTable(
        frequencies_hz=f,
        f_alpha=f_alpha(pulse, modes, pair, f),
        f_theta=f_theta(pulse, modes, pair, f),
        g_alpha=g_alpha(pulse, modes, pair, f),
        g_theta=g_theta(pulse, modes, pair, f),
        fingerprint=table_fingerprint(pulse, modes, pair),
    )


@dataclass(frozen=True)
class ErrorPrediction:
    """First-order error prediction and its integration diagnostics."""

    e_alpha: float
    e_theta: float
    channel: str
    f_min: float | None
    f_max: float | None
    grid_points: int

    @property
    def e_total(self) -> float:
        return self.e_alpha + self.e_theta


def predict_error(
    pulse: FMPulse,
    modes: ModeStructure,
    pair,
    psd: NoisePSD,
    channel: str = "mode_freq",
    points_per_decade: int = 100,
) -> ErrorPrediction:
    """Predicted E_alpha and E_theta for the given noise channel.

    Dirac-line PSDs are evaluated exactly; band PSDs are integrated with
    the trapezoid rule on the PSD-adapted grid over
    [-f_max, -f_min] + [f_min, f_max] (evenness folds this to twice the
    positive-frequency integral).
    """
    if channel not in CHANNELS:
        raise ValueError(f"channel must be one of {CHANNELS}")
    ffa, fft = _channel_filters(pulse, modes, pair, channel)

    if psd.kind == "monotone_line":
        fline = psd.line_frequency
        weight = _channel_weight(channel, pulse, np.array([fline]))[0]
        quarter_power = 0.25 * psd.line_amplitude**2
        both = ffa(np.array([fline, -fline]))
        return ErrorPrediction(
            e_alpha=float(quarter_power * weight * (both[0] + both[1])),
            e_theta=float(
                2.0 * quarter_power * weight * fft(np.array([fline]))[0]
            ),
            channel=channel,
            f_min=None,
            f_max=fline,
            grid_points=1,
        )

    if psd.has_one_over_f and psd.f_min is None:
        raise ValueError(
            "1/f noise makes the low-frequency integrand non-integrable; "
            "an explicit f_min is required"
        )
    grid = psd.integration_grid(points_per_decade)
    s = psd.values(grid)
    weight = _channel_weight(channel, pulse, grid)
    alpha_both = ffa(grid) + ffa(-grid)
    e_alpha = np.trapezoid(s * weight * alpha_both, grid)
    e_theta = 2.0 * np.trapezoid(s * weight * fft(grid), grid)
    return ErrorPrediction(
        e_alpha=float(e_alpha),
        e_theta=float(e_theta),
        channel=channel,
        f_min=psd.f_min,
        f_max=psd.f_max,
        grid_points=len(grid),
    )


def _channel_filters(pulse, modes, pair, channel):
    if channel == "mode_freq":
        return (
            lambda f: f_alpha(pulse, modes, pair, f),
            lambda f: f_theta(pulse, modes, pair, f),
        )
    if channel == "laser_phase":
        ones = np.ones(modes.mode_count)
        return (
            lambda f: _ff_alpha(pulse, modes, pair, f, ones),
            lambda f: _ff_theta(pulse, modes, pair, f, ones),
        )
    return (
        lambda f: g_alpha(pulse, modes, pair, f),
        lambda f: g_theta(pulse, modes, pair, f),
    )


def _channel_weight(channel, pulse, freqs):
    if channel == "mode_freq":
        return 1.0 / (2.0 * np.pi * freqs) ** 2
    if channel == "laser_phase":
        return np.ones_like(freqs)
    if pulse.carrier_rabi == 0.0:
        raise ValueError("laser_intensity channel needs a nonzero Rabi frequency")
    return np.full_like(freqs, 1.0 / pulse.carrier_rabi**2)
