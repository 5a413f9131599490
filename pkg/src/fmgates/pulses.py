"""Piecewise-constant frequency-modulated pulses and their mode phases.

The drive frequency mu(t) is a right-continuous step function on segment
boundaries ``t_0 = 0 < t_1 < ... < t_S = tau``.  The accumulated phase of
mode k, ``theta_k(t) = integral of (mu - w_k)``, is piecewise linear and
is evaluated in closed form.
"""

import json
from dataclasses import dataclass

import numpy as np

from .constants import TWO_PI, to_hz
from .modes import ModeStructure


@dataclass(frozen=True)
class FMPulse:
    """An FM pulse: segment boundaries/frequencies, Rabi frequency, duration.

    All frequencies are angular (rad/s); ``symmetric`` asserts the
    time-reversal property mu(tau - t) = mu(t).
    """

    segment_boundaries: np.ndarray
    segment_frequencies: np.ndarray
    carrier_rabi: float
    symmetric: bool = False

    def __post_init__(self):
        bounds = np.asarray(self.segment_boundaries, dtype=float)
        freqs = np.asarray(self.segment_frequencies, dtype=float)
        object.__setattr__(self, "segment_boundaries", bounds)
        object.__setattr__(self, "segment_frequencies", freqs)
        if bounds.ndim != 1 or len(bounds) != len(freqs) + 1:
            raise ValueError("need len(segment_boundaries) == len(frequencies) + 1")
        if bounds[0] != 0.0:
            raise ValueError("first boundary must be t = 0")
        if np.any(np.diff(bounds) <= 0):
            raise ValueError("segment boundaries must be strictly increasing")
        if self.carrier_rabi < 0:
            raise ValueError("carrier_rabi must be non-negative")
        if self.symmetric:
            widths = np.diff(bounds)
            if not (
                np.allclose(freqs, freqs[::-1], rtol=0, atol=1e-9)
                and np.allclose(widths, widths[::-1], rtol=1e-12, atol=0)
            ):
                raise ValueError("pulse marked symmetric but mu(tau-t) != mu(t)")

    @property
    def duration(self) -> float:
        return float(self.segment_boundaries[-1])

    @property
    def segment_count(self) -> int:
        return len(self.segment_frequencies)

    @property
    def segment_widths(self) -> np.ndarray:
        return np.diff(self.segment_boundaries)

    def with_rabi(self, omega: float) -> "FMPulse":
        return FMPulse(
            self.segment_boundaries, self.segment_frequencies, omega, self.symmetric
        )

    def with_frequencies(self, freqs) -> "FMPulse":
        return FMPulse(
            self.segment_boundaries, freqs, self.carrier_rabi, self.symmetric
        )

    def reversed(self) -> "FMPulse":
        """The time-reversed pulse mu(tau - t)."""
        widths = self.segment_widths[::-1]
        bounds = np.concatenate(([0.0], np.cumsum(widths)))
        bounds[-1] = self.duration
        return FMPulse(
            bounds, self.segment_frequencies[::-1], self.carrier_rabi, self.symmetric
        )

    def concatenated(self, count: int) -> "FMPulse":
        """The same pulse repeated ``count`` times back to back."""
        if count < 1:
            raise ValueError("count must be >= 1")
        widths = np.tile(self.segment_widths, count)
        bounds = np.concatenate(([0.0], np.cumsum(widths)))
        return FMPulse(
            bounds,
            np.tile(self.segment_frequencies, count),
            self.carrier_rabi,
            symmetric=False,
        )

    def to_dict(self) -> dict:
        return {
            "tau_s": self.duration,
            "omega_rabi_hz": to_hz(self.carrier_rabi),
            "segments_hz": to_hz(self.segment_frequencies).tolist(),
            "symmetric": bool(self.symmetric),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FMPulse":
        freqs_hz = np.asarray(data["segments_hz"], dtype=float)
        n = len(freqs_hz)
        tau = float(data["tau_s"])
        bounds = np.linspace(0.0, tau, n + 1)
        bounds[-1] = tau
        return cls(
            segment_boundaries=bounds,
            segment_frequencies=TWO_PI * freqs_hz,
            carrier_rabi=TWO_PI * float(data["omega_rabi_hz"]),
            symmetric=bool(data["symmetric"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FMPulse":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class PhaseTrace:
    """theta_k at segment starts plus per-segment slopes, one row per mode."""

    boundaries: np.ndarray          # (S+1,)
    start_phases: np.ndarray        # (K, S+1): theta_k(t_i), last entry theta_k(tau)
    slopes: np.ndarray              # (K, S): mu_i - w_k

    def evaluate(self, times) -> np.ndarray:
        """theta_k(t) for each mode; returns shape (K, len(times))."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        idx = np.clip(
            np.searchsorted(self.boundaries, t, side="right") - 1,
            0,
            self.slopes.shape[1] - 1,
        )
        u = t - self.boundaries[idx]
        return self.start_phases[:, idx] + self.slopes[:, idx] * u


def build_symmetric_pulse(
    free_values, tau: float, omega: float, odd: bool = False
) -> FMPulse:
    """Mirror ``free_values`` into a time-symmetric equal-width pulse.

    ``odd=False`` yields ``2 * len(free_values)`` segments; ``odd=True``
    shares the final free value as the unmirrored middle segment.
    """
    free = np.asarray(free_values, dtype=float)
    if free.size < 1:
        raise ValueError("need at least one free segment value")
    if tau <= 0:
        raise ValueError("tau must be positive")
    if odd:
        freqs = np.concatenate([free, free[:-1][::-1]])
    else:
        freqs = np.concatenate([free, free[::-1]])
    bounds = np.linspace(0.0, tau, len(freqs) + 1)
    bounds[-1] = tau
    return FMPulse(bounds, freqs, omega, symmetric=True)


def free_segment_values(pulse: FMPulse) -> np.ndarray:
    """Inverse of :func:`build_symmetric_pulse` for symmetric pulses."""
    if not pulse.symmetric:
        raise ValueError("pulse is not symmetric")
    s = pulse.segment_count
    return pulse.segment_frequencies[: (s + 1) // 2].copy()


def phase_trace(pulse: FMPulse, modes: ModeStructure) -> PhaseTrace:
    """Accumulated phases theta_k(t) = integral of (mu - w_k), closed form."""
    widths = pulse.segment_widths
    slopes = pulse.segment_frequencies[None, :] - modes.mode_frequencies[:, None]
    start = np.zeros((modes.mode_count, pulse.segment_count + 1))
    np.cumsum(slopes * widths[None, :], axis=1, out=start[:, 1:])
    return PhaseTrace(
        boundaries=pulse.segment_boundaries, start_phases=start, slopes=slopes
    )


def sample_mu(pulse: FMPulse, times) -> np.ndarray:
    """Right-continuous samples of mu(t); t = tau returns the last segment."""
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(t < 0) or np.any(t > pulse.duration):
        raise ValueError("times must lie in [0, tau]")
    idx = np.clip(
        np.searchsorted(pulse.segment_boundaries, t, side="right") - 1,
        0,
        pulse.segment_count - 1,
    )
    return pulse.segment_frequencies[idx]
