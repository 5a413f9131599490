"""Noise power spectral densities and time-domain realizations.

All PSDs are two-sided, S(f) = S(-f) >= 0, with f in Hz.  The composite
model adds a Gaussian peak and a 1/f component through the amplitude-sum
rule S = (sqrt(S1) + sqrt(S2))^2, each part normalized so that it alone
realizes a requested standard deviation; the 1/f part needs an explicit
infrared cutoff ``f_min`` for its variance to exist.

Traces are synthesized as sums of cosines with independent uniform phases,

    delta(t) = sum_m 2 sqrt(S(f_m) df_m) cos(2 pi f_m t + phi_m),

whose ensemble variance reproduces the two-sided band integral of S.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .constants import TWO_PI

DEFAULT_F_MIN = 1.0
DEFAULT_F_MAX = 13.3e6
DEFAULT_GAUSSIAN_STD = TWO_PI * 500.0
DEFAULT_ONEOVERF_STD = TWO_PI * 100.0
DEFAULT_STATIC_STD = TWO_PI * np.hypot(500.0, 100.0)

_KINDS = ("gaussian_plus_oneoverf", "monotone_line", "tabulated", "white")


@dataclass(frozen=True)
class NoisePSD:
    """Two-sided noise PSD in one of four parametric families."""

    kind: str
    f_min: float | None = None
    f_max: float | None = None
    # gaussian_plus_oneoverf
    f_c: float | None = None
    sigma: float | None = None
    gaussian_norm: float = 0.0      # N1: two-sided variance of the peak part
    oneoverf_norm: float = 0.0      # N2: S2(f) = N2 / |f|
    # monotone_line
    line_amplitude: float | None = None
    line_frequency: float | None = None
    # white
    level: float | None = None
    # tabulated (two-sided S vs positive f)
    table_f: np.ndarray | None = None
    table_s: np.ndarray | None = None
    table_s_std: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}")
        for name in ("table_f", "table_s", "table_s_std"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, np.asarray(val, dtype=float))

    # -- construction ---------------------------------------------------

    @classmethod
    def gaussian_plus_oneoverf(
        cls,
        f_c: float,
        sigma: float | None = None,
        gaussian_std: float = DEFAULT_GAUSSIAN_STD,
        oneoverf_std: float = DEFAULT_ONEOVERF_STD,
        f_min: float | None = DEFAULT_F_MIN,
        f_max: float = DEFAULT_F_MAX,
    ) -> "NoisePSD":
        """Gaussian peak at +-f_c plus 1/f, normalized per component.

        ``gaussian_std`` and ``oneoverf_std`` are the standard deviations
        (rad/s) each part alone realizes over the band; ``sigma`` defaults
        to f_c / 10.
        """
        if f_c <= 0:
            raise ValueError("f_c must be positive")
        if sigma is None:
            sigma = f_c / 10.0
        if oneoverf_std > 0 and f_min is None:
            raise ValueError("1/f component requires an explicit f_min")
        if f_min is not None and not 0 < f_min < f_max:
            raise ValueError("need 0 < f_min < f_max")
        mass = _mirrored_gaussian_band_mass(f_c, sigma, f_min or 0.0, f_max)
        n1 = gaussian_std**2 / mass if gaussian_std > 0 else 0.0
        n2 = (
            oneoverf_std**2 / (2.0 * np.log(f_max / f_min))
            if oneoverf_std > 0
            else 0.0
        )
        return cls(
            kind="gaussian_plus_oneoverf",
            f_min=f_min,
            f_max=f_max,
            f_c=f_c,
            sigma=sigma,
            gaussian_norm=n1,
            oneoverf_norm=n2,
        )

    @classmethod
    def monotone_line(cls, amplitude: float, frequency: float) -> "NoisePSD":
        """A single cosine of the given amplitude: Dirac lines at +-f'."""
        if frequency <= 0:
            raise ValueError("line frequency must be positive")
        return cls(
            kind="monotone_line",
            line_amplitude=float(amplitude),
            line_frequency=float(frequency),
            f_max=float(frequency),
        )

    @classmethod
    def white(cls, level: float, f_min: float, f_max: float) -> "NoisePSD":
        if not 0 <= f_min < f_max:
            raise ValueError("need 0 <= f_min < f_max")
        return cls(kind="white", level=float(level), f_min=f_min, f_max=f_max)

    @classmethod
    def tabulated(cls, f, s, s_std=None) -> "NoisePSD":
        """Two-sided S sampled at positive frequencies; log-log interpolated."""
        f = np.asarray(f, dtype=float)
        s = np.asarray(s, dtype=float)
        if np.any(f <= 0) or np.any(np.diff(f) <= 0):
            raise ValueError("table frequencies must be positive and ascending")
        if np.any(s < 0):
            raise ValueError("PSD values must be non-negative")
        return cls(
            kind="tabulated",
            f_min=float(f[0]),
            f_max=float(f[-1]),
            table_f=f,
            table_s=s,
            table_s_std=None if s_std is None else np.asarray(s_std, dtype=float),
        )

    # -- evaluation -----------------------------------------------------

    @property
    def has_one_over_f(self) -> bool:
        return self.kind == "gaussian_plus_oneoverf" and self.oneoverf_norm > 0

    def values(self, freqs, table_values=None) -> np.ndarray:
        """S(|f|); ``table_values`` substitutes resampled table ordinates."""
        f = np.abs(np.atleast_1d(np.asarray(freqs, dtype=float)))
        if self.kind == "gaussian_plus_oneoverf":
            s1 = self.gaussian_norm * 0.5 * (
                _gauss(f - self.f_c, self.sigma) + _gauss(f + self.f_c, self.sigma)
            )
            if self.oneoverf_norm > 0:
                s2 = self.oneoverf_norm / np.maximum(f, 1e-300)
                return (np.sqrt(s1) + np.sqrt(s2)) ** 2
            return s1
        if self.kind == "white":
            inside = (f >= self.f_min) & (f <= self.f_max)
            return np.where(inside, self.level, 0.0)
        if self.kind == "tabulated":
            s = self.table_s if table_values is None else table_values
            logf = np.log(np.clip(f, self.table_f[0], self.table_f[-1]))
            # log-log linear interpolation; zero ordinates handled linearly
            if np.all(s > 0):
                return np.exp(np.interp(logf, np.log(self.table_f), np.log(s)))
            return np.interp(logf, np.log(self.table_f), s)
        raise ValueError("monotone_line has no density; use its Dirac lines")

    def variance(self) -> float:
        """Two-sided band-integrated variance, in (rad/s)^2."""
        if self.kind == "monotone_line":
            return 0.5 * self.line_amplitude**2
        if self.kind == "white":
            return 2.0 * self.level * (self.f_max - self.f_min)
        f, df = self._synthesis_grid()
        return float(2.0 * np.sum(self.values(f) * df))

    # -- grids ----------------------------------------------------------

    def _synthesis_grid(self, duration: float | None = None):
        """Positive-frequency component grid and cell widths for synthesis."""
        if self.kind == "white":
            n = 4096
            edges = np.linspace(self.f_min, self.f_max, n + 1)
        elif self.kind == "tabulated":
            n = max(200, 80 * int(np.ceil(np.log10(self.f_max / self.f_min))))
            edges = np.geomspace(self.f_min, self.f_max, n + 1)
        elif self.kind == "gaussian_plus_oneoverf":
            lo = max(self.f_min or DEFAULT_F_MIN, 1e-3)
            peak_lo = max(self.f_c - 6 * self.sigma, lo)
            peak_hi = min(self.f_c + 6 * self.sigma, self.f_max)
            pieces = []
            if peak_lo > lo:
                n = max(8, 60 * int(np.ceil(np.log10(peak_lo / lo))))
                pieces.append(np.geomspace(lo, peak_lo, n + 1))
            pieces.append(np.linspace(peak_lo, peak_hi, 97))
            if self.f_max > peak_hi:
                n = max(8, 60 * int(np.ceil(np.log10(self.f_max / peak_hi))))
                pieces.append(np.geomspace(peak_hi, self.f_max, n + 1))
            edges = np.unique(np.concatenate(pieces))
        else:
            raise ValueError(f"no synthesis grid for kind {self.kind}")
        centers = 0.5 * (edges[1:] + edges[:-1])
        widths = np.diff(edges)
        return centers, widths

    def integration_grid(self, points_per_decade: int = 100) -> np.ndarray:
        """Positive-frequency grid for error-prediction quadrature."""
        lo = self.f_min if self.f_min else DEFAULT_F_MIN
        hi = self.f_max if self.f_max else DEFAULT_F_MAX
        n = max(16, points_per_decade * int(np.ceil(np.log10(hi / lo))))
        grid = np.geomspace(lo, hi, n + 1)
        if self.kind == "gaussian_plus_oneoverf":
            peak = np.linspace(
                max(self.f_c - 5 * self.sigma, lo),
                min(self.f_c + 5 * self.sigma, hi),
                161,
            )
            grid = np.unique(np.concatenate([grid, peak]))
        if self.kind == "tabulated":
            grid = np.unique(np.concatenate([grid, self.table_f]))
        return grid

    # -- provenance -----------------------------------------------------

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        for name in (
            "f_min", "f_max", "f_c", "sigma", "gaussian_norm", "oneoverf_norm",
            "line_amplitude", "line_frequency", "level",
        ):
            val = getattr(self, name)
            if val is not None and val != 0.0:
                out[name] = float(val)
        if self.table_f is not None:
            out["table_f"] = self.table_f.tolist()
            out["table_s"] = self.table_s.tolist()
            if self.table_s_std is not None:
                out["table_s_std"] = self.table_s_std.tolist()
        return out

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _gauss(x, sigma):
    return np.exp(-0.5 * (x / sigma) ** 2) / (np.sqrt(2.0 * np.pi) * sigma)


def _mirrored_gaussian_band_mass(f_c, sigma, f_min, f_max):
    """Fraction of the mirrored-pair Gaussian mass inside |f| in [f_min, f_max]."""

    def cdf_pair(x):
        return 0.25 * (
            erf((x - f_c) / (np.sqrt(2) * sigma))
            + erf((x + f_c) / (np.sqrt(2) * sigma))
        )

    mass = 2.0 * (cdf_pair(f_max) - cdf_pair(f_min))
    if mass <= 0:
        raise ValueError("Gaussian peak lies entirely outside the band")
    return mass


def build_psd(spec: dict) -> NoisePSD:
    """Construct a PSD from a plain mapping (CLI config form)."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind == "gaussian_plus_oneoverf":
        known = {
            "f_c", "sigma", "gaussian_std", "oneoverf_std", "f_min", "f_max",
        }
        _reject_unknown(spec, known)
        return NoisePSD.gaussian_plus_oneoverf(**spec)
    if kind == "monotone_line":
        _reject_unknown(spec, {"amplitude", "frequency"})
        return NoisePSD.monotone_line(**spec)
    if kind == "white":
        _reject_unknown(spec, {"level", "f_min", "f_max"})
        return NoisePSD.white(**spec)
    if kind == "tabulated":
        _reject_unknown(spec, {"f", "s", "s_std", "path"})
        if "path" in spec:
            return read_psd_csv(spec["path"])
        return NoisePSD.tabulated(spec["f"], spec["s"], spec.get("s_std"))
    raise ValueError(f"unknown PSD kind {kind!r}")


def _reject_unknown(spec, known):
    extra = set(spec) - known
    if extra:
        raise ValueError(f"unknown PSD parameters: {sorted(extra)}")


@dataclass(frozen=True)
class NoiseTrace:
    """A sampled realization of a noise process."""

    times: np.ndarray
    values: np.ndarray
    seed: object
    psd_fingerprint: str

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def duration(self) -> float:
        return float(self.times[-1])


def realize_trace(
    psd: NoisePSD,
    duration: float,
    dt: float,
    seed,
    resample_table: bool = False,
) -> NoiseTrace:
    """Synthesize one seeded time-domain realization of the PSD.

    ``dt`` must resolve the highest synthesized frequency
    (dt <= 1 / (2 f_max)).  With ``resample_table`` the tabulated ordinates
    are redrawn from normal(mean, std) before synthesis.
    """
    f_max_eff = psd.f_max if psd.f_max else DEFAULT_F_MAX
    if dt > 0.5 / f_max_eff:
        raise ValueError(
            f"dt = {dt:.3e} s too coarse for f_max = {f_max_eff:.3e} Hz; "
            f"need dt <= {0.5 / f_max_eff:.3e} s"
        )
    n = int(np.ceil(duration / dt - 1e-9))
    times = np.arange(n + 1) * dt
    rng = np.random.default_rng(seed)

    if psd.kind == "monotone_line":
        phase = rng.uniform(0.0, TWO_PI)
        values = psd.line_amplitude * np.cos(
            TWO_PI * psd.line_frequency * times + phase
        )
        return NoiseTrace(times, values, seed, psd.fingerprint())

    freqs, widths = psd._synthesis_grid(duration)
    if psd.kind == "tabulated" and resample_table and psd.table_s_std is not None:
        ordinates = rng.normal(psd.table_s, psd.table_s_std)
        np.clip(ordinates, 0.0, None, out=ordinates)
        s = psd.values(freqs, table_values=ordinates)
    else:
        s = psd.values(freqs)
    amps = 2.0 * np.sqrt(s * widths)
    phases = rng.uniform(0.0, TWO_PI, size=len(freqs))
    values = np.zeros_like(times)
    for start in range(0, len(freqs), 64):
        sl = slice(start, start + 64)
        values += amps[sl] @ np.cos(
            TWO_PI * freqs[sl, None] * times[None, :] + phases[sl, None]
        )
    return NoiseTrace(times, values, seed, psd.fingerprint())


def sample_static_offsets(
    std: float = DEFAULT_STATIC_STD, count: int = 1, seed=None
) -> np.ndarray:
    """Zero-mean normal static offsets (rad/s), deterministic per seed."""
    if std < 0:
        raise ValueError("std must be non-negative")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, std, size=count) if std > 0 else np.zeros(count)


# -- tabulated-PSD file interface ---------------------------------------
# CSV columns: f_hz, S_over_f2, S_over_f2_std.  The stored quantity is the
# motional-dephasing spectrum S(f) / f^2; internally we keep S itself, so
# ingestion multiplies by f^2 and emission divides it back out.


def read_psd_csv(path) -> NoisePSD:
    data = np.genfromtxt(path, delimiter=",", names=True)
    f = np.atleast_1d(data["f_hz"])
    s_over_f2 = np.atleast_1d(data["S_over_f2"])
    if "S_over_f2_std" in (data.dtype.names or ()):
        std = np.atleast_1d(data["S_over_f2_std"]) * f**2
    else:
        std = None
    return NoisePSD.tabulated(f, s_over_f2 * f**2, std)


def write_psd_csv(path, psd: NoisePSD) -> None:
    if psd.kind != "tabulated":
        raise ValueError("only tabulated PSDs are written as CSV tables")
    f = psd.table_f
    cols = [f, psd.table_s / f**2]
    header = "f_hz,S_over_f2"
    if psd.table_s_std is not None:
        cols.append(psd.table_s_std / f**2)
        header += ",S_over_f2_std"
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=header, comments="")
