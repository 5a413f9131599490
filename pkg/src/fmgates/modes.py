"""Normal-mode structure of a linear ion chain in a harmonic trap.

Equilibrium positions are found in dimensionless units of the Coulomb
length scale ``l = (e^2 / (4 pi eps0 m w_z^2))^(1/3)``, which makes the
Newton solve scale-free.  Mode frequencies and eigenvectors follow from
the Hessian of the trap + Coulomb potential evaluated at equilibrium.
"""

from dataclasses import dataclass, field

import numpy as np

from .constants import (
    ELEMENTARY_CHARGE,
    EPSILON_0,
    HBAR,
    RAMAN_355_DELTA_K,
    TWO_PI,
    YB171_MASS,
    to_hz,
)
from .errors import ConvergenceError, UnstableChainError

_BRANCHES = ("axial", "transverse")


@dataclass(frozen=True)
class TrapConfig:
    """Static trap and laser-geometry parameters for a linear chain."""

    ion_count: int
    ion_mass: float = YB171_MASS
    axial_frequency: float = TWO_PI * 0.4e6
    transverse_frequency: float = TWO_PI * 2.336e6
    mode_branch: str = "transverse"
    wavevector_difference: float = RAMAN_355_DELTA_K

    def __post_init__(self):
        if self.ion_count < 2:
            raise ValueError(f"ion_count must be >= 2, got {self.ion_count}")
        if self.ion_mass <= 0:
            raise ValueError("ion_mass must be positive")
        if self.axial_frequency <= 0 or self.transverse_frequency <= 0:
            raise ValueError("trap frequencies must be positive")
        if self.mode_branch not in _BRANCHES:
            raise ValueError(f"mode_branch must be one of {_BRANCHES}")
        if (
            self.mode_branch == "transverse"
            and self.transverse_frequency <= self.axial_frequency
        ):
            raise ValueError(
                "transverse_frequency must exceed axial_frequency for a "
                "stable linear chain on the transverse branch"
            )

    @property
    def length_scale(self) -> float:
        """Coulomb length scale l in meters."""
        return (
            ELEMENTARY_CHARGE**2
            / (4 * np.pi * EPSILON_0 * self.ion_mass * self.axial_frequency**2)
        ) ** (1.0 / 3.0)


@dataclass(frozen=True)
class ModeStructure:
    """Motional-mode data consumed by every downstream computation.

    Attributes
    ----------
    mode_frequencies : ndarray, shape (K,)
        Mode angular frequencies in rad/s, ascending.
    eigenvectors : ndarray, shape (K, N)
        Orthonormal mode eigenvectors; row k couples mode k to each ion.
    lamb_dicke : ndarray or None, shape (K, N)
        Lamb-Dicke parameters eta_kj; ``None`` until the wavevector
        difference has been applied.
    scaling_factors : ndarray, shape (K,)
        Per-mode offset scaling r_k = w_k / w_CM (rf-voltage convention).
    com_index : int
        Index of the largest-frequency mode; on the transverse branch
        this is the center-of-mass mode.
    thermal_occupation : ndarray, shape (K,)
        Mean initial phonon number per mode; zeros by default.
    """

    mode_frequencies: np.ndarray
    eigenvectors: np.ndarray
    lamb_dicke: np.ndarray | None
    scaling_factors: np.ndarray
    com_index: int
    thermal_occupation: np.ndarray = field(default=None)

    def __post_init__(self):
        w = np.asarray(self.mode_frequencies, dtype=float)
        b = np.asarray(self.eigenvectors, dtype=float)
        object.__setattr__(self, "mode_frequencies", w)
        object.__setattr__(self, "eigenvectors", b)
        if self.lamb_dicke is not None:
            object.__setattr__(
                self, "lamb_dicke", np.asarray(self.lamb_dicke, dtype=float)
            )
        object.__setattr__(
            self, "scaling_factors", np.asarray(self.scaling_factors, dtype=float)
        )
        if self.thermal_occupation is None:
            object.__setattr__(self, "thermal_occupation", np.zeros(len(w)))
        else:
            object.__setattr__(
                self,
                "thermal_occupation",
                np.asarray(self.thermal_occupation, dtype=float),
            )
        if np.any(np.diff(w) < 0):
            raise ValueError("mode_frequencies must be ascending")
        gram = b @ b.T
        if not np.allclose(gram, np.eye(len(w)), atol=1e-10):
            raise ValueError("eigenvector rows must be orthonormal to 1e-10")

    @property
    def mode_count(self) -> int:
        return len(self.mode_frequencies)

    def subset(self, indices) -> "ModeStructure":
        """Restrict to a subset of modes (e.g. for per-mode simulation)."""
        idx = np.atleast_1d(np.asarray(indices, dtype=int))
        order = np.argsort(self.mode_frequencies[idx])
        idx = idx[order]
        w = self.mode_frequencies[idx]
        return ModeStructure(
            mode_frequencies=w,
            eigenvectors=self.eigenvectors[idx],
            lamb_dicke=None if self.lamb_dicke is None else self.lamb_dicke[idx],
            scaling_factors=self.scaling_factors[idx],
            com_index=int(np.argmax(w)),
            thermal_occupation=self.thermal_occupation[idx],
        )

    def to_dict(self) -> dict:
        """JSON-ready representation; frequencies are emitted in Hz."""
        return {
            "mode_frequencies_hz": to_hz(self.mode_frequencies).tolist(),
            "eigenvectors": self.eigenvectors.tolist(),
            "lamb_dicke": None
            if self.lamb_dicke is None
            else self.lamb_dicke.tolist(),
            "scaling_factors": self.scaling_factors.tolist(),
            "com_index": int(self.com_index),
            "thermal_occupation": self.thermal_occupation.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModeStructure":
        return cls(
            mode_frequencies=TWO_PI * np.asarray(data["mode_frequencies_hz"]),
            eigenvectors=np.asarray(data["eigenvectors"]),
            lamb_dicke=None
            if data.get("lamb_dicke") is None
            else np.asarray(data["lamb_dicke"]),
            scaling_factors=np.asarray(data["scaling_factors"]),
            com_index=int(data["com_index"]),
            thermal_occupation=np.asarray(
                data.get("thermal_occupation", np.zeros(len(data["mode_frequencies_hz"])))
            ),
        )


def _potential_gradient(u: np.ndarray) -> np.ndarray:
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    return u - np.sum(np.sign(diff) / diff**2, axis=1)


def _potential_hessian(u: np.ndarray) -> np.ndarray:
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    inv3 = 1.0 / np.abs(diff) ** 3
    hess = -2.0 * inv3
    np.fill_diagonal(hess, 1.0 + 2.0 * np.sum(inv3, axis=1))
    return hess


def equilibrium_positions(cfg: TrapConfig) -> np.ndarray:
    """Equilibrium ion positions along the trap axis, in meters, ascending.

    Newton iteration on the dimensionless potential from a uniform-spacing
    seed; converges to gradient norm < 1e-12 for the linear chains in scope.
    """
    n = cfg.ion_count
    spacing = 2.0 * n**-0.56
    u = (np.arange(n) - 0.5 * (n - 1)) * spacing
    for _ in range(200):
        grad = _potential_gradient(u)
        norm = np.linalg.norm(grad)
        if norm < 1e-13:
            break
        step = np.linalg.solve(_potential_hessian(u), grad)
        # Damped Newton: halve until the residual decreases.
        scale = 1.0
        for _ in range(30):
            trial = u - scale * step
            if np.linalg.norm(_potential_gradient(trial)) < norm:
                u = trial
                break
            scale *= 0.5
        else:
            raise ConvergenceError(
                "equilibrium Newton iteration stalled", residual=norm
            )
    else:
        raise ConvergenceError(
            "equilibrium positions did not converge",
            residual=float(np.linalg.norm(_potential_gradient(u))),
        )
    u = 0.5 * (u - u[::-1])  # enforce reflection symmetry about the origin
    return np.sort(u) * cfg.length_scale


def normal_modes(cfg: TrapConfig) -> ModeStructure:
    """Diagonalize the chain Hessian for the configured branch.

    Returns a :class:`ModeStructure` without Lamb-Dicke parameters; apply
    :func:`lamb_dicke` to fill them in.
    """
    u = equilibrium_positions(cfg) / cfg.length_scale
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    inv3 = 1.0 / np.abs(diff) ** 3

    if cfg.mode_branch == "axial":
        hess = -2.0 * inv3
        np.fill_diagonal(hess, 1.0 + 2.0 * np.sum(inv3, axis=1))
    else:
        ratio2 = (cfg.transverse_frequency / cfg.axial_frequency) ** 2
        hess = inv3.copy()
        np.fill_diagonal(hess, ratio2 - np.sum(inv3, axis=1))

    eigvals, eigvecs = np.linalg.eigh(hess)
    if np.any(eigvals <= 0):
        raise UnstableChainError(
            f"{cfg.mode_branch} branch is unstable for this configuration "
            f"(min eigenvalue {eigvals.min():.3e} in w_z^2 units); "
            "increase the transverse/axial frequency ratio"
        )
    freqs = cfg.axial_frequency * np.sqrt(eigvals)
    vectors = eigvecs.T.copy()
    # Deterministic sign: largest-magnitude component positive per mode.
    for row in vectors:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    com_index = int(np.argmax(freqs))
    scaling = freqs / freqs[com_index]
    return ModeStructure(
        mode_frequencies=freqs,
        eigenvectors=vectors,
        lamb_dicke=None,
        scaling_factors=scaling,
        com_index=com_index,
    )


def lamb_dicke(ms: ModeStructure, cfg: TrapConfig) -> ModeStructure:
    """Fill in eta_kj = b_kj * dk * sqrt(hbar / (2 m w_k))."""
    if cfg.wavevector_difference <= 0:
        raise ValueError("wavevector_difference must be positive")
    zpf = np.sqrt(HBAR / (2.0 * cfg.ion_mass * ms.mode_frequencies))
    eta = ms.eigenvectors * cfg.wavevector_difference * zpf[:, None]
    return ModeStructure(
        mode_frequencies=ms.mode_frequencies,
        eigenvectors=ms.eigenvectors,
        lamb_dicke=eta,
        scaling_factors=ms.scaling_factors,
        com_index=ms.com_index,
        thermal_occupation=ms.thermal_occupation,
    )


def chain_modes(cfg: TrapConfig) -> ModeStructure:
    """Convenience: normal modes with Lamb-Dicke parameters filled in."""
    return lamb_dicke(normal_modes(cfg), cfg)


def default_trap_config(ion_count: int = 5) -> TrapConfig:
    """Documented default chain: 171Yb+, transverse branch, w_CM = 2pi x 2.336 MHz."""
    return TrapConfig(ion_count=ion_count)
