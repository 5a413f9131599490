"""Gate metrics: displacements, geometric phase, and static-offset errors.

For a pulse driving ions ``j1, j2`` through modes ``k`` the relevant
quantities are the per-mode displacements

    alpha_kj = (Omega eta_kj / 2) int_0^tau exp(-i theta_k(t)) dt,

their time averages, the two-qubit rotation angle

    Theta = -Omega^2 sum_k (eta_kj1 eta_kj2 / 2)
            int dt1 int_0^t1 dt2 sin[theta_k(t1) - theta_k(t2)],

and derivatives of both with respect to static mode-frequency offsets.
All evaluations are closed-form segment sums (see ``segments``); offsets
enter exactly as ``w_k -> w_k + delta_k``.
"""

from dataclasses import dataclass

import numpy as np

from .modes import ModeStructure
from .pulses import FMPulse
from .segments import SegmentGeometry

IDEAL_ANGLE = np.pi / 4.0

_FD_STENCILS = {
    1: (1, [-0.5, 0.0, 0.5]),
    2: (1, [1.0, -2.0, 1.0]),
    3: (2, [-0.5, 1.0, 0.0, -1.0, 0.5]),
    4: (2, [1.0, -4.0, 6.0, -4.0, 1.0]),
    5: (3, [-0.5, 2.0, -2.5, 0.0, 2.5, -2.0, 0.5]),
    6: (3, [1.0, -6.0, 15.0, -20.0, 15.0, -6.0, 1.0]),
}


def _geometry(pulse: FMPulse, modes: ModeStructure, offsets=None) -> SegmentGeometry:
    omega = modes.mode_frequencies
    if offsets is not None:
        omega = omega + np.asarray(offsets, dtype=float)
    return SegmentGeometry(pulse, omega)


def _eta(modes: ModeStructure, ions) -> np.ndarray:
    if modes.lamb_dicke is None:
        raise ValueError("ModeStructure has no Lamb-Dicke parameters; "
                         "apply lamb_dicke() first")
    return modes.lamb_dicke[:, np.atleast_1d(ions)]


def _check_pair(modes: ModeStructure, pair):
    j1, j2 = pair
    n = modes.eigenvectors.shape[1]
    if j1 == j2:
        raise ValueError("ion pair must be two distinct ions")
    if not (0 <= j1 < n and 0 <= j2 < n):
        raise ValueError(f"ion indices must lie in [0, {n})")
    return j1, j2


def orient_for_pair(modes: ModeStructure, pair) -> ModeStructure:
    """Fix the drive-phase orientation of the pair's second ion.

    The sign of the two-qubit rotation angle is set experimentally by the
    relative drive phase on the two target ions; either orientation is a
    valid gate (Bell states (|00> +- i|11>)/sqrt(2)).  This helper picks
    the calibration in which a drive red-detuned from the lowest mode
    accumulates a positive angle, by flipping the coupling sign of the
    second ion (a local-Z gauge) when needed.  All error quantities are
    invariant under the flip.
    """
    j1, j2 = _check_pair(modes, pair)
    if modes.lamb_dicke is None:
        raise ValueError("orient_for_pair needs Lamb-Dicke parameters")
    from .pulses import build_symmetric_pulse  # local import avoids a cycle

    reference = build_symmetric_pulse(
        [modes.mode_frequencies.min() - 2.0 * np.pi * 10e3], 100e-6, 1.0
    )
    geo = SegmentGeometry(reference, modes.mode_frequencies)
    eta = modes.lamb_dicke
    theta_ref = -np.sum(0.5 * eta[:, j1] * eta[:, j2] * geo.theta_double())
    if theta_ref >= 0:
        return modes
    vectors = modes.eigenvectors.copy()
    vectors[:, j2] *= -1.0
    eta = eta.copy()
    eta[:, j2] *= -1.0
    return ModeStructure(
        mode_frequencies=modes.mode_frequencies,
        eigenvectors=vectors,
        lamb_dicke=eta,
        scaling_factors=modes.scaling_factors,
        com_index=modes.com_index,
        thermal_occupation=modes.thermal_occupation,
    )


def displacement_matrix(
    pulse: FMPulse, modes: ModeStructure, ions, offsets=None
) -> np.ndarray:
    """alpha_kj for every mode and the requested ions, shape (K, len(ions))."""
    geo = _geometry(pulse, modes, offsets)
    eta = _eta(modes, ions)
    return 0.5 * pulse.carrier_rabi * eta * geo.integral()[:, None]


def displacement(
    pulse: FMPulse, modes: ModeStructure, ion: int, mode: int, offset: float = 0.0
) -> complex:
    """Displacement of one mode for one ion, with optional static offset."""
    offsets = np.zeros(modes.mode_count)
    offsets[mode] = offset
    return complex(displacement_matrix(pulse, modes, [ion], offsets)[mode, 0])


def averaged_displacement_matrix(
    pulse: FMPulse, modes: ModeStructure, ions, offsets=None
) -> np.ndarray:
    """Time-averaged displacements, shape (K, len(ions))."""
    geo = _geometry(pulse, modes, offsets)
    eta = _eta(modes, ions)
    return (
        0.5 * pulse.carrier_rabi / pulse.duration * eta * geo.avg_integral()[:, None]
    )


def averaged_displacement(
    pulse: FMPulse, modes: ModeStructure, ion: int, mode: int
) -> complex:
    return complex(averaged_displacement_matrix(pulse, modes, [ion])[mode, 0])


def displacement_derivative_matrix(
    pulse: FMPulse, modes: ModeStructure, ions, order: int, offsets=None
) -> np.ndarray:
    """d^m alpha_kj / d w_k^m, shape (K, len(ions)); units s^m."""
    if not 1 <= order <= 8:
        raise ValueError("derivative order must be in 1..8")
    geo = _geometry(pulse, modes, offsets)
    eta = _eta(modes, ions)
    return 0.5 * pulse.carrier_rabi * (1j**order) * eta * geo.moment(order)[:, None]


def displacement_derivative(
    pulse: FMPulse, modes: ModeStructure, ion: int, mode: int, order: int
) -> complex:
    return complex(displacement_derivative_matrix(pulse, modes, [ion], order)[mode, 0])


def rotation_angle(
    pulse: FMPulse, modes: ModeStructure, pair, offsets=None
) -> float:
    """Two-qubit geometric phase Theta for the ion pair; pi/4 is ideal."""
    j1, j2 = _check_pair(modes, pair)
    geo = _geometry(pulse, modes, offsets)
    eta = modes.lamb_dicke
    w = geo.theta_double()
    return float(
        -(pulse.carrier_rabi**2) * np.sum(0.5 * eta[:, j1] * eta[:, j2] * w)
    )


def angle_derivative(
    pulse: FMPulse,
    modes: ModeStructure,
    pair,
    order: int = 1,
    offset_mode: str = "rk",
    step: float | None = None,
) -> float:
    """d^m Theta / d delta^m at delta = 0 for a common offset delta.

    ``offset_mode`` selects how the common offset maps onto the modes:
    ``"rk"`` scales mode k by its scaling factor, ``"uniform"`` applies the
    same offset to every mode.  Order 1 is evaluated in closed form; higher
    orders use Richardson-refined central finite differences.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    j1, j2 = _check_pair(modes, pair)
    scale = _offset_scale(modes, offset_mode)
    if order == 1:
        geo = _geometry(pulse, modes)
        v = geo.angle_slope_double()
        eta = modes.lamb_dicke
        return float(
            pulse.carrier_rabi**2
            * np.sum(0.5 * scale * eta[:, j1] * eta[:, j2] * v)
        )
    if order not in _FD_STENCILS:
        raise ValueError("finite-difference orders supported up to 6")
    if step is None:
        step = 2.0 * np.pi * 50.0 * order**2

    def theta_at(delta):
        return rotation_angle(pulse, modes, pair, offsets=scale * delta)

    return _richardson_derivative(theta_at, order, step)


def _offset_scale(modes: ModeStructure, offset_mode: str) -> np.ndarray:
    if offset_mode == "rk":
        return modes.scaling_factors
    if offset_mode == "uniform":
        return np.ones(modes.mode_count)
    raise ValueError("offset_mode must be 'rk' or 'uniform'")


def _richardson_derivative(func, order: int, h: float) -> float:
    reach, coeffs = _FD_STENCILS[order]

    def estimate(hh):
        total = 0.0
        for pos, c in zip(range(-reach, reach + 1), coeffs):
            if c != 0.0:
                total += c * func(pos * hh)
        return total / hh**order

    d1 = estimate(h)
    d2 = estimate(h / 2.0)
    return float((4.0 * d2 - d1) / 3.0)


def displacement_error(
    pulse: FMPulse,
    modes: ModeStructure,
    pair,
    offsets=None,
    thermal_weighting: bool = False,
) -> float:
    """E_alpha = sum_k (|alpha_kj1|^2 + |alpha_kj2|^2) at shifted frequencies."""
    j1, j2 = _check_pair(modes, pair)
    alpha = displacement_matrix(pulse, modes, [j1, j2], offsets)
    per_mode = np.sum(np.abs(alpha) ** 2, axis=1)
    if thermal_weighting:
        per_mode = per_mode * 2.0 * (modes.thermal_occupation + 0.5)
    return float(np.sum(per_mode))


def angle_error(pulse: FMPulse, modes: ModeStructure, pair, offsets=None) -> float:
    """E_Theta = (Theta - pi/4)^2 at shifted frequencies."""
    theta = rotation_angle(pulse, modes, pair, offsets)
    return float((theta - IDEAL_ANGLE) ** 2)


@dataclass(frozen=True)
class GateMetrics:
    """Displacements, averages, rotation angle, and offset derivatives."""

    displacements: np.ndarray             # (K, 2) complex
    averaged_displacements: np.ndarray    # (K, 2) complex
    rotation_angle: float
    displacement_derivatives: np.ndarray  # (M, K, 2) complex, orders 1..M
    angle_derivative: float


def compute_gate_metrics(
    pulse: FMPulse, modes: ModeStructure, pair, max_derivative_order: int = 2
) -> GateMetrics:
    j1, j2 = _check_pair(modes, pair)
    ions = [j1, j2]
    derivs = np.stack(
        [
            displacement_derivative_matrix(pulse, modes, ions, m)
            for m in range(1, max_derivative_order + 1)
        ]
    )
    return GateMetrics(
        displacements=displacement_matrix(pulse, modes, ions),
        averaged_displacements=averaged_displacement_matrix(pulse, modes, ions),
        rotation_angle=rotation_angle(pulse, modes, pair),
        displacement_derivatives=derivs,
        angle_derivative=angle_derivative(pulse, modes, pair, 1),
    )


@dataclass(frozen=True)
class StaticErrorDecomposition:
    """Exact errors plus per-order offset contributions at one offset.

    ``displacement_order_terms[m, k, j]`` is the complex m-th order term
    ``delta^m / m! * d^m alpha_kj / d w_k^m`` (magnitudes give the usual
    order plot); ``angle_order_terms[m]`` is the real analogue for Theta
    (the m = 0 entry holds Theta itself).
    """

    offset: float
    offset_mode: str
    displacement_order_terms: np.ndarray   # (orders + 1, K, 2) complex
    angle_order_terms: np.ndarray          # (orders + 1,) float
    displacement_error: float
    angle_error: float

    @property
    def total_error(self) -> float:
        return self.displacement_error + self.angle_error


def static_error_sweep(
    pulse: FMPulse,
    modes: ModeStructure,
    pair,
    offsets,
    offset_mode: str = "uniform",
    orders: int = 6,
    thermal_weighting: bool = False,
) -> list[StaticErrorDecomposition]:
    """Exact E_alpha / E_Theta and order terms over a list of common offsets.

    The exact errors are recomputed at the shifted frequencies (never from
    the order series); the order terms use the derivatives at zero offset.
    """
    j1, j2 = _check_pair(modes, pair)
    ions = [j1, j2]
    scale = _offset_scale(modes, offset_mode)
    alpha0 = displacement_matrix(pulse, modes, ions)
    derivs = [
        displacement_derivative_matrix(pulse, modes, ions, m)
        for m in range(1, orders + 1)
    ]
    theta0 = rotation_angle(pulse, modes, pair)
    theta_derivs = [
        angle_derivative(pulse, modes, pair, m, offset_mode=offset_mode)
        for m in range(1, orders + 1)
    ]
    out = []
    fact = 1.0
    for delta in np.atleast_1d(np.asarray(offsets, dtype=float)):
        disp_terms = np.empty((orders + 1,) + alpha0.shape, dtype=complex)
        angle_terms = np.empty(orders + 1)
        disp_terms[0] = alpha0
        angle_terms[0] = theta0
        fact = 1.0
        for m in range(1, orders + 1):
            fact *= m
            disp_terms[m] = (scale[:, None] * delta) ** m / fact * derivs[m - 1]
            angle_terms[m] = delta**m / fact * theta_derivs[m - 1]
        out.append(
            StaticErrorDecomposition(
                offset=float(delta),
                offset_mode=offset_mode,
                displacement_order_terms=disp_terms,
                angle_order_terms=angle_terms,
                displacement_error=displacement_error(
                    pulse, modes, pair, scale * delta, thermal_weighting
                ),
                angle_error=angle_error(pulse, modes, pair, scale * delta),
            )
        )
    return out


@dataclass(frozen=True)
class AmplitudeSensitivity:
    """First-order Theta sensitivities to dephasing vs drive-amplitude scaling.

    Both numbers are per rad/s of common mode-frequency offset (multiply by
    2 pi for a per-Hz figure).  ``amplitude`` is Theta / w_CM, the exact
    sensitivity induced by the 1/sqrt(w_k) coupling-strength dependence.
    """

    dephasing: float
    amplitude: float

    @property
    def ratio(self) -> float:
        return self.dephasing / self.amplitude


def amplitude_sensitivity(
    pulse: FMPulse, modes: ModeStructure, pair
) -> AmplitudeSensitivity:
    theta = rotation_angle(pulse, modes, pair)
    if pulse.carrier_rabi == 0.0:
        return AmplitudeSensitivity(dephasing=0.0, amplitude=0.0)
    omega_cm = modes.mode_frequencies[modes.com_index]
    return AmplitudeSensitivity(
        dephasing=abs(angle_derivative(pulse, modes, pair, 1, offset_mode="rk")),
        amplitude=abs(theta) / omega_cm,
    )
