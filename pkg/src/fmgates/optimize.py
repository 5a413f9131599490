"""Pulse optimization over symmetric FM pulses with analytic gradients.

Four methods are provided:

* ``robust_fm_1`` minimizes the time-averaged displacements, which for
  time-symmetric pulses also nulls the displacements and gives first-order
  insensitivity to static mode-frequency offsets.
* ``robust_fm_2`` adds the squared second derivatives ofable displacements
  for second-order insensitivity.
* ``ff_opt`` adds the PSD-weighted integral of the displacement and angle
  filter functions.
* ``batch_ff`` minimizes the ff cost evaluated at per-iteration random
  static offsets (stochastic first-order optimizer with moment estimates).

The carrier Rabi frequency is never a free parameter: at every evaluation
it is rescaled so the zero-noise rotation angle is exactly pi/4, and the
gradient carries the corresponding chain term.  An optional soft cap keeps
the rescaled Rabi frequency below a configured maximum.
"""

import json
from dataclasses import dataclass, asdict, replace

import numpy as np
from scipy.optimize import minimize

from .constants import TWO_PI, to_hz
from .errors import RescaleError
from .metrics import IDEAL_ANGLE, _check_pair, rotation_angle
from .modes import ModeStructure
from .noise import NoisePSD
from .pulses import FMPulse, build_symmetric_pulse, free_segment_values
from .segments import SegmentGeometry

METHODS = ("robust_fm_1", "robust_fm_2", "ff_opt", "batch_ff")


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs for :func:`optimize` / :func:`optimize_batch`."""

    method: str = "robust_fm_1"
    segments: int = 40
    tau: float = 150e-6
    omega_max: float | None = None
    penalty_beta: float = 1e-5
    penalty_gamma: float = 30.0
    psd: NoisePSD | None = None
    representative_frequencies_only: bool = False
    batch_std: float = TWO_PI * 500.0
    batch_scale_with_rk: bool = False
    max_iterations: int = 300
    batch_iterations: int = 10000
    batch_learning_rate: float = TWO_PI * 60.0
    gradient_tolerance: float = 1e-16
    seed: int = 0
    multi_start: int = 4
    points_per_decade: int = 40
    initial_guess_detuning: float = TWO_PI * 10e3
    bound_margin: float = TWO_PI * 200e3

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.tau <= 0 or self.segments < 1:
            raise ValueError("need tau > 0 and segments >= 1")
        if self.omega_max is not None and (
            self.penalty_beta <= 0 or self.penalty_gamma <= 0
        ):
            raise ValueError("penalty_beta and penalty_gamma must be positive")
        if self.method == "batch_ff" and self.batch_std < 0:
            raise ValueError("batch_std must be non-negative")
        if self.method in ("ff_opt", "batch_ff") and self.psd is None:
            raise ValueError(f"method {self.method} requires a noise PSD")


@dataclass(frozen=True)
class CostBreakdown:
    total: float
    averaged_displacement: float
    curvature: float
    ff_alpha: float
    ff_theta: float
    penalty: float
    displacement: float
    angle: float
    omega: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class OptimizationResult:
    pulse: FMPulse
    cost: float
    breakdown: CostBreakdown
    iterations: int
    gradient_norm: float
    omega_history: list
    converged: bool
    warning: str | None = None

    def to_dict(self) -> dict:
        return {
            "pulse": self.pulse.to_dict(),
            "cost": self.cost,
            "breakdown": self.breakdown.to_dict(),
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
            "omega_history_hz": [to_hz(w) for w in self.omega_history],
            "converged": self.converged,
            "warning": self.warning,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _CostModel:
    """Shared machinery for cost, breakdown, and free-parameter gradient."""

    def __init__(self, modes: ModeStructure, pair, cfg: OptimizerConfig):
        j1, j2 = _check_pair(modes, pair)
        self.modes = modes
        self.pair = (j1, j2)
        self.cfg = cfg
        self.omega_mode = modes.mode_frequencies
        eta = modes.lamb_dicke
        self.eta_pair = eta[:, j1] * eta[:, j2]
        self.eta_sq = eta[:, j1] ** 2 + eta[:, j2] ** 2
        self.rk = modes.scaling_factors
        self._setup_psd_weights()

    def _setup_psd_weights(self):
        """Quadrature nodes/weights for the PSD-weighted filter integrals.

        The displacement filter function is not even in f, so its nodes
        cover both signs; the angle filter function is even and uses the
        positive nodes with doubled weights.
        """
        cfg = self.cfg
        self.freqs = None
        if cfg.method in ("ff_opt", "batch_ff"):
            psd = cfg.psd
            if psd.kind == "monotone_line":
                fline = psd.line_frequency
                power = 0.25 * psd.line_amplitude**2
                rho = power / (TWO_PI * fline) ** 2
                self.freqs = np.array([fline, -fline])
                self.weights = np.array([rho, rho])
                self.theta_freqs = np.array([fline])
                self.theta_weights = np.array([2.0 * rho])
            else:
                grid = psd.integration_grid(cfg.points_per_decade)
                rho = psd.values(grid) / (TWO_PI * grid) ** 2
                w = _trapezoid_weights(grid) * rho
                self.freqs = np.concatenate([grid, -grid])
                self.weights = np.concatenate([w, w])
                if cfg.representative_frequencies_only:
                    self.theta_freqs = np.array([0.5 / cfg.tau])
                    self.theta_weights = np.array([2.0 * np.sum(w)])
                else:
                    self.theta_freqs = grid
                    self.theta_weights = 2.0 * w

    # -- pulses ---------------------------------------------------------

    def pulse_from_free(self, free) -> FMPulse:
        odd = self.cfg.segments % 2 == 1
        return build_symmetric_pulse(free, self.cfg.tau, 1.0, odd=odd)

    def fold_gradient(self, dmu) -> np.ndarray:
        """Sum d/dmu over mirrored segment indices onto the free values."""
        s = self.cfg.segments
        p = (s + 1) // 2
        out = dmu[:p].copy()
        mirrored = dmu[s - 1 : s - 1 - (s // 2) : -1] if s > 1 else dmu[:0]
        out[: s // 2] += mirrored
        return out

    # -- evaluation -------------------------------------------------------

    def theta_hat(self, free, grad: bool = False):
        """Zero-noise rotation angle at unit Rabi frequency (and gradient)."""
        pulse = self.pulse_from_free(np.asarray(free, dtype=float))
        geo = SegmentGeometry(pulse, self.omega_mode)
        if grad:
            w0, dw0 = geo.theta_double(grad=True)
            return (
                -np.sum(0.5 * self.eta_pair * w0),
                self.fold_gradient(-np.sum(0.5 * self.eta_pair * dw0, axis=-1)),
            )
        return -np.sum(0.5 * self.eta_pair * geo.theta_double())

    def evaluate(self, free, offsets=None, grad: bool = False):
        cfg = self.cfg
        free = np.asarray(free, dtype=float)
        pulse = self.pulse_from_free(free)
        geo0 = SegmentGeometry(pulse, self.omega_mode)
        if grad:
            w0, dw0 = geo0.theta_double(grad=True)
        else:
            w0 = geo0.theta_double()
            dw0 = None
        theta_hat = -np.sum(0.5 * self.eta_pair * w0)
        if theta_hat <= 0:
            raise RescaleError(
                f"zero-noise rotation angle is not positive ({theta_hat:.3e} "
                "at unit Rabi frequency); adjust the initial guess"
            )
        omega_sq = IDEAL_ANGLE / theta_hat
        omega = np.sqrt(omega_sq)
        d_omega_sq = None
        if grad:
            d_theta_hat = -np.sum(0.5 * self.eta_pair * dw0, axis=-1)
            d_omega_sq = -(omega_sq / theta_hat) * d_theta_hat

        if offsets is None and cfg.method == "batch_ff":
            offsets = np.zeros(self.modes.mode_count)
        if offsets is not None and np.any(offsets != 0.0):
            geo = SegmentGeometry(pulse, self.omega_mode + offsets)
            if grad:
                w_off, dw_off = geo.theta_double(grad=True)
            else:
                w_off = geo.theta_double()
                dw_off = None
        else:
            geo, w_off, dw_off = geo0, w0, dw0

        total = 0.0
        grad_mu = np.zeros(cfg.segments) if grad else None
        chain = 0.0  # d(total)/d(omega^2) accumulated for the rescale chain

        # -- averaged-displacement / displacement term
        if cfg.method == "batch_ff":
            val = geo.integral()
            coeff = 0.25 * self.eta_sq
            c_disp_hat = np.sum(coeff * np.abs(val) ** 2)
            c_main = omega_sq * c_disp_hat
            if grad:
                dval = geo.integral_gradient()
                d_hat = 2.0 * np.sum(coeff * (np.conj(val) * dval).real, axis=-1)
                grad_mu += omega_sq * d_hat
            chain += c_disp_hat
        else:
            val = geo.avg_integral()
            coeff = 0.25 * self.eta_sq / cfg.tau**2
            c_disp_hat = np.sum(coeff * np.abs(val) ** 2)
            c_main = omega_sq * c_disp_hat
            if grad:
                dval = geo.avg_integral_gradient()
                d_hat = 2.0 * np.sum(coeff * (np.conj(val) * dval).real, axis=-1)
                grad_mu += omega_sq * d_hat
            chain += c_disp_hat
        total += c_main

        # -- second-order curvature term
        c_curv = 0.0
        if cfg.method == "robust_fm_2":
            m2 = geo.moment(2)
            coeff = 0.25 * self.eta_sq / cfg.tau**2
            c_curv_hat = np.sum(coeff * np.abs(m2) ** 2)
            c_curv = omega_sq * c_curv_hat
            total += c_curv
            chain += c_curv_hat
            if grad:
                dm2 = geo.moment_gradient(2)
                grad_mu += omega_sq * 2.0 * np.sum(
                    coeff * (np.conj(m2) * dm2).real, axis=-1
                )

        # -- angle term (batch only): (Theta(offsets) - pi/4)^2 / 2
        c_angle = 0.0
        if cfg.method == "batch_ff":
            theta_off_hat = -np.sum(0.5 * self.eta_pair * w_off)
            theta_off = omega_sq * theta_off_hat
            c_angle = 0.5 * (theta_off - IDEAL_ANGLE) ** 2
            total += c_angle
            if grad:
                d_theta_off_hat = -np.sum(0.5 * self.eta_pair * dw_off, axis=-1)
                grad_mu += (theta_off - IDEAL_ANGLE) * omega_sq * d_theta_off_hat
            chain += (theta_off - IDEAL_ANGLE) * theta_off_hat

        # -- filter-function terms
        c_ffa = c_fft = 0.0
        if cfg.method in ("ff_opt", "batch_ff"):
            ia = geo.fourier_integral(self.freqs, grad=grad)
            if grad:
                ia, d_ia = ia
            fa_hat = 0.25 * np.sum(
                self.eta_sq * self.rk**2 * np.abs(ia) ** 2, axis=-1
            )
            ffa_hat = np.sum(self.weights * fa_hat)
            c_ffa = omega_sq * ffa_hat

            qt = geo.angle_filter_doubles(self.theta_freqs, "difference", grad=grad)
            if grad:
                qt, d_qt = qt
            x = np.sum(0.25 * self.rk * self.eta_pair * qt, axis=-1)
            ft_hat = np.abs(x) ** 2
            fft_hat = np.sum(self.theta_weights * ft_hat)
            c_fft = omega_sq**2 * fft_hat

            total += c_ffa + c_fft
            chain += ffa_hat + 2.0 * omega_sq * fft_hat
            if grad:
                d_fa = 0.5 * np.sum(
                    self.eta_sq * self.rk**2 * (np.conj(ia)[:, None, :] * d_ia).real,
                    axis=-1,
                )
                grad_mu += omega_sq * np.sum(self.weights[:, None] * d_fa, axis=0)
                dx = np.sum(0.25 * self.rk * self.eta_pair * d_qt, axis=-1)
                d_ft = 2.0 * (np.conj(x)[:, None] * dx).real
                grad_mu += omega_sq**2 * np.sum(
                    self.theta_weights[:, None] * d_ft, axis=0
                )

        # -- Rabi-cap penalty
        c_pen = 0.0
        if cfg.omega_max is not None:
            arg = cfg.penalty_gamma * (1.0 - cfg.omega_max**2 / omega_sq)
            c_pen = cfg.penalty_beta * np.exp(arg)
            total += c_pen
            chain += c_pen * cfg.penalty_gamma * cfg.omega_max**2 / omega_sq**2

        breakdown = CostBreakdown(
            total=float(total),
            averaged_displacement=float(c_main) if cfg.method != "batch_ff" else 0.0,
            curvature=float(c_curv),
            ff_alpha=float(c_ffa),
            ff_theta=float(c_fft),
            penalty=float(c_pen),
            displacement=float(c_main) if cfg.method == "batch_ff" else 0.0,
            angle=float(c_angle),
            omega=float(omega),
        )
        if not grad:
            return float(total), breakdown, None
        grad_mu = grad_mu + chain * d_omega_sq
        return float(total), breakdown, self.fold_gradient(grad_mu)


def _trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    w = np.zeros_like(grid)
    d = np.diff(grid)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def evaluate_cost(
    pulse: FMPulse, modes: ModeStructure, pair, cfg: OptimizerConfig, offsets=None
) -> CostBreakdown:
    """Cost of a symmetric pulse under ``cfg``, with per-term breakdown.

    The carrier Rabi frequency is re-derived from the zero-noise pi/4
    condition before the terms are evaluated, so the cost depends on the
    segment frequencies alone.
    """
    model = _CostModel(modes, pair, cfg)
    free = free_segment_values(pulse)
    if len(free) != (cfg.segments + 1) // 2:
        raise ValueError("pulse segment count does not match cfg.segments")
    _, breakdown, _ = model.evaluate(free, offsets=offsets, grad=False)
    return breakdown


def cost_gradient(
    pulse: FMPulse, modes: ModeStructure, pair, cfg: OptimizerConfig, offsets=None
) -> np.ndarray:
    """Analytic d(cost)/d(free segment values), symmetry-folded."""
    model = _CostModel(modes, pair, cfg)
    free = free_segment_values(pulse)
    _, _, grad = model.evaluate(free, offsets=offsets, grad=True)
    return grad


def rescale_omega(pulse: FMPulse, modes: ModeStructure, pair) -> FMPulse:
    """Rescale the carrier Rabi frequency so the rotation angle is pi/4."""
    ref = pulse if pulse.carrier_rabi > 0 else pulse.with_rabi(1.0)
    theta = rotation_angle(ref, modes, pair)
    if theta <= 0:
        raise RescaleError(
            f"rotation angle {theta:.3e} is not positive; rescaling undefined"
        )
    return pulse.with_rabi(ref.carrier_rabi * np.sqrt(IDEAL_ANGLE / theta))


def default_initial_guess(modes: ModeStructure, cfg: OptimizerConfig) -> np.ndarray:
    """Constant pulse detuned below the lowest mode (initial-guess policy)."""
    mu0 = modes.mode_frequencies.min() - cfg.initial_guess_detuning
    return np.full((cfg.segments + 1) // 2, mu0)


def _free_from_guess(initial_guess, modes, cfg):
    if initial_guess is None:
        return default_initial_guess(modes, cfg)
    if isinstance(initial_guess, FMPulse):
        return free_segment_values(initial_guess)
    free = np.asarray(initial_guess, dtype=float)
    if len(free) != (cfg.segments + 1) // 2:
        raise ValueError("initial guess length does not match cfg.segments")
    return free


class _Clamp:
    """Smooth tanh clamp keeping segment frequencies near the mode band.

    The optimizer works in dimensionless variables y; mu(y) maps them into
    the allowed band, which both bounds the solution and conditions the
    quasi-Newton iteration (raw rad/s variables make gradients vanishingly
    small).
    """

    def __init__(self, modes: ModeStructure, cfg: OptimizerConfig):
        lo = modes.mode_frequencies.min() - cfg.bound_margin
        hi = modes.mode_frequencies.max() + cfg.bound_margin
        self.center = 0.5 * (lo + hi)
        self.half = 0.5 * (hi - lo)

    def mu(self, y):
        return self.center + self.half * np.tanh(y)

    def dmu_dy(self, y):
        return self.half / np.cosh(y) ** 2

    def y(self, mu):
        arg = np.clip((mu - self.center) / self.half, -0.999999, 0.999999)
        return np.arctanh(arg)


def optimize(
    cfg: OptimizerConfig, modes: ModeStructure, pair, initial_guess=None
) -> OptimizationResult:
    """Deterministic quasi-Newton (BFGS) descent on the configured cost.

    Runs ``cfg.multi_start`` seeded starts (the unperturbed initial guess
    plus jittered copies) and returns the best final iterate.  The result
    pulse is time-symmetric with Theta = pi/4 after the final rescale.

    Without an explicit initial guess, the robust methods start from the
    constant pulse detuned below the lowest mode; the ff methods first run
    a short robust pass from that same guess and continue from its
    solution, which keeps the quasi-Newton iteration well conditioned.
    """
    if cfg.method == "batch_ff":
        return optimize_batch(cfg, modes, pair, initial_guess)
    if initial_guess is None and cfg.method == "ff_opt":
        warm = optimize(
            replace(cfg, method="robust_fm_1", multi_start=1), modes, pair
        )
        initial_guess = warm.pulse
    model = _CostModel(modes, pair, cfg)
    clamp = _Clamp(modes, cfg)
    base = _free_from_guess(initial_guess, modes, cfg)
    rng = np.random.default_rng(cfg.seed)
    starts = [base]
    for _ in range(max(0, cfg.multi_start - 1)):
        starts.append(base + rng.normal(0.0, TWO_PI * 2e3, size=base.shape))

    theta_scale = abs(model.theta_hat(base))
    if theta_scale == 0.0:
        raise RescaleError("initial guess gives zero rotation angle")

    best = None
    for start in starts:
        omega_history = []

        def objective(y):
            mu_free = clamp.mu(y)
            try:
                total, breakdown, grad = model.evaluate(mu_free, grad=True)
            except RescaleError:
                # Soft barrier: the line search stepped into theta <= 0;
                # hand back a large value sloped toward positive theta.
                th, dth = model.theta_hat(mu_free, grad=True)
                barrier = 1e6 * (1.0 - th / theta_scale)
                return barrier, -1e6 / theta_scale * dth * clamp.dmu_dy(y)
            omega_history.append(breakdown.omega)
            return total, grad * clamp.dmu_dy(y)

        res = minimize(
            objective,
            clamp.y(start),
            jac=True,
            method="BFGS",
            options={"maxiter": cfg.max_iterations, "gtol": cfg.gradient_tolerance},
        )
        candidate = (res.fun, res, omega_history)
        if best is None or candidate[0] < best[0]:
            best = candidate

    fun, res, omega_history = best
    free = clamp.mu(res.x)
    total, breakdown, grad = model.evaluate(free, grad=True)
    pulse = model.pulse_from_free(free).with_rabi(breakdown.omega)
    warning = None
    if not res.success and "precision loss" not in res.message.lower():
        warning = f"line search did not converge: {res.message}"
    return OptimizationResult(
        pulse=pulse,
        cost=float(total),
        breakdown=breakdown,
        iterations=int(res.nit),
        gradient_norm=float(np.max(np.abs(grad))),
        omega_history=omega_history,
        converged=bool(res.success or "precision loss" in res.message.lower()),
        warning=warning,
    )


def optimize_batch(
    cfg: OptimizerConfig, modes: ModeStructure, pair, initial_guess=None
) -> OptimizationResult:
    """Stochastic batch optimization: per-iteration random static offsets.

    Each iteration draws a fresh offset vector (normal, zero mean,
    ``cfg.batch_std``), evaluates the ff cost at those offsets, and takes
    an adaptive-moment step.  Seeded and reproducible.  Without an
    explicit initial guess the plain ff solution is computed first and
    used as the starting point.
    """
    if cfg.psd is None:
        raise ValueError("batch_ff requires a noise PSD")
    if initial_guess is None:
        warm = optimize(replace(cfg, method="ff_opt"), modes, pair)
        initial_guess = warm.pulse
    model = _CostModel(modes, pair, cfg)
    clamp = _Clamp(modes, cfg)
    free = _free_from_guess(initial_guess, modes, cfg)
    rng = np.random.default_rng(cfg.seed)
    scale = modes.scaling_factors if cfg.batch_scale_with_rk else 1.0

    y = clamp.y(free)
    m = np.zeros_like(y)
    v = np.zeros_like(y)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    # Step size in frequency units; converted to the dimensionless variable.
    rate = cfg.batch_learning_rate / clamp.half
    omega_history = []
    last_grad = 0.0
    for it in range(1, cfg.batch_iterations + 1):
        offsets = (
            rng.normal(0.0, cfg.batch_std, size=modes.mode_count) * scale
            if cfg.batch_std > 0
            else np.zeros(modes.mode_count)
        )
        mu_free = clamp.mu(y)
        total, breakdown, grad = model.evaluate(mu_free, offsets=offsets, grad=True)
        grad = grad * clamp.dmu_dy(y)
        omega_history.append(breakdown.omega)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad**2
        mhat = m / (1.0 - beta1**it)
        vhat = v / (1.0 - beta2**it)
        y = y - rate * mhat / (np.sqrt(vhat) + eps)
        last_grad = np.max(np.abs(grad))

    free = clamp.mu(y)
    total, breakdown, grad = model.evaluate(free, grad=True)
    pulse = model.pulse_from_free(free).with_rabi(breakdown.omega)
    return OptimizationResult(
        pulse=pulse,
        cost=float(total),
        breakdown=breakdown,
        iterations=cfg.batch_iterations,
        gradient_norm=float(last_grad),
        omega_history=omega_history,
        converged=True,
    )
