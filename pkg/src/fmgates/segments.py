"""Closed-form segment integrals for piecewise-linear phases.

Within a segment the mode phase is linear, so every quantity in this
package reduces to oscillatory polynomial moments

    M_p(s, w)        = int_0^w u^p exp(i s u) du
    T_pq(b, g, w)    = int_0^w u^p exp(i b u) [int_0^u v^q exp(i g v) dv] du

plus prefix sums across segments.  Both primitives switch to a power
series below ``|s w| = 0.5`` so they stay accurate and continuous through
resonances (removable singularities of the closed forms).

``SegmentGeometry`` assembles the per-(segment, mode) bookkeeping used by
the gate metrics, the filter functions, and their analytic gradients with
respect to the segment frequencies.
"""

from math import comb, factorial

import numpy as np

_SMALL = 0.5
_NSERIES = 22


def _power_terms(z, nmax):
    """t_n = (i z)^n / n! for n = 0..nmax, shape (nmax + 1,) + z.shape."""
    t = np.empty((nmax + 1,) + z.shape, dtype=complex)
    t[0] = 1.0
    iz = 1j * z
    for n in range(1, nmax + 1):
        t[n] = t[n - 1] * iz / n
    return t


def _moment_series(z, w, pmax):
    """Series M_p = w^(p+1) sum_n (i z)^n / (n! (p + n + 1)) on flat arrays."""
    terms = _power_terms(z, _NSERIES)
    p_idx = np.arange(pmax + 1)[:, None]
    n_idx = np.arange(_NSERIES + 1)[None, :]
    denom = 1.0 / (p_idx + n_idx + 1.0)
    acc = np.tensordot(denom, terms, axes=(1, 0))
    wp = w.astype(complex)
    for p in range(pmax + 1):
        acc[p] *= wp
        wp = wp * w
    return acc


def seg_moments(s, w, pmax: int) -> np.ndarray:
    """Moments M_p(s, w) for p = 0..pmax; broadcasts over ``s`` and ``w``.

    Returns a complex array of shape ``(pmax + 1,) + broadcast(s, w).shape``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    w = np.asarray(w, dtype=float)
    s, w = np.broadcast_arrays(s, w)
    z = s * w
    small = np.abs(z) < _SMALL
    out = np.empty((pmax + 1,) + z.shape, dtype=complex)

    # Exact branch via the upward recurrence (stable for |z| >= 0.5).
    s_safe = np.where(small, 1.0, s)
    inv_is = 1.0 / (1j * s_safe)
    eisw = np.exp(1j * z)
    exact = (eisw - 1.0) * inv_is
    out[0] = exact
    wpow = w.copy()
    for p in range(1, pmax + 1):
        exact = (wpow * eisw - p * exact) * inv_is
        out[p] = exact
        wpow = wpow * w

    # Series patch on the (typically sparse) near-resonant subset.
    if np.any(small):
        acc = _moment_series(z[small], w[small], pmax)
        for p in range(pmax + 1):
            out[p][small] = acc[p]
    return out


def seg_double(p: int, q: int, beta, gamma, w) -> np.ndarray:
    """Nested moment T_pq(beta, gamma, w); broadcasts over the arguments."""
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    gamma = np.asarray(gamma, dtype=float)
    w = np.asarray(w, dtype=float)
    beta, gamma, w = np.broadcast_arrays(beta, gamma, w)
    zg = gamma * w
    small = np.abs(zg) < _SMALL

    # Exact: expand the inner moment into exp(i gamma u) terms.
    g_safe = np.where(small, 1.0, gamma)
    inv_ig = 1.0 / (1j * g_safe)
    mb_p = seg_moments(beta, w, p)[p]
    mbg = seg_moments(beta + gamma, w, p + q)
    out = ((-1.0) ** (q + 1)) * factorial(q) * inv_ig ** (q + 1) * mb_p
    for j in range(q + 1):
        coef = ((-1.0) ** j) * (factorial(q) // factorial(q - j))
        out = out + coef * inv_ig ** (j + 1) * mbg[p + q - j]

    # Series in gamma on the near-resonant subset:
    # T = sum_n (i gamma)^n / (n! (q+n+1)) M_{p+q+n+1}(beta, w).
    if np.any(small):
        bs, gs, ws = beta[small], gamma[small], w[small]
        mb = seg_moments(bs, ws, p + q + _NSERIES + 1)
        terms = _power_terms(gs, _NSERIES)
        terms /= (q + 1.0 + np.arange(_NSERIES + 1))[:, None]
        out[small] = np.sum(terms * mb[p + q + 1 : p + q + _NSERIES + 2], axis=0)
    return out


def _fused_doubles(beta, gamma, w, mb, grad: bool, mbg=None):
    """T00 (and, with ``grad``, T10/T01) sharing one set of moment tables.

    ``mb`` holds M_p(beta, w); ``mbg`` optionally supplies precomputed
    M_p(beta + gamma, w) (broadcastable).
    """
    beta, gamma, w = np.broadcast_arrays(beta, gamma, w)
    zg = gamma * w
    small = np.abs(zg) < _SMALL
    g_safe = np.where(small, 1.0, gamma)
    inv_ig = 1.0 / (1j * g_safe)
    if mbg is None:
        mbg = seg_moments(beta + gamma, w, 1 if grad else 0)
    t00 = inv_ig * (mbg[0] - np.broadcast_to(mb[0], beta.shape))
    t10 = t01 = None
    if grad:
        t10 = inv_ig * (mbg[1] - mb[1])
        t01 = inv_ig * mbg[1] + inv_ig**2 * (mb[0] - mbg[0])
        t10 = t10 + np.zeros(beta.shape, complex)
        t01 = t01 + np.zeros(beta.shape, complex)
    if np.any(small):
        bs, ws = beta[small], w[small]
        nmax = _NSERIES + (2 if grad else 1)
        mbs = seg_moments(bs, ws, nmax)
        terms = _power_terms(gamma[small], _NSERIES)
        n1 = 1.0 + np.arange(_NSERIES + 1)[:, None]
        t00[small] = np.sum(terms / n1 * mbs[1 : _NSERIES + 2], axis=0)
        if grad:
            t10[small] = np.sum(terms / n1 * mbs[2 : _NSERIES + 3], axis=0)
            t01[small] = np.sum(terms / (n1 + 1.0) * mbs[2 : _NSERIES + 3], axis=0)
    return t00, t10, t01


class SegmentGeometry:
    """Per-(segment, mode) phase bookkeeping for one pulse and mode set.

    Parameters
    ----------
    pulse : FMPulse
        Piecewise-constant drive.
    omega : ndarray, shape (K,)
        Effective mode angular frequencies (static offsets already added).

    Array layout: segments index ``l`` first, modes ``k`` second.
    """

    def __init__(self, pulse, omega):
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        self.widths = pulse.segment_widths                    # (S,)
        self.starts = pulse.segment_boundaries[:-1]           # (S,)
        self.mu = pulse.segment_frequencies                   # (S,)
        self.tau = pulse.duration
        self.omega = omega
        self.slopes = self.mu[:, None] - omega[None, :]       # (S, K)
        steps = self.slopes * self.widths[:, None]
        self.phi = np.zeros((len(self.mu) + 1, len(omega)))
        np.cumsum(steps, axis=0, out=self.phi[1:])            # theta at t_l
        self.em = np.exp(-1j * self.phi[:-1])                 # exp(-i theta(t_l))
        self.ep = np.conj(self.em)
        self._w2 = self.widths[:, None]
        self._m = seg_moments(-self.slopes, self._w2, 2)      # moments of e^{-i theta}
        # Per-segment integrals of e^{-i theta} and t e^{-i theta}, prefixes.
        self.seg0 = self.em * self._m[0]
        seg_t = self.em * (self.starts[:, None] * self._m[0] + self._m[1])
        self.j0 = np.zeros_like(self.phi, dtype=complex)
        np.cumsum(self.seg0, axis=0, out=self.j0[1:])
        self.j1 = np.zeros_like(self.phi, dtype=complex)
        np.cumsum(seg_t, axis=0, out=self.j1[1:])

    # ------------------------------------------------------------------
    # Single integrals over e^{-i theta} and their segment-value gradients
    # ------------------------------------------------------------------

    def moment(self, m: int) -> np.ndarray:
        """int_0^tau t^m e^{-i theta_k(t)} dt, shape (K,)."""
        mk = self._m if m <= 2 else seg_moments(-self.slopes, self._w2, m)
        total = np.zeros_like(self.omega, dtype=complex)
        for p in range(m + 1):
            coef = comb(m, p) * self.starts[:, None] ** (m - p)
            total = total + np.sum(self.em * coef * mk[p], axis=0)
        return total

    def moment_gradient(self, m: int) -> np.ndarray:
        """d(moment m)/d mu_i, shape (S, K)."""
        mk = seg_moments(-self.slopes, self._w2, m + 1)
        seg = np.zeros_like(self.slopes, dtype=complex)
        seg_first = np.zeros_like(self.slopes, dtype=complex)
        for p in range(m + 1):
            coef = comb(m, p) * self.starts[:, None] ** (m - p)
            seg = seg + self.em * coef * mk[p]
            seg_first = seg_first + self.em * coef * mk[p + 1]
        suffix = _suffix_sum(seg)
        return -1j * (self._w2 * suffix + seg_first)

    def integral(self) -> np.ndarray:
        """int e^{-i theta} dt = the displacement integral, shape (K,)."""
        return np.sum(self.seg0, axis=0)

    def integral_gradient(self) -> np.ndarray:
        suffix = _suffix_sum(self.seg0)
        return -1j * (self._w2 * suffix + self.em * self._m[1])

    def avg_integral(self) -> np.ndarray:
        """int_0^tau int_0^t e^{-i theta(t')} dt' dt = tau*I - int t e^{-i theta}."""
        return self.tau * self.integral() - self.moment(1)

    def avg_integral_gradient(self) -> np.ndarray:
        return self.tau * self.integral_gradient() - self.moment_gradient(1)

    # ------------------------------------------------------------------
    # Separable double integrals Q = int dt1 a(t1) int_0^{t1} b(t2) dt2
    # with a, b segment-wise exponentials; used for Theta and the FFs.
    # ------------------------------------------------------------------

    def _double(self, a0, beta, eps_a, b0, gamma, eps_b, grad: bool, tables=None):
        w = self._w2
        pmax = 1 if grad else 0
        if tables is None:
            mb = seg_moments(beta, w, pmax)
            mg = seg_moments(gamma, w, pmax)
            mbg = None
        else:
            mb, mg, mbg = tables
        t00, t10, t01 = _fused_doubles(beta, gamma, w, mb, grad, mbg=mbg)
        aseg = a0 * mb[0]
        bseg = b0 * mg[0]
        bpre = np.zeros(bseg.shape[:-2] + (bseg.shape[-2] + 1, bseg.shape[-1]), complex)
        np.cumsum(bseg, axis=-2, out=bpre[..., 1:, :])
        ghat = bpre[..., :-1, :] * aseg + a0 * b0 * t00
        q = np.sum(ghat, axis=-2)
        if not grad:
            return q, None
        sg = _suffix_sum(ghat)
        sa = _suffix_sum(aseg)
        fhat = bpre[..., :-1, :] * a0 * mb[1] + a0 * b0 * t10
        dq = -1j * (
            eps_a * (w * sg + fhat)
            + eps_b * (
                a0 * b0 * t01
                + b0 * mg[1] * sa
                + w * (sg - bpre[..., 1:, :] * sa)
            )
        )
        return q, dq

    def theta_double(self, grad: bool = False):
        """W_k = Im int dt1 e^{i theta(t1)} int_0^{t1} e^{-i theta(t2)} dt2.

        The rotation angle is Theta = -Omega^2 sum_k (eta1 eta2 / 2) W_k.
        """
        q, dq = self._double(
            self.ep, self.slopes, -1.0, self.em, -self.slopes, +1.0, grad
        )
        if grad:
            return q.imag, dq.imag
        return q.imag

    def angle_slope_double(self) -> np.ndarray:
        """V_k = int dt1 int dt2 (t1 - t2) cos[theta(t1) - theta(t2)], (K,)."""
        s, w = self.slopes, self._w2
        m0p = seg_moments(s, w, 1)
        t10 = seg_double(1, 0, s, -s, w)
        t01 = seg_double(0, 1, s, -s, w)
        j0 = self.j0[:-1]
        j1 = self.j1[:-1]
        inner = self.ep * (
            (self.starts[:, None] * j0 - j1) * m0p[0] + j0 * m0p[1]
        ) + t10 - t01
        return np.sum(inner, axis=0).real

    def fourier_integral(self, freqs, grad: bool = False):
        """I_k(f) = int exp(i(2 pi f t - theta_k(t))) dt, shape (F, K)."""
        f = 2.0 * np.pi * np.atleast_1d(np.asarray(freqs, dtype=float))
        fcol = f[:, None, None]
        a0 = np.exp(1j * fcol * self.starts[:, None]) * self.em
        beta = fcol - self.slopes
        m0 = seg_moments(beta, self._w2, 1 if grad else 0)
        val = np.sum(a0 * m0[0], axis=-2)
        if not grad:
            return val
        seg = a0 * m0[0]
        suffix = _suffix_sum(seg)
        dval = -1j * (self._w2 * suffix + a0 * m0[1])
        return val, dval

    def angle_filter_doubles(self, freqs, kind: str = "difference", grad: bool = False):
        """Kernel sums for the angle filter functions, shape (F, K).

        ``difference`` returns Q1 + Q2 - Q3 - Q4 built from the
        (e^{2 pi i f t1} - e^{2 pi i f t2}) cos kernel; ``sum`` returns
        Q1 - Q2 + Q3 - Q4 from the (+, sin) kernel.
        """
        f = 2.0 * np.pi * np.atleast_1d(np.asarray(freqs, dtype=float))
        fcol = f[:, None, None]
        ft0 = np.exp(1j * fcol * self.starts[:, None])
        s = self.slopes
        pmax = 1 if grad else 0
        # Shared moment tables: only two full-size ones are ever needed.
        ta = seg_moments(fcol + s, self._w2, pmax)
        tb = seg_moments(fcol - s, self._w2, pmax)
        tc = seg_moments(s, self._w2, pmax)
        td = tc.conj()
        te = seg_moments(np.broadcast_to(fcol, fcol.shape), self._w2, pmax)
        sk = np.broadcast_to(s, (len(f),) + s.shape)
        parts = [
            (ft0 * self.ep, fcol + s, -1.0, self.em, -s, +1.0, (ta, td, te)),
            (ft0 * self.em, fcol - s, +1.0, self.ep, s, -1.0, (tb, tc, te)),
            (self.ep, sk, -1.0, ft0 * self.em, fcol - s, +1.0, (tc, tb, te)),
            (self.em, -sk, +1.0, ft0 * self.ep, fcol + s, -1.0, (td, ta, te)),
        ]
        signs = (1.0, 1.0, -1.0, -1.0) if kind == "difference" else (1.0, -1.0, 1.0, -1.0)
        total = 0.0
        dtotal = 0.0
        for sign, (a0, beta, eps_a, b0, gamma, eps_b, tabs) in zip(signs, parts):
            q, dq = self._double(a0, beta, eps_a, b0, gamma, eps_b, grad, tables=tabs)
            total = total + sign * q
            if grad:
                dtotal = dtotal + sign * dq
        if grad:
            return total, dtotal
        return total


def _suffix_sum(arr: np.ndarray) -> np.ndarray:
    """suffix[i] = sum of arr over segment indices > i (axis -2)."""
    rev = np.flip(arr, axis=-2)
    out = np.cumsum(rev, axis=-2)
    out = np.flip(out, axis=-2) - arr
    return out
