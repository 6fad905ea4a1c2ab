"""Shaping-filter design and band-passed reset element assembly.

The shaping filter is ``F = N1 * Lf * N2``: an anti-notch at ``omega_l``, a
fractional lag across the band and a notch at ``omega_h``.  Its two free
parameters ``(lam, q)`` are found from two phase constraints evaluated on the
exact fractional phase; the CRONE realization only enters when a rational
filter is needed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .lincore import (Cascade, FractionalLag, FreqGrid, TransferFunction,
                      crone_factors, eval_fractional, first_order_lag, lead_lag)
from .resetfreq import (HybridRealization, PsiProfile, ResetChain, ResetElement,
                        closed_form_single_state, find_omega_lb, fore, hosidf,
                        hybrid_series, linear_hybrid, psi_of)

__all__ = [
    "ShapingSpec", "ShapingFilter", "ShapedResetElement", "SolverError",
    "zeta_of_q", "solve_lambda_q", "build_shaping_filter",
    "build_bandpassed_cglp", "build_bandpassed_clegg", "build_bandpassed_fore",
    "build_conventional_cglp", "fit_alpha", "design_to_dict",
]

SQRT10 = math.sqrt(10.0)


class SolverError(RuntimeError):
    """Raised when the (lam, q) iteration does not converge."""

    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


@dataclass(frozen=True)
class ShapingSpec:
    """Target phase shape.

    ``method`` selects the constraint set: ``"decade"`` uses the
    symmetry-reduced one-decade arctangent forms, ``"full"`` evaluates the
    whole filter phase (anti-notch, lag and notch) at ``omega_c`` and at the
    anti-notch phase peak, and works for any band ratio.  ``"auto"`` picks
    ``"decade"`` when ``omega_h == 10*omega_l``.
    """

    omega_l: float
    omega_h: float
    psi_f: float
    psi_b: float | None = None
    epsilon2: float = math.pi / 180
    epsilon1: float | None = None
    method: str = "auto"

    def __post_init__(self):
        if not 0 < self.omega_l < self.omega_h:
            raise ValueError("need 0 < omega_l < omega_h")
        if self.epsilon2 <= 0:
            raise ValueError("epsilon2 must be > 0")
        if self.method not in ("auto", "decade", "full"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def omega_c(self) -> float:
        return math.sqrt(self.omega_l * self.omega_h)

    @property
    def is_decade(self) -> bool:
        return math.isclose(self.omega_h, 10 * self.omega_l, rel_tol=1e-12)

    def resolved_method(self) -> str:
        if self.method != "auto":
            return self.method
        return "decade" if self.is_decade else "full"


def zeta_of_q(q: float) -> float:
    """Peak-phase frequency of the anti-notch, relative to its centre."""
    if q <= 0:
        raise ValueError("q must be > 0")
    return math.sqrt(2) / 2 * math.sqrt((2 * q + 1 - math.sqrt(1 + 4 * q)) / q)


def anti_notch(omega: float, q: float) -> TransferFunction:
    w = omega
    return TransferFunction([1.0, 1 / w, 1 / w ** 2], [1.0, 1 / (q * w), 1 / w ** 2])


def notch(omega: float, q: float) -> TransferFunction:
    w = omega
    return TransferFunction([1.0, 1 / (q * w), 1 / w ** 2], [1.0, 1 / w, 1 / w ** 2])


def _exact_phase(lam, q, omega_l, omega_h, w):
    s = 1j * w
    x, y = s / omega_l, s / omega_h
    n1 = np.angle(x * x + x + 1) - np.angle(x * x + x / q + 1)
    n2 = np.angle(y * y + y / q + 1) - np.angle(y * y + y + 1)
    lf = lam * (math.atan(w / omega_l) - math.atan(w / omega_h))
    return n1 + n2 + lf


def _residuals_decade(lam, q, spec):
    z = zeta_of_q(q)
    if abs(1 - z * z) < 1e-14:
        raise ZeroDivisionError("zeta^2 = 1")
    lf_c = lam * (math.atan(SQRT10) - math.atan(1 / SQRT10))
    n1_c = math.atan(SQRT10 / (9 * q)) - math.atan(SQRT10 / 9)
    lf_m = lam * (math.atan(z) - math.atan(z / 10))
    n1_m = math.atan(z / (1 - z * z)) - math.atan((z / q) / (1 - z * z))
    return np.array([lf_c + 2 * n1_c - spec.psi_f, lf_m + n1_m - spec.epsilon2])


def _residuals_full(lam, q, spec):
    z = zeta_of_q(q)
    eps = spec.epsilon1 if spec.epsilon1 is not None else spec.epsilon2
    wl, wh = spec.omega_l, spec.omega_h
    return np.array([
        _exact_phase(lam, q, wl, wh, spec.omega_c) - spec.psi_f,
        _exact_phase(lam, q, wl, wh, z * wl) - eps,
    ])


def solve_lambda_q(spec: ShapingSpec, tol: float = 1e-12, max_iter: int = 200,
                   guess: tuple[float, float] | None = None) -> tuple[float, float]:
    """Solve the two phase constraints for ``(lam, q)`` by damped Newton.

    Converges when both residuals are below ``tol`` radians.  Steps that
    leave ``q > 0`` or hit ``zeta^2 = 1`` are halved.

    Raises
    ------
    SolverError
        After ``max_iter`` iterations, carrying the last residual vector.
    """
    method = spec.resolved_method()
    if method == "decade" and not spec.is_decade:
        raise ValueError("decade constraints need omega_h = 10 omega_l")
    fun = _residuals_decade if method == "decade" else _residuals_full
    if guess is None:
        lam = spec.psi_f / (math.atan(SQRT10) - math.atan(1 / SQRT10)) * 0.9
        q = 1.0 + abs(spec.psi_f) / (math.pi / 2) * 2
    else:
        lam, q = guess
    r = fun(lam, q, spec)
    for _ in range(max_iter):
        if np.max(np.abs(r)) < tol:
            return float(lam), float(q)
        h_l = 1e-7 * max(1.0, abs(lam))
        h_q = 1e-7 * max(1.0, q)
        J = np.column_stack([
            (fun(lam + h_l, q, spec) - fun(lam - h_l, q, spec)) / (2 * h_l),
            (fun(lam, q + h_q, spec) - fun(lam, q - h_q, spec)) / (2 * h_q),
        ])
        try:
            step = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            raise SolverError("singular Jacobian", r) from None
        t = 1.0
        norm0 = np.linalg.norm(r)
        while t > 1e-10:
            nl, nq = lam + t * step[0], q + t * step[1]
            if nq > 0:
                try:
                    nr = fun(nl, nq, spec)
                except ZeroDivisionError:
                    nr = None
                if nr is not None and np.linalg.norm(nr) < norm0 * (1 - 1e-4 * t) + 1e-15:
                    break
            t *= 0.5
        else:
            raise SolverError("line search failed", r)
        lam, q, r = nl, nq, nr
    if np.max(np.abs(r)) < tol:
        return float(lam), float(q)
    raise SolverError(f"no convergence after {max_iter} iterations", r)


@dataclass
class ShapingFilter:
    """Solved shaping filter with both exact and CRONE-realized forms."""

    lam: float
    q: float
    n1: TransferFunction
    n2: TransferFunction
    lf: FractionalLag
    crone_N: int
    spec: ShapingSpec | None = None

    @property
    def factors(self) -> Cascade:
        return Cascade([self.n1, *crone_factors(self.lf, self.crone_N), self.n2])

    @property
    def realized(self) -> TransferFunction:
        return self.factors.tf()

    def exact_response(self, omega):
        return self.n1(1j * np.asarray(omega)) * eval_fractional(self.lf, omega) \
            * self.n2(1j * np.asarray(omega))

    def exact_phase(self, omega):
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        return np.array([_exact_phase(self.lam, self.q, self.lf.omega_l,
                                      self.lf.omega_h, w) for w in omega])

    def realized_response(self, omega):
        return self.factors(1j * np.asarray(omega, dtype=float))

    def zero_crossings(self, grid=None, exact: bool = True) -> list[float]:
        """Frequencies where the filter phase changes sign (bisected)."""
        if grid is None:
            grid = FreqGrid.log(self.lf.omega_l / 1000, self.lf.omega_h * 1000, 4001)
        pts = grid.points
        if exact:
            fn, psi = self.exact_response, self.exact_phase(pts)
        else:
            fn = self.realized_response
            psi = np.unwrap(np.angle(fn(pts)))
        return find_omega_lb(PsiProfile(grid, psi, fn))


def build_shaping_filter(spec: ShapingSpec, N_crone: int = 6,
                         lam_q: tuple[float, float] | None = None) -> ShapingFilter:
    """Solve for ``(lam, q)`` (unless given) and assemble the filter."""
    lam, q = lam_q if lam_q is not None else solve_lambda_q(spec)
    return ShapingFilter(
        lam=lam, q=q,
        n1=anti_notch(spec.omega_l, q),
        n2=notch(spec.omega_h, q),
        lf=FractionalLag(lam, spec.omega_l, spec.omega_h),
        crone_N=N_crone, spec=spec,
    )


# --------------------------------------------------------------------------
# assembled elements

def fit_alpha(gamma: float, lo: float = 0.1, hi: float = 10.0) -> float:
    """Corner-shift ratio so a reset lag ``1/(s alpha/w_r + 1)`` is -3 dB at
    ``w_r`` on its first harmonic.  Scale-free, so ``w_r = 1`` is used."""
    if abs(gamma) >= 1 and gamma != 1:
        raise ValueError("need |gamma| < 1")
    target = 1 / math.sqrt(2)

    def g(a):
        return abs(hosidf(fore(1.0 / a, gamma), 1.0, 1)) - target

    glo, ghi = g(lo), g(hi)
    if glo * ghi > 0:
        raise SolverError(f"alpha bracket [{lo}, {hi}] does not straddle -3 dB")
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        gm = g(mid)
        if gm == 0 or hi / lo - 1 < 1e-14:
            return mid
        if np.sign(gm) == np.sign(glo):
            lo, glo = mid, gm
        else:
            hi = mid
    return math.sqrt(lo * hi)


@dataclass
class ShapedResetElement:
    """``e -> F -> K -> [reset core] -> T``, reset triggered by ``e``.

    ``F`` is the realized shaping cascade (empty means no shaping).  The
    analytic harmonics use the same rational ``F`` that is simulated.
    """

    F: Cascade
    K: TransferFunction
    core: ResetElement
    T: Cascade
    omega_r: float
    gamma: float
    kind: str = "cglp"
    shaping: ShapingFilter | None = None
    params: dict = field(default_factory=dict)

    def Q(self, omega):
        return self.F(1j * omega) * self.K(1j * omega)

    def psi(self, omega) -> float:
        """Principal-value ``angle(F K R)``."""
        R = 1.0 / (1j * omega / self.omega_r + 1.0)
        return float(np.angle(self.Q(omega) * R))

    def hosidf(self, omega: float, n: int = 1) -> complex:
        """Harmonic ``n`` referenced to the phase of ``e = sin(omega t)``:
        ``Q(j omega) G_n(psi) T(j n omega)``."""
        if n > 1 and n % 2 == 0:
            return 0j
        Q = complex(self.Q(omega))
        G = closed_form_single_state(self.omega_r, self.gamma, self.psi(omega), omega, n)
        return complex(Q * G * self.T(1j * n * omega))

    def omega_lb(self, grid: FreqGrid | None = None) -> list[float]:
        """Frequencies where ``psi`` crosses zero; every higher harmonic
        vanishes there."""
        if grid is None:
            lo, hi = (self.shaping.lf.omega_l, self.shaping.lf.omega_h) \
                if self.shaping is not None else (self.omega_r, 10 * self.omega_r)
            grid = FreqGrid.log(lo / 1000, hi * 1000, 4001)
        R = first_order_lag(self.omega_r)
        return find_omega_lb(psi_of(self.F, self.K, R, grid))

    def linear_response(self, omega):
        R = 1.0 / (1j * np.asarray(omega) / self.omega_r + 1.0)
        return self.Q(omega) * R * self.T(1j * np.asarray(omega))

    def to_hybrid(self) -> HybridRealization:
        front = linear_hybrid((self.F * self.K).to_ss())
        core = HybridRealization(self.core.base, self.core.gammas)
        back = linear_hybrid(self.T.to_ss())
        return hybrid_series(hybrid_series(front, core), back)


def _k_filter(omega_r, omega_f):
    return lead_lag(omega_r, omega_f)


def _default_omega_f(filt: ShapingFilter | None, omega_r: float) -> float:
    if filt is None:
        return 1e4 * omega_r
    return 1000.0 * filt.lf.omega_h


def _assemble(filt, omega_r, gamma, omega_f, tail, kind, params):
    if abs(gamma) > 1:
        raise ValueError("need |gamma| <= 1")
    if omega_f is None:
        omega_f = _default_omega_f(filt, omega_r)
    if omega_f < 20 * omega_r:
        warnings.warn("omega_f < 20 omega_r: K no longer cancels R well", stacklevel=3)
    F = filt.factors if filt is not None else Cascade()
    T = F.inverse() * tail
    params = dict(params, omega_f=omega_f)
    return ShapedResetElement(F, _k_filter(omega_r, omega_f), fore(omega_r, gamma), T,
                              omega_r, gamma, kind, filt, params)


def build_bandpassed_cglp(filt: ShapingFilter | None, omega_r: float, gamma: float,
                          omega_f: float | None = None,
                          alpha: float | None = None) -> ShapedResetElement:
    """Band-passed CgLp: ``T = F^{-1} W`` with ``W = (s alpha/w_r+1)/(s/w_r+1)``."""
    if alpha is None:
        alpha = fit_alpha(gamma) if abs(gamma) < 1 else 1.0
    W = lead_lag(omega_r / alpha, omega_r)
    return _assemble(filt, omega_r, gamma, omega_f, Cascade([W]), "cglp",
                     {"alpha": alpha})


def build_bandpassed_clegg(filt: ShapingFilter | None, omega_r: float, gamma: float,
                           omega_f: float | None = None) -> ShapedResetElement:
    """Band-passed Clegg integrator: ``T = F^{-1}/s``."""
    return _assemble(filt, omega_r, gamma, omega_f,
                     Cascade([TransferFunction([1.0], [0.0, 1.0])]), "clegg", {})


def build_bandpassed_fore(filt: ShapingFilter | None, omega_r: float, gamma: float,
                          omega_rr: float,
                          omega_f: float | None = None) -> ShapedResetElement:
    """Band-passed FORE: ``T = F^{-1}/(s/omega_rr + 1)``."""
    return _assemble(filt, omega_r, gamma, omega_f, Cascade([first_order_lag(omega_rr)]),
                     "fore", {"omega_rr": omega_rr})


def build_conventional_cglp(omega_r: float, gamma: float, omega_f: float,
                            alpha: float | None = None) -> ResetChain:
    """Reset lag ``1/(s alpha/w_r + 1)`` followed by ``(s/w_r+1)/(s/w_f+1)``."""
    if alpha is None:
        alpha = fit_alpha(gamma) if abs(gamma) < 1 else 1.0
    chain = ResetChain(fore(omega_r / alpha, gamma), [lead_lag(omega_r, omega_f)])
    chain.params = {"alpha": alpha, "omega_r": omega_r, "omega_f": omega_f, "gamma": gamma}
    return chain


def design_to_dict(filt: ShapingFilter, gamma: float | None = None,
                   omega_r: float | None = None, alpha: float | None = None) -> dict:
    """JSON-ready design record; zeros/poles of the realized F in rad/s as
    ``[re, im]`` pairs."""
    tf = filt.realized
    two_pi = 2 * math.pi
    spec = filt.spec
    return {
        "omega_l_hz": filt.lf.omega_l / two_pi,
        "omega_h_hz": filt.lf.omega_h / two_pi,
        "psi_f_deg": math.degrees(spec.psi_f) if spec is not None else None,
        "lambda": filt.lam,
        "q": filt.q,
        "gamma": gamma,
        "omega_r_hz": omega_r / two_pi if omega_r is not None else None,
        "alpha": alpha,
        "crone_N": filt.crone_N,
        "zeros": [[float(z.real), float(z.imag)] for z in np.sort_complex(tf.zeros())],
        "poles": [[float(p.real), float(p.imag)] for p in np.sort_complex(tf.poles())],
    }
