"""Higher-order sinusoidal input describing functions of reset elements.

Three engines are provided:

* :func:`hosidf` -- matrix formula for resets triggered by the element's own
  input crossing zero;
* :func:`hosidf_shifted` -- matrix formula for resets shifted by a phase
  ``phi`` relative to the input (resets where ``sin(w t - phi) = 0``);
* :func:`closed_form_single_state` -- scalar closed form for a first-order
  reset state ``1/(s/w_r + 1)`` expressed through ``psi``.

Even harmonics of these elements vanish identically and are never stored.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.linalg import expm

from .lincore import Cascade, FreqGrid, StateSpace, TransferFunction, eval_freq

__all__ = [
    "ResetElement", "HosidfResult", "PsiProfile", "SingularityError",
    "hosidf", "hosidf_shifted", "closed_form_single_state", "harmonic_factor",
    "psi_of", "find_omega_lb", "phase_approx", "solve_gamma_psi",
    "fore", "sore", "clegg", "sweep",
    "HybridRealization", "linear_hybrid", "hybrid_series", "LinearElement", "ResetChain",
]


class SingularityError(np.linalg.LinAlgError):
    """A matrix required by the describing-function formulas is singular."""


@dataclass(frozen=True)
class ResetElement:
    """Base linear system plus diagonal reset matrix ``A_rho``.

    All states flow with ``(A, B, C, D)``; when the input crosses zero the
    state is multiplied by ``a_rho``.
    """

    base: StateSpace
    a_rho: np.ndarray
    label: str = ""

    def __init__(self, base: StateSpace, a_rho, label: str = ""):
        a_rho = np.atleast_2d(np.asarray(a_rho, dtype=float))
        if a_rho.size == 1 and base.n != 1:
            a_rho = float(a_rho.item()) * np.eye(base.n)
        if a_rho.shape != (base.n, base.n):
            raise ValueError(f"a_rho shape {a_rho.shape} does not match {base.n} states")
        gam = np.diag(a_rho)
        if np.any(np.abs(gam) > 1):
            warnings.warn(
                f"reset coefficients {gam} violate |gamma| <= 1 "
                "(necessary for quadratic stability)", stacklevel=2)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "a_rho", a_rho)
        object.__setattr__(self, "label", label)

    @property
    def gammas(self) -> np.ndarray:
        return np.diag(self.a_rho).copy()

    @property
    def is_linear(self) -> bool:
        return bool(np.allclose(self.a_rho, np.eye(self.base.n), rtol=0, atol=0))

    def hosidf(self, omega: float, n: int = 1) -> complex:
        return hosidf(self, omega, n)

    def linear_response(self, omega) -> np.ndarray:
        return self.base.freqresp(omega)

    def reset_diag(self) -> np.ndarray:
        return self.gammas


def clegg(gamma: float = 0.0) -> ResetElement:
    """Reset integrator ``1/s``."""
    return ResetElement(StateSpace([[0.0]], [1.0], [1.0], 0.0), gamma, "clegg")


def fore(omega_r: float, gamma: float) -> ResetElement:
    """First-order reset element ``1/(s/omega_r + 1)``."""
    return ResetElement(StateSpace([[-omega_r]], [omega_r], [1.0], 0.0), gamma, "fore")


def sore(omega_r: float, beta: float, gamma: float) -> ResetElement:
    """Second-order reset element ``1/((s/w)^2 + 2 beta s/w + 1)``, both
    states reset by ``gamma``."""
    w = omega_r
    A = np.array([[0.0, 1.0], [-w * w, -2 * beta * w]])
    return ResetElement(StateSpace(A, [0.0, w * w], [1.0, 0.0], 0.0), gamma, "sore")


def _solve(M: np.ndarray, rhs: np.ndarray, name: str) -> np.ndarray:
    if abs(np.linalg.det(M)) < 1e-300 or np.linalg.cond(M) > 1e15:
        raise SingularityError(f"{name} is singular")
    return np.linalg.solve(M, rhs)


def _matrices(el: ResetElement, omega: float):
    A = el.base.A
    n = A.shape[0]
    eye = np.eye(n)
    E = expm(np.pi / omega * A)
    Lam = omega ** 2 * eye + A @ A
    Delta = eye + E
    Delta_rho = eye + el.a_rho @ E
    return eye, Lam, Delta, Delta_rho


def hosidf(el: ResetElement, omega: float, n: int = 1) -> complex:
    """n-th harmonic describing function for resets at input zero crossings.

    Parameters
    ----------
    el : ResetElement
    omega : float
        Input frequency in rad/s, must be positive.
    n : int
        Harmonic order; even orders return exactly zero.
    """
    if omega <= 0:
        raise ValueError("omega must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > 1 and n % 2 == 0:
        return 0j
    A, B, C, D = el.base.A, el.base.B, el.base.C, el.base.D
    eye, Lam, Delta, Delta_rho = _matrices(el, omega)
    Lam_inv = _solve(Lam, eye, "Lambda")
    Gam = _solve(Delta_rho, el.a_rho @ Delta @ Lam_inv, "Delta_rho")
    Theta = -(2 * omega ** 2 / np.pi) * Delta @ (Gam - Lam_inv)
    if n == 1:
        x = np.linalg.solve(1j * omega * eye - A, (eye + 1j * Theta) @ B)
        return complex(C @ x + D)
    x = np.linalg.solve(1j * n * omega * eye - A, 1j * Theta @ B)
    return complex(C @ x)


def hosidf_shifted(el: ResetElement, omega: float, n: int, phi: float) -> complex:
    """Describing function when resets occur at ``sin(omega t - phi) = 0``
    while the element is driven by ``sin(omega t)``."""
    if omega <= 0:
        raise ValueError("omega must be > 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > 1 and n % 2 == 0:
        return 0j
    A, B, C, D = el.base.A, el.base.B, el.base.C, el.base.D
    eye, Lam, Delta, Delta_rho = _matrices(el, omega)
    Omega = Delta - Delta @ _solve(Delta_rho, el.a_rho @ Delta, "Delta_rho")
    v = _solve(Lam, B, "Lambda")
    Theta = (-2j * omega * np.exp(-1j * phi) / np.pi) * (
        Omega @ ((omega * math.cos(phi)) * eye + math.sin(phi) * A) @ v)
    out = C @ np.linalg.solve(A - 1j * n * omega * eye, Theta)
    if n == 1:
        out = out + C @ np.linalg.solve(1j * omega * eye - A, B) + D
    return complex(out)


def harmonic_factor(omega_r: float, gamma: float, omega: float, n: int) -> complex:
    """Scalar ``f(n, omega)`` multiplying ``1 - exp(-2j psi)``."""
    ratio = omega / omega_r
    e = math.exp(-math.pi * omega_r / omega)
    delta = 1.0 + e
    delta_rho = 1.0 + gamma * e
    if delta_rho == 0.0:
        raise SingularityError("delta_rho is zero")
    return (1.0 / (-omega_r - 1j * n * omega)) * (
        omega * np.exp(-1j * math.atan(ratio)) / (math.pi * math.sqrt(1 + ratio * ratio))
    ) * (1.0 - gamma) * delta / delta_rho


def closed_form_single_state(omega_r: float, gamma: float, psi: float,
                             omega: float, n: int = 1) -> complex:
    """Harmonics of ``1/(s/omega_r+1)`` driven through a phase ``psi``.

    Equivalent to :func:`hosidf_shifted` with ``phi = psi + atan(omega/omega_r)``
    on the realization ``A=-omega_r, B=omega_r, C=1, D=0``.  The n=1 value
    includes the base-linear response, so at ``psi = 0`` it reduces to it.
    """
    if omega <= 0 or omega_r <= 0:
        raise ValueError("frequencies must be > 0")
    if n > 1 and n % 2 == 0:
        return 0j
    val = harmonic_factor(omega_r, gamma, omega, n) * (1.0 - np.exp(-2j * psi))
    if n == 1:
        val += 1.0 / (1j * omega / omega_r + 1.0)
    return complex(val)


@dataclass
class HosidfResult:
    """Odd-harmonic responses on a grid; ``values[n]`` is an array over grid."""

    grid: FreqGrid
    orders: list
    values: dict
    gamma: float | None = None
    meta: dict = field(default_factory=dict)

    def __getitem__(self, n: int) -> np.ndarray:
        if n > 1 and n % 2 == 0:
            return np.zeros(len(self.grid), dtype=complex)
        return self.values[n]

    def magnitude_db(self, n: int) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 20 * np.log10(np.abs(self[n]))

    def phase_deg(self, n: int) -> np.ndarray:
        return np.degrees(np.unwrap(np.angle(self[n])))


def sweep(element, grid: FreqGrid, max_order: int = 9, meta: dict | None = None) -> HosidfResult:
    """Evaluate ``element.hosidf`` on a grid for odd orders up to ``max_order``."""
    orders = [1] + list(range(3, max_order + 1, 2))
    values = {n: np.array([element.hosidf(w, n) for w in grid.points]) for n in orders}
    gamma = getattr(element, "gamma", None)
    return HosidfResult(grid, orders, values, gamma, dict(meta or {}))


# --------------------------------------------------------------------------
# psi profile and zero crossings

def _wrap(x):
    return (x + np.pi) % (2 * np.pi) - np.pi


@dataclass
class PsiProfile:
    """Unwrapped phase of ``F K R`` on a grid, with the exact evaluator kept
    so crossings can be refined."""

    grid: FreqGrid
    psi: np.ndarray
    response: Callable = field(repr=False, default=None)

    def at(self, omega: float, near: float) -> float:
        """Phase at ``omega`` on the branch closest to ``near``."""
        z = complex(self.response(omega))
        return near + float(_wrap(np.angle(z) - near))


def psi_of(F, K, R, grid: FreqGrid) -> PsiProfile:
    """Unwrapped phase of ``F(jw) K(jw) R(jw)``.

    The factors may be anything accepted by :func:`eval_freq` or plain
    callables of ``omega``.  Where adjacent grid points differ by more than
    pi/4 the interval is densified before the branch is carried across.
    """
    def resp(w):
        out = 1.0 + 0j
        for X in (F, K, R):
            out = out * (X(w) if callable(X) and not isinstance(X, (TransferFunction, Cascade))
                         else eval_freq(X, w))
        return out

    pts = grid.points
    raw = np.angle(np.array([resp(w) for w in pts]))
    psi = np.empty_like(raw)
    psi[0] = raw[0]
    for i in range(1, len(pts)):
        step = _wrap(raw[i] - raw[i - 1])
        if abs(step) > np.pi / 4:
            # carry the branch through a local refinement
            sub = np.geomspace(pts[i - 1], pts[i], 65)[1:]
            cur = psi[i - 1]
            prev = raw[i - 1]
            for w in sub:
                a = np.angle(resp(w))
                cur += _wrap(a - prev)
                prev = a
            psi[i] = cur
        else:
            psi[i] = psi[i - 1] + step
    return PsiProfile(grid, psi, resp)


def find_omega_lb(profile: PsiProfile, rtol: float = 1e-9) -> list[float]:
    """Frequencies where the unwrapped psi crosses zero.

    Only strict sign changes count; a profile that is identically zero has no
    crossings.  Each bracket is bisected until its relative width is below
    ``rtol`` (and then further to floating-point resolution, which costs a
    few dozen extra evaluations and keeps harmonic residues at round-off).
    """
    if len(profile.grid) < 2:
        raise ValueError("profile needs at least two points")
    pts, psi = profile.grid.points, profile.psi
    roots = []
    for i in range(len(pts) - 1):
        a, b = psi[i], psi[i + 1]
        if a == 0.0 and i > 0 and np.sign(psi[i - 1]) * np.sign(b) < 0:
            roots.append(float(pts[i]))
            continue
        if not (a * b < 0):
            continue
        lo, hi = pts[i], pts[i + 1]
        flo = a
        ref = a
        while hi - lo > 0.5 * rtol * lo:
            mid = math.sqrt(lo * hi)
            fm = profile.at(mid, ref)
            if fm == 0.0:
                lo = hi = mid
                break
            if np.sign(fm) == np.sign(flo):
                lo, flo = mid, fm
            else:
                hi = mid
            ref = fm
        # polish to round-off with plain bisection
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if not lo < mid < hi:
                break
            fm = profile.at(mid, ref)
            if fm == 0.0:
                lo = hi = mid
                break
            if np.sign(fm) == np.sign(flo):
                lo, flo = mid, fm
            else:
                hi = mid
        roots.append(float(0.5 * (lo + hi)))
    return sorted(roots)


# --------------------------------------------------------------------------
# high-frequency phase approximation

def _u_factor(gamma: float) -> float:
    if gamma == -1:
        raise ValueError("gamma = -1 makes the phase approximation undefined")
    return 2 * (1 - gamma) / (math.pi * (1 + gamma))


def phase_approx(gamma: float, psi: float) -> float:
    """First-harmonic phase of a single-state reset element for
    ``omega > 10 omega_r`` (caller's responsibility), in radians.

    The two-quadrant arctangent is replaced by ``atan2`` so the result is
    continuous in ``psi`` and equals ``-pi/2`` at ``psi = 0``.
    """
    U = _u_factor(gamma)
    return math.atan2(U * math.sin(2 * psi) - 1.0, 2 * U * math.sin(psi) ** 2)


def solve_gamma_psi(target_phase: float, gammas: Sequence[float] | None = None,
                    psi_range: tuple[float, float] = (-math.pi / 2, 0.0),
                    rank_at: tuple[float, float] | None = None,
                    n_scan: int = 721) -> list[tuple[float, float]]:
    """Pairs ``(gamma, psi)`` whose approximate first-harmonic phase equals
    ``target_phase``.

    For every gamma the phase is scanned over ``psi_range`` and each sign
    change of the residual is bisected.  Gammas with no solution are left
    out.  With ``rank_at=(omega_r, omega_c)`` the pairs are sorted by the
    third-harmonic magnitude ``|f(3, omega_c)(1 - exp(-2j psi))|``.
    """
    if gammas is None:
        gammas = np.linspace(-0.9, 0.95, 38)
    out = []
    grid = np.linspace(psi_range[0], psi_range[1], n_scan)
    for g in gammas:
        if g <= -1 or g > 1:
            continue
        res = np.array([phase_approx(g, p) - target_phase for p in grid])
        zero = np.nonzero(res == 0)[0]
        if zero.size:
            out.append((float(g), float(grid[zero[-1]])))
            continue
        idx = np.nonzero(res[:-1] * res[1:] < 0)[0]
        if idx.size == 0:
            continue
        # the crossing nearest psi = 0 gives the smallest harmonic factor
        i = idx[np.argmin(np.abs(grid[idx]))]
        lo, hi = grid[i], grid[i + 1]
        flo = res[i]
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            fm = phase_approx(g, mid) - target_phase
            if fm == 0 or hi - lo < 1e-15:
                lo = hi = mid
                break
            if np.sign(fm) == np.sign(flo):
                lo, flo = mid, fm
            else:
                hi = mid
        out.append((float(g), float(0.5 * (lo + hi))))
    if rank_at is not None:
        wr, wc = rank_at
        out.sort(key=lambda gp: abs(harmonic_factor(wr, gp[0], wc, 3)
                                    * (1 - np.exp(-2j * gp[1]))))
    return out


# --------------------------------------------------------------------------
# composition: linear blocks, chains and their hybrid realizations

@dataclass(frozen=True)
class HybridRealization:
    """State space whose states are scaled by ``rho`` when the chain input
    crosses zero (``rho[i] = 1`` for states that never reset)."""

    ss: StateSpace
    rho: np.ndarray

    def __init__(self, ss: StateSpace, rho):
        rho = np.asarray(rho, dtype=float).reshape(ss.n)
        object.__setattr__(self, "ss", ss)
        object.__setattr__(self, "rho", rho)

    def linearized(self) -> "HybridRealization":
        return HybridRealization(self.ss, np.ones(self.ss.n))


def linear_hybrid(ss: StateSpace) -> HybridRealization:
    return HybridRealization(ss, np.ones(ss.n))


def hybrid_series(first: HybridRealization, second: HybridRealization) -> HybridRealization:
    from .lincore import ss_series
    return HybridRealization(ss_series(first.ss, second.ss),
                             np.concatenate([first.rho, second.rho]))


class LinearElement:
    """Linear block in HOSIDF form: only the first harmonic is nonzero."""

    def __init__(self, tf):
        self.tf = tf

    def hosidf(self, omega: float, n: int = 1) -> complex:
        return complex(self.tf(1j * omega)) if n == 1 else 0j

    def linear_response(self, omega):
        return self.tf(1j * np.asarray(omega))

    def to_hybrid(self) -> HybridRealization:
        ss = self.tf.to_ss() if isinstance(self.tf, Cascade) else _tf_ss(self.tf)
        return linear_hybrid(ss)


def _tf_ss(tf):
    from .lincore import tf_to_ss
    return tf_to_ss(tf)


class ResetChain:
    """A (possibly reset) element followed by linear blocks.

    The n-th harmonic leaves ``head`` at ``n omega`` so every tail block is
    evaluated there.  Any reset inside ``head`` is triggered by the chain
    input, which is ``head``'s input.
    """

    def __init__(self, head, tail=(), label: str = ""):
        if isinstance(head, (TransferFunction, Cascade)):
            head = LinearElement(head)
        self.head = head
        self.tail = list(tail)
        self.label = label
        self.params: dict = {}

    @property
    def gamma(self):
        return getattr(self.head, "gamma", None) if not isinstance(self.head, ResetElement) \
            else float(self.head.gammas[0])

    def _tail(self, s):
        out = 1.0 + 0j
        for t in self.tail:
            out = out * t(s)
        return out

    def hosidf(self, omega: float, n: int = 1) -> complex:
        h = self.head.hosidf(omega, n)
        if h == 0:
            return 0j
        return complex(h * self._tail(1j * n * omega))

    def linear_response(self, omega):
        omega = np.asarray(omega, dtype=float)
        head = self.head.linear_response(omega)
        return head * self._tail(1j * omega)

    def to_hybrid(self) -> HybridRealization:
        h = self.head
        if isinstance(h, ResetElement):
            out = HybridRealization(h.base, h.gammas)
        else:
            out = h.to_hybrid()
        for t in self.tail:
            ss = t.to_ss() if isinstance(t, Cascade) else _tf_ss(t)
            out = hybrid_series(out, linear_hybrid(ss))
        return out


def _reset_element_hybrid(self) -> HybridRealization:
    return HybridRealization(self.base, self.gammas)


ResetElement.to_hybrid = _reset_element_hybrid
