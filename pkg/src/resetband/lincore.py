"""Linear substrate: transfer functions, state space, discretization, CRONE.

Polynomials are stored in *ascending* powers of ``s`` throughout, so
``num=[1, 1/w]`` is ``1 + s/w``.  Frequencies are rad/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import expm, matrix_balance

__all__ = [
    "TransferFunction", "StateSpace", "FractionalLag", "FreqGrid", "Cascade",
    "PoleOnAxisError", "ImproperError",
    "eval_freq", "eval_fractional", "crone_realize", "crone_factors",
    "series", "tf_to_ss", "ss_series", "zoh_discretize", "foh_discretize",
    "first_order_lag", "lead_lag", "inverse_with_lowpass",
]


class PoleOnAxisError(ZeroDivisionError):
    """Denominator vanishes on the imaginary axis at the requested omega."""


class ImproperError(ValueError):
    """Numerator degree exceeds denominator degree."""


def _trim(c: Sequence[float]) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=float))
    nz = np.nonzero(c)[0]
    if nz.size == 0:
        return np.zeros(1)
    return c[: nz[-1] + 1].copy()


@dataclass(frozen=True)
class TransferFunction:
    """Real-rational SISO transfer function, coefficients ascending in s."""

    num: np.ndarray
    den: np.ndarray

    def __init__(self, num: Iterable[float], den: Iterable[float] = (1.0,)):
        n = _trim(list(num))
        d = _trim(list(den))
        if not np.any(d):
            raise ValueError("denominator must be nonzero")
        object.__setattr__(self, "num", n)
        object.__setattr__(self, "den", d)

    @property
    def order(self) -> int:
        return len(self.den) - 1

    @property
    def is_proper(self) -> bool:
        return not np.any(self.num) or len(self.num) <= len(self.den)

    def __call__(self, s):
        s = np.asarray(s, dtype=complex)
        return np.polyval(self.num[::-1], s) / np.polyval(self.den[::-1], s)

    def __mul__(self, other: "TransferFunction") -> "TransferFunction":
        if np.isscalar(other):
            return TransferFunction(self.num * other, self.den)
        return series(self, other)

    __rmul__ = __mul__

    def inverse(self) -> "TransferFunction":
        return TransferFunction(self.den, self.num)

    def zeros(self) -> np.ndarray:
        return np.roots(self.num[::-1]) if len(self.num) > 1 else np.array([])

    def poles(self) -> np.ndarray:
        return np.roots(self.den[::-1]) if len(self.den) > 1 else np.array([])

    def dc_gain(self) -> float:
        return float(self.num[0] / self.den[0])

    def __repr__(self) -> str:
        return f"TransferFunction(num={self.num.tolist()}, den={self.den.tolist()})"


@dataclass(frozen=True)
class StateSpace:
    """SISO realization ``x' = Ax + Bu, y = Cx + Du``; ``n = 0`` is a pure gain."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float

    def __init__(self, A, B, C, D=0.0):
        A = np.atleast_2d(np.asarray(A, dtype=float)) if np.size(A) else np.zeros((0, 0))
        n = A.shape[0]
        B = np.asarray(B, dtype=float).reshape(n)
        C = np.asarray(C, dtype=float).reshape(n)
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", float(D))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def freqresp(self, omega) -> np.ndarray:
        omega = np.atleast_1d(np.asarray(omega, dtype=float))
        out = np.empty(omega.shape, dtype=complex)
        eye = np.eye(self.n)
        for i, w in enumerate(omega):
            if self.n:
                out[i] = self.C @ np.linalg.solve(1j * w * eye - self.A, self.B) + self.D
            else:
                out[i] = self.D
        return out


@dataclass(frozen=True)
class FractionalLag:
    """``((s/omega_l + 1)/(s/omega_h + 1))**lam``; ``lam < 0`` is a lag."""

    lam: float
    omega_l: float
    omega_h: float

    def __post_init__(self):
        if not 0 < self.omega_l < self.omega_h:
            raise ValueError("need 0 < omega_l < omega_h")


@dataclass(frozen=True)
class FreqGrid:
    points: np.ndarray

    def __init__(self, points: Iterable[float]):
        p = np.asarray(list(points), dtype=float)
        if p.ndim != 1 or p.size == 0 or np.any(p <= 0) or np.any(np.diff(p) <= 0):
            raise ValueError("grid must be strictly increasing and positive")
        object.__setattr__(self, "points", p)

    @classmethod
    def log(cls, lo: float, hi: float, n: int) -> "FreqGrid":
        return cls(np.logspace(math.log10(lo), math.log10(hi), n))

    def __len__(self) -> int:
        return self.points.size

    def __iter__(self):
        return iter(self.points)


@dataclass(frozen=True)
class Cascade:
    """Series connection kept factored; avoids multiplying out ill-scaled
    polynomials when many first/second-order sections are chained."""

    factors: tuple = field(default_factory=tuple)

    def __init__(self, factors: Iterable[TransferFunction] = ()):
        object.__setattr__(self, "factors", tuple(factors))

    def __call__(self, s):
        out = np.ones_like(np.asarray(s, dtype=complex))
        for f in self.factors:
            out = out * f(s)
        return out

    def __mul__(self, other) -> "Cascade":
        if isinstance(other, Cascade):
            return Cascade(self.factors + other.factors)
        return Cascade(self.factors + (other,))

    def inverse(self) -> "Cascade":
        return Cascade(f.inverse() for f in reversed(self.factors))

    @property
    def order(self) -> int:
        return sum(f.order for f in self.factors)

    def tf(self) -> TransferFunction:
        out = TransferFunction([1.0])
        for f in self.factors:
            out = series(out, f)
        return out

    def to_ss(self) -> StateSpace:
        out = StateSpace(np.zeros((0, 0)), [], [], 1.0)
        for f in self.factors:
            out = ss_series(out, tf_to_ss(f))
        return out


def eval_freq(tf, omega):
    """Complex response ``tf(j*omega)``.

    Raises
    ------
    PoleOnAxisError
        If the denominator is zero at some requested frequency.
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("omega must be > 0")
    if isinstance(tf, Cascade):
        return np.prod([eval_freq(f, omega) for f in tf.factors], axis=0) \
            if tf.factors else np.ones_like(omega, dtype=complex)
    s = 1j * omega
    den = np.polyval(tf.den[::-1], s)
    if np.any(den == 0):
        raise PoleOnAxisError("transfer function has a pole on the imaginary axis")
    return np.polyval(tf.num[::-1], s) / den


def eval_fractional(fl: FractionalLag, omega):
    """Exact fractional-order response, principal branch of the log.

    Phase is ``lam*(atan(w/wl) - atan(w/wh))`` which is what the shaping
    solver works on; no rational approximation is involved.
    """
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise ValueError("omega must be > 0")
    ratio = (1 + 1j * omega / fl.omega_l) / (1 + 1j * omega / fl.omega_h)
    mag = np.abs(ratio) ** fl.lam
    ph = fl.lam * (np.arctan(omega / fl.omega_l) - np.arctan(omega / fl.omega_h))
    return mag * np.exp(1j * ph)


def crone_factors(fl: FractionalLag, N: int = 6) -> list[TransferFunction]:
    """Log-equispaced zero/pole pairs, each ``(1 + s/wz)/(1 + s/wp)``."""
    if N < 1:
        raise ValueError("N must be >= 1")
    m = np.arange(1, N + 1)
    span = fl.omega_h / fl.omega_l
    wz = fl.omega_l * span ** ((2 * m - 1 - fl.lam) / (2 * N))
    wp = fl.omega_l * span ** ((2 * m - 1 + fl.lam) / (2 * N))
    return [TransferFunction([1.0, 1.0 / z], [1.0, 1.0 / p]) for z, p in zip(wz, wp)]


def crone_realize(fl: FractionalLag, N: int = 6) -> TransferFunction:
    """CRONE rational approximation with unit DC gain."""
    return Cascade(crone_factors(fl, N)).tf()


def series(a: TransferFunction, b: TransferFunction) -> TransferFunction:
    """Polynomial product; common factors are deliberately kept."""
    return TransferFunction(np.convolve(a.num, b.num), np.convolve(a.den, b.den))


def tf_to_ss(tf: TransferFunction) -> StateSpace:
    """Observable canonical realization, diagonally balanced.

    First-order lag ``1/(s/w+1)`` maps to ``A=-w, B=w, C=1, D=0``.
    """
    if not tf.is_proper:
        raise ImproperError("cannot realize an improper transfer function")
    lead = tf.den[-1]
    den = tf.den / lead
    n = len(den) - 1
    num = np.zeros(n + 1)
    num[: len(tf.num)] = tf.num / lead
    d = num[n]
    if n == 0:
        return StateSpace(np.zeros((0, 0)), [], [], d)
    # descending-power coefficients a_{n-1}..a_0, b_{n-1}..b_0
    a = den[:n][::-1]
    b = num[:n][::-1] - a * d
    A = np.zeros((n, n))
    A[:, 0] = -a
    A[: n - 1, 1:] = np.eye(n - 1)
    C = np.zeros(n)
    C[0] = 1.0
    if n > 1:
        # power-of-two diagonal scaling; the companion form is badly
        # conditioned for widely spread poles
        _, (sc, _) = matrix_balance(A, permute=False, separate=True)
        A = A / sc[:, None] * sc[None, :]
        b, C = b / sc, C * sc
    return StateSpace(A, b, C, d)


def ss_series(first: StateSpace, second: StateSpace) -> StateSpace:
    """``second`` driven by ``first``; state ordering is [first, second]."""
    n1, n2 = first.n, second.n
    A = np.zeros((n1 + n2, n1 + n2))
    A[:n1, :n1] = first.A
    A[n1:, n1:] = second.A
    A[n1:, :n1] = np.outer(second.B, first.C)
    B = np.concatenate([first.B, second.B * first.D])
    C = np.concatenate([second.D * first.C, second.C])
    return StateSpace(A, B, C, second.D * first.D)


def zoh_discretize(ss: StateSpace, dt: float) -> StateSpace:
    """Zero-order-hold equivalent via the augmented matrix exponential."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    n = ss.n
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = ss.A * dt
    M[:n, n] = ss.B * dt
    E = expm(M)
    return StateSpace(E[:n, :n], E[:n, n], ss.C, ss.D)


def foh_discretize(ss: StateSpace, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Triangle-hold (first-order-hold) step matrices.

    Returns ``(Phi, G0, G1)`` with ``x[k+1] = Phi x[k] + G0 u[k] + G1 u[k+1]``,
    exact for inputs that are linear between samples.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    n = ss.n
    M = np.zeros((n + 2, n + 2))
    M[:n, :n] = ss.A * dt
    M[:n, n] = ss.B * dt
    M[n, n + 1] = 1.0
    E = expm(M)
    Phi, g1, g2 = E[:n, :n], E[:n, n], E[:n, n + 1]
    return Phi, g1 - g2, g2


def first_order_lag(omega: float) -> TransferFunction:
    return TransferFunction([1.0], [1.0, 1.0 / omega])


def lead_lag(omega_zero: float, omega_pole: float) -> TransferFunction:
    """``(s/omega_zero + 1)/(s/omega_pole + 1)``."""
    return TransferFunction([1.0, 1.0 / omega_zero], [1.0, 1.0 / omega_pole])


def inverse_with_lowpass(R: TransferFunction, omega_f: float) -> TransferFunction:
    """``R^{-1}(s)/(s/omega_f + 1)``, built with the cancellation done
    symbolically instead of by multiplying ``R^{-1}`` into a product."""
    return series(R.inverse(), first_order_lag(omega_f))
