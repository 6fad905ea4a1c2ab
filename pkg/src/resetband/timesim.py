"""Sampled-data simulation of reset elements and reset control loops.

Every linear block is advanced with an exact hold-equivalent discretization
and resets are applied at the first sample after the trigger signal changes
sign (an exact zero sample counts as a crossing, two consecutive zeros do
not reset twice).  The per-sample loops live in the compiled ``_kernels``
extension with a pure-Python fallback; see :mod:`resetband._backend`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from .lincore import (Cascade, StateSpace, TransferFunction, foh_discretize, tf_to_ss,
                      zoh_discretize)
from .resetfreq import HybridRealization

__all__ = [
    "SimConfig", "SimTrace", "Sinusoid", "MultiSine", "HarmonicMeasurement",
    "InstabilityError", "WindowError", "simulate_open_loop", "simulate_closed_loop",
    "extract_harmonics", "error_norms", "write_trace_csv", "as_hybrid",
    "settling_periods",
]

TRACE_COLUMNS = ("t", "e", "u", "y", "control_input", "reset_flag")


class InstabilityError(RuntimeError):
    """Raised when the simulated output diverges."""

    def __init__(self, msg, index=None, trace=None):
        super().__init__(msg)
        self.index = index
        self.trace = trace


class WindowError(ValueError):
    """The retained window cannot hold an integer number of periods."""


@dataclass
class SimConfig:
    """Sampling and windowing options.

    Attributes
    ----------
    dt : float
        Sample time in seconds; ignored when ``samples_per_period`` is set.
    periods_total, periods_discard : int
        Length of the run and of the transient dropped before any metric,
        both in periods of the reference's base frequency.
    reset_policy : str
        Only ``"sample_after_crossing"`` is implemented.
    samples_per_period : int, optional
        Align the grid with the input period (open loop only) so that input
        zero crossings fall exactly on samples.
    hold : {"zoh", "foh"}
        Input hold for open-loop runs; closed loops always use ZOH.
    divergence_factor : float
        Abort when ``|y|`` exceeds this multiple of ``max |r|``.
    """

    dt: float = 1e-4
    periods_total: int = 20
    periods_discard: int = 10
    reset_policy: str = "sample_after_crossing"
    samples_per_period: int | None = None
    hold: str = "zoh"
    divergence_factor: float = 1e6

    def __post_init__(self):
        if self.reset_policy != "sample_after_crossing":
            raise ValueError(f"unknown reset policy {self.reset_policy!r}")
        if self.hold not in ("zoh", "foh"):
            raise ValueError(f"unknown hold {self.hold!r}")
        if self.periods_discard >= self.periods_total:
            raise ValueError("periods_discard must be < periods_total")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")


@dataclass(frozen=True)
class Sinusoid:
    """``amplitude * sin(omega t + phase)``."""

    amplitude: float
    omega: float
    phase: float = 0.0

    @property
    def base_omega(self) -> float:
        return self.omega

    @property
    def peak(self) -> float:
        return abs(self.amplitude)

    def __call__(self, t):
        return self.amplitude * np.sin(self.omega * np.asarray(t) + self.phase)


@dataclass(frozen=True)
class MultiSine:
    """Sum of sinusoids ``(amplitude, omega, phase)`` sharing a common period
    ``2 pi / base_omega``."""

    components: tuple
    base_omega: float

    def __post_init__(self):
        for _, w, _ in self.components:
            ratio = w / self.base_omega
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"component {w} is not a multiple of base {self.base_omega}")

    @property
    def peak(self) -> float:
        return float(sum(abs(a) for a, _, _ in self.components))

    def __call__(self, t):
        t = np.asarray(t)
        out = np.zeros_like(t, dtype=float)
        for a, w, p in self.components:
            out = out + a * np.sin(w * t + p)
        return out


@dataclass
class SimTrace:
    """Sampled signals of one run.

    ``e`` is the error (open loop: the element input), ``u`` the reset
    controller output, ``y`` the plant output (open loop: equal to ``u``),
    ``control_input`` the signal applied to the plant.  Open-loop traces
    also keep ``y_left``, the output just before any reset at each sample.
    """

    t: np.ndarray
    r: np.ndarray
    e: np.ndarray
    u: np.ndarray
    y: np.ndarray
    control_input: np.ndarray
    reset_flag: np.ndarray
    dt: float
    base_omega: float
    periods_discard: int
    meta: dict = field(default_factory=dict)
    y_left: np.ndarray | None = None

    @property
    def period(self) -> float:
        return 2 * math.pi / self.base_omega

    @property
    def steady_start(self) -> int:
        return int(math.ceil(self.periods_discard * self.period / self.dt - 1e-9))

    def steady(self, name: str) -> np.ndarray:
        return getattr(self, name)[self.steady_start:]

    @property
    def reset_count(self) -> int:
        return int(np.count_nonzero(self.reset_flag))


@dataclass
class HarmonicMeasurement:
    """Complex harmonics ``P_n`` of a trace relative to the reference phase.

    ``values[n]`` is ``X_n / (A exp(j n phase0))`` where ``X_n`` is the
    phasor of the n-th harmonic (sine convention).
    """

    base_omega: float
    values: dict
    start: int
    stop: int
    periods: int

    def __getitem__(self, n: int) -> complex:
        return self.values[n]

    def magnitude_db(self, n: int) -> float:
        return 20 * math.log10(max(abs(self.values[n]), 1e-300))


def as_hybrid(obj) -> HybridRealization:
    """Hybrid realization of an element, chain or linear block."""
    if isinstance(obj, HybridRealization):
        return obj
    if hasattr(obj, "to_hybrid"):
        return obj.to_hybrid()
    if isinstance(obj, Cascade):
        ss = obj.to_ss()
    elif isinstance(obj, TransferFunction):
        ss = tf_to_ss(obj)
    elif isinstance(obj, StateSpace):
        ss = obj
    else:
        raise TypeError(f"cannot realize {type(obj).__name__}")
    return HybridRealization(ss, np.ones(ss.n))


def settling_periods(element, omega: float, tol: float = 1e-8, minimum: int = 10) -> int:
    """Periods at ``omega`` for the slowest base-linear mode to decay by ``tol``.

    Resets with ``|gamma| < 1`` only shrink the state, so the base-linear
    decay rate is a practical guide for the transient to drop.
    """
    ss = as_hybrid(element).ss
    if ss.n == 0:
        return minimum
    re = -np.linalg.eigvals(ss.A).real
    re = re[re > 0]
    if re.size == 0:
        return minimum
    t_settle = math.log(1.0 / tol) / float(np.min(re))
    return max(minimum, int(math.ceil(t_settle * omega / (2 * math.pi))))


def _plant_ss(plant) -> StateSpace:
    if isinstance(plant, StateSpace):
        ss = plant
    elif isinstance(plant, Cascade):
        ss = plant.to_ss()
    else:
        ss = tf_to_ss(plant)
    if ss.D != 0:
        raise ValueError("plant must be strictly proper (D = 0) to close the loop")
    return ss


def _time_grid(cfg: SimConfig, base_omega: float) -> tuple[np.ndarray, float]:
    period = 2 * math.pi / base_omega
    if cfg.samples_per_period:
        spp = int(cfg.samples_per_period)
        dt = period / spp
        n = spp * cfg.periods_total
    else:
        dt = cfg.dt
        n = int(round(cfg.periods_total * period / dt))
    return np.arange(n) * dt, dt


def _c(a):
    return np.ascontiguousarray(a, dtype=float)


def simulate_open_loop(element, signal, cfg: SimConfig | None = None,
                       kernels=None) -> SimTrace:
    """Drive ``element`` with ``signal``; resets trigger on the element input.

    With ``samples_per_period`` even and a zero-phase sinusoid every input
    zero crossing is sampled exactly, which removes the half-sample reset
    timing error.
    """
    cfg = cfg or SimConfig()
    kern = kernels or _backend.kernels
    hyb = as_hybrid(element)
    t, dt = _time_grid(cfg, signal.base_omega)
    u_in = signal(np.append(t, t[-1] + dt))
    if isinstance(signal, Sinusoid) and cfg.samples_per_period \
            and cfg.samples_per_period % 2 == 0 and signal.phase == 0:
        half = cfg.samples_per_period // 2
        u_in[::half] = 0.0
    ss = hyb.ss
    if cfg.hold == "foh":
        Phi, G0, G1 = foh_discretize(ss, dt)
    else:
        d = zoh_discretize(ss, dt)
        Phi, G0, G1 = d.A, d.B, np.zeros(ss.n)
    trig = _c(u_in[:-1])
    y, y_left, flags = kern.open_loop(_c(Phi), _c(G0), _c(G1), _c(ss.C), float(ss.D),
                              _c(hyb.rho), _c(u_in), trig)
    return SimTrace(t=t, r=trig, e=trig, u=y, y=y, control_input=y, reset_flag=flags,
                    dt=dt, base_omega=signal.base_omega,
                    periods_discard=cfg.periods_discard,
                    meta={"backend": kern.BACKEND, "hold": cfg.hold, "loop": "open"},
                    y_left=y_left)


def simulate_closed_loop(controller, plant, reference, cfg: SimConfig | None = None,
                         kernels=None, raise_on_divergence: bool = True) -> SimTrace:
    """Unity-feedback loop ``e = r - y``, controller then plant, ZOH at ``dt``.

    Per sample: measure ``y``, form ``e``, reset the controller if ``e``
    crossed zero, compute ``u``, then advance both blocks.

    Raises
    ------
    InstabilityError
        If ``|y| > divergence_factor * max|r|`` (the partial trace is
        attached to the exception).
    """
    cfg = cfg or SimConfig()
    kern = kernels or _backend.kernels
    hyb = as_hybrid(controller)
    pss = _plant_ss(plant)
    t, dt = _time_grid(cfg, reference.base_omega)
    r = _c(reference(t))
    cd = zoh_discretize(hyb.ss, dt)
    pd = zoh_discretize(pss, dt)
    rmax = float(np.max(np.abs(r))) if r.size else 0.0
    limit = cfg.divergence_factor * rmax if rmax > 0 else math.inf
    e, u, y, flags, stop = kern.closed_loop(
        _c(cd.A), _c(cd.B), _c(cd.C), float(cd.D), _c(hyb.rho),
        _c(pd.A), _c(pd.B), _c(pd.C), r, float(limit))
    trace = SimTrace(t=t, r=r, e=e, u=u, y=y, control_input=u.copy(), reset_flag=flags,
                     dt=dt, base_omega=reference.base_omega,
                     periods_discard=cfg.periods_discard,
                     meta={"backend": kern.BACKEND, "hold": "zoh", "loop": "closed"})
    if stop >= 0:
        cut = stop + 1
        for name in ("t", "r", "e", "u", "y", "control_input", "reset_flag"):
            setattr(trace, name, getattr(trace, name)[:cut])
        trace.meta["diverged_at"] = int(stop)
        if raise_on_divergence:
            raise InstabilityError(
                f"output exceeded {cfg.divergence_factor:g} x max|r| at t = {t[stop]:.6g} s",
                index=int(stop), trace=trace)
    return trace


def _integer_window(trace: SimTrace, min_periods: int = 1) -> tuple[int, int, int]:
    """Largest window after the transient spanning a whole number of periods
    that is also a whole number of samples."""
    spp = trace.period / trace.dt
    start = trace.steady_start
    avail = (len(trace.t) - 1 - start) / spp
    n_avail = int(math.floor(avail + 1e-9))
    for p in range(1, n_avail + 1):
        m = p * spp
        if abs(m - round(m)) < 1e-6 * max(1.0, m):
            block = (n_avail // p) * p
            if block >= min_periods:
                stop = start + int(round(block * spp))
                return start, stop, block
            break
    raise WindowError(
        f"retained window ({avail:.3g} periods) holds no integer number of periods "
        f"on the sample grid (period = {spp:.6g} samples)")


def extract_harmonics(trace: SimTrace, orders: Sequence[int] = (1, 3, 5),
                      signal: str = "y", amplitude: float | None = None,
                      phase0: float = 0.0, omega: float | None = None) -> HarmonicMeasurement:
    """Single-bin DFT of ``signal`` over an integer-period steady window.

    Parameters
    ----------
    omega : float, optional
        Fundamental to analyse; defaults to the trace base frequency.  It
        must divide the base frequency's harmonics evenly (the window is
        sized on the base period).
    amplitude, phase0 : float
        Reference sinusoid used to normalise; ``amplitude`` defaults to 1.
    """
    x = getattr(trace, signal)
    start, stop, periods = _integer_window(trace)
    w0 = trace.base_omega if omega is None else omega
    # trapezoid over each sample interval; the right end uses the left limit
    # so reset jumps do not bias the integral by half a sample
    left = trace.y_left if (signal in ("y", "u") and trace.y_left is not None) else x
    tt = trace.t[start:stop + 1]
    a = x[start:stop]
    b = left[start + 1:stop + 1]
    amp = 1.0 if amplitude is None else amplitude
    out = {}
    for n in orders:
        ph = np.exp(-1j * n * w0 * tt)
        # sine-convention phasor: x = Im(X e^{j n w t})
        X = 2j * np.mean(0.5 * (a * ph[:-1] + b * ph[1:]))
        out[int(n)] = complex(X / (amp * np.exp(1j * n * phase0)))
    return HarmonicMeasurement(base_omega=w0, values=out, start=start, stop=stop,
                               periods=periods)


def error_norms(trace: SimTrace, signal: str = "e",
                reference_amplitude: float | None = None) -> dict:
    """L2 (``sqrt(sum e^2 dt)``), L-infinity and RMS of the steady window.

    With ``reference_amplitude`` the normalised variants (divided by it) are
    added under ``*_norm`` keys.
    """
    x = trace.steady(signal)
    if x.size == 0:
        raise WindowError("no samples after the discarded transient")
    out = {
        "l2": float(math.sqrt(np.sum(x * x) * trace.dt)),
        "linf": float(np.max(np.abs(x))),
        "rms": float(math.sqrt(np.mean(x * x))),
    }
    if reference_amplitude:
        for k in ("l2", "linf", "rms"):
            out[k + "_norm"] = out[k] / reference_amplitude
    return out


def write_trace_csv(trace: SimTrace, path) -> None:
    """Write ``t,e,u,y,control_input,reset_flag`` with 15 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in zip(trace.t, trace.e, trace.u, trace.y, trace.control_input,
                       trace.reset_flag):
            w.writerow([f"{v:.15g}" for v in row[:5]] + [int(row[5])])
