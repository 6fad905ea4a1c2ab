"""Worked motion-control example: three controllers on a flexure stage.

A band-passed CgLp, a conventional (FORE) CgLp and a PID are built in the
series structure ``CgLp -> k_p (1 + w_i/s)/(s/w_f + 1)^2 -> (s/w_d + 1)/(s/w_t + 1)``
against the identified plant, tuned for a 100 Hz crossover, then compared
with open-loop HOSIDF sweeps and closed-loop tracking runs.

All frequencies in :class:`ControllerSpec` are in Hz; everything else is in
rad/s.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .lincore import Cascade, FreqGrid, StateSpace, TransferFunction, first_order_lag, \
    lead_lag, tf_to_ss
from .resetfreq import HosidfResult, LinearElement, ResetChain, phase_approx
from .shaping import (ShapingSpec, build_bandpassed_cglp, build_conventional_cglp,
                      build_shaping_filter, fit_alpha)
from .timesim import (InstabilityError, MultiSine, SimConfig, SimTrace, Sinusoid, as_hybrid,
                      error_norms, extract_harmonics, simulate_closed_loop, write_trace_csv)

__all__ = [
    "ControllerSpec", "ControllerDesign", "TrackingCase", "RunResult", "ExperimentReport",
    "UnstableDesignError", "plant", "example_specs", "build_controller", "open_loop_hosidf",
    "phase_margin", "cglp_phase_budget", "ROUNDED_LAMBDA_Q", "standard_cases",
    "multisine_reference", "run_tracking_suite",
]

TWO_PI = 2 * math.pi
KINDS = ("bandpassed_cglp", "conventional_cglp", "pid")


class UnstableDesignError(RuntimeError):
    """The base-linear closed loop (no resets) is not asymptotically stable."""


def plant() -> TransferFunction:
    """Identified stage model ``3.038e4/(s^2 + 0.7413 s + 243.3)``."""
    return TransferFunction([3.038e4], [243.3, 0.7413, 1.0])


@dataclass
class ControllerSpec:
    """One row of the controller parameter table (frequencies in Hz).

    Fields not used by a kind are ``None``.  ``k_p`` is solved from the
    crossover when left ``None``.  ``lam``/``q`` are solved from ``psi_f``
    when left ``None``.  ``k_omega_f`` is the corner of the low-pass inside
    the reset element's pre-filter ``K``; it defaults to ``10 * omega_f`` so
    that ``K`` adds almost no lag below the loop's own low-pass.
    """

    kind: str
    omega_i: float
    omega_d: float
    omega_t: float
    omega_f: float
    omega_r: float | None = None
    gamma: float | None = None
    psi_f: float | None = None
    lam: float | None = None
    q: float | None = None
    k_p: float | None = None
    omega_c: float = 100.0
    omega_l: float | None = None
    omega_h: float | None = None
    crone_N: int = 1
    k_omega_f: float | None = None
    alpha: float | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        for name in ("omega_i", "omega_d", "omega_t", "omega_f", "omega_c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.kind != "pid":
            if self.omega_r is None or self.omega_r <= 0 or self.gamma is None:
                raise ValueError(f"{self.kind} needs omega_r > 0 and gamma")
        if self.kind == "bandpassed_cglp" and self.psi_f is None and self.lam is None:
            raise ValueError("bandpassed_cglp needs psi_f or (lam, q)")
        if (self.lam is None) != (self.q is None):
            raise ValueError("give both lam and q or neither")
        if self.kind == "pid" and any(v is not None for v in (self.omega_r, self.gamma)):
            raise ValueError("pid takes no reset parameters")
        if not self.label:
            self.label = self.kind

    @property
    def band(self) -> tuple[float, float]:
        """Shaping band in Hz; one decade centred on the crossover by default."""
        wl = self.omega_l if self.omega_l is not None else self.omega_c / math.sqrt(10)
        wh = self.omega_h if self.omega_h is not None else wl * 10
        return wl, wh


#: Rounded shaping parameters of the worked example.
ROUNDED_LAMBDA_Q = (-0.69, 2.21)


def example_specs(**overrides) -> dict[str, ControllerSpec]:
    """The three controllers of the worked example.

    The band-passed row solves ``(lam, q)`` from ``psi_f`` (pass
    ``lam=-0.69, q=2.21`` to use the rounded values instead) and uses
    a first-order CRONE section.  ``overrides`` apply to that row only.
    """
    bp = ControllerSpec("bandpassed_cglp", omega_i=10, omega_d=60.6, omega_t=165,
                        omega_f=1000, omega_r=5, gamma=-0.05, psi_f=-57.34,
                        label="band-passed CgLp")
    conv = ControllerSpec("conventional_cglp", omega_i=10, omega_d=60.6, omega_t=165,
                          omega_f=1000, omega_r=5, gamma=0.25, label="conventional CgLp")
    pid = ControllerSpec("pid", omega_i=10, omega_d=27.0, omega_t=370, omega_f=1000,
                         label="PID")
    if overrides:
        bp = replace(bp, **overrides)
    return {"bandpassed_cglp": bp, "conventional_cglp": conv, "pid": pid}


@dataclass
class ControllerDesign:
    """Built controller: chain, calibrated gain and the shaping filter used."""

    spec: ControllerSpec
    chain: ResetChain
    k_p: float
    plant: TransferFunction
    extras: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return self.spec.label

    def open_loop_first(self, omega):
        return np.array([self.chain.hosidf(w, 1) for w in np.atleast_1d(omega)]) \
            * self.plant(1j * np.atleast_1d(np.asarray(omega, dtype=float)))

    def base_linear_closed_loop_poles(self) -> np.ndarray:
        hyb = as_hybrid(self.chain)
        return _closed_loop_eigs(hyb.ss, tf_to_ss(self.plant))


def _closed_loop_eigs(c: StateSpace, p: StateSpace) -> np.ndarray:
    nc, npl = c.n, p.n
    A = np.zeros((nc + npl, nc + npl))
    A[:nc, :nc] = c.A
    A[:nc, nc:] = -np.outer(c.B, p.C)
    A[nc:, :nc] = np.outer(p.B, c.C)
    A[nc:, nc:] = p.A - c.D * np.outer(p.B, p.C)
    return np.linalg.eigvals(A)


def _reset_part(spec: ControllerSpec):
    w = TWO_PI
    if spec.kind == "pid":
        return LinearElement(TransferFunction([1.0])), {}
    if spec.kind == "conventional_cglp":
        el = build_conventional_cglp(spec.omega_r * w, spec.gamma, spec.omega_f * w,
                                     alpha=spec.alpha)
        return el, {"alpha": el.params["alpha"]}
    wl, wh = spec.band
    shp = ShapingSpec(omega_l=wl * w, omega_h=wh * w,
                      psi_f=math.radians(spec.psi_f) if spec.psi_f is not None else 0.0)
    lam_q = (spec.lam, spec.q) if spec.lam is not None else None
    filt = build_shaping_filter(shp, N_crone=spec.crone_N, lam_q=lam_q)
    kf = spec.k_omega_f if spec.k_omega_f is not None else 10.0 * spec.omega_f
    el = build_bandpassed_cglp(filt, spec.omega_r * w, spec.gamma, omega_f=kf * w,
                               alpha=spec.alpha)
    return el, {"alpha": el.params["alpha"], "filter": filt, "k_omega_f_hz": kf}


def _linear_tail(spec: ControllerSpec, k_p: float) -> list:
    w = TWO_PI
    wi, wf = spec.omega_i * w, spec.omega_f * w
    pi = Cascade([TransferFunction([k_p * wi, k_p], [0.0, 1.0]),
                  first_order_lag(wf), first_order_lag(wf)])
    return [pi, lead_lag(spec.omega_d * w, spec.omega_t * w)]


def build_controller(spec: ControllerSpec, G: TransferFunction | None = None,
                     check_stability: bool = True) -> ControllerDesign:
    """Assemble the controller chain and calibrate ``k_p``.

    ``k_p`` puts the first-harmonic open-loop gain at 0 dB at
    ``spec.omega_c`` unless given.

    Raises
    ------
    UnstableDesignError
        If the closed loop with every reset disabled has a pole with
        non-negative real part.
    """
    G = G if G is not None else plant()
    head, extras = _reset_part(spec)
    wc = spec.omega_c * TWO_PI
    if spec.k_p is None:
        trial = ResetChain(head, _linear_tail(spec, 1.0), label=spec.label)
        k_p = 1.0 / abs(trial.hosidf(wc, 1) * G(1j * wc))
    else:
        k_p = float(spec.k_p)
    chain = ResetChain(head, _linear_tail(spec, k_p), label=spec.label)
    design = ControllerDesign(spec, chain, k_p, G, extras)
    if check_stability:
        eig = design.base_linear_closed_loop_poles()
        worst = float(np.max(eig.real))
        design.extras["max_pole_real"] = worst
        if worst >= 0:
            raise UnstableDesignError(
                f"{spec.label}: base linear closed loop has a pole at Re = {worst:.4g}; "
                "stability of the base linear system is a prerequisite for the reset loop")
    return design


def phase_margin(design: ControllerDesign, omega: float | None = None) -> float:
    """First-harmonic phase margin in degrees at ``omega`` (default: the
    design crossover)."""
    w = omega if omega is not None else design.spec.omega_c * TWO_PI
    L = design.open_loop_first(w)[0]
    return float(180.0 + math.degrees(np.angle(L)))


def cglp_phase_budget(gamma: float, psi_deg: float) -> float:
    """Approximate first-harmonic phase lead of a reset element over its
    linear lag, in degrees."""
    return math.degrees(phase_approx(gamma, math.radians(psi_deg))) + 90.0


def open_loop_hosidf(design: ControllerDesign, grid: FreqGrid,
                     max_order: int = 9) -> HosidfResult:
    """``H_n(w) G(j n w)`` of the controller chain times the plant."""
    pts = grid.points
    orders = list(range(1, max_order + 1, 2))
    vals = {}
    for n in orders:
        vals[n] = np.array([design.chain.hosidf(w, n) for w in pts]) \
            * design.plant(1j * n * pts)
    return HosidfResult(grid=grid, orders=orders, values=vals,
                        gamma=design.spec.gamma,
                        meta={"controller": design.label, "k_p": design.k_p})


# --------------------------------------------------------------------------
# tracking experiments


@dataclass(frozen=True)
class TrackingCase:
    """One closed-loop reference.  ``freq_hz`` is the analysis frequency for
    harmonics (``None`` for multi-sine)."""

    name: str
    reference: object
    freq_hz: float | None
    amplitude: float
    cfg: SimConfig
    orders: tuple = (1, 3, 5, 7)


def multisine_reference(literal_third: bool = False) -> MultiSine:
    """Three-tone reference at 13, 7 and 5 Hz.

    With ``literal_third`` the last tone runs at ``5 pi * 5`` rad/s
    (12.5 Hz) instead of 5 Hz.
    """
    w3 = 5 * math.pi * 5 if literal_third else TWO_PI * 5
    comps = ((1.5e-5, TWO_PI * 13, 0.0), (2.5e-5, TWO_PI * 7, 0.0), (5e-5, w3, 0.0))
    base = TWO_PI * (0.5 if literal_third else 1.0)
    return MultiSine(comps, base)


def _sine_case(name, f_hz, amp, dt, min_retained_s=2.0, orders=(1, 3, 5, 7)):
    period = 1.0 / f_hz
    discard = max(10, int(math.ceil(1.0 / period)))  # at least 1 s of transient
    retained = max(10, int(math.ceil(min_retained_s / period)))
    cfg = SimConfig(dt=dt, periods_total=discard + retained, periods_discard=discard)
    return TrackingCase(name, Sinusoid(amp, TWO_PI * f_hz), f_hz, amp, cfg, tuple(orders))


def standard_cases(dt: float = 1e-4, sweep: Iterable[int] = range(1, 25),
                   literal_third: bool = False) -> list[TrackingCase]:
    """The tracking experiment set: 5 Hz at 0.2 mm, a 1-24 Hz sweep and a
    10 Hz run at 7.143e-5 m, 21/22/23 Hz harmonic runs, and the multi-sine."""
    a_sweep = 7.143e-5
    cases = [_sine_case("sine_5hz", 5.0, 2e-4, dt)]
    cases += [_sine_case(f"sweep_{f}hz", float(f), a_sweep, dt) for f in sweep]
    for f in (21, 22, 23):
        if f not in sweep:
            cases.append(_sine_case(f"sweep_{f}hz", float(f), a_sweep, dt))
    if 10 not in sweep:
        cases.append(_sine_case("sweep_10hz", 10.0, a_sweep, dt))
    ms = multisine_reference(literal_third)
    periods = 2 if literal_third else 4
    cfg = SimConfig(dt=dt, periods_total=periods + (2 if literal_third else 4),
                    periods_discard=periods)
    cases.append(TrackingCase("multisine", ms, None, ms.peak, cfg, ()))
    return cases


@dataclass
class RunResult:
    controller: str
    case: str
    status: str
    norms: dict = field(default_factory=dict)
    control_peak: float | None = None
    harmonics: dict = field(default_factory=dict)
    message: str = ""
    trace: SimTrace | None = None

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "trace"}
        d["harmonics"] = {str(n): {"mag": abs(v), "mag_db": 20 * math.log10(max(abs(v), 1e-300)),
                                   "phase_deg": math.degrees(np.angle(v))}
                          for n, v in self.harmonics.items()}
        return d


def _run_one(design: ControllerDesign, case: TrackingCase) -> RunResult:
    try:
        tr = simulate_closed_loop(design.chain, design.plant, case.reference, case.cfg)
    except InstabilityError as exc:
        return RunResult(design.label, case.name, "unstable", message=str(exc), trace=exc.trace)
    norms = error_norms(tr, "e", reference_amplitude=case.amplitude)
    peak = float(np.max(np.abs(tr.steady("control_input"))))
    harm = {}
    if case.freq_hz is not None and case.orders:
        hm = extract_harmonics(tr, case.orders, signal="e", amplitude=case.amplitude)
        harm = dict(hm.values)
    return RunResult(design.label, case.name, "ok", norms, peak, harm, trace=tr)


@dataclass
class ExperimentReport:
    """Results of a tracking suite, keyed by ``(controller, case)``."""

    runs: dict
    designs: dict
    flags: dict = field(default_factory=dict)

    def get(self, controller: str, case: str) -> RunResult:
        return self.runs[(controller, case)]

    def metric(self, controller: str, case: str, key: str) -> float:
        return self.get(controller, case).norms[key]

    def harmonic_db(self, controller: str, case: str, n: int) -> float:
        return 20 * math.log10(abs(self.get(controller, case).harmonics[n]))

    def to_dict(self) -> dict:
        return {
            "controllers": {k: {"spec": asdict(d.spec), "k_p": d.k_p,
                                "phase_margin_deg": phase_margin(d),
                                "alpha": d.extras.get("alpha")}
                            for k, d in self.designs.items()},
            "runs": [r.summary() for r in self.runs.values()],
            "flags": self.flags,
        }

    def write(self, out_dir, traces: bool = True, plots: bool = True) -> list[Path]:
        """Write ``report.json``, per-run CSV traces and SVG plots."""
        from .svgplot import bar_groups, line_plot
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if traces:
            for (ctrl, case), r in self.runs.items():
                if r.trace is None:
                    continue
                p = out / f"trace_{_slug(ctrl)}_{case}.csv"
                _atomic(p, lambda tmp, tr=r.trace: write_trace_csv(tr, tmp))
                written.append(p)
        if plots:
            sweep = sorted({c for (_, c) in self.runs if c.startswith("sweep_")},
                           key=lambda c: float(c[6:-2]))
            if sweep:
                freqs = [c[6:-2] for c in sweep]
                for key in ("rms_norm", "linf_norm"):
                    groups = {}
                    for name in self.designs:
                        label = self.designs[name].label
                        groups[label] = [self.runs[(label, c)].norms.get(key, float("nan"))
                                         if (label, c) in self.runs else float("nan")
                                         for c in sweep]
                    svg = bar_groups(freqs, groups, title=f"normalized steady-state error ({key})",
                                     xlabel="frequency [Hz]", ylabel=key)
                    p = out / f"sweep_{key}.svg"
                    _atomic_text(p, svg)
                    written.append(p)
            for (ctrl, case), r in self.runs.items():
                if case in ("sine_5hz", "multisine") and r.trace is not None:
                    tr = r.trace
                    svg = line_plot(tr.t, {"e": tr.e}, title=f"{ctrl}: {case} error",
                                    xlabel="t [s]", ylabel="e [m]")
                    p = out / f"error_{_slug(ctrl)}_{case}.svg"
                    _atomic_text(p, svg)
                    written.append(p)
        p = out / "report.json"
        _atomic_text(p, json.dumps(self.to_dict(), indent=2, default=_json_default))
        written.append(p)
        return written


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    return str(o)


def _slug(s: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in s).strip("_").lower()


def _atomic(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".tmp")
    writer(tmp)
    os.replace(tmp, path)


def _atomic_text(path: Path, text: str) -> None:
    _atomic(path, lambda tmp: Path(tmp).write_text(text))


def run_tracking_suite(designs: Sequence[ControllerDesign] | dict,
                       cases: Sequence[TrackingCase], workers: int | None = None,
                       keep_traces: bool = True) -> ExperimentReport:
    """Run every ``(controller, case)`` pair; unstable runs are reported, not
    raised.  ``workers > 1`` fans runs out over threads (the compiled kernel
    releases the GIL)."""
    if not isinstance(designs, dict):
        designs = {d.spec.kind: d for d in designs}
    jobs = [(d, c) for d in designs.values() for c in cases]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda dc: _run_one(*dc), jobs))
    else:
        results = [_run_one(d, c) for d, c in jobs]
    runs = {}
    for r in results:
        if not keep_traces:
            r.trace = None
        runs[(r.controller, r.case)] = r
    return ExperimentReport(runs=runs, designs=designs)
