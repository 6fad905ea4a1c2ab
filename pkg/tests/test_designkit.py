import json
import math
from dataclasses import replace

import numpy as np
import pytest

from resetband import designkit as dk
from resetband.lincore import FreqGrid
from resetband.timesim import SimConfig, Sinusoid, error_norms, extract_harmonics

TWO_PI = 2 * math.pi
WC = TWO_PI * 100


# ---------------------------------------------------------------- plant and spec

def test_plant_coefficients():
    G = dk.plant()
    assert abs(G(1e-9j)) == pytest.approx(3.038e4 / 243.3, rel=1e-9)


def test_spec_validation():
    with pytest.raises(ValueError):
        dk.ControllerSpec("lqr", 10, 60, 165, 1000)
    with pytest.raises(ValueError):
        dk.ControllerSpec("bandpassed_cglp", 10, 60, 165, 1000, omega_r=5, gamma=0.1)


def test_table_overrides_touch_bandpassed_only():
    t = dk.example_specs(lam=-0.69, q=2.21)
    assert (t["bandpassed_cglp"].lam, t["bandpassed_cglp"].q) == dk.ROUNDED_LAMBDA_Q
    assert t["conventional_cglp"].lam is None


# ---------------------------------------------------------------- calibration

@pytest.mark.parametrize("kind", dk.KINDS)
def test_kp_puts_crossover_at_100hz(table_designs, kind):
    d = table_designs[kind]
    assert abs(d.open_loop_first(WC)[0]) == pytest.approx(1.0, rel=5e-3)


@pytest.mark.parametrize("kind", dk.KINDS)
def test_base_linear_loop_is_hurwitz(table_designs, kind):
    assert np.max(table_designs[kind].base_linear_closed_loop_poles().real) < 0


def test_pid_phase_margin(table_designs):
    assert dk.phase_margin(table_designs["pid"]) == pytest.approx(42.0, abs=1.0)


def test_conventional_phase_margin(table_designs):
    assert dk.phase_margin(table_designs["conventional_cglp"]) == pytest.approx(42.0, abs=2.0)


@pytest.mark.parametrize("lam_q", [None, dk.ROUNDED_LAMBDA_Q], ids=["solved", "rounded"])
def test_bandpassed_phase_margin_with_fine_crone(lam_q):
    kw = dict(crone_N=6)
    if lam_q is not None:
        kw.update(lam=lam_q[0], q=lam_q[1])
    d = dk.build_controller(dk.example_specs(**kw)["bandpassed_cglp"])
    assert dk.phase_margin(d) == pytest.approx(42.0, abs=2.0)


def test_bandpassed_phase_margin_tracking_realization(table_designs):
    # the single-section CRONE filter used for tracking keeps less of the
    # in-band lag; regression value of that realization
    assert dk.phase_margin(table_designs["bandpassed_cglp"]) == pytest.approx(44.80, abs=0.05)


def test_phase_budget():
    assert dk.cglp_phase_budget(-0.05, -57.34) == pytest.approx(31.3, abs=1.0)
    assert dk.cglp_phase_budget(1.0, 0.0) == pytest.approx(0.0, abs=1e-12)


def test_explicit_kp_is_kept():
    spec = replace(dk.example_specs()["pid"], k_p=2.5)
    assert dk.build_controller(spec).k_p == 2.5


def test_unstable_design_raises():
    spec = replace(dk.example_specs()["pid"], k_p=-1.0)
    with pytest.raises(dk.UnstableDesignError):
        dk.build_controller(spec)


# ---------------------------------------------------------------- open-loop HOSIDF

def test_cglp_heads_coincide_at_low_frequency(table_designs):
    w = TWO_PI * np.geomspace(0.1, 1.0, 9)
    bp = np.array([table_designs["bandpassed_cglp"].chain.head.hosidf(x, 1) for x in w])
    cv = np.array([table_designs["conventional_cglp"].chain.head.hosidf(x, 1) for x in w])
    assert np.max(np.abs(20 * np.log10(np.abs(bp / cv)))) < 0.1
    assert np.max(np.abs(np.degrees(np.angle(bp / cv)))) < 2.0


def test_low_frequency_loop_ratio_is_gain_ratio(table_designs):
    bp, cv = table_designs["bandpassed_cglp"], table_designs["conventional_cglp"]
    grid = FreqGrid(TWO_PI * np.geomspace(0.1, 1.0, 5))
    r = dk.open_loop_hosidf(bp, grid, 1).values[1] / dk.open_loop_hosidf(cv, grid, 1).values[1]
    assert np.abs(r) == pytest.approx(np.full(5, bp.k_p / cv.k_p), rel=0.01)


def test_third_harmonic_suppressed_below_band(table_designs):
    grid = FreqGrid(TWO_PI * np.geomspace(0.5, 25.0, 60))
    bp = dk.open_loop_hosidf(table_designs["bandpassed_cglp"], grid, 3).values[3]
    cv = dk.open_loop_hosidf(table_designs["conventional_cglp"], grid, 3).values[3]
    gap = 20 * np.log10(np.abs(cv) / np.abs(bp))
    assert np.min(gap) >= 15.0


def test_pid_has_no_harmonics(table_designs):
    res = dk.open_loop_hosidf(table_designs["pid"], FreqGrid.log(TWO_PI, TWO_PI * 1e3, 20), 7)
    for n in (3, 5, 7):
        assert np.all(res.values[n] == 0)


def test_open_loop_first_matches_hosidf_result(table_designs):
    d = table_designs["conventional_cglp"]
    grid = FreqGrid.log(TWO_PI, TWO_PI * 500, 15)
    assert dk.open_loop_hosidf(d, grid, 1).values[1] == pytest.approx(
        d.open_loop_first(grid.points), rel=1e-12)


# ---------------------------------------------------------------- tracking

def test_pid_5hz_error_magnitude(tracking_report):
    rms = tracking_report.metric("PID", "sine_5hz", "rms")
    assert 1e-7 <= rms <= 1e-6


def test_report_traceable_to_traces(tracking_report):
    for (ctrl, case), r in tracking_report.runs.items():
        tr = r.trace
        n = error_norms(tr, "e", reference_amplitude=r.norms.get("rms", 0) and
                        (r.norms["rms"] / r.norms["rms_norm"]))
        for k, v in r.norms.items():
            assert n[k] == pytest.approx(v, rel=1e-12, abs=0)
        assert np.max(np.abs(tr.steady("control_input"))) == pytest.approx(r.control_peak,
                                                                           rel=1e-12)
        if r.harmonics:
            amp = r.norms["rms"] / r.norms["rms_norm"]
            h = extract_harmonics(tr, tuple(r.harmonics), signal="e", amplitude=amp)
            for k, v in r.harmonics.items():
                assert abs(h[k] - v) <= 1e-12 * max(abs(v), 1e-300)


def test_suite_reports_unstable_runs_without_raising():
    spec = replace(dk.example_specs()["pid"], k_p=-1.0, label="bad")
    bad = dk.build_controller(spec, check_stability=False)
    case = dk.TrackingCase("s", Sinusoid(1e-4, TWO_PI * 5), 5.0, 1e-4,
                           SimConfig(periods_total=40, periods_discard=2))
    rep = dk.run_tracking_suite([bad], [case])
    assert rep.get("bad", "s").status == "unstable"
    assert rep.get("bad", "s").trace is not None


def test_serial_and_threaded_agree(table_designs):
    cases = [c for c in dk.standard_cases(sweep=[]) if c.name == "sweep_10hz"]
    a = dk.run_tracking_suite(table_designs, cases, workers=1)
    b = dk.run_tracking_suite(table_designs, cases, workers=3)
    for key, r in a.runs.items():
        assert np.array_equal(r.trace.e, b.runs[key].trace.e)


def test_report_write(tmp_path, tracking_report):
    files = tracking_report.write(tmp_path)
    names = {p.name for p in files}
    assert "report.json" in names
    assert any(n.endswith(".svg") for n in names)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert set(doc["controllers"]) == set(dk.KINDS)
    assert not list(tmp_path.glob("*.tmp"))


def test_multisine_default_and_literal():
    ms = dk.multisine_reference()
    lit = dk.multisine_reference(literal_third=True)
    assert ms.peak > 0 and lit.peak > 0
    assert ms.base_omega >= lit.base_omega
