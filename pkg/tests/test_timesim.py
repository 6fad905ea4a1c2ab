import csv
import math

import numpy as np
import pytest
from scipy import signal as sps

from resetband import _kernels_py
from resetband._backend import kernels as active_kernels
from resetband.lincore import StateSpace, TransferFunction, first_order_lag, lead_lag, \
    tf_to_ss, zoh_discretize
from resetband.resetfreq import LinearElement, ResetChain, clegg, fore, sore
from resetband.timesim import (InstabilityError, MultiSine, SimConfig, Sinusoid, WindowError,
                               as_hybrid, error_norms, extract_harmonics, settling_periods,
                               simulate_closed_loop, simulate_open_loop, write_trace_csv)

PLANT = TransferFunction([3.038e4], [243.3, 0.7413, 1.0])


def _foh_cfg(el, w, spp=1000, retained=4):
    d = settling_periods(el, w)
    return SimConfig(samples_per_period=spp, periods_total=d + retained, periods_discard=d,
                     hold="foh")


# ---------------------------------------------------------------- config

def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(periods_total=5, periods_discard=5)
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(reset_policy="interpolated")
    with pytest.raises(ValueError):
        SimConfig(hold="cubic")


def test_multisine_needs_common_period():
    with pytest.raises(ValueError):
        MultiSine(((1.0, 1.0, 0.0), (1.0, math.sqrt(2), 0.0)), 1.0)


# ---------------------------------------------------------------- open loop

def test_linear_limit_open_loop_matches_lsim():
    el = ResetChain(fore(2.0, 1.0), [TransferFunction([1.0, 0.5], [1.0, 0.05])])
    cfg = SimConfig(samples_per_period=400, periods_total=6, periods_discard=2, hold="foh")
    sig = Sinusoid(1.3, 1.5)
    tr = simulate_open_loop(el, sig, cfg)
    ss = as_hybrid(el).ss
    _, y_ref, _ = sps.lsim((ss.A, ss.B[:, None], ss.C[None, :], ss.D), sig(tr.t), tr.t,
                           interp=True)
    assert np.max(np.abs(tr.y - y_ref)) <= 1e-9 * np.max(np.abs(y_ref))
    assert tr.reset_count > 0  # resets happen but are identities


def test_clegg_resets_to_zero_at_crossings():
    w = 1.0
    tr = simulate_open_loop(clegg(0.0), Sinusoid(1.0, w),
                            SimConfig(samples_per_period=1000, periods_total=4,
                                      periods_discard=1, hold="foh"))
    idx = np.nonzero(tr.reset_flag)[0]
    assert np.all(tr.y[idx] == 0.0)
    # aligned grid: crossings sampled exactly at t = k pi / w
    assert tr.t[idx] == pytest.approx(np.arange(1, len(idx) + 1) * math.pi / w, abs=1e-12)


def test_reset_instants_within_one_sample():
    w = 2 * math.pi * 3.3
    cfg = SimConfig(dt=1e-4, periods_total=6, periods_discard=1)
    tr = simulate_open_loop(fore(5.0, 0.0), Sinusoid(1.0, w), cfg)
    t_reset = tr.t[tr.reset_flag.astype(bool)]
    k = np.round(t_reset * w / math.pi)
    assert np.all(k >= 1)
    assert np.all(t_reset - k * math.pi / w >= 0)
    assert np.all(t_reset - k * math.pi / w <= cfg.dt + 1e-15)
    assert len(t_reset) == int(math.floor(tr.t[-1] * w / math.pi))


def test_reset_never_increases_state():
    # single-state element: output equals the state
    for gamma in (0.0, 0.3, 0.9):
        tr = simulate_open_loop(fore(2.0, gamma), Sinusoid(1.0, 3.0),
                                SimConfig(samples_per_period=500, periods_total=6,
                                          periods_discard=1, hold="foh"))
        idx = np.nonzero(tr.reset_flag)[0]
        assert np.all(np.abs(tr.y[idx]) <= np.abs(tr.y_left[idx]) + 1e-15)


def test_exact_zero_trigger_does_not_double_reset():
    u = np.array([1.0, 0.0, 0.0, -1.0, -1.0, 0.0, 1.0])
    Phi, G0, G1 = np.eye(1), np.zeros(1), np.zeros(1)
    _, _, flags = _kernels_py.open_loop(Phi, G0, G1, np.ones(1), 0.0, np.zeros(1),
                                        np.append(u, 1.0), u)
    assert flags.tolist() == [0, 1, 0, 0, 0, 1, 0]


def test_clegg_fundamental_from_simulation():
    w = 1.0
    el = clegg(0.0)
    tr = simulate_open_loop(el, Sinusoid(1.0, w), _foh_cfg(el, w))
    h = extract_harmonics(tr, (1, 3))
    assert abs(h[1]) * w == pytest.approx(1.619, rel=0.01)
    assert math.degrees(np.angle(h[1])) == pytest.approx(-38.15, abs=0.4)
    assert abs(h[3]) == pytest.approx(0.4244, rel=0.01)


@pytest.mark.parametrize("el", [fore(1.0, 0.0), fore(1.0, 0.25), sore(1.0, 0.5, 0.2)],
                         ids=["fore0", "fore025", "sore"])
@pytest.mark.parametrize("w", [0.3, 1.0, 3.0])
def test_harmonics_match_analytic(el, w):
    tr = simulate_open_loop(el, Sinusoid(1.0, w), _foh_cfg(el, w))
    h = extract_harmonics(tr, (1, 3, 5))
    for n in (1, 3, 5):
        ref = el.hosidf(w, n)
        assert abs(h[n] - ref) <= 0.01 * abs(ref)


def test_zoh_default_grid_third_harmonic():
    # 10 kHz sampling, reset at the sample after the crossing
    w = 2 * math.pi
    el = fore(w, 0.0)
    d = settling_periods(el, w)
    tr = simulate_open_loop(el, Sinusoid(1.0, w), SimConfig(periods_total=d + 4,
                                                           periods_discard=d))
    h = extract_harmonics(tr, (3,))
    assert abs(h[3]) == pytest.approx(abs(el.hosidf(w, 3)), rel=0.01)


def test_dt_convergence():
    # halving the step changes the measured harmonics by well under 0.2 %
    for el, w in ((clegg(0.0), 1.0), (fore(1.0, 0.25), 3.0), (sore(1.0, 0.5, 0.2), 0.3)):
        d = settling_periods(el, w)
        vals = []
        for spp in (1000, 2000):
            cfg = SimConfig(samples_per_period=spp, periods_total=d + 4, periods_discard=d,
                            hold="foh")
            vals.append(extract_harmonics(simulate_open_loop(el, Sinusoid(1.0, w), cfg), (1, 3, 5)))
        for n in (1, 3, 5):
            assert abs(vals[0][n] - vals[1][n]) <= 2e-3 * abs(vals[1][n])


def test_shaped_element_third_harmonic_at_three_rad_s(notch_element):
    w = 3.0
    tr = simulate_open_loop(notch_element, Sinusoid(1.0, w), _foh_cfg(notch_element, w))
    h = extract_harmonics(tr, (1, 3, 5))
    for n in (1, 3, 5):
        ref = notch_element.hosidf(w, n)
        assert abs(h[n] - ref) <= 0.01 * abs(ref)


def test_deterministic_and_backend_parity():
    el = ResetChain(fore(3.0, 0.1), [first_order_lag(20.0)])
    cfg = SimConfig(dt=1e-3, periods_total=8, periods_discard=2)
    sig = Sinusoid(0.7, 4.0)
    a = simulate_open_loop(el, sig, cfg)
    b = simulate_open_loop(el, sig, cfg)
    assert np.array_equal(a.y, b.y) and np.array_equal(a.reset_flag, b.reset_flag)
    c = simulate_open_loop(el, sig, cfg, kernels=_kernels_py)
    assert np.max(np.abs(a.y - c.y)) <= 1e-12 * np.max(np.abs(c.y))
    assert np.array_equal(a.reset_flag, c.reset_flag)


# ---------------------------------------------------------------- harmonics

def test_unity_system_harmonics():
    el = LinearElement(TransferFunction([1.0]))
    tr = simulate_open_loop(el, Sinusoid(1.0, 2 * math.pi * 7), SimConfig(dt=1e-4))
    h = extract_harmonics(tr, (1, 3, 5))
    assert abs(h[1]) == pytest.approx(1.0, rel=1e-6)
    assert abs(h[3]) < 1e-10 and abs(h[5]) < 1e-10


def test_amplitude_and_phase_reference():
    el = LinearElement(TransferFunction([2.0]))
    sig = Sinusoid(0.5, 3.0, 0.4)
    tr = simulate_open_loop(el, sig, SimConfig(samples_per_period=200))
    h = extract_harmonics(tr, (1,), amplitude=0.5, phase0=0.4)
    assert h[1] == pytest.approx(2.0, rel=1e-4)


def test_window_error():
    tr = simulate_open_loop(fore(1.0, 0.0), Sinusoid(1.0, 2 * math.pi * 7),
                            SimConfig(dt=1e-4, periods_total=11, periods_discard=10))
    tr.t = tr.t[:-200]
    with pytest.raises(WindowError):
        extract_harmonics(tr)


def test_window_is_integer_periods():
    tr = simulate_open_loop(fore(1.0, 0.0), Sinusoid(1.0, 2 * math.pi * 21),
                            SimConfig(dt=1e-4, periods_total=52, periods_discard=21))
    h = extract_harmonics(tr, (1,))
    n = h.stop - h.start
    assert n * 1e-4 * 21 == pytest.approx(h.periods, abs=1e-9)


# ---------------------------------------------------------------- norms and export

def test_error_norms_zero():
    tr = simulate_open_loop(LinearElement(TransferFunction([0.0])), Sinusoid(1.0, 10.0),
                            SimConfig(samples_per_period=100))
    n = error_norms(tr, "y")
    assert n == {"l2": 0.0, "linf": 0.0, "rms": 0.0}


def test_error_norms_sine():
    a = 3e-4
    tr = simulate_open_loop(LinearElement(TransferFunction([1.0])), Sinusoid(a, 2 * math.pi * 5),
                            SimConfig(samples_per_period=400, periods_total=20))
    n = error_norms(tr, "e", reference_amplitude=a)
    assert n["rms"] == pytest.approx(a / math.sqrt(2), rel=1e-12)
    assert n["linf"] == pytest.approx(a, rel=1e-12)
    assert n["rms_norm"] == pytest.approx(1 / math.sqrt(2), rel=1e-12)
    assert n["l2"] == pytest.approx(a * math.sqrt(10 * 0.2 / 2), rel=1e-12)


def test_trace_csv(tmp_path):
    tr = simulate_open_loop(fore(1.0, 0.0), Sinusoid(1.0, 5.0), SimConfig(samples_per_period=50,
                                                                          periods_total=3,
                                                                          periods_discard=1))
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_trace_csv(tr, p1)
    write_trace_csv(tr, p2)
    assert p1.read_bytes() == p2.read_bytes()
    rows = list(csv.reader(p1.open()))
    assert rows[0] == ["t", "e", "u", "y", "control_input", "reset_flag"]
    assert len(rows) == len(tr.t) + 1
    assert float(rows[5][3]) == pytest.approx(tr.y[4], rel=1e-14)


# ---------------------------------------------------------------- closed loop

def test_zero_reference_gives_zero_trace():
    tr = simulate_closed_loop(ResetChain(fore(30.0, 0.0), [TransferFunction([0.01])]), PLANT,
                              Sinusoid(0.0, 2 * math.pi * 5), SimConfig(periods_total=4,
                                                                        periods_discard=1))
    for name in ("e", "u", "y", "control_input"):
        assert not np.any(getattr(tr, name))


def _dlsim_loop(ctrl_ss, plant_ss, r, dt):
    # hand-built sampled loop: controller and plant ZOH models, e = r - y
    cd = zoh_discretize(ctrl_ss, dt)
    pd = zoh_discretize(plant_ss, dt)
    n, m = cd.A.shape[0], pd.A.shape[0]
    A = np.block([[cd.A, -np.outer(cd.B, pd.C)],
                  [np.outer(pd.B, cd.C), pd.A - cd.D * np.outer(pd.B, pd.C)]])
    B = np.concatenate([cd.B, pd.B * cd.D])
    C = np.concatenate([np.zeros(n), pd.C])
    _, y, _ = sps.dlsim((A, B[:, None], C[None, :], np.zeros((1, 1)), dt), r)
    return y[:, 0]


def test_linear_limit_closed_loop_matches_dlsim():
    ctrl = ResetChain(fore(2 * math.pi * 100, 1.0),
                      [lead_lag(2 * math.pi * 5, 2 * math.pi * 100), TransferFunction([0.01])])
    ref = Sinusoid(1e-4, 2 * math.pi * 5)
    cfg = SimConfig(periods_total=6, periods_discard=2)
    tr = simulate_closed_loop(ctrl, PLANT, ref, cfg)
    y_ref = _dlsim_loop(as_hybrid(ctrl).ss, tf_to_ss(PLANT), tr.r, tr.dt)
    assert np.max(np.abs(tr.y - y_ref)) <= 1e-9 * np.max(np.abs(y_ref))


def test_closed_loop_backend_parity(table_designs):
    d = table_designs["bandpassed_cglp"]
    ref = Sinusoid(2e-4, 2 * math.pi * 5)
    cfg = SimConfig(periods_total=6, periods_discard=2)
    a = simulate_closed_loop(d.chain, d.plant, ref, cfg)
    b = simulate_closed_loop(d.chain, d.plant, ref, cfg, kernels=_kernels_py)
    assert np.max(np.abs(a.e - b.e)) <= 1e-12 * np.max(np.abs(b.e)) + 1e-20
    assert np.array_equal(a.reset_flag, b.reset_flag)
    assert a.meta["backend"] == active_kernels.BACKEND


def test_divergence_guard():
    # positive feedback through a negative gain destabilizes the loop
    ctrl = LinearElement(TransferFunction([-50.0]))
    with pytest.raises(InstabilityError) as info:
        simulate_closed_loop(ctrl, PLANT, Sinusoid(1e-4, 2 * math.pi * 5),
                             SimConfig(periods_total=20, periods_discard=2))
    tr = info.value.trace
    assert tr is not None and np.max(np.abs(tr.y)) > 1e6 * 1e-4
    assert len(tr.t) == info.value.index + 1


def test_divergence_can_be_reported():
    ctrl = LinearElement(TransferFunction([-50.0]))
    tr = simulate_closed_loop(ctrl, PLANT, Sinusoid(1e-4, 2 * math.pi * 5),
                              SimConfig(periods_total=20, periods_discard=2),
                              raise_on_divergence=False)
    assert "diverged_at" in tr.meta


def test_plant_must_be_strictly_proper():
    with pytest.raises(ValueError):
        simulate_closed_loop(LinearElement(TransferFunction([1.0])), TransferFunction([1.0], [1.0, 1.0]).inverse(),
                             Sinusoid(1.0, 1.0))


def test_pid_5hz_rms_range(table_designs):
    d = table_designs["pid"]
    ref = Sinusoid(2e-4, 2 * math.pi * 5)
    tr = simulate_closed_loop(d.chain, d.plant, ref, SimConfig(periods_total=20,
                                                              periods_discard=10))
    rms = error_norms(tr)["rms"]
    assert 1e-7 <= rms <= 1e-6
