import math

import numpy as np
import pytest

from oracles import phasor_current, sinusoid_thd
from wptdecrypt.circuit import (
    CoupledCoilSet,
    FixedCapacitor,
    IdealCurrent,
    Receiver,
    RectifierBattery,
    RectifierRC,
    Resistor,
    Simulation,
    SwitchedCapBranch,
    Topology,
    VoltageDriven,
    advance,
    build_system,
    induced_emf,
    initial_state,
    reflected_load_scaling,
    run_transient,
    steady_state_metrics,
)
from wptdecrypt.circuit.simulate import GateEvent, Trace
from wptdecrypt.controller import SyncedSchedule, load_energy
from wptdecrypt.errors import (
    DimensionMismatch,
    NonPhysicalCoupling,
    StepTooLarge,
    ValidationError,
    WindowTooLong,
)

L_T, L_R, L_A = 150e-6, 80e-6, 10e-6


def pair(m=15e-6, resistances=None):
    return CoupledCoilSet(("T", "R"), (L_T, L_R), np.array([[0, m], [m, 0]]), resistances)


def experiment_coils():
    names = ("T", "R", "A")
    M = np.zeros((3, 3))
    M[0, 1] = M[1, 0] = 15e-6
    M[0, 2] = M[2, 0] = 3e-6
    M[1, 2] = M[2, 1] = 2e-6
    return CoupledCoilSet(names, (L_T, L_R, L_A), M)


# ------------------------------------------------------------- validation
def test_experiment_coils_valid():
    coils = experiment_coils()
    rx = Receiver("R", "R", FixedCapacitor(50.73e-9))
    system = build_system(coils, [rx], IdealCurrent(3.4, 79e3))
    assert list(system.sense_coils) == [2]


def test_zero_mutuals_valid():
    coils = CoupledCoilSet(("T", "R"), (L_T, L_R), np.zeros((2, 2)))
    build_system(coils, [Receiver("R", "R", FixedCapacitor(50e-9))], IdealCurrent(1.0, 79e3))


def test_unit_coupling_rejected():
    with pytest.raises(NonPhysicalCoupling):
        pair(m=math.sqrt(L_T * L_R))


def test_asymmetric_mutuals_rejected():
    with pytest.raises(NonPhysicalCoupling):
        CoupledCoilSet(("T", "R"), (L_T, L_R), np.array([[0, 1e-6], [2e-6, 0]]))


def test_non_positive_definite_rejected():
    # each pair has k = 0.9 or 0, but the 3x3 matrix has a negative eigenvalue
    M = 1e-4 * np.array([[0, 0.9, 0.9], [0.9, 0, 0], [0.9, 0, 0]])
    with pytest.raises(NonPhysicalCoupling):
        CoupledCoilSet(("a", "b", "c"), (1e-4,) * 3, M)


def test_wrong_matrix_shape_rejected():
    with pytest.raises(ValidationError):
        CoupledCoilSet(("T", "R"), (L_T, L_R), np.zeros((3, 3)))


def test_transmitter_cannot_be_receiver():
    with pytest.raises(DimensionMismatch):
        build_system(pair(), [Receiver("X", "T", FixedCapacitor(1e-9))], IdealCurrent(1, 1e5))


def test_duplicate_receiver_coil_rejected():
    rx = [Receiver("R", "R", FixedCapacitor(1e-9)), Receiver("S", "R", FixedCapacitor(1e-9))]
    with pytest.raises(DimensionMismatch):
        build_system(pair(), rx, IdealCurrent(1, 1e5))


@pytest.mark.parametrize("make", [
    lambda: SwitchedCapBranch(0.0, 1e-9),
    lambda: SwitchedCapBranch(1e-9, 1e-9, leak_conductance=-1),
    lambda: Resistor(0.0),
    lambda: RectifierBattery(-1.0, 1.0),
    lambda: IdealCurrent(1.0, 0.0),
    lambda: FixedCapacitor(0.0),
])
def test_element_invariants(make):
    with pytest.raises(ValidationError):
        make()


# ------------------------------------------------------------ trajectories
def test_lc_free_oscillation():
    coils = pair(m=0.0, resistances=(0.0, 0.0))
    c = 50.73e-9
    system = build_system(coils, [Receiver("R", "R", FixedCapacitor(c), Resistor(1e-6))],
                          IdealCurrent(0.0, 79e3))
    st = initial_state(system)
    st.x[system.ix_vc[0]] = 1.0
    tr = run_transient(system, 20 / 79e3, ("VC_R",), state=st)
    v, t = tr["VC_R"], tr.t
    i = np.nonzero((v[:-1] < 0) & (v[1:] >= 0))[0]
    tz = t[i] - v[i] / (v[i + 1] - v[i]) * (t[i + 1] - t[i])
    f = (len(tz) - 1) / (tz[-1] - tz[0])
    assert f == pytest.approx(79.0e3, rel=5e-3)
    assert f == pytest.approx(1 / (2 * math.pi * math.sqrt(L_R * c)), rel=1e-5)
    # lossless: amplitude is kept
    assert np.max(np.abs(v[-200:])) == pytest.approx(1.0, rel=1e-4)


def test_rl_step_time_constant():
    # a 1 Hz source with phase pi/2 is a DC step over one millisecond
    coils = CoupledCoilSet(("T",), (L_T,), np.zeros((1, 1)), (0.0,))
    system = build_system(coils, [], VoltageDriven(1.0, 1.0, internal_resistance=1.0,
                                                   phase=math.pi / 2))
    tr = run_transient(system, 1e-3, ("I_T",), divisor=10**6)
    tau = L_T / 1.0
    assert np.max(np.abs(tr["I_T"] - (1 - np.exp(-tr.t / tau)))) < 1e-4


@pytest.mark.parametrize("topology", list(Topology))
def test_gate_always_on_matches_c1_plus_c2(topology):
    def system(comp):
        return build_system(pair(), [Receiver("R", "R", comp, Resistor(25.0))],
                            IdealCurrent(3.0, 100e3))

    dur = 60 / 100e3
    on = [GateEvent(0.0, "R", d, True) for d in Topology(topology).devices]
    a = run_transient(system(SwitchedCapBranch(10e-9, 44e-9, topology)), dur, ("I_R",), on)
    b = run_transient(system(FixedCapacitor(54e-9)), dur, ("I_R",))
    assert np.max(np.abs(a["I_R"] - b["I_R"])) < 1e-8 * np.max(np.abs(b["I_R"]))


@pytest.mark.parametrize("topology", ["transistor_diode_pair", "back_to_back"])
def test_gate_always_off_matches_c1(topology):
    def system(comp):
        return build_system(pair(), [Receiver("R", "R", comp, Resistor(25.0))],
                            IdealCurrent(3.0, 100e3))

    dur = 60 / 100e3
    a = run_transient(system(SwitchedCapBranch(10e-9, 44e-9, topology)), dur, ("I_R",))
    b = run_transient(system(FixedCapacitor(10e-9)), dur, ("I_R",))
    assert np.max(np.abs(a["I_R"] - b["I_R"])) < 1e-8 * np.max(np.abs(b["I_R"]))


def test_zero_source_gives_zero_trace():
    coils = experiment_coils()
    rx = Receiver("R", "R", SwitchedCapBranch(10e-9, 44e-9))
    system = build_system(coils, [rx], IdealCurrent(0.0, 79e3))
    tr = run_transient(system, 10 / 79e3)
    for name, v in tr.data.items():
        assert np.all(v == 0.0), name


def test_fixed_receiver_phasor_and_thd():
    f, amp = 79e3, 3.0
    c = 1 / ((2 * math.pi * f) ** 2 * L_R)
    coils = pair()
    system = build_system(coils, [Receiver("R", "R", FixedCapacitor(c), Resistor(25.0))],
                          IdealCurrent(amp, f))
    cycles = 200
    tr = run_transient(system, cycles / f, ("I_R",))
    tail = tr.window(tr.t[-1] - 20 / f)
    y = tail["I_R"][1:]  # exactly 20 periods of samples
    expected = phasor_current(f, amp, 15e-6, L_R, c, 25.0 + coils.series_resistances[1])
    assert np.max(np.abs(y)) == pytest.approx(expected, rel=1e-4)
    assert sinusoid_thd(y, 20) < 0.05


def test_induced_emf_open_receiver():
    # no receiver attached: R and A are open coils and I_R = 0
    f, amp = 79e3, 3.4
    system = build_system(experiment_coils(), [], IdealCurrent(amp, f))
    st = initial_state(system)
    assert induced_emf(system, st, "R") == pytest.approx(2 * math.pi * f * 15e-6 * amp, rel=1e-12)
    assert induced_emf(system, st, "A") == pytest.approx(2 * math.pi * f * 3e-6 * amp, rel=1e-12)
    tr = run_transient(system, 2 / f, ("V_A",))
    assert np.max(np.abs(tr["V_A"])) == pytest.approx(5.06, abs=0.01)


def test_induced_emf_zero_source():
    coils = experiment_coils()
    system = build_system(coils, [Receiver("R", "R", FixedCapacitor(50e-9))],
                          IdealCurrent(0.0, 79e3))
    st = advance(system, initial_state(system), 5 / 79e3)
    assert induced_emf(system, st, "A") == 0.0
    assert induced_emf(system, st, "R") == 0.0


def test_advance_does_not_mutate_input():
    system = build_system(pair(), [Receiver("R", "R", FixedCapacitor(50e-9))], IdealCurrent(1, 79e3))
    st = initial_state(system)
    nxt = advance(system, st, 1e-5)
    assert st.t == 0.0 and np.all(st.x == 0)
    assert nxt.t == pytest.approx(1e-5)
    with pytest.raises(ValidationError):
        advance(system, st, 0.0)


def test_gate_event_in_past_rejected():
    system = build_system(pair(), [Receiver("R", "R", SwitchedCapBranch(1e-8, 4e-8))],
                          IdealCurrent(1, 79e3))
    sim = Simulation(system)
    sim.run(1e-5)
    with pytest.raises(ValidationError):
        sim.schedule([GateEvent(0.5e-5, "R", "M1", True)])
    with pytest.raises(ValidationError):
        sim.schedule([GateEvent(float("nan"), "R", "M1", True)])


def test_stiff_mode_raises_step_too_large():
    rx = Receiver("R", "R", SwitchedCapBranch(10e-9, 44e-9, on_resistance=1e-6), Resistor(25.0))
    system = build_system(pair(), [rx], IdealCurrent(3.0, 100e3))
    on = [GateEvent(0.0, "R", d, True) for d in ("M1", "M2")]
    with pytest.raises(StepTooLarge):
        run_transient(system, 5e-5, ("I_R",), on)


# ------------------------------------------------------------------ energy
def _energy_residual(system, sim):
    e = sim.state.energy
    return e.injected - e.dissipated - sim.state.stored_energy(system), e.injected


@pytest.mark.parametrize("load", [Resistor(25.0), RectifierRC(25.0, 1e-6), RectifierBattery(15.0, 0.5)])
def test_energy_balance(load):
    f = 79e3
    rx = Receiver("R", "R", SwitchedCapBranch(10e-9, 44e-9), load)
    system = build_system(pair(), [rx], IdealCurrent(10.0, f))
    sched = SyncedSchedule("R", "transistor_diode_pair", lambda _f: 4e-6)
    sim = Simulation(system, controller=sched)
    per_cycle = []
    for _ in range(40):
        before = sim.state.energy.injected
        sim.run(1 / f)
        res, inj = _energy_residual(system, sim)
        per_cycle.append((res, inj - before))
    res, inj = _energy_residual(system, sim)
    assert abs(res) <= 1e-3 * inj
    # the running residual never grows by more than 0.1% of one cycle's input
    diffs = np.diff([r for r, _ in per_cycle])
    assert np.all(np.abs(diffs) <= 1e-3 * np.array([abs(d) for _, d in per_cycle[1:]]) + 1e-15)
    assert load_energy(system, sim.state.energy)["R"] > 0


def test_load_power_below_injected_power():
    f = 79e3
    rx = Receiver("R", "R", FixedCapacitor(50.73e-9), Resistor(25.0))
    system = build_system(pair(), [rx], IdealCurrent(3.0, f))
    sim = Simulation(system)
    sim.run(100 / f)
    inj = sim.state.energy.injected
    assert 0 < load_energy(system, sim.state.energy)["R"] <= inj


# ------------------------------------------------------------- conduction
def _walk(system, sched, cycles, f, per_cycle=100):
    sim = Simulation(system, controller=sched)
    for _ in range(cycles * per_cycle):
        sim.run(1 / (f * per_cycle))
        yield sim.state


def test_bridge_complementarity():
    f = 79e3
    rx = Receiver("R", "R", FixedCapacitor(50.73e-9), RectifierBattery(60.0, 0.5))
    system = build_system(pair(), [rx], IdealCurrent(10.0, f))
    eps_i, eps_v = 1e-6, 1e-6
    blocked = 0
    for st in _walk(system, None, 30, f):
        s = st.mode.bridges[0]
        i = st.probe(system, "I_R")
        if s == 1:
            assert i >= -eps_i
        elif s == -1:
            assert i <= eps_i
        else:
            blocked += 1
            assert abs(i) <= eps_i
            v_in = st.probe(system, "VCOIL_R") - st.probe(system, "VC_R")
            assert abs(v_in) <= st.probe(system, "VL_R") + eps_v
    assert blocked > 0


@pytest.mark.parametrize("topology", ["transistor_diode_pair", "single_transistor"])
def test_switch_complementarity(topology):
    f = 100e3
    rx = Receiver("R", "R", SwitchedCapBranch(10e-9, 44e-9, topology), Resistor(25.0))
    system = build_system(pair(), [rx], IdealCurrent(3.0, f))
    sched = SyncedSchedule("R", topology, lambda _f: 2e-6)
    eps_i, eps_v = 1e-6, 1e-6
    seen = set()
    for st in _walk(system, sched, 20, f):
        sm = st.mode.switches[0]
        isw = st.probe(system, "ISW_R")
        vsw = st.probe(system, "VSW_R")
        if sm.closed:
            if not sm.neg:
                assert isw >= -eps_i
            if not sm.pos:
                assert isw <= eps_i
        else:
            if sm.pos:
                assert vsw <= eps_v
            if sm.neg:
                assert vsw >= -eps_v
        seen.add(sm.closed)
    assert seen == {True, False}


# ------------------------------------------------------------- symmetry
def _tail_waveform(topology, cycles=80, f=100e3, t_on=2e-6, gate=True):
    rx = Receiver("R", "R", SwitchedCapBranch(10e-9, 44e-9, topology), Resistor(25.0))
    system = build_system(pair(), [rx], IdealCurrent(3.0, f))
    sched = SyncedSchedule("R", topology, lambda _f: t_on) if gate else None
    tr = run_transient(system, cycles / f, ("I_R", "VC2_R"), sched)
    return tr.window(tr.t[-1] - 2 / f)


@pytest.mark.parametrize("topology", ["transistor_diode_pair", "back_to_back"])
def test_half_wave_symmetry(topology):
    tail = _tail_waveform(topology)
    i = tail["I_R"]
    shift = int(round(0.5 / 100e3 / (tail.t[1] - tail.t[0])))
    a, b = i[:-shift], i[shift:]
    assert np.linalg.norm(a + b) / np.linalg.norm(a) < 0.02


def test_single_transistor_gate_off_asymmetric():
    tail = _tail_waveform("single_transistor", gate=False)
    v = tail["VC2_R"]
    assert abs(np.mean(v)) > 0.05 * np.max(np.abs(v))


# ------------------------------------------------------- steady-state metrics
def test_steady_metrics_sinusoid():
    f = 1e3
    t = np.linspace(0, 20e-3, 20 * 400 + 1)
    tr = Trace(t, {"y": np.sin(2 * math.pi * f * t)})
    m = steady_state_metrics(tr, 5, f)
    assert m.rms["y"] == pytest.approx(1 / math.sqrt(2), abs=1e-3)
    assert m.peak["y"] == pytest.approx(1.0, abs=1e-3)
    assert m.settled


def test_steady_metrics_growing_envelope():
    f = 1e3
    t = np.linspace(0, 20e-3, 20 * 400 + 1)
    tr = Trace(t, {"y": t * np.sin(2 * math.pi * f * t)})
    assert not steady_state_metrics(tr, 5, f).settled


def test_steady_metrics_window_too_long():
    t = np.linspace(0, 3e-3, 301)
    with pytest.raises(WindowTooLong):
        steady_state_metrics(Trace(t, {"y": np.sin(t)}), 5, 1e3)


def test_steady_metrics_load_energy():
    f, amp = 79e3, 3.0
    c = 1 / ((2 * math.pi * f) ** 2 * L_R)
    system = build_system(pair(), [Receiver("R", "R", FixedCapacitor(c), Resistor(25.0))],
                          IdealCurrent(amp, f))
    tr = run_transient(system, 200 / f, ("VL_R", "IL_R"))
    m = steady_state_metrics(tr, 10, f)
    i_pk = phasor_current(f, amp, 15e-6, L_R, c, 25.0 + system.coils.series_resistances[1])
    assert m.cycle_load_energy["R"] == pytest.approx(0.5 * i_pk ** 2 * 25.0 / f, rel=1e-3)


# ------------------------------------------------------------ reflected load
def test_reflected_scaling_ideal_current_is_one():
    system = build_system(pair(), [Receiver("R", "R", FixedCapacitor(50e-9))], IdealCurrent(1, 79e3))
    assert reflected_load_scaling(system) == 1.0


def test_reflected_scaling_resonant_lower_than_detuned():
    f = 79e3
    c_res = 1 / ((2 * math.pi * f) ** 2 * L_R)
    src = VoltageDriven(10.0, f, internal_resistance=1.0,
                        compensation=1 / ((2 * math.pi * f) ** 2 * L_T))
    res = build_system(pair(), [Receiver("R", "R", FixedCapacitor(c_res))], src)
    det = build_system(pair(), [Receiver("R", "R", FixedCapacitor(c_res * 0.5))], src)
    assert reflected_load_scaling(res) < reflected_load_scaling(det) <= 1.0
    assert reflected_load_scaling(res, closed=[]) == pytest.approx(1.0)


# ---------------------------------------------------------------- CSV
def test_trace_csv_round_trip(tmp_path):
    t = np.linspace(0, 1e-5, 11)
    tr = Trace(t, {"I_R": np.sin(t * 1e5), "VC_R": np.cos(t * 1e5)})
    path = tmp_path / "trace.csv"
    text = tr.to_csv(path)
    assert text.splitlines()[0] == "t_s,I_R,VC_R"
    back = Trace.from_csv(str(path))
    assert np.allclose(back.t, t, rtol=1e-8, atol=0)
    assert np.allclose(back["I_R"], tr["I_R"], rtol=1e-8, atol=1e-15)


def test_determinism_bit_identical():
    f = 100e3
    rx = Receiver("R", "R", SwitchedCapBranch(10e-9, 44e-9), RectifierRC(25.0, 1e-6))

    def once():
        system = build_system(pair(), [rx], IdealCurrent(3.0, f))
        sched = SyncedSchedule("R", "transistor_diode_pair", lambda _f: 2e-6)
        return run_transient(system, 30 / f, (), sched)

    a, b = once(), once()
    for k in a.data:
        assert np.array_equal(a[k], b[k])
