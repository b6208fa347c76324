"""Piecewise-linear transient simulation of coupled resonant receivers."""

from .elements import (
    CoupledCoilSet,
    FixedCapacitor,
    IdealCurrent,
    Receiver,
    RectifierBattery,
    RectifierRC,
    Resistor,
    SwitchedCapBranch,
    Topology,
    VoltageDriven,
    default_series_resistance,
)
from .simulate import (
    EnergyAccount,
    GateEvent,
    Hop,
    Simulation,
    SimState,
    SteadyMetrics,
    Trace,
    advance,
    induced_emf,
    initial_state,
    run_transient,
    steady_state_metrics,
)
from .system import Mode, SimSystem, SwitchMode, build_system, receiver_impedance, reflected_load_scaling

__all__ = [
    "CoupledCoilSet", "FixedCapacitor", "IdealCurrent", "Receiver", "RectifierBattery",
    "RectifierRC", "Resistor", "SwitchedCapBranch", "Topology", "VoltageDriven",
    "default_series_resistance", "EnergyAccount", "GateEvent", "Hop", "Simulation",
    "SimState", "SteadyMetrics", "Trace", "advance", "induced_emf", "initial_state",
    "run_transient", "steady_state_metrics", "Mode", "SimSystem", "SwitchMode",
    "build_system", "receiver_impedance", "reflected_load_scaling",
]
