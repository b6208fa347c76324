"""Immutable circuit element descriptions.

Coil 0 of a :class:`CoupledCoilSet` is always the transmitter. Coils that are
neither the transmitter nor attached to a :class:`Receiver` are open sense
coils (for instance the auxiliary coil) and carry no current.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from ..errors import NonPhysicalCoupling, ValidationError

DEFAULT_Q = 100.0
DEFAULT_Q_FREQUENCY = 85e3


def default_series_resistance(inductance, q=DEFAULT_Q, f=DEFAULT_Q_FREQUENCY):
    """Coil resistance giving quality factor ``q`` at ``f``."""
    return 2.0 * math.pi * f * inductance / q


@dataclass(frozen=True, eq=False)
class CoupledCoilSet:
    """Self inductances, symmetric mutual matrix and per-coil series resistance.

    ``mutuals`` is an ``n x n`` array whose diagonal is ignored. When
    ``series_resistances`` is omitted every coil gets the resistance that
    gives Q = 100 at 85 kHz.
    """

    names: tuple
    inductances: tuple
    mutuals: np.ndarray
    series_resistances: Optional[tuple] = None

    def __post_init__(self):
        n = len(self.inductances)
        names = tuple(self.names)
        if len(names) != n:
            raise ValidationError("one name per coil is required")
        if len(set(names)) != n:
            raise ValidationError("coil names must be unique")
        L = tuple(float(v) for v in self.inductances)
        if any(not v > 0 for v in L):
            raise ValidationError("inductances must be positive")
        M = np.array(self.mutuals, dtype=float)
        if M.shape != (n, n):
            raise ValidationError(f"mutual matrix must be {n}x{n}, got {M.shape}")
        np.fill_diagonal(M, 0.0)
        if not np.allclose(M, M.T, rtol=1e-12, atol=0.0):
            raise NonPhysicalCoupling("mutual inductance matrix is not symmetric")
        M = 0.5 * (M + M.T)
        for i in range(n):
            for j in range(i + 1, n):
                k = M[i, j] / math.sqrt(L[i] * L[j])
                if not 0.0 <= k < 1.0:
                    raise NonPhysicalCoupling(
                        f"coupling {names[i]}-{names[j]} has k={k:.6g}, need 0 <= k < 1"
                    )
        full = M + np.diag(L)
        try:
            np.linalg.cholesky(full)
        except np.linalg.LinAlgError:
            raise NonPhysicalCoupling("inductance matrix is not positive definite") from None
        if self.series_resistances is None:
            R = tuple(default_series_resistance(v) for v in L)
        else:
            R = tuple(float(v) for v in self.series_resistances)
            if len(R) != n:
                raise ValidationError("one series resistance per coil is required")
            if any(v < 0 for v in R):
                raise ValidationError("series resistances must be non-negative")
        M.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "inductances", L)
        object.__setattr__(self, "mutuals", M)
        object.__setattr__(self, "series_resistances", R)

    @property
    def n(self):
        return len(self.inductances)

    def matrix(self):
        """Full inductance matrix (self terms on the diagonal)."""
        return self.mutuals + np.diag(self.inductances)

    def index(self, coil):
        if isinstance(coil, str):
            try:
                return self.names.index(coil)
            except ValueError:
                raise ValidationError(f"unknown coil {coil!r}") from None
        if not 0 <= int(coil) < self.n:
            raise ValidationError(f"coil index {coil!r} out of range")
        return int(coil)

    def coupling(self, i, j):
        i, j = self.index(i), self.index(j)
        return self.mutuals[i, j] / math.sqrt(self.inductances[i] * self.inductances[j])

    def with_resistances(self, resistances):
        return CoupledCoilSet(self.names, self.inductances, self.mutuals, tuple(resistances))


class Topology(str, enum.Enum):
    SINGLE_TRANSISTOR = "single_transistor"
    BACK_TO_BACK = "back_to_back"
    TRANSISTOR_DIODE_PAIR = "transistor_diode_pair"

    @property
    def devices(self):
        if self is Topology.SINGLE_TRANSISTOR:
            return ("M",)
        return ("M1", "M2")

    def allowed(self, gate):
        """Conduction directions (positive, negative) permitted by a gate state.

        Positive switch current charges C2 positively. ``gate`` maps device
        name to on/off.
        """
        if self is Topology.SINGLE_TRANSISTOR:
            # body diode always passes negative current
            return bool(gate["M"]), True
        # back-to-back: M1's channel with M2's body diode passes positive current;
        # diode pair: the M1+D1 leg passes positive current. Same conduction law.
        return bool(gate["M1"]), bool(gate["M2"])


@dataclass(frozen=True)
class FixedCapacitor:
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValidationError("capacitance must be positive")


@dataclass(frozen=True)
class SwitchedCapBranch:
    """C1 always in circuit, C2 in parallel behind switch S_R.

    ``on_resistance`` = 0 gives an ideal switch (conducting state enforced as a
    constraint); a positive value models the channel as a resistor, which is
    what makes capacitor-to-capacitor current spikes finite.
    """

    c1: float
    c2: float
    topology: Topology = Topology.TRANSISTOR_DIODE_PAIR
    leak_conductance: float = 0.0
    on_resistance: float = 0.0

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValidationError("c1 and c2 must be positive")
        if self.leak_conductance < 0:
            raise ValidationError("leak_conductance must be >= 0")
        if self.on_resistance < 0:
            raise ValidationError("on_resistance must be >= 0")
        object.__setattr__(self, "topology", Topology(self.topology))


@dataclass(frozen=True)
class Resistor:
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValidationError("load resistance must be positive")


@dataclass(frozen=True)
class RectifierRC:
    """Ideal diode bridge feeding R_L in parallel with C_L."""

    r: float
    c: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValidationError("load resistance must be positive")
        if self.c < 0:
            raise ValidationError("load capacitance must be >= 0")


@dataclass(frozen=True)
class RectifierBattery:
    """Ideal diode bridge charging a constant-voltage battery through R_series."""

    v_bat: float
    r_series: float

    def __post_init__(self):
        if not self.r_series > 0:
            raise ValidationError("battery series resistance must be positive")
        if self.v_bat < 0:
            raise ValidationError("battery voltage must be >= 0")


LoadModel = Union[Resistor, RectifierRC, RectifierBattery]
Compensation = Union[FixedCapacitor, SwitchedCapBranch]


@dataclass(frozen=True)
class IdealCurrent:
    """Transmitter current enforced as ``amplitude * sin(2 pi f t + phase)``."""

    amplitude: float
    frequency: float
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValidationError("amplitude must be >= 0")
        if not self.frequency > 0:
            raise ValidationError("frequency must be positive")


@dataclass(frozen=True)
class VoltageDriven:
    """Sinusoidal voltage behind ``internal_resistance`` driving the transmitter.

    ``compensation`` is an optional series capacitor on the transmitter coil.
    """

    amplitude: float
    frequency: float
    internal_resistance: float = 1.0
    compensation: Optional[float] = None
    phase: float = 0.0

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValidationError("amplitude must be >= 0")
        if not self.frequency > 0:
            raise ValidationError("frequency must be positive")
        if self.internal_resistance < 0:
            raise ValidationError("internal resistance must be >= 0")
        if self.compensation is not None and not self.compensation > 0:
            raise ValidationError("transmitter compensation must be positive")


SourceModel = Union[IdealCurrent, VoltageDriven]


@dataclass(frozen=True)
class Receiver:
    name: str
    coil: Union[int, str]
    compensation: Compensation
    load: LoadModel = field(default_factory=lambda: Resistor(25.0))

    @property
    def switched(self):
        return isinstance(self.compensation, SwitchedCapBranch)

    @property
    def rectified(self):
        return isinstance(self.load, RectifierBattery) or (
            isinstance(self.load, RectifierRC) and self.load.c > 0
        )
