"""Closed-form design relations for a time-division switched capacitor pair.

``c1`` is always in series with the receiver coil; ``c2`` sits in parallel
with it and is connected for ``t_on`` twice per drive period, centred on the
receiver current peaks. Treating the receiver current as a sinusoid gives an
effective (equivalent) capacitance that interpolates harmonically between
``c1`` and ``c1 + c2`` with weight ``sin(pi * f * t_on)``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .errors import (
    DutyOutOfRange,
    FrequencyOutOfRange,
    InfeasibleTargets,
    ValidationError,
)

TWO_PI = 2.0 * math.pi
# relative tolerance used when deciding whether a value sits on a boundary
BOUNDARY_RTOL = 1e-12


def _positive(**values):
    for name, v in values.items():
        if not (v > 0 and math.isfinite(v)):
            raise ValidationError(f"{name} must be positive and finite, got {v!r}")


def resonant_capacitance(f, l):
    """Series capacitance that resonates ``l`` at frequency ``f``."""
    _positive(f=f, l=l)
    return 1.0 / ((TWO_PI * f) ** 2 * l)


def resonant_frequency(l, c):
    _positive(l=l, c=c)
    return 1.0 / (TWO_PI * math.sqrt(l * c))


def equivalent_capacitance(f, t_on, c1, c2):
    """Effective capacitance of the switched pair at drive frequency ``f``.

    Raises DutyOutOfRange unless ``0 <= t_on <= 1/(2 f)``.
    """
    _positive(f=f, c1=c1, c2=c2)
    half = 0.5 / f
    if t_on < -BOUNDARY_RTOL * half or t_on > half * (1.0 + BOUNDARY_RTOL):
        raise DutyOutOfRange(f"t_on={t_on!r} outside [0, {half!r}]")
    s = math.sin(math.pi * f * min(max(t_on, 0.0), half))
    return 1.0 / ((1.0 - s) / c1 + s / (c1 + c2))


def hacking_frequency_range(l, c1, c2):
    """(f_lo, f_hi): the span of drive frequencies the pair can resonate with ``l``."""
    _positive(l=l, c1=c1)
    if c2 < 0:
        raise ValidationError("c2 must be non-negative")
    f_hi = resonant_frequency(l, c1)
    f_lo = resonant_frequency(l, c1 + c2)
    return f_lo, f_hi


def switch_on_time(f, l, c1, c2):
    """Switch-on time per half period that makes the pair resonate ``l`` at ``f``.

    Raises FrequencyOutOfRange when ``f`` lies outside
    :func:`hacking_frequency_range`.
    """
    _positive(f=f, l=l, c1=c1, c2=c2)
    f_lo, f_hi = hacking_frequency_range(l, c1, c2)
    if f < f_lo * (1.0 - BOUNDARY_RTOL) or f > f_hi * (1.0 + BOUNDARY_RTOL):
        raise FrequencyOutOfRange(
            f"{f:.6g} Hz outside compensable range [{f_lo:.6g}, {f_hi:.6g}] Hz"
        )
    arg = (c1 + c2) * (1.0 - (TWO_PI * f) ** 2 * l * c1) / c2
    arg = min(max(arg, 0.0), 1.0)
    return math.asin(arg) / (math.pi * f)


@dataclass(frozen=True)
class CompensationDesign:
    """Receiver coil plus switched capacitor pair; the frequency range is derived."""

    l_r: float
    c1: float
    c2: float

    def __post_init__(self):
        _positive(l_r=self.l_r, c1=self.c1, c2=self.c2)

    @property
    def f_lo(self):
        return resonant_frequency(self.l_r, self.c1 + self.c2)

    @property
    def f_hi(self):
        return resonant_frequency(self.l_r, self.c1)

    def contains(self, f):
        return self.f_lo * (1 - BOUNDARY_RTOL) <= f <= self.f_hi * (1 + BOUNDARY_RTOL)

    def switch_on_time(self, f):
        return switch_on_time(f, self.l_r, self.c1, self.c2)

    def equivalent_capacitance(self, f, t_on):
        return equivalent_capacitance(f, t_on, self.c1, self.c2)


@dataclass(frozen=True)
class GatePlan:
    """Per-half-period split of a drive period into on and off time."""

    t_on: float
    period: float

    def __post_init__(self):
        if self.period <= 0:
            raise ValidationError("period must be positive")
        half = 0.5 * self.period
        if self.t_on < 0 or self.t_on > half * (1 + BOUNDARY_RTOL):
            raise DutyOutOfRange(f"t_on={self.t_on!r} outside [0, {half!r}]")

    @property
    def t_off(self):
        return max(0.5 * self.period - self.t_on, 0.0)


def select_capacitances(f_lo_target, f_hi_target, l, aging_margin=0.0):
    """Pick (c1, c2) covering ``[f_lo_target, f_hi_target]`` with derating.

    ``c1`` is taken below its upper bound by ``aging_margin`` and ``c2`` above
    its lower bound by the same fraction, so capacitance loss over time does
    not shrink the range.
    """
    _positive(f_lo_target=f_lo_target, f_hi_target=f_hi_target, l=l)
    if not f_lo_target < f_hi_target:
        raise InfeasibleTargets(
            f"need f_lo < f_hi, got {f_lo_target!r} >= {f_hi_target!r}"
        )
    if not 0.0 <= aging_margin < 1.0:
        raise ValidationError("aging_margin must lie in [0, 1)")
    c1 = (1.0 - aging_margin) * resonant_capacitance(f_hi_target, l)
    c2 = (1.0 + aging_margin) * (resonant_capacitance(f_lo_target, l) - c1)
    if not c2 > 0:
        raise InfeasibleTargets("no positive c2 satisfies the targets")
    return c1, c2


@dataclass(frozen=True)
class SensitivityRow:
    scale_c1: float
    scale_c2: float
    f_lo: float
    f_hi: float


def sensitivity_sweep(l, c1, c2, scale_grid):
    """Frequency range for every (c1, c2) scaling pair on ``scale_grid`` x ``scale_grid``."""
    scales = [float(s) for s in scale_grid]
    if any(not s > 0 for s in scales):
        raise ValidationError("scale factors must be positive")
    rows = []
    for s1 in scales:
        for s2 in scales:
            f_lo, f_hi = hacking_frequency_range(l, c1 * s1, c2 * s2)
            rows.append(SensitivityRow(s1, s2, f_lo, f_hi))
    return rows


SENSITIVITY_HEADER = ("scale_c1", "scale_c2", "f_lo_hz", "f_hi_hz")


def sensitivity_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SENSITIVITY_HEADER)
    for r in rows:
        w.writerow([f"{r.scale_c1:.9g}", f"{r.scale_c2:.9g}", f"{r.f_lo:.9g}", f"{r.f_hi:.9g}"])
    return buf.getvalue()


def parse_sensitivity_csv(text):
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != SENSITIVITY_HEADER:
        raise ValueError(f"unexpected header {header!r}")
    return [SensitivityRow(*map(float, row)) for row in reader if row]
