"""Exact integer time and drifting clock models.

All times in the simulator are plain Python ints counting ticks of
2**-16 ns, the granularity of a gPTP correction field. Addition and
subtraction are therefore exact; the only rounding happens when a clock
reading is quantized to the clock's read granularity.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation, localcontext
from fractions import Fraction

Timestamp = int
TickDuration = int

TICKS_PER_NS = 1 << 16
TICKS_PER_US = 1_000 * TICKS_PER_NS
TICKS_PER_MS = 1_000_000 * TICKS_PER_NS
TICKS_PER_S = 1_000_000_000 * TICKS_PER_NS

# Signed 64-bit, the width of a gPTP correction field (about 1.4e5 s).
TICK_MIN = -(1 << 63)
TICK_MAX = (1 << 63) - 1

MAX_DRIFT_PPM = 1000
PPM = 1_000_000

_UNITS = {
    "tick": 1,
    "ticks": 1,
    "ns": TICKS_PER_NS,
    "us": TICKS_PER_US,
    "µs": TICKS_PER_US,
    "ms": TICKS_PER_MS,
    "s": TICKS_PER_S,
}
_DURATION_RE = re.compile(r"^\s*([+-]?[0-9]*\.?[0-9]+(?:[eE][+-]?[0-9]+)?)\s*([a-zµ]+)\s*$")


class TimeRangeError(ValueError):
    """A tick value left the representable signed 64-bit range."""


def check_range(ticks: int) -> int:
    if not TICK_MIN <= ticks <= TICK_MAX:
        raise TimeRangeError(f"tick value {ticks} outside signed 64-bit range")
    return ticks


def ns(value: int | Fraction | str) -> int:
    return _exact_ticks(Fraction(value) * TICKS_PER_NS, f"{value}ns")


def us(value: int | Fraction | str) -> int:
    return _exact_ticks(Fraction(value) * TICKS_PER_US, f"{value}us")


def ms(value: int | Fraction | str) -> int:
    return _exact_ticks(Fraction(value) * TICKS_PER_MS, f"{value}ms")


def seconds(value: int | Fraction | str) -> int:
    return _exact_ticks(Fraction(value) * TICKS_PER_S, f"{value}s")


def _exact_ticks(value: Fraction, text: str) -> int:
    if value.denominator != 1:
        raise ValueError(f"{text} is not a whole number of ticks")
    return int(value)


def parse_duration(text: str | int) -> int:
    """Parse "125ms", "32ns", "1.5us", "7tick" (or a bare int of ticks) to ticks."""
    if isinstance(text, bool):
        raise ValueError(f"not a duration: {text!r}")
    if isinstance(text, int):
        return text
    if not isinstance(text, str):
        raise ValueError(f"not a duration: {text!r}")
    m = _DURATION_RE.match(text)
    if m is None:
        raise ValueError(f"not a duration: {text!r} (expected e.g. '125ms', '32ns')")
    number, unit = m.groups()
    if unit not in _UNITS:
        raise ValueError(f"unknown time unit {unit!r} in {text!r}")
    try:
        value = Fraction(Decimal(number)) * _UNITS[unit]
    except InvalidOperation as exc:  # pragma: no cover - regex guards this
        raise ValueError(f"not a duration: {text!r}") from exc
    return _exact_ticks(value, text)


def format_duration(ticks: int) -> str:
    """Inverse of parse_duration using the largest unit that divides exactly."""
    if ticks == 0:
        return "0ns"
    for unit in ("s", "ms", "us", "ns"):
        if ticks % _UNITS[unit] == 0:
            return f"{ticks // _UNITS[unit]}{unit}"
    return f"{ticks}tick"


def parse_ppm(value: int | float | str) -> Fraction:
    """Parse a drift value exactly; floats go through their decimal repr."""
    if isinstance(value, bool):
        raise ValueError(f"not a ppm value: {value!r}")
    if isinstance(value, float):
        value = repr(value)
    try:
        return Fraction(value)
    except (ValueError, ZeroDivisionError) as exc:
        raise ValueError(f"not a ppm value: {value!r}") from exc


def format_fraction(value: Fraction) -> str:
    """Exact decimal string when one exists, else "p/q"."""
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den != 1:
        return f"{value.numerator}/{value.denominator}"
    places = max(twos, fives)
    if places == 0:
        return str(value.numerator)
    scaled = value * 10**places
    digits = str(abs(scaled.numerator)).rjust(places + 1, "0")
    sign = "-" if value < 0 else ""
    return f"{sign}{digits[:-places]}.{digits[-places:]}"


def ticks_to_ns_str(ticks: int | Fraction, places: int = 5) -> str:
    """Decimal nanoseconds rounded half-even to `places` fractional digits."""
    value = Fraction(ticks) / TICKS_PER_NS
    q = Decimal(1).scaleb(-places)
    with localcontext() as ctx:
        ctx.prec = 80
        return str((Decimal(value.numerator) / Decimal(value.denominator)).quantize(q))


def quantize(t: Timestamp, g: TickDuration) -> Timestamp:
    """Largest multiple of `g` not exceeding `t`."""
    if g < 1:
        raise ValueError(f"granularity must be >= 1 tick, got {g}")
    return t - t % g


@dataclass(frozen=True)
class ClockModel:
    """Local clock = epoch + offset + (1 + drift)(true - epoch), floored to granularity.

    `drift_ppm` is kept as an exact Fraction; readings are computed with
    integer arithmetic so nothing accumulates over long horizons.
    """

    offset_at_epoch: TickDuration = 0
    drift_ppm: Fraction = Fraction(0)
    read_granularity: TickDuration = 1
    epoch: Timestamp = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "drift_ppm", Fraction(self.drift_ppm))
        if abs(self.drift_ppm) > MAX_DRIFT_PPM:
            raise ValueError(f"|drift_ppm| must be <= {MAX_DRIFT_PPM}, got {self.drift_ppm}")
        if self.read_granularity < 1:
            raise ValueError(f"read_granularity must be >= 1 tick, got {self.read_granularity}")

    @property
    def rate(self) -> Fraction:
        """Local seconds per true second."""
        return 1 + self.drift_ppm / PPM

    def exact(self, true_time: Timestamp) -> Fraction:
        """Un-quantized local time (rational)."""
        return self.epoch + self.offset_at_epoch + self.rate * (true_time - self.epoch)

    def floor_ticks(self, true_time: Timestamp) -> Timestamp:
        rate = self.rate
        elapsed = true_time - self.epoch
        return self.epoch + self.offset_at_epoch + (elapsed * rate.numerator) // rate.denominator

    def with_granularity(self, g: TickDuration) -> ClockModel:
        return ClockModel(self.offset_at_epoch, self.drift_ppm, g, self.epoch)


def read_local(clock: ClockModel, true_time: Timestamp) -> Timestamp:
    """Local clock reading at `true_time`, floored to the clock's granularity."""
    if true_time < clock.epoch:
        raise ValueError(f"true_time {true_time} precedes clock epoch {clock.epoch}")
    return check_range(quantize(clock.floor_ticks(true_time), clock.read_granularity))


def to_true(clock: ClockModel, local_time: Timestamp) -> Timestamp:
    """Earliest true tick at which the un-quantized local clock reaches `local_time`.

    Rounding up means an event scheduled "at local time L" never fires
    before the local clock shows L.
    """
    rate = clock.rate
    local_elapsed = local_time - clock.epoch - clock.offset_at_epoch
    # ceil(local_elapsed / rate)
    true_elapsed = -((-local_elapsed * rate.denominator) // rate.numerator)
    return check_range(clock.epoch + true_elapsed)
