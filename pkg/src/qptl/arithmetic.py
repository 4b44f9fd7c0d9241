"""Continued fractions, Diophantine bookkeeping and rotation orbits on the circle.

Partial quotients are discontinuous in the frequency, so every expansion here is
certified: the frequency is carried as a rational bracket ``lo <= omega <= hi`` and a
quotient is only accepted when both ends of the bracket agree on it.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np


class RationalFrequency(ValueError):
    """The expansion terminated: the frequency is rational."""


class PrecisionExhausted(ArithmeticError):
    """The working precision cannot certify the next partial quotient."""


class HitNotFound(RuntimeError):
    """No orbit point landed in the arc within the guaranteed window."""


@dataclass(frozen=True)
class QuadraticIrrational:
    """The exact number (a + b*sqrt(d)) / c."""

    a: int
    b: int
    d: int
    c: int

    def __post_init__(self):
        if self.c == 0:
            raise ValueError("zero denominator")
        if self.d < 0:
            raise ValueError("negative radicand")

    @property
    def is_rational(self) -> bool:
        r = math.isqrt(self.d)
        return self.b == 0 or r * r == self.d

    def exact(self) -> Fraction:
        return Fraction(self.a + self.b * math.isqrt(self.d), self.c)

    def bracket(self, bits: int) -> tuple[Fraction, Fraction]:
        # isqrt(d * 4^bits) / 2^bits <= sqrt(d) < (isqrt(...) + 1) / 2^bits
        s = math.isqrt(self.d << (2 * bits))
        lo = Fraction(self.a * (1 << bits) + self.b * s, self.c << bits)
        hi = Fraction(self.a * (1 << bits) + self.b * (s + 1), self.c << bits)
        return (lo, hi) if lo <= hi else (hi, lo)

    def __float__(self) -> float:
        return (self.a + self.b * math.sqrt(self.d)) / self.c


GOLDEN = QuadraticIrrational(-1, 1, 5, 2)
SILVER = QuadraticIrrational(-1, 1, 2, 1)  # sqrt(2) - 1

FrequencyLike = Union[float, Fraction, str, QuadraticIrrational]


@dataclass(frozen=True)
class FrequencyData:
    """An irrational frequency together with its certified expansion.

    ``convergents[k]`` is ``(p_k, q_k)`` for ``k = 0..n``, with ``(p_0, q_0) = (0, 1)``;
    ``partial_quotients[k-1]`` is ``a_k``.
    """

    omega: float
    partial_quotients: tuple[int, ...]
    convergents: tuple[tuple[int, int], ...]
    precision_bits: int

    @property
    def n_terms(self) -> int:
        return len(self.partial_quotients)

    def q(self, k: int) -> int:
        if k == -1:
            return 0
        return self.convergents[k][1]

    def p(self, k: int) -> int:
        if k == -1:
            return 1
        return self.convergents[k][0]

    def denominators(self) -> tuple[int, ...]:
        """q_1, ..., q_n."""
        return tuple(q for _, q in self.convergents[1:])

    @classmethod
    def from_quotients(cls, quotients: Sequence[int]) -> "FrequencyData":
        a = tuple(int(x) for x in quotients)
        if not a or any(x < 1 for x in a):
            raise ValueError("partial quotients must be positive integers")
        conv = _convergents(a)
        p, q = conv[-1]
        # |omega - p_n/q_n| < 1/q_n^2 for any continuation of the quotients
        return cls(p / q, a, conv, max(1, 2 * q.bit_length()))


def _convergents(a: Sequence[int]) -> tuple[tuple[int, int], ...]:
    p_prev, q_prev = 1, 0
    p, q = 0, 1
    out = [(p, q)]
    for ak in a:
        p, p_prev = ak * p + p_prev, p
        q, q_prev = ak * q + q_prev, q
        out.append((p, q))
    return tuple(out)


def _expand_bracket(lo: Fraction, hi: Fraction, n_terms: int) -> list[int]:
    """Quotients shared by every number in [lo, hi]; raises when they run out."""
    quotients: list[int] = []
    exact = lo == hi
    while len(quotients) < n_terms:
        if exact and lo == 0:
            raise RationalFrequency(f"expansion terminates after {len(quotients)} quotients")
        if lo <= 0:
            raise PrecisionExhausted(f"cannot certify quotient {len(quotients) + 1}")
        a_lo = math.floor(1 / hi)
        a_hi = math.floor(1 / lo)
        if a_lo != a_hi:
            raise PrecisionExhausted(f"cannot certify quotient {len(quotients) + 1}")
        quotients.append(a_lo)
        lo, hi = 1 / hi - a_lo, 1 / lo - a_lo
    return quotients


def _float_bracket(omega: float, bits: int) -> tuple[Fraction, Fraction]:
    x = Fraction(omega)
    # a float that is exactly a low-height rational is taken to be that rational
    if x.limit_denominator(1 << max(1, bits // 2 - 1)) == x:
        return x, x
    r = Fraction(1, 1 << bits)
    return x - r, x + r


def _decimal_bracket(digits: str) -> tuple[Fraction, Fraction, int]:
    # decimal digits are an approximation, good to one unit in the last place
    s = digits.strip()
    x = Fraction(s)
    mantissa, _, exp = s.lower().partition("e")
    frac = mantissa.split(".", 1)[1] if "." in mantissa else ""
    scale = len(frac) - (int(exp) if exp else 0)
    ulp = Fraction(1, 10 ** scale) if scale >= 0 else Fraction(10 ** (-scale))
    return x - ulp, x + ulp, max(1, int(scale * math.log2(10)))


def expand_continued_fraction(omega: FrequencyLike, n_terms: int, precision_bits: int = 52,
                              max_bits: int = 1 << 16) -> FrequencyData:
    """Certified continued-fraction expansion ``omega = [a_1, a_2, ...]`` with 0 < omega < 1.

    Exact quadratic irrationals are re-bracketed at doubled precision until ``n_terms``
    quotients are certified (up to ``max_bits``); floats are bracketed by
    ``+-2**-precision_bits``; decimal strings by one unit in the last digit.
    """
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    if isinstance(omega, QuadraticIrrational):
        if omega.is_rational:
            lo = hi = omega.exact()
            _check_unit_interval(lo)
            a = _expand_bracket(lo, hi, n_terms)
            bits = precision_bits
        else:
            bits = precision_bits
            while True:
                lo, hi = omega.bracket(bits)
                _check_unit_interval(lo, hi)
                try:
                    a = _expand_bracket(lo, hi, n_terms)
                    break
                except PrecisionExhausted:
                    if bits >= max_bits:
                        raise
                    bits = min(2 * bits, max_bits)
        value = float(omega)
    else:
        if isinstance(omega, str):
            lo, hi, bits = _decimal_bracket(omega)
            value = float(Fraction(omega.strip()))
        elif isinstance(omega, (Fraction, int)):
            lo = hi = Fraction(omega)
            bits = precision_bits
            value = float(lo)
        else:
            value = float(omega)
            bits = precision_bits
            lo, hi = _float_bracket(value, bits)
        _check_unit_interval(lo, hi)
        a = _expand_bracket(lo, hi, n_terms)
    return FrequencyData(value, tuple(a), _convergents(a), bits)


def _check_unit_interval(lo: Fraction, hi: Fraction | None = None):
    hi = lo if hi is None else hi
    if not (0 < lo and hi < 1):
        raise ValueError("frequency must lie in (0, 1)")


class Verdict(str, enum.Enum):
    HOLDS = "holds-on-range"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class DiophantineReport:
    kappa: float
    checked_range: tuple[int, int]
    violations: tuple[int, ...]
    verdict: Verdict
    tail_from: int


def check_diophantine(freq: FrequencyData, kappa: float, n_range: tuple[int, int] | None = None,
                      tail_from: int | None = None, min_tail: int = 2) -> DiophantineReport:
    """Check ``q_{n+1} < q_n^(1+kappa)`` for every n in ``n_range`` (inclusive).

    The verdict only looks at indices ``n >= tail_from`` (default: the upper half of the
    range); it is inconclusive when fewer than ``min_tail`` such indices were checked.
    """
    if freq.n_terms < 3:
        raise ValueError("need at least 3 convergents")
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    lo, hi = n_range if n_range is not None else (1, freq.n_terms - 1)
    if lo < 1 or hi > freq.n_terms - 1 or lo > hi:
        raise ValueError(f"range {lo}..{hi} not covered by {freq.n_terms} quotients")
    violations = tuple(n for n in range(lo, hi + 1)
                       if math.log(freq.q(n + 1)) >= (1 + kappa) * math.log(freq.q(n)))
    if tail_from is None:
        tail_from = lo + (hi - lo + 1) // 2
    tail = range(max(tail_from, lo), hi + 1)
    if len(tail) < min_tail:
        verdict = Verdict.INCONCLUSIVE
    elif any(n >= tail_from for n in violations):
        verdict = Verdict.FAILS
    else:
        verdict = Verdict.HOLDS
    return DiophantineReport(kappa, (lo, hi), violations, verdict, tail_from)


def rotate_orbit(theta, omega, j: int) -> float:
    """theta + j*omega reduced to [0, 1), with the reduction done in exact rationals."""
    x = Fraction(theta) + j * Fraction(omega)
    return float(x - math.floor(x))


def orbit_phases(theta: float, omega: float, j: np.ndarray) -> np.ndarray:
    """Vectorised theta + j*omega mod 1 (float arithmetic; fine for |j| << 1e12)."""
    return np.mod(theta + np.asarray(j, dtype=float) * omega, 1.0)


@dataclass(frozen=True)
class Arc:
    """Half-open arc [start, start + length) on R/Z; may wrap through 0."""

    start: float
    length: float = field(default=1.0)

    def __post_init__(self):
        if not (0 < self.length <= 1):
            raise ValueError("arc length must be in (0, 1]")
        object.__setattr__(self, "start", float(self.start) % 1.0)

    @classmethod
    def between(cls, a: float, b: float) -> "Arc":
        length = (b - a) % 1.0
        return cls(a, length if length > 0 else 1.0)

    @property
    def end(self) -> float:
        return (self.start + self.length) % 1.0

    def contains(self, x):
        return np.mod(np.asarray(x, dtype=float) - self.start, 1.0) < self.length

    def unwrap(self, x):
        """Coordinate of x in [start, start + length), i.e. without the mod-1 jump."""
        return self.start + np.mod(np.asarray(x, dtype=float) - self.start, 1.0)


def orbit_hit_search(theta: float, freq: FrequencyData, arc: Arc, n: int, chunk: int = 1 << 16) -> int:
    """Smallest j in [0, q_n + q_{n-1} - 1] with theta + j*omega in ``arc``."""
    if not 1 <= n <= freq.n_terms:
        raise ValueError(f"index n={n} outside stored convergents")
    qn = freq.q(n)
    if arc.length * qn <= 1:
        raise ValueError(f"arc length {arc.length} is not larger than 1/q_n = 1/{qn}")
    bound = qn + freq.q(n - 1) - 1
    start = 0
    while start <= bound:
        stop = min(bound + 1, start + chunk)
        base = rotate_orbit(theta, freq.omega, start)
        hits = np.flatnonzero(arc.contains(orbit_phases(base, freq.omega, np.arange(stop - start))))
        if hits.size:
            return start + int(hits[0])
        start = stop
    raise HitNotFound(f"no hit in [0, {bound}] for theta={theta!r}, arc={arc}")


def parse_frequency_spec(spec: dict) -> FrequencyLike | tuple[int, ...]:
    """Decode the config form of a frequency.

    ``{kind: quadratic, form: [a, b, d, c]}`` means (a + b*sqrt(d))/c,
    ``{kind: decimal, digits: "0.618..."}``, ``{kind: quotients, a: [...]}``.
    """
    kind = spec.get("kind")
    if kind == "quadratic":
        a, b, d, c = (int(v) for v in spec["form"])
        return QuadraticIrrational(a, b, d, c)
    if kind == "decimal":
        return str(spec["digits"])
    if kind == "quotients":
        return tuple(int(v) for v in spec["a"])
    raise ValueError(f"unknown frequency kind {kind!r}")


def frequency_from_spec(spec: dict, n_terms: int = 40) -> FrequencyData:
    source = parse_frequency_spec(spec)
    if isinstance(source, tuple):
        return FrequencyData.from_quotients(source)
    return expand_continued_fraction(source, n_terms)
