"""Exact counting of rooted L-connected hypergraphs and the bounds built on it.

Series coefficients are exact :class:`fractions.Fraction` values so that the
recursion and the Lagrange inversion formula can be compared term by term.
"""
from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .errors import CapExceeded, DivergentExpansion, InvalidSpec
from .lattice import BlockScheme, bar_map, connected_components

MAX_SERIES_TERMS = 64


def _fraction(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**12) if not x.is_integer() else Fraction(int(x))
    return Fraction(x)


@dataclass(frozen=True)
class CountingParams:
    p: int
    r: int = 1
    c_link: int = 1
    M: Fraction = Fraction(2)

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise InvalidSpec(f"p must be a positive integer, got {self.p}")
        if self.r < 1 or self.c_link < 1:
            raise InvalidSpec("r and c_link must be positive integers")
        object.__setattr__(self, "M", _fraction(self.M))
        if self.M <= 1:
            raise InvalidSpec("M must exceed 1")

    @property
    def rc(self) -> int:
        return self.r * self.c_link

    def _require_p2(self):
        if self.p < 2:
            raise InvalidSpec("p = 1 is degenerate; need p >= 2")


@dataclass(frozen=True)
class SeriesCoeffs:
    """Coefficients ``a_1 .. a_n`` of ``w(z)``; ``values[k]`` is ``a_{k+1}``."""

    params: CountingParams
    values: tuple[Fraction, ...]

    def __getitem__(self, n: int) -> Fraction:
        if n < 1:
            raise IndexError("coefficients start at n = 1")
        return self.values[n - 1]

    def __len__(self):
        return len(self.values)

    def partial_sum(self, z) -> Fraction:
        z = Fraction(z)
        return sum((a * z ** (k + 1) for k, a in enumerate(self.values)), Fraction(0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "numerator", "denominator", "value"])
        for k, a in enumerate(self.values, start=1):
            w.writerow([k, a.numerator, a.denominator, repr(float(a))])
        return buf.getvalue()


def _check_n(n_max: int):
    if n_max < 1:
        raise InvalidSpec("n_max must be at least 1")
    if n_max > MAX_SERIES_TERMS:
        raise CapExceeded(f"n_max={n_max} exceeds {MAX_SERIES_TERMS}")


def recursion_coeffs(params: CountingParams, n_max: int) -> SeriesCoeffs:
    """``a_n = rc sum_k C(p,k) sum_{n_1+..+n_k = n-1} prod a_{n_i}`` over ordered compositions."""
    _check_n(n_max)
    p, rc = params.p, params.rc
    a = [Fraction(0)] * (n_max + 1)
    # powers[k][m] = sum over ordered k-compositions of m of prod a_{n_i}
    powers = [[Fraction(0)] * (n_max + 1) for _ in range(p + 1)]
    powers[0][0] = Fraction(1)
    for n in range(1, n_max + 1):
        m = n - 1
        a[n] = rc * sum((math.comb(p, k) * powers[k][m] for k in range(p + 1)), Fraction(0))
        for k in range(1, p + 1):
            powers[k][n] = sum((a[j] * powers[k - 1][n - j] for j in range(1, n + 1)), Fraction(0))
    return SeriesCoeffs(params, tuple(a[1:]))


def lagrange_coeffs(params: CountingParams, n_max: int) -> SeriesCoeffs:
    """Inversion of ``w = rc z (1+w)^p``: ``a_n = rc^n C(pn, n-1) / n``."""
    _check_n(n_max)
    p, rc = params.p, params.rc
    return SeriesCoeffs(params, tuple(Fraction(rc ** n * math.comb(p * n, n - 1), n) for n in range(1, n_max + 1)))


@dataclass(frozen=True)
class RadiusBound:
    radius: Fraction
    bound_n: Fraction


def radius_and_bound(params: CountingParams, n: int) -> RadiusBound:
    params._require_p2()
    p, rc = params.p, params.rc
    radius = Fraction((p - 1) ** (p - 1), rc * p ** p)
    bound = Fraction((rc * p ** p) ** n, (p - 1) ** (1 + (p - 1) * n))
    return RadiusBound(radius, bound)


def _x(params: CountingParams, eps) -> Fraction | float:
    p = params.p
    if isinstance(eps, float):
        return params.rc * float(params.M * p) ** p * eps / (p - 1) ** (p - 1)
    return params.rc * (params.M * p) ** p * Fraction(eps) / (p - 1) ** (p - 1)


def epsilon_threshold(params: CountingParams) -> float:
    """Largest ``eps`` for which the summed polymer tail stays below ``log M``."""
    params._require_p2()
    p, lm = params.p, math.log(params.M)
    return lm * (p - 1) ** p / (params.rc * float(params.M * p) ** p * (1 + (p - 1) * lm))


def divergence_point(params: CountingParams) -> Fraction:
    params._require_p2()
    p = params.p
    return Fraction((p - 1) ** (p - 1)) / (params.rc * (params.M * p) ** p)


def tail_sum(params: CountingParams, eps) -> float:
    """Closed form of ``sum_n a_n (M^p eps)^n`` under the explicit coefficient bound."""
    params._require_p2()
    if eps < 0:
        raise InvalidSpec("eps must be non-negative")
    x = _x(params, eps)
    if x >= 1:
        raise DivergentExpansion(f"eps={float(eps):.6g} is at or beyond the divergence point")
    return float(x) / ((params.p - 1) * (1 - float(x)))


def delta_tail(params: CountingParams, eps, P: float) -> float:
    """Tail ``delta(P) = x^{P/p} / ((p-1)(1-x))`` of polymer sums over supports larger than ``P``."""
    params._require_p2()
    x = _x(params, eps)
    if x >= 1:
        raise DivergentExpansion("x >= 1: expansion divergent")
    if x == 0:
        return 0.0
    p = params.p
    if isinstance(x, Fraction) and Fraction(P) % p == 0:
        return float(x ** int(Fraction(P) / p) / ((p - 1) * (1 - x)))
    return float(x) ** (P / p) / ((p - 1) * (1 - float(x)))


def pinned_delta(params: CountingParams, eps, P: float, pins: int) -> float:
    """``|Y| delta(P)``: the tail with one of ``|Y|`` pinned sites in the support."""
    return pins * delta_tail(params, eps, P)


def delta_function(params: CountingParams, eps) -> Callable[[float], float]:
    """``P -> delta(P)`` for the band-bound evaluator; checks convergence up front."""
    if _x(params, eps) >= 1:
        raise DivergentExpansion("x >= 1: expansion divergent")
    return lambda P: delta_tail(params, eps, P)


# -- exhaustive counting --------------------------------------------------


def instance_constants(family: Sequence[Iterable], scheme: BlockScheme) -> tuple[int, int]:
    """``(r, c_link)`` of a link family: bar sites within ``a`` of a site, and links per bar site."""
    bars = [bar_map(link, scheme) for link in family]
    sites = scheme.bar_sites
    r = max(sum(1 for z in sites if scheme.bar_distance(y, z) <= scheme.a) for y in sites)
    c = max((sum(1 for b in bars if z in b) for z in sites), default=0)
    return r, max(c, 1)


def rooted_count_exact(family: Sequence[Iterable], root, n: int, scheme: BlockScheme) -> int:
    """Number of ``n``-link L-connected sets from ``family`` lying within ``a`` of ``root``."""
    if len(family) > 12:
        raise CapExceeded(f"link family of {len(family)} exceeds 12")
    if n > 4:
        raise CapExceeded("exhaustive counting limited to n <= 4")
    if n < 1:
        raise InvalidSpec("n must be at least 1")
    root = tuple(root)
    bars = [bar_map(link, scheme) for link in family]
    count = 0
    for sub in itertools.combinations(range(len(bars)), n):
        chosen = [bars[i] for i in sub]
        if len(connected_components(chosen, scheme)) != 1:
            continue
        if scheme.set_distance([root], frozenset().union(*chosen)) <= scheme.a:
            count += 1
    return count


def rooted_counts(family: Sequence[Iterable], n: int, scheme: BlockScheme) -> int:
    """``a_n = sup_y a_n(y)`` over every bar site."""
    return max(rooted_count_exact(family, y, n, scheme) for y in scheme.bar_sites)
