"""Interactions, spin configurations and the character basis.

An interaction is a finite map from site sets ``X`` to couplings ``J(X)``
with Hamiltonian ``H(sigma) = -sum_X J(X) sigma_X``.  It comes in two forms:

* generator form (``lattice is None``): one representative per translation
  orbit, shifted so that its smallest site is the origin;
* instantiated form: explicit couplings on a finite volume.
"""
from __future__ import annotations

import itertools
import json
import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import _backend
from .errors import CapExceeded, InvalidSpec
from .lattice import Lattice, LatticeSpec, SiteSet, as_site, build_lattice, site_set

DEFAULT_ENUMERATION_CAP = 24


def encode_set(X: SiteSet) -> str:
    """Canonical string key, e.g. ``"[[0,0],[0,1]]"``; ``"[]"`` is the empty set."""
    return json.dumps([list(s) for s in X], separators=(",", ":"))


def decode_set(key: str) -> SiteSet:
    return site_set(json.loads(key))


def _normalize_rep(X: SiteSet) -> SiteSet:
    if not X:
        return X
    origin = X[0]
    return tuple(tuple(c - o for c, o in zip(s, origin)) for s in X)


def _span(X: SiteSet) -> tuple[int, ...]:
    if not X:
        return ()
    return tuple(max(col) - min(col) for col in zip(*X))


def as_lattice(lat) -> Lattice:
    if isinstance(lat, Lattice):
        return lat
    if isinstance(lat, LatticeSpec):
        return build_lattice(lat)
    raise InvalidSpec(f"expected a Lattice or LatticeSpec, got {type(lat).__name__}")


class Interaction:
    """Sparse coupling map ``X -> J(X)``.

    Keys are canonical site sets (sorted tuples of site tuples).  Zero
    couplings are kept if given explicitly, so that a Jacobian perturbation
    direction can be represented even when the base coupling vanishes.
    """

    def __init__(self, couplings: Mapping | Iterable = (), *, lattice: LatticeSpec | None = None,
                 translation_invariant: bool | None = None):
        self.lattice = lattice
        if translation_invariant is None:
            translation_invariant = lattice is None or lattice.periodic
        if lattice is None and not translation_invariant:
            raise InvalidSpec("a generator interaction must be translation invariant")
        self.translation_invariant = bool(translation_invariant)
        items = couplings.items() if isinstance(couplings, Mapping) else couplings
        store: dict[SiteSet, float] = {}
        lat = build_lattice(lattice) if lattice is not None else None
        for X, v in items:
            X = site_set(X)
            if lat is not None:
                X = site_set(lat.wrap(s) for s in X)
            elif X:
                X = _normalize_rep(X)
            store[X] = store.get(X, 0.0) + float(v)
        self._c = dict(sorted(store.items()))

    # -- construction helpers
    @classmethod
    def nearest_neighbor(cls, geometry: str, beta: float, field: float = 0.0) -> "Interaction":
        """Generator of the nearest-neighbour Ising model with optional uniform field."""
        d = 1 if geometry == "square_1d" else 2
        origin = (0,) * d
        half = {
            "square_1d": ((1,),),
            "square_2d": ((1, 0), (0, 1)),
            "triangular_2d": ((1, 0), (0, 1), (1, -1)),
        }[geometry]
        c = {(origin, v) if v > origin else (v, origin): beta for v in half}
        if field:
            c[(origin,)] = field
        return cls(c)

    @classmethod
    def zero(cls, lattice: LatticeSpec | None = None) -> "Interaction":
        return cls({}, lattice=lattice)

    # -- mapping protocol
    def __getitem__(self, X) -> float:
        return self._c.get(self._key(X), 0.0)

    def get(self, X, default=0.0) -> float:
        return self._c.get(self._key(X), default)

    def __contains__(self, X) -> bool:
        return self._key(X) in self._c

    def __iter__(self):
        return iter(self._c)

    def __len__(self):
        return len(self._c)

    def items(self):
        return self._c.items()

    def _key(self, X) -> SiteSet:
        X = site_set(X)
        if self.lattice is not None:
            lat = build_lattice(self.lattice)
            return site_set(lat.wrap(s) for s in X)
        return _normalize_rep(X)

    def __repr__(self):
        where = "generator" if self.lattice is None else repr(self.lattice.extent)
        return f"Interaction({len(self._c)} sets, {where})"

    def __eq__(self, other):
        if not isinstance(other, Interaction):
            return NotImplemented
        return (self.lattice == other.lattice and self._c == other._c
                and self.translation_invariant == other.translation_invariant)

    def _combine(self, other: "Interaction", sign: float) -> "Interaction":
        if self.lattice != other.lattice:
            raise InvalidSpec("cannot combine interactions on different volumes")
        out = dict(self._c)
        for X, v in other.items():
            out[X] = out.get(X, 0.0) + sign * v
        return Interaction(out, lattice=self.lattice,
                           translation_invariant=self.translation_invariant and other.translation_invariant)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def scale(self, s: float) -> "Interaction":
        return Interaction({X: s * v for X, v in self.items()}, lattice=self.lattice,
                           translation_invariant=self.translation_invariant)

    def with_coupling(self, X, delta: float) -> "Interaction":
        """Copy with ``delta`` added to the single coupling ``J(X)`` (no translation closure)."""
        out = dict(self._c)
        k = self._key(X)
        out[k] = out.get(k, 0.0) + delta
        ti = self.translation_invariant and self.lattice is None
        return Interaction(out, lattice=self.lattice, translation_invariant=ti)

    def nonconstant(self) -> "Interaction":
        return Interaction({X: v for X, v in self.items() if X}, lattice=self.lattice,
                           translation_invariant=self.translation_invariant)

    def pruned(self, tol: float = 0.0) -> "Interaction":
        return Interaction({X: v for X, v in self.items() if abs(v) > tol}, lattice=self.lattice,
                           translation_invariant=self.translation_invariant)

    @property
    def range(self) -> int:
        """Largest coordinate span of a supported set (periodic minimal image when instantiated)."""
        best = 0
        lat = build_lattice(self.lattice) if self.lattice is not None else None
        for X in self._c:
            if len(X) < 2:
                continue
            if lat is None:
                best = max(best, max(_span(X)))
            else:
                best = max(best, max(lat.sup_distance(s, t) for s in X for t in X))
        return best

    def is_even(self, tol: float = 0.0) -> bool:
        return all(len(X) % 2 == 0 for X, v in self.items() if abs(v) > tol)

    def masks(self, lattice: Lattice) -> tuple[np.ndarray, np.ndarray]:
        """Bit masks and coupling values of an instantiated interaction."""
        if lattice.n > 64:
            raise CapExceeded(f"{lattice.n} sites do not fit a 64-bit configuration mask")
        m = np.array([lattice.mask(X) for X in self._c], dtype=np.uint64)
        v = np.array(list(self._c.values()), dtype=np.float64)
        return m, v

    # -- serialization
    def to_dict(self) -> dict:
        return {
            "lattice": None if self.lattice is None else self.lattice.to_dict(),
            "translation_invariant": self.translation_invariant,
            "couplings": {encode_set(X): v for X, v in self.items()},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data: Mapping) -> "Interaction":
        lat = data.get("lattice")
        spec = LatticeSpec.from_dict(lat) if lat is not None else None
        couplings = {decode_set(k): float(v) for k, v in data.get("couplings", {}).items()}
        return cls(couplings, lattice=spec, translation_invariant=data.get("translation_invariant"))

    @classmethod
    def from_json(cls, text: str) -> "Interaction":
        return cls.from_dict(json.loads(text))


def norm(J: Interaction) -> float:
    """Sum of ``|J(X)|`` over the sets containing the origin."""
    if not J.translation_invariant:
        raise InvalidSpec("norm is defined for translation-invariant interactions only")
    if J.lattice is None:
        # each orbit representative X has |X| translates through the origin
        return math.fsum(abs(v) * len(X) for X, v in J.items())
    origin = (0,) * J.lattice.d
    return math.fsum(abs(v) for X, v in J.items() if origin in X)


class SpinConfig:
    """Assignment of +-1 to every site of a volume, in canonical site order."""

    __slots__ = ("lattice", "values")

    def __init__(self, lattice, values):
        self.lattice = as_lattice(lattice)
        if isinstance(values, Mapping):
            values = [values[s] for s in self.lattice.sites]
        arr = np.asarray(values, dtype=np.int8).reshape(-1)
        if arr.shape[0] != self.lattice.n:
            raise InvalidSpec(f"need {self.lattice.n} spins, got {arr.shape[0]}")
        if not np.all(np.abs(arr) == 1):
            raise InvalidSpec("spins must be +1 or -1")
        self.values = arr

    @classmethod
    def from_int(cls, lattice, code: int) -> "SpinConfig":
        lat = as_lattice(lattice)
        bits = (int(code) >> np.arange(lat.n)) & 1
        return cls(lat, 1 - 2 * bits)

    @classmethod
    def uniform(cls, lattice, value: int = 1) -> "SpinConfig":
        lat = as_lattice(lattice)
        return cls(lat, np.full(lat.n, value))

    def to_int(self) -> int:
        return int(sum(1 << k for k, v in enumerate(self.values) if v < 0))

    def __getitem__(self, site) -> int:
        return int(self.values[self.lattice.index[self.lattice.wrap(as_site(site))]])

    def char(self, X) -> int:
        """``sigma_X``, the product of spins over ``X`` (1 for the empty set)."""
        out = 1
        for s in X:
            out *= self[s]
        return out

    def __eq__(self, other):
        return (isinstance(other, SpinConfig) and self.lattice.spec == other.lattice.spec
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"SpinConfig({''.join('+' if v > 0 else '-' for v in self.values)})"


def energy(J: Interaction, sigma: SpinConfig) -> float:
    """``H(sigma) = -sum_X J(X) sigma_X``, summed in canonical set order."""
    lat = sigma.lattice
    if J.lattice is None:
        J = instantiate(J, lat.spec)
    elif J.lattice != lat.spec:
        if J.lattice.extent != lat.spec.extent or J.lattice.geometry != lat.spec.geometry:
            raise InvalidSpec("interaction and configuration live on different volumes")
    terms = []
    for X, v in J.items():
        for s in X:
            if not lat.contains(s):
                raise InvalidSpec(f"set {X} leaves the volume")
        terms.append(v * sigma.char(X))
    return -math.fsum(terms)


def instantiate(J: Interaction, spec: LatticeSpec) -> Interaction:
    """Place a generator interaction on a finite volume.

    periodic: every translate, wrapped; free: translates fully inside;
    fixed: translates meeting the volume with outside spins replaced by tau.
    """
    if J.lattice is not None:
        raise InvalidSpec("instantiate expects a generator interaction")
    lat = build_lattice(spec)
    out: dict[SiteSet, float] = {}

    def add(X, v):
        out[X] = out.get(X, 0.0) + v

    for X, v in J.items():
        if not X:
            add((), v * lat.n)
            continue
        if len(X[0]) != lat.d:
            raise InvalidSpec(f"set {X} has wrong dimension for {spec.geometry}")
        if spec.periodic:
            for e, sp in zip(spec.extent, _span(X)):
                if 2 * sp > e:
                    raise InvalidSpec(f"range {sp} too large for periodic extent {e}")
            for t in lat.sites:
                Y = [lat.translate(s, t) for s in X]
                if len(set(Y)) != len(Y):
                    raise InvalidSpec(f"translate of {X} wraps onto itself in extent {spec.extent}")
                add(site_set(Y), v)
        elif spec.boundary == "free":
            for t in lat.sites:
                Y = [tuple(a + b for a, b in zip(s, t)) for s in X]
                if all(lat.contains(s) for s in Y):
                    add(site_set(Y), v)
        else:
            shifts = {tuple(a - b for a, b in zip(site, x)) for site in lat.sites for x in X}
            for t in sorted(shifts):
                Y = [tuple(a + b for a, b in zip(s, t)) for s in X]
                inside = [s for s in Y if lat.contains(s)]
                if not inside:
                    continue
                sign = 1
                for s in Y:
                    if not lat.contains(s):
                        sign *= spec.boundary_spin(s)
                add(site_set(inside), sign * v)
    return Interaction(out, lattice=spec, translation_invariant=spec.periodic)


class SpinFunction:
    """Function of the spins on a finite site set, stored in the character basis.

    ``f(sigma) = sum_A coeffs[A] * sigma_A`` with ``A`` ranging over subsets of
    ``support``.
    """

    def __init__(self, coeffs: Mapping, support: Iterable | None = None):
        c: dict[SiteSet, float] = {}
        for A, v in coeffs.items():
            A = site_set(A)
            c[A] = c.get(A, 0.0) + float(v)
        self.coeffs = dict(sorted(c.items()))
        sup = set(itertools.chain.from_iterable(self.coeffs))
        if support is not None:
            given = set(site_set(support))
            if not sup <= given:
                raise InvalidSpec("coefficient set outside the declared support")
            sup = given
        self.support: SiteSet = tuple(sorted(sup))

    def __getitem__(self, A) -> float:
        return self.coeffs.get(site_set(A), 0.0)

    def __call__(self, sigma) -> float:
        return self.evaluate(sigma)

    def evaluate(self, sigma) -> float:
        """Evaluate at a mapping site -> spin (or a :class:`SpinConfig`)."""
        get = sigma.__getitem__
        terms = []
        for A, v in self.coeffs.items():
            s = 1
            for x in A:
                s *= get(x)
            terms.append(v * s)
        return math.fsum(terms)

    def to_array(self, sites: Sequence | None = None) -> np.ndarray:
        """Values on all ``2**len(sites)`` bit-encoded configurations of ``sites``."""
        sites = self.support if sites is None else tuple(as_site(s) for s in sites)
        pos = {s: k for k, s in enumerate(sites)}
        n = len(sites)
        coef = np.zeros(1 << n)
        for A, v in self.coeffs.items():
            try:
                m = sum(1 << pos[x] for x in A)
            except KeyError as e:
                raise InvalidSpec(f"site {e.args[0]} not among the evaluation sites") from None
            coef[m] += v
        return _backend.fwht(coef)

    def sup_norm(self) -> float:
        if not self.coeffs:
            return 0.0
        return float(np.max(np.abs(self.to_array())))

    def pruned(self, tol: float) -> "SpinFunction":
        return SpinFunction({A: v for A, v in self.coeffs.items() if abs(v) > tol})

    def __add__(self, other: "SpinFunction") -> "SpinFunction":
        c = dict(self.coeffs)
        for A, v in other.coeffs.items():
            c[A] = c.get(A, 0.0) + v
        return SpinFunction(c, set(self.support) | set(other.support))

    def __repr__(self):
        return f"SpinFunction({len(self.coeffs)} terms on {len(self.support)} sites)"


def character_expand(f: Callable | np.ndarray, sites: Sequence, cap: int = 20,
                     tol: float = 0.0) -> SpinFunction:
    """Character coefficients ``2^-|S| sum_sigma f(sigma) sigma_A`` of ``f`` on ``sites``.

    ``f`` is either an array of ``2**len(sites)`` values indexed by the bit
    encoding (bit ``k`` set means ``sites[k]`` is -1), or a callable taking
    a tuple of spins aligned with ``sites``.
    """
    sites = tuple(as_site(s) for s in sites)
    n = len(sites)
    if n > cap:
        raise CapExceeded(f"character expansion over {n} sites exceeds cap {cap}")
    if callable(f):
        vals = np.array([f(tuple(1 - 2 * ((c >> k) & 1) for k in range(n))) for c in range(1 << n)],
                        dtype=np.float64)
    else:
        vals = np.array(f, dtype=np.float64).reshape(-1)
        if vals.shape[0] != 1 << n:
            raise InvalidSpec(f"need {1 << n} values, got {vals.shape[0]}")
    coef = _backend.fwht(vals) / float(1 << n)
    out = {}
    for m in np.flatnonzero(np.abs(coef) > tol) if tol > 0 else np.flatnonzero(coef):
        out[tuple(sites[k] for k in range(n) if (m >> k) & 1)] = float(coef[m])
    return SpinFunction(out, sites)
