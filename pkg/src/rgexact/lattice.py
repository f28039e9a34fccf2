"""Finite lattice geometry, RG/L-block schemes and bar-lattice distances.

Sites are integer coordinate tuples, ``(i,)`` in one dimension and ``(i, j)``
in two.  The canonical order of sites is row-major lexicographic, which is
also the bit order used by every enumeration in the package (site ``k`` of
``Lattice.sites`` is bit ``k`` of a configuration integer).
"""
from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import InvalidSpec

Site = tuple[int, ...]
SiteSet = tuple[Site, ...]
BlockSite = tuple[int, ...]

GEOMETRIES = ("square_1d", "square_2d", "triangular_2d")
BOUNDARIES = ("free", "periodic", "fixed")

_NEIGHBOR_VECTORS = {
    "square_1d": ((1,), (-1,)),
    "square_2d": ((1, 0), (-1, 0), (0, 1), (0, -1)),
    "triangular_2d": ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1)),
}
_SQRT3_2 = math.sqrt(3.0) / 2.0


def as_site(x) -> Site:
    """Normalize an int or coordinate sequence to a site tuple."""
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return (int(x),)
    return tuple(int(c) for c in x)


def site_set(sites: Iterable) -> SiteSet:
    """Canonical (sorted, duplicate-free) site set."""
    out = sorted(as_site(s) for s in sites)
    for u, v in zip(out, out[1:]):
        if u == v:
            raise InvalidSpec(f"duplicate site {u} in site set")
    return tuple(out)


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry, extent and boundary condition of a finite volume.

    ``tau`` is only used with ``boundary="fixed"``: either a single spin
    applied to every outside site, or a mapping from outside sites to spins.
    """

    geometry: str
    extent: tuple[int, ...]
    boundary: str = "periodic"
    tau: int | tuple[tuple[Site, int], ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "extent", tuple(int(e) for e in self.extent))
        if isinstance(self.tau, Mapping):
            items = tuple(sorted((as_site(k), int(v)) for k, v in self.tau.items()))
            object.__setattr__(self, "tau", items)
        if self.geometry not in GEOMETRIES:
            raise InvalidSpec(f"unknown geometry {self.geometry!r}")
        if self.boundary not in BOUNDARIES:
            raise InvalidSpec(f"unknown boundary {self.boundary!r}")
        d = 1 if self.geometry == "square_1d" else 2
        if len(self.extent) != d:
            raise InvalidSpec(f"{self.geometry} needs {d} extents, got {self.extent}")
        if any(e < 1 for e in self.extent):
            raise InvalidSpec(f"extents must be >= 1, got {self.extent}")
        if self.boundary == "fixed" and self.tau is None:
            raise InvalidSpec("fixed boundary requires boundary spins tau")

    @property
    def d(self) -> int:
        return len(self.extent)

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    def boundary_spin(self, site: Site) -> int:
        if isinstance(self.tau, int):
            return 1 if self.tau >= 0 else -1
        if self.tau is not None:
            for s, v in self.tau:
                if s == site:
                    return v
        raise InvalidSpec(f"fixed boundary has no spin for outside site {site}")

    def with_boundary(self, boundary: str, tau=None) -> "LatticeSpec":
        return LatticeSpec(self.geometry, self.extent, boundary, tau)

    def to_dict(self) -> dict:
        out = {"geometry": self.geometry, "extent": list(self.extent), "boundary": self.boundary}
        if isinstance(self.tau, int):
            out["tau"] = self.tau
        elif self.tau is not None:
            out["tau"] = [[list(s), v] for s, v in self.tau]
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "LatticeSpec":
        tau = data.get("tau")
        if isinstance(tau, list):
            tau = {as_site(s): int(v) for s, v in tau}
        return cls(data["geometry"], tuple(data["extent"]), data.get("boundary", "periodic"), tau)


class Lattice:
    """Site enumeration and metric for a :class:`LatticeSpec`."""

    def __init__(self, spec: LatticeSpec):
        self.spec = spec
        self.geometry = spec.geometry
        self.extent = spec.extent
        self.d = spec.d
        self.periodic = spec.periodic
        self.sites: tuple[Site, ...] = tuple(itertools.product(*(range(e) for e in spec.extent)))
        self.index: dict[Site, int] = {s: k for k, s in enumerate(self.sites)}
        self.n = len(self.sites)
        if spec.boundary == "fixed":
            for s in self.outer_boundary():
                spec.boundary_spin(s)

    def __repr__(self):
        return f"Lattice({self.geometry}, {self.extent}, {self.spec.boundary})"

    def neighbor_vectors(self) -> tuple[Site, ...]:
        return _NEIGHBOR_VECTORS[self.geometry]

    def contains(self, site: Site) -> bool:
        return all(0 <= c < e for c, e in zip(site, self.extent))

    def wrap(self, site: Site) -> Site:
        """Reduce coordinates modulo the extent (periodic) or validate (otherwise)."""
        site = as_site(site)
        if self.periodic:
            return tuple(c % e for c, e in zip(site, self.extent))
        if not self.contains(site):
            raise InvalidSpec(f"site {site} outside volume {self.extent}")
        return site

    def translate(self, site: Site, shift: Sequence[int]) -> Site:
        return self.wrap(tuple(c + s for c, s in zip(site, shift)))

    def neighbors(self, site: Site) -> list[Site]:
        out = []
        for v in self.neighbor_vectors():
            t = tuple(c + dv for c, dv in zip(site, v))
            if self.periodic:
                t = self.wrap(t)
            elif not self.contains(t):
                continue
            if t != site and t not in out:
                out.append(t)
        return out

    def outer_boundary(self) -> list[Site]:
        """Sites outside the volume adjacent to it (non-periodic boundaries)."""
        if self.periodic:
            return []
        out = set()
        for s in self.sites:
            for v in self.neighbor_vectors():
                t = tuple(c + dv for c, dv in zip(s, v))
                if not self.contains(t):
                    out.add(t)
        return sorted(out)

    def embed(self, delta: Sequence[float]) -> tuple[float, ...]:
        if self.geometry == "triangular_2d":
            x, y = delta
            return (x + 0.5 * y, _SQRT3_2 * y)
        return tuple(float(c) for c in delta)

    def displacement(self, s: Site, t: Site) -> tuple[int, ...]:
        """Integer displacement t - s, minimal image under periodic wrap."""
        delta = [b - a for a, b in zip(s, t)]
        if not self.periodic:
            return tuple(delta)
        choices = [(dc % e, dc % e - e) for dc, e in zip(delta, self.extent)]
        return min(itertools.product(*choices), key=lambda v: math.hypot(*self.embed(v)))

    def distance(self, s: Site, t: Site) -> float:
        """Euclidean distance, minimized over periodic images."""
        return math.hypot(*self.embed(self.displacement(as_site(s), as_site(t))))

    def sup_distance(self, s: Site, t: Site) -> int:
        """Chebyshev distance on coordinates, minimized over periodic images."""
        delta = [b - a for a, b in zip(s, t)]
        if self.periodic:
            delta = [min(dc % e, -dc % e) for dc, e in zip(delta, self.extent)]
        return max(abs(dc) for dc in delta)

    def mask(self, sites: Iterable[Site]) -> int:
        m = 0
        for s in sites:
            m |= 1 << self.index[self.wrap(s)]
        return m


@functools.lru_cache(maxsize=256)
def build_lattice(spec: LatticeSpec) -> Lattice:
    """Build (and cache) the canonical site enumeration and metric for ``spec``."""
    return Lattice(spec)


@dataclass(frozen=True)
class BlockScheme:
    """RG block spacing ``b``, L-block side ``L`` and connectivity distance ``a``.

    ``a`` is measured in units of L-blocks on the bar lattice.  A scheme is
    *attached* to a lattice with :meth:`attach`, which checks commensurability.
    """

    b: int = 2
    L: int = 2
    a: float = 3
    d: int | None = None
    lattice: LatticeSpec | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.b < 1 or self.L < 1:
            raise InvalidSpec("b and L must be positive")
        if self.a < 1:
            raise InvalidSpec("a must be >= 1")
        if self.L % self.b:
            raise InvalidSpec(f"RG block spacing b={self.b} must divide L={self.L}")

    @property
    def p(self) -> int:
        return 3 ** self.dim

    @property
    def dim(self) -> int:
        if self.d is not None:
            return self.d
        if self.lattice is not None:
            return self.lattice.d
        raise InvalidSpec("dimension unknown: attach the scheme to a lattice")

    def attach(self, spec: LatticeSpec) -> "BlockScheme":
        if spec.geometry == "triangular_2d":
            raise InvalidSpec("L-block schemes are defined for square geometries only")
        for e in spec.extent:
            if e % self.L:
                raise InvalidSpec(f"L={self.L} must divide every extent, got {spec.extent}")
        return BlockScheme(self.b, self.L, self.a, spec.d, spec)

    def _require_lattice(self) -> LatticeSpec:
        if self.lattice is None:
            raise InvalidSpec("block scheme is not attached to a lattice")
        return self.lattice

    @property
    def bar_extent(self) -> tuple[int, ...]:
        return tuple(e // self.L for e in self._require_lattice().extent)

    @property
    def bar_sites(self) -> tuple[BlockSite, ...]:
        return tuple(itertools.product(*(range(e) for e in self.bar_extent)))

    def block_of(self, site: Site) -> BlockSite:
        spec = self._require_lattice()
        site = as_site(site)
        if not all(0 <= c < e for c, e in zip(site, spec.extent)):
            raise InvalidSpec(f"site {site} outside volume {spec.extent}")
        return tuple(c // self.L for c in site)

    def interior(self, y: BlockSite) -> SiteSet:
        """The L^d sites of L-block ``y``."""
        return tuple(itertools.product(*(range(c * self.L, (c + 1) * self.L) for c in y)))

    def bar_distance(self, y: BlockSite, z: BlockSite) -> float:
        delta = [b - a for a, b in zip(y, z)]
        if self._require_lattice().periodic:
            delta = [min(dc % e, -dc % e) for dc, e in zip(delta, self.bar_extent)]
        return math.hypot(*delta)

    def set_distance(self, ys: Iterable[BlockSite], zs: Iterable[BlockSite]) -> float:
        zs = list(zs)
        return min(self.bar_distance(y, z) for y in ys for z in zs)


def bar_map(X: Iterable, scheme: BlockScheme) -> frozenset[BlockSite]:
    """L-blocks having non-empty intersection with the site set ``X``."""
    return frozenset(scheme.block_of(s) for s in X)


def block_type(y: BlockSite, d: int | None = None) -> int:
    """Checkerboard type ``1 + sum_k (y_k mod 2) 2^k`` in ``1..2^d``."""
    y = as_site(y)
    if d is not None and len(y) != d:
        raise InvalidSpec(f"block site {y} is not {d}-dimensional")
    return 1 + sum((c % 2) << k for k, c in enumerate(y))


def l_distance(W: Iterable, Z: Iterable, scheme: BlockScheme) -> float:
    """Distance between the L-block images of two non-empty site sets."""
    wb, zb = bar_map(W, scheme), bar_map(Z, scheme)
    if not wb or not zb:
        raise InvalidSpec("l_distance needs non-empty site sets")
    if wb & zb:
        return 0.0
    return scheme.set_distance(wb, zb)


def connected_components(barsets: Sequence[frozenset], scheme: BlockScheme) -> list[list[int]]:
    """Index components of bar-sets under the relation 'within distance a'."""
    n = len(barsets)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if find(i) != find(j) and scheme.set_distance(barsets[i], barsets[j]) <= scheme.a:
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values())


def l_connected(links: Sequence[Iterable], scheme: BlockScheme) -> list[tuple[SiteSet, ...]]:
    """Partition links (site sets) into L-connected components.

    Components and the links inside them are returned in canonical order, so
    the result does not depend on the order of ``links``.
    """
    canon = sorted({site_set(link) for link in links})
    comps = connected_components([bar_map(link, scheme) for link in canon], scheme)
    return sorted(tuple(canon[i] for i in comp) for comp in comps)
