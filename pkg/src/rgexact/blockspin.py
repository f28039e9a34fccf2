"""Block-spin probability kernels and the geometry of RG blocks."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidSpec
from .lattice import Lattice, LatticeSpec, build_lattice

KERNEL_KINDS = ("decimation", "kadanoff", "majority", "trivial")


@dataclass(frozen=True)
class Kernel:
    """A block-factorized RG kernel.

    ``trivial`` has no block spins at all; it turns the constrained measure
    into the plain Gibbs measure and is useful as a reference.
    """

    kind: str
    b: int = 2
    kappa: float | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise InvalidSpec(f"unknown kernel {self.kind!r}")
        if self.b < 1:
            raise InvalidSpec("block spacing b must be positive")
        if self.kind == "kadanoff":
            if self.kappa is None or not self.kappa > 0:
                raise InvalidSpec("kadanoff kernel needs kappa > 0")
            object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def deterministic(self) -> bool:
        return self.kind in ("decimation", "trivial")

    def log_table(self, block_size: int) -> np.ndarray:
        """``log t(S, s')`` indexed by ``[k, bit]`` where ``k`` spins of the block are -1.

        Row ``k`` has block sum ``S = block_size - 2k``; column 0 is
        ``s' = +1`` and column 1 is ``s' = -1``.
        """
        k = np.arange(block_size + 1)
        S = (block_size - 2 * k).astype(float)
        out = np.empty((block_size + 1, 2))
        if self.kind == "kadanoff":
            a = self.kappa * S
            # log(2 cosh a) computed without overflow
            lc = np.logaddexp(a, -a)
            out[:, 0] = a - lc
            out[:, 1] = -a - lc
        elif self.kind == "majority":
            with np.errstate(divide="ignore"):
                out[:, 0] = np.where(S > 0, 0.0, np.where(S < 0, -np.inf, -math.log(2)))
                out[:, 1] = np.where(S < 0, 0.0, np.where(S > 0, -np.inf, -math.log(2)))
        else:
            raise InvalidSpec(f"{self.kind} kernel has no block-sum table")
        return out

    def factor(self, block_spins, sp: int) -> float:
        """Kernel factor of a single block given its spins and the block spin ``sp``."""
        if self.kind == "decimation":
            return 1.0 if block_spins[0] == sp else 0.0
        S = int(sum(block_spins))
        if self.kind == "kadanoff":
            return math.exp(self.kappa * sp * S) / (2.0 * math.cosh(self.kappa * S))
        if self.kind == "majority":
            if S == 0:
                return 0.5
            return 1.0 if (S > 0) == (sp > 0) else 0.0
        raise InvalidSpec("trivial kernel has no blocks")

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "b": self.b}
        if self.kappa is not None:
            out["kappa"] = self.kappa
        return out

    @classmethod
    def from_dict(cls, data) -> "Kernel":
        return cls(data["kind"], int(data.get("b", 2)), data.get("kappa"))


class BlockMap:
    """RG blocks of a kernel on a concrete volume.

    ``blocks[j]`` lists the site indices of block ``j`` with the kept
    (decimation) site first; block ``j`` carries image site ``image.sites[j]``.
    Square lattices use ``b^d`` cubes; the triangular lattice uses upward
    3-site triangles whose image sites are labelled by block index.
    """

    def __init__(self, spec: LatticeSpec, kernel: Kernel):
        self.spec = spec
        self.kernel = kernel
        self.lattice: Lattice = build_lattice(spec)
        if kernel.kind == "trivial":
            self.blocks: tuple[tuple[int, ...], ...] = ()
            self.image: LatticeSpec | None = None
        elif spec.geometry == "triangular_2d":
            self._triangles()
        else:
            self._cubes()
        self.n_image = len(self.blocks)

    def _cubes(self):
        b = self.kernel.b
        spec, lat = self.spec, self.lattice
        for e in spec.extent:
            if e % b:
                raise InvalidSpec(f"block spacing b={b} does not divide extent {spec.extent}")
        img_extent = tuple(e // b for e in spec.extent)
        boundary = "periodic" if spec.periodic else "free"
        self.image = LatticeSpec(spec.geometry, img_extent, boundary)
        blocks = []
        for j in itertools.product(*(range(e) for e in img_extent)):
            base = tuple(b * c for c in j)
            sites = [tuple(x + o for x, o in zip(base, off))
                     for off in itertools.product(range(b), repeat=spec.d)]
            blocks.append(tuple(lat.index[s] for s in sites))
        self.blocks = tuple(blocks)

    def _triangles(self):
        spec, lat = self.spec, self.lattice
        if self.kernel.b != 3:
            raise InvalidSpec("triangular blocks are 3-site triangles; use b=3")
        ex, ey = spec.extent
        if spec.periodic and (ex % 3 or ey % 3):
            raise InvalidSpec("periodic triangular blocks need extents divisible by 3")
        blocks = []
        covered = set()
        for x, y in lat.sites:
            if (x + 2 * y) % 3:
                continue
            tri = [(x, y), (x + 1, y), (x, y + 1)]
            if spec.periodic:
                tri = [lat.wrap(s) for s in tri]
            elif not all(lat.contains(s) for s in tri):
                continue
            blocks.append(tuple(lat.index[s] for s in tri))
            covered.update(tri)
        if len(covered) != lat.n:
            raise InvalidSpec(f"triangular blocks do not tile extent {spec.extent}")
        self.blocks = tuple(blocks)
        self.image = LatticeSpec("square_1d", (len(blocks),), "free")

    @cached_property
    def image_lattice(self) -> Lattice | None:
        return None if self.image is None else build_lattice(self.image)

    @cached_property
    def block_masks(self) -> np.ndarray:
        return np.array([sum(1 << i for i in blk) for blk in self.blocks], dtype=np.uint64)

    @cached_property
    def kept(self) -> tuple[int, ...]:
        return tuple(blk[0] for blk in self.blocks)

    @property
    def block_size(self) -> int:
        return len(self.blocks[0]) if self.blocks else 0


def kernel_eval(T: Kernel, sigma, sigma_prime) -> float:
    """``T(sigma, sigma')`` as the product of per-block factors."""
    bm = BlockMap(sigma.lattice.spec, T)
    if T.kind == "trivial":
        return 1.0
    if sigma_prime.lattice.spec != bm.image:
        raise InvalidSpec("image configuration does not match the block geometry")
    out = 1.0
    for blk, sp in zip(bm.blocks, sigma_prime.values):
        out *= T.factor([int(sigma.values[i]) for i in blk], int(sp))
        if out == 0.0:
            break
    return out


def kernel_normalization(T: Kernel, spec: LatticeSpec, max_sites: int = 20) -> np.ndarray:
    """``sum_{sigma'} T(sigma, sigma')`` for every configuration ``sigma`` of the volume.

    The image sum is carried out explicitly, one term per image
    configuration, vectorized over ``sigma``.
    """
    bm = BlockMap(spec, T)
    n = bm.lattice.n
    if n > max_sites:
        raise InvalidSpec(f"{n} sites above the normalization check limit {max_sites}")
    if T.kind == "trivial":
        return np.ones(1 << n)
    c = np.arange(1 << n, dtype=np.uint64)
    if T.kind == "decimation":
        stats = [((c >> np.uint64(blk[0])) & np.uint64(1)).astype(np.int64) for blk in bm.blocks]
        tables = [np.array([[1.0, 0.0], [0.0, 1.0]])] * len(stats)
    else:
        stats = [np.bitwise_count(c & m).astype(np.int64) for m in bm.block_masks]
        tables = [np.exp(T.log_table(len(blk))) for blk in bm.blocks]
    factors = [[tab[st, 0], tab[st, 1]] for st, tab in zip(stats, tables)]
    total = np.zeros(1 << n)
    # depth-first over image spins; partial products are shared between image configurations
    stack = [(0, np.ones(1 << n))]
    while stack:
        j, prod = stack.pop()
        if j == len(factors):
            total += prod
            continue
        stack.append((j + 1, prod * factors[j][1]))
        stack.append((j + 1, prod * factors[j][0]))
    return total
