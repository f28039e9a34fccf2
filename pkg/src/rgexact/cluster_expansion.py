"""Type-ordered L-block summation, polymer activities and cluster weights.

Functions of spins are kept as character coefficients keyed by bit masks
over the sites of the volume (bit ``k`` is ``lattice.sites[k]``).  The RG
kernel enters as an a-priori measure on each L-block, so a decimation
kernel simply pins the kept spins.

Stage ``i`` sums the spins of every type-``i`` L-block against the
short-range part of the previous stage; coefficients whose support has
sup-norm diameter larger than ``L`` are long range, are set aside, and
become the activities ``K(B) = exp(-c_B sigma_B) - 1``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _backend
from .blockspin import BlockMap, Kernel
from .errors import CapExceeded, InvalidSpec, NumericalFailure
from .lattice import BlockScheme, LatticeSpec, SiteSet, build_lattice, block_type, connected_components
from .spin_model import DEFAULT_ENUMERATION_CAP, Interaction, SpinConfig, SpinFunction, instantiate

DROP_TOL = 1e-13
MAX_LOCAL_SITES = 22
MAX_SUBSETS = 1 << 16


def _logsumexp_rows(a: np.ndarray) -> np.ndarray:
    top = np.max(a, axis=1)
    if not np.all(np.isfinite(top)):
        raise NumericalFailure("block sum with zero weight")
    return top + np.log(np.sum(np.exp(a - top[:, None]), axis=1))


@dataclass
class Stage:
    block_type: int
    blocks: list
    F: dict[int, float] = field(repr=False)
    lr: dict[int, float] = field(repr=False)

    @property
    def sr(self) -> dict[int, float]:
        return {m: c for m, c in self.F.items() if m not in self.lr}


@dataclass(frozen=True)
class PolymerActivity:
    B: SiteSet
    mask: int
    bar: frozenset
    coefficient: float

    @property
    def sup_norm(self) -> float:
        return math.expm1(abs(self.coefficient))

    @property
    def K(self) -> SpinFunction:
        c = self.coefficient
        return SpinFunction({(): math.cosh(c) - 1.0, self.B: -math.sinh(c)})


class IteratedSumResult:
    """Stages ``F^1 .. F^{2^d}``, their long-range parts and the modified expectation."""

    def __init__(self, lattice, scheme: BlockScheme, J: Interaction, kernel: Kernel, code: int,
                 stages: list[Stage], log_t: np.ndarray | None, cap: int):
        self.lattice = lattice
        self.scheme = scheme
        self.J = J
        self.kernel = kernel
        self.code = code
        self.stages = stages
        self._log_t = log_t
        self.cap = cap
        last = stages[-1].F
        extra = [m for m in last if m]
        if extra:
            raise NumericalFailure("spins left after the final stage")
        self.F_last = last.get(0, 0.0)
        acc: dict[int, float] = {}
        for st in stages[:-1]:
            for m, c in st.lr.items():
                acc[m] = acc.get(m, 0.0) + c
        self.lr_coefficients = dict(sorted(acc.items()))

    def sites_of(self, mask: int) -> SiteSet:
        return tuple(s for k, s in enumerate(self.lattice.sites) if (mask >> k) & 1)

    def bar_of(self, mask: int) -> frozenset:
        return frozenset(self.scheme.block_of(s) for s in self.sites_of(mask))

    def lr_supports(self, stage: int) -> list[SiteSet]:
        return [self.sites_of(m) for m in self.stages[stage - 1].lr]

    def stage_function(self, stage: int, part: str = "full") -> SpinFunction:
        st = self.stages[stage - 1]
        src = {"full": st.F, "lr": st.lr, "sr": st.sr}[part]
        return SpinFunction({self.sites_of(m): c for m, c in src.items()})

    @cached_property
    def activities(self) -> list[PolymerActivity]:
        return [PolymerActivity(self.sites_of(m), m, self.bar_of(m), c)
                for m, c in self.lr_coefficients.items()]

    # -- enumeration over the whole volume
    def _require_enumerable(self):
        if self.lattice.n > self.cap:
            raise CapExceeded(f"modified expectation over {self.lattice.n} sites exceeds cap {self.cap}")

    @cached_property
    def log_kernel(self) -> np.ndarray:
        self._require_enumerable()
        if self._log_t is None:
            return np.zeros(1 << self.lattice.n)
        return self._log_t

    @cached_property
    def log_weights(self) -> np.ndarray:
        """``log T + (-H) + sum F_LR`` on every configuration, plus ``F_last``."""
        self._require_enumerable()
        masks, vals = self.J.masks(self.lattice)
        lr = self.lr_coefficients
        masks = np.concatenate([masks, np.array(list(lr), dtype=np.uint64)])
        vals = np.concatenate([vals, np.array(list(lr.values()), dtype=float)])
        return _backend.neg_energy(self.lattice.n, masks, vals) + self.log_kernel + self.F_last

    @cached_property
    def measure(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def char(self, mask: int) -> np.ndarray:
        return _backend.char_values(self.lattice.n, mask)

    def modified_expectation(self, f) -> float:
        """``E f = e^{F_last} sum_sigma T exp(-H + sum F_LR) f``.

        ``f`` may be a :class:`SpinFunction`, a site set (its character) or
        an array over all configurations.
        """
        if isinstance(f, SpinFunction):
            vals = f.to_array(self.lattice.sites) if f.coeffs else np.zeros(1 << self.lattice.n)
        elif isinstance(f, np.ndarray):
            vals = f
        else:
            vals = self.char(self.lattice.mask(f))
        return float(np.dot(self.measure, vals))

    def activity_values(self, act: PolymerActivity) -> np.ndarray:
        return np.expm1(-act.coefficient * self.char(act.mask))

    @cached_property
    def log_partition(self) -> float:
        """``log sum_sigma T e^{-H}`` by direct enumeration."""
        self._require_enumerable()
        masks, vals = self.J.masks(self.lattice)
        lw = _backend.neg_energy(self.lattice.n, masks, vals) + self.log_kernel
        top = np.max(lw)
        return float(top + math.log(np.sum(np.exp(lw - top))))

    def direct_expectation(self, W) -> float:
        """``mu_{sigma'}(sigma_W)`` by direct enumeration, for cross-checks."""
        masks, vals = self.J.masks(self.lattice)
        lw = _backend.neg_energy(self.lattice.n, masks, vals) + self.log_kernel
        w = np.exp(lw - np.max(lw))
        return float(np.dot(w, self.char(self.lattice.mask(W))) / w.sum())


def _sup_diameter(lattice, sites: Sequence) -> int:
    if len(sites) < 2:
        return 0
    return max(lattice.sup_distance(s, t) for s, t in itertools.combinations(sites, 2))


def _kernel_logs_per_lblock(lattice, scheme, bm: BlockMap, code: int):
    """For each L-block, the RG blocks inside it with their image spin."""
    per: dict[tuple, list] = {}
    for j, blk in enumerate(bm.blocks):
        ys = {scheme.block_of(lattice.sites[i]) for i in blk}
        if len(ys) != 1:
            raise InvalidSpec("RG block straddles an L-block")
        per.setdefault(ys.pop(), []).append((blk, 1 - 2 * ((code >> j) & 1)))
    return per


def iterated_block_sum(J: Interaction, T: Kernel, spec: LatticeSpec, scheme: BlockScheme, sigma_prime=None,
                       drop_tol: float = DROP_TOL, cap: int = DEFAULT_ENUMERATION_CAP) -> IteratedSumResult:
    """Sum out L-blocks type by type, setting aside long-range terms after each stage."""
    if spec.geometry == "triangular_2d":
        raise InvalidSpec("L-block summation is defined on square geometries")
    scheme = scheme.attach(spec)
    lat = build_lattice(spec)
    if spec.periodic and any(e % 2 and e > 1 for e in scheme.bar_extent):
        raise InvalidSpec(f"periodic volumes need an even number of L-blocks per axis, got {scheme.bar_extent}")
    if T.kind != "trivial" and scheme.L % T.b:
        raise InvalidSpec("RG block spacing must divide L")
    Jc = J if J.lattice is not None else instantiate(J, spec)
    L = scheme.L
    bm = BlockMap(spec, T)
    if sigma_prime is None:
        code = 0
        if bm.n_image:
            raise InvalidSpec("an image configuration is required for this kernel")
    elif isinstance(sigma_prime, SpinConfig):
        code = sigma_prime.to_int()
    else:
        code = int(sigma_prime)
    per_block = _kernel_logs_per_lblock(lat, scheme, bm, code)

    F: dict[int, float] = {}
    for X, v in Jc.items():
        m = lat.mask(X)
        if _sup_diameter(lat, X) > L:
            raise InvalidSpec(f"interaction term on {X} is longer than L={L}")
        F[m] = F.get(m, 0.0) - v
    diam_cache: dict[int, int] = {}

    def diameter(mask):
        if mask not in diam_cache:
            diam_cache[mask] = _sup_diameter(lat, [lat.sites[k] for k in range(lat.n) if (mask >> k) & 1])
        return diam_cache[mask]

    stages = []
    d = lat.d
    current = F
    for typ in range(1, 2 ** d + 1):
        blocks = [y for y in scheme.bar_sites if block_type(y, d) == typ]
        block_mask = {y: lat.mask(scheme.interior(y)) for y in blocks}
        touching: dict[tuple, list] = {y: [] for y in blocks}
        nxt: dict[int, float] = {}
        for m, c in current.items():
            hit = [y for y in blocks if m & block_mask[y]]
            if not hit:
                nxt[m] = nxt.get(m, 0.0) + c
            elif len(hit) == 1:
                touching[hit[0]].append((m, c))
            else:
                raise InvalidSpec("a short-range term touches two blocks of the same type")
        for y in blocks:
            phi = _block_sum(lat, block_mask[y], touching[y], per_block.get(y, []), T)
            for m, c in phi.items():
                nxt[m] = nxt.get(m, 0.0) + c
        nxt = {m: c for m, c in nxt.items() if m == 0 or abs(c) >= drop_tol}
        lr = {m: c for m, c in nxt.items() if m and diameter(m) > L}
        stages.append(Stage(typ, blocks, dict(sorted(nxt.items())), dict(sorted(lr.items()))))
        current = {m: c for m, c in nxt.items() if m not in lr}

    log_t = None
    if T.kind != "trivial" and lat.n <= cap:
        log_t = _full_log_kernel(lat, bm, code, T)
    return IteratedSumResult(lat, scheme, Jc, T, code, stages, log_t, cap)


def _full_log_kernel(lat, bm: BlockMap, code: int, T: Kernel) -> np.ndarray:
    c = np.arange(1 << lat.n, dtype=np.uint64)
    out = np.zeros(1 << lat.n)
    if T.kind == "decimation":
        for j, blk in enumerate(bm.blocks):
            bit = (c >> np.uint64(blk[0])) & np.uint64(1)
            out[bit != ((code >> j) & 1)] = -np.inf
        return out
    tab = T.log_table(bm.block_size)
    for j, mask in enumerate(bm.block_masks):
        out += tab[np.bitwise_count(c & mask).astype(np.int64), (code >> j) & 1]
    return out


def _block_sum(lat, interior_mask: int, terms, rg_blocks, T: Kernel) -> dict[int, float]:
    """Character coefficients of ``-log sum_{y interior} T_y exp(-sum F_X sigma_X)``."""
    interior = [k for k in range(lat.n) if (interior_mask >> k) & 1]
    outside = sorted({k for m, _ in terms for k in range(lat.n) if (m >> k) & 1} - set(interior))
    ni, ne = len(interior), len(outside)
    if ni + ne > MAX_LOCAL_SITES:
        raise CapExceeded(f"block neighbourhood of {ni + ne} sites exceeds {MAX_LOCAL_SITES}")
    local = {k: p for p, k in enumerate(interior + outside)}

    def to_local(m):
        return sum(1 << local[k] for k in range(lat.n) if (m >> k) & 1)

    if terms:
        masks = np.array([to_local(m) for m, _ in terms], dtype=np.uint64)
        vals = np.array([-c for _, c in terms])
        expo = _backend.neg_energy(ni + ne, masks, vals).reshape(1 << ne, 1 << ni)
    else:
        expo = np.zeros((1, 1 << ni))
    s = np.arange(1 << ni, dtype=np.uint64)
    logt = np.zeros(1 << ni)
    for blk, sp in rg_blocks:
        if T.kind == "decimation":
            bit = (s >> np.uint64(local[blk[0]])) & np.uint64(1)
            logt[bit != (0 if sp > 0 else 1)] = -np.inf
        else:
            lm = np.uint64(sum(1 << local[i] for i in blk))
            logt += T.log_table(len(blk))[np.bitwise_count(s & lm).astype(np.int64), 0 if sp > 0 else 1]
    phi = -_logsumexp_rows(expo + logt[None, :])
    coef = _backend.fwht(phi.copy()) / float(1 << ne)
    out = {}
    for lm in range(1 << ne):
        if coef[lm] != 0.0:
            out[sum(1 << outside[q] for q in range(ne) if (lm >> q) & 1)] = float(coef[lm])
    return out


def allowable(bar: Iterable, scheme: BlockScheme) -> bool:
    """Whether a bar-set fits in a run of three consecutive L-blocks along every axis."""
    bar = list(bar)
    if not bar:
        return False
    ext = scheme.bar_extent
    periodic = scheme.lattice.periodic
    for axis, e in enumerate(ext):
        coords = sorted({y[axis] for y in bar})
        if periodic and e > 3:
            if not any(all((c - start) % e < 3 for c in coords) for start in coords):
                return False
        elif not periodic and coords[-1] - coords[0] > 2:
            return False
    return True


def polymer_activity(B, result: IteratedSumResult) -> PolymerActivity:
    """The activity ``K(B)`` of a long-range support ``B``."""
    mask = result.lattice.mask(B)
    for act in result.activities:
        if act.mask == mask:
            if not allowable(act.bar, result.scheme):
                raise InvalidSpec(f"support {act.B} is not allowable")
            return act
    if not allowable(result.bar_of(mask), result.scheme):
        raise InvalidSpec(f"support {tuple(B)} is not allowable")
    return PolymerActivity(result.sites_of(mask), mask, result.bar_of(mask), 0.0)


def epsilon_L(activities: Iterable[PolymerActivity]) -> float:
    return max((a.sup_norm for a in activities), default=0.0)


def modified_expectation(f, result: IteratedSumResult) -> float:
    return result.modified_expectation(f)


# -- polymer weights ------------------------------------------------------


@dataclass
class PolymerWeights:
    """Cluster weights ``w_N`` and majorants ``v_N`` keyed by bar-sets ``N``."""

    w: dict[frozenset, float]
    v: dict[frozenset, float]
    scheme: BlockScheme
    links: int = 0

    @classmethod
    def from_weights(cls, w: Mapping, scheme: BlockScheme) -> "PolymerWeights":
        w = {frozenset(k): float(x) for k, x in w.items()}
        return cls(w, {k: abs(x) for k, x in w.items()}, scheme)

    def adjacency(self, N1, N2) -> int:
        return int(self.scheme.set_distance(N1, N2) <= self.scheme.a)

    def compatible(self, N1, N2) -> bool:
        return self.scheme.set_distance(N1, N2) > self.scheme.a

    @property
    def supports(self) -> list[frozenset]:
        return sorted(self.w, key=lambda N: (len(N), sorted(N)))


def _subsets_dfs(n: int, n_max: int | None):
    """Non-empty index subsets in lexicographic DFS order, up to ``n_max`` elements."""
    limit = n if n_max is None else min(n, n_max)
    stack = [(i, (i,)) for i in reversed(range(n))]
    while stack:
        last, sub = stack.pop()
        yield sub
        if len(sub) < limit:
            for j in reversed(range(last + 1, n)):
                stack.append((j, sub + (j,)))


def _count_subsets(n: int, n_max: int | None) -> int:
    limit = n if n_max is None else min(n, n_max)
    return sum(math.comb(n, k) for k in range(1, limit + 1))


def _is_connected(bars: Sequence[frozenset], scheme: BlockScheme) -> bool:
    return len(connected_components(list(bars), scheme)) == 1


def _linked_products(result: IteratedSumResult, acts: Sequence[PolymerActivity], n_max, extra=None):
    """Yield (subset, product vector) with the product of activity values over the subset."""
    if _count_subsets(len(acts), n_max) > MAX_SUBSETS:
        raise CapExceeded(f"{len(acts)} activities with n_max={n_max} exceed the subset budget")
    vals = [result.activity_values(a) for a in acts]
    cache: dict[tuple, np.ndarray] = {}
    for sub in _subsets_dfs(len(acts), n_max):
        prev = cache.get(sub[:-1])
        vec = vals[sub[-1]] if prev is None else prev * vals[sub[-1]]
        cache[sub] = vec
        yield sub, vec


def polymer_weights(activities: Sequence[PolymerActivity], result: IteratedSumResult,
                    n_max: int | None = 3) -> PolymerWeights:
    """``w_N = sum E(prod K)`` and ``v_N = sum prod ||K||`` over L-connected link sets with support ``N``."""
    acts = list(activities)
    scheme = result.scheme
    w: dict[frozenset, float] = {}
    v: dict[frozenset, float] = {}
    meas = result.measure
    for sub, vec in _linked_products(result, acts, n_max):
        bars = [acts[i].bar for i in sub]
        if len(sub) > 1 and not _is_connected(bars, scheme):
            continue
        N = frozenset().union(*bars)
        w[N] = w.get(N, 0.0) + float(np.dot(meas, vec))
        v[N] = v.get(N, 0.0) + math.prod(acts[i].sup_norm for i in sub)
    return PolymerWeights(w, v, scheme, len(acts))


def compatible_collections(supports: Sequence[frozenset], compatible) -> Iterable[tuple[int, ...]]:
    """All index sets of pairwise compatible supports, including the empty one."""
    n = len(supports)
    ok = [[compatible(supports[i], supports[j]) for j in range(n)] for i in range(n)]

    def rec(start, chosen):
        yield tuple(chosen)
        for i in range(start, n):
            if all(ok[i][j] for j in chosen):
                chosen.append(i)
                yield from rec(i + 1, chosen)
                chosen.pop()

    yield from rec(0, [])


def polymer_partition(weights: PolymerWeights, avoid: Iterable | None = None) -> float:
    """``sum_Delta prod_{N in Delta} w_N`` over pairwise compatible collections.

    With ``avoid`` (a set of bar sites), only polymers farther than ``a``
    from it are allowed.
    """
    sup = weights.supports
    if avoid is not None:
        Y = list(avoid)
        if Y:
            sup = [N for N in sup if weights.scheme.set_distance(N, Y) > weights.scheme.a]
    ws = [weights.w[N] for N in sup]
    return math.fsum(math.prod(ws[i] for i in coll)
                     for coll in compatible_collections(sup, weights.compatible))


@dataclass
class Reconstruction:
    log_partition_direct: float
    log_partition_cluster: float
    polymer_sum: float
    relative_error: float
    factorization_residual: float
    truncation_bound: float = 0.0


def reconstruct(result: IteratedSumResult, n_max: int | None = None) -> Reconstruction:
    """Compare ``e^{-F_last} sum_Delta prod w_N`` with the direct partition function.

    ``factorization_residual`` is the gap between the polymer sum and
    ``E(prod (1 + K))``, which vanishes when the modified expectation
    factorizes over mutually distant clusters and no link set is truncated.
    """
    weights = polymer_weights(result.activities, result, n_max)
    ps = polymer_partition(weights)
    if ps <= 0:
        raise NumericalFailure("polymer partition function is not positive")
    full = result.measure.copy()
    for a in result.activities:
        full *= 1.0 + result.activity_values(a)
    direct_e = float(full.sum())
    lz_c = -result.F_last + math.log(ps)
    lz_d = result.log_partition
    return Reconstruction(lz_d, lz_c, ps, abs(math.expm1(lz_c - lz_d)), abs(ps - direct_e),
                          truncation_tail([a.sup_norm for a in result.activities], n_max))


def truncation_tail(norms: Sequence[float], n_max: int | None) -> float:
    """Bound on the dropped link sets: sum over sets of more than ``n_max`` links of the product of norms."""
    if n_max is None or n_max >= len(norms):
        return 0.0
    esym = [1.0] + [0.0] * len(norms)
    for x in norms:
        for k in range(len(norms), 0, -1):
            esym[k] += esym[k - 1] * x
    return math.fsum(esym[n_max + 1:])


@dataclass
class NumeratorDecomposition:
    w_tilde: dict[frozenset, float]
    numerator: float
    denominator: float

    @property
    def expectation(self) -> float:
        return self.numerator / self.denominator


def numerator_decomposition(weights: PolymerWeights, result: IteratedSumResult, W,
                            n_max: int | None = 3) -> NumeratorDecomposition:
    """Split ``E(sigma_W prod (1 + K))`` by the clusters linked to ``W``.

    ``w_tilde[R]`` sums ``E(sigma_W prod K)`` over link sets whose every
    component is L-connected to ``W``, with combined support ``R``
    (``R`` empty gives ``E(sigma_W)``).  The remaining clusters must avoid
    ``R`` and ``W``.
    """
    scheme = result.scheme
    acts = result.activities
    wbar = result.bar_of(result.lattice.mask(W))
    if not wbar:
        raise InvalidSpec("W must be non-empty")
    chi = result.char(result.lattice.mask(W))
    meas = result.measure * chi
    wt: dict[frozenset, float] = {frozenset(): float(meas.sum())}
    for sub, vec in _linked_products(result, acts, n_max):
        bars = [acts[i].bar for i in sub]
        if not _is_connected(bars + [wbar], scheme):
            continue
        R = frozenset().union(*bars)
        wt[R] = wt.get(R, 0.0) + float(np.dot(meas, vec))
    num = 0.0
    terms = []
    for R, val in wt.items():
        region = list(R | wbar)
        sup = [N for N in weights.supports if scheme.set_distance(N, region) > scheme.a]
        ws = [weights.w[N] for N in sup]
        rest = math.fsum(math.prod(ws[i] for i in c) for c in compatible_collections(sup, weights.compatible))
        terms.append(val * rest)
    num = math.fsum(terms)
    return NumeratorDecomposition(wt, num, polymer_partition(weights))


def decomposition_derivative(J: Interaction, T: Kernel, spec: LatticeSpec, scheme: BlockScheme, Z, W,
                             n_max: int | None = None) -> float:
    """``dJ'(Z)/dJ(W)`` assembled from numerator decompositions at every image configuration."""
    bm = BlockMap(spec, T)
    if bm.image is None:
        raise InvalidSpec("kernel has no image spins")
    img = build_lattice(bm.image)
    zmask = img.mask(Z) if Z else 0
    n = bm.n_image
    total = []
    for code in range(1 << n):
        res = iterated_block_sum(J, T, spec, scheme, code)
        wts = polymer_weights(res.activities, res, n_max)
        mu = numerator_decomposition(wts, res, W, n_max).expectation
        sign = -1.0 if bin(code & zmask).count("1") % 2 else 1.0
        total.append(sign * mu)
    return math.fsum(total) / (1 << n)


# -- Ursell coefficients and the Kotecky-Preiss condition ------------------


def ursell(adjacency) -> int | float:
    """``sum over connected graphs G on n vertices of prod_{ij in G} (-c_ij)``.

    Uses the recursion over subsets containing the smallest vertex; exact
    integers when the adjacency is 0/1.
    """
    c = np.asarray(adjacency)
    n = c.shape[0]
    if c.shape != (n, n):
        raise InvalidSpec("adjacency must be square")
    if n == 0:
        raise InvalidSpec("need at least one polymer")
    if n > 8:
        raise CapExceeded("ursell coefficients limited to n <= 8")
    integral = np.all(c == np.round(c))
    cv = [[int(round(c[i, j])) if integral else float(c[i, j]) for j in range(n)] for i in range(n)]
    full = (1 << n) - 1
    f = {}
    for S in range(1, full + 1):
        verts = [i for i in range(n) if (S >> i) & 1]
        prod = 1
        for i, j in itertools.combinations(verts, 2):
            prod *= 1 - cv[i][j]
        f[S] = prod
    conn = {}
    for S in range(1, full + 1):
        low = S & -S
        rest = S ^ low
        val = f[S]
        sub = rest
        while sub:
            # proper subsets containing the lowest vertex: T = low | sub' with sub' != rest
            sub = (sub - 1) & rest
            T_ = low | sub
            if T_ != S:
                val -= conn[T_] * f[S ^ T_]
            if sub == 0:
                break
        conn[S] = val
    return conn[full]


@dataclass
class KPReport:
    per_site: dict
    passed: bool
    M: float

    @property
    def worst_margin(self) -> float:
        return min(m for _, m in self.per_site.values())


def kp_condition_check(weights: PolymerWeights, M: float, scheme: BlockScheme | None = None,
                       rtol: float = 1e-12) -> KPReport:
    """Per bar site ``y``: ``sum_{N: dist(y,N) <= a} v_N M^|N| <= log M``."""
    if not M > 1:
        raise InvalidSpec("M must exceed 1")
    scheme = scheme or weights.scheme
    lm = math.log(M)
    per = {}
    for y in scheme.bar_sites:
        s = math.fsum(v * M ** len(N) for N, v in weights.v.items()
                      if scheme.set_distance([y], N) <= scheme.a)
        per[y] = (s, lm - s)
    passed = all(m >= -rtol * lm for _, m in per.values())
    return KPReport(per, passed, M)


@dataclass
class AvoidanceResult:
    ratio: float
    bound: float
    passed: bool


def avoidance_oracle(weights: PolymerWeights, Y: Iterable, M: float, max_polymers: int = 12) -> AvoidanceResult:
    """Brute-force ``sum_{Delta'} prod w / sum_Delta prod w`` against ``M^|Y|``."""
    if len(weights.w) > max_polymers:
        raise CapExceeded(f"{len(weights.w)} polymers exceed the oracle budget {max_polymers}")
    Y = list(Y)
    den = polymer_partition(weights)
    if den == 0:
        raise NumericalFailure("polymer partition function vanished")
    ratio = polymer_partition(weights, avoid=Y) / den
    bound = M ** len(Y)
    return AvoidanceResult(ratio, bound, abs(ratio) <= bound)


def random_polymer_system(rng: np.random.Generator, scheme: BlockScheme, n_polymers: int = 6,
                          M: float = 2.0, max_size: int = 3, fill: float = 0.9) -> PolymerWeights:
    """Random signed weights on random bar-sets, scaled so the KP check passes with slack ``fill``."""
    sites = list(scheme.bar_sites)
    w = {}
    while len(w) < n_polymers:
        k = int(rng.integers(1, min(max_size, len(sites)) + 1))
        N = frozenset(sites[i] for i in rng.choice(len(sites), size=k, replace=False))
        if N not in w:
            w[N] = float(rng.uniform(-1.0, 1.0))
    pw = PolymerWeights.from_weights(w, scheme)
    worst = max(s for s, _ in kp_condition_check(pw, M, scheme).per_site.values())
    scale = fill * math.log(M) / worst if worst > 0 else 1.0
    return PolymerWeights.from_weights({N: x * scale for N, x in w.items()}, scheme)
