"""Derivatives of the renormalized couplings, band structure and linearization bounds."""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import optimize, special

from . import _backend
from .blockspin import BlockMap, Kernel
from .engine import make_engine
from .errors import DivergentExpansion, InvalidSpec
from .lattice import BlockScheme, LatticeSpec, SiteSet, build_lattice, l_distance, site_set
from .rg_map import renormalize
from .spin_model import DEFAULT_ENUMERATION_CAP, Interaction, encode_set, instantiate


def _image_char_sums(g: np.ndarray) -> np.ndarray:
    """``2^-n' sum_{sigma'} sigma'_Z g(sigma')`` for every image mask ``Z``."""
    out = np.array(g, dtype=np.float64)
    return _backend.fwht(out) / float(out.shape[0])


def _image_mask(engine, Z) -> int:
    Z = site_set(Z)
    if not Z:
        return 0
    return build_lattice(engine.image).mask(Z)


def partial_derivative(J: Interaction, T: Kernel, spec: LatticeSpec, Z, W, method: str = "auto",
                       cap: int = DEFAULT_ENUMERATION_CAP, engine=None) -> float:
    """``dJ'(Z)/dJ(W) = 2^-|image| sum_{sigma'} sigma'_Z mu_{sigma'}(sigma_W)``."""
    eng = engine if engine is not None else make_engine(spec, J, T, method=method, cap=cap)
    g = eng.expectations([W])[0]
    cz = _backend.char_values(eng.n_image, _image_mask(eng, Z))
    return float(np.dot(cz, g) / g.shape[0])


def finite_difference_oracle(J: Interaction, T: Kernel, spec: LatticeSpec, Z, W, h: float = 1e-5,
                             method: str = "auto", cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """Central difference ``[J'_{+h}(Z) - J'_{-h}(Z)] / 2h`` through the full RG map."""
    if not h > 0:
        raise InvalidSpec("finite-difference step must be positive")
    base = J if J.lattice is not None else instantiate(J, spec)
    plus = renormalize(base.with_coupling(W, h), T, spec, method=method, cap=cap).couplings
    minus = renormalize(base.with_coupling(W, -h), T, spec, method=method, cap=cap).couplings
    return (plus[Z] - minus[Z]) / (2.0 * h)


@dataclass
class JacobianMatrix:
    zs: list[SiteSet]
    ws: list[SiteSet]
    values: np.ndarray  # shape (len(zs), len(ws))
    spec: LatticeSpec | None = None
    kernel: Kernel | None = None
    image: LatticeSpec | None = None
    origins: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, key) -> float:
        Z, W = key
        return float(self.values[self.zs.index(site_set(Z)), self.ws.index(site_set(W))])

    @property
    def entries(self) -> dict:
        return {(Z, W): float(self.values[a, b]) for a, Z in enumerate(self.zs) for b, W in enumerate(self.ws)}

    def z_sites(self, Z: SiteSet) -> SiteSet:
        """Original-lattice anchor sites (block origins) of an image set."""
        return tuple(self.origins[z] for z in Z)

    def l_distances(self, scheme: BlockScheme) -> np.ndarray:
        out = np.full(self.values.shape, np.nan)
        for a, Z in enumerate(self.zs):
            if not Z:
                continue
            zo = self.z_sites(Z)
            for b, W in enumerate(self.ws):
                out[a, b] = l_distance(W, zo, scheme)
        return out

    def to_csv(self, scheme: BlockScheme | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["Z_encoding", "W_encoding", "l_distance", "value"])
        dist = self.l_distances(scheme) if scheme is not None else None
        for a, Z in enumerate(self.zs):
            for b, W in enumerate(self.ws):
                ld = "" if dist is None or np.isnan(dist[a, b]) else repr(float(dist[a, b]))
                w.writerow([encode_set(Z), encode_set(W), ld, repr(float(self.values[a, b]))])
        return buf.getvalue()


def _translation_reps(ws: Sequence[SiteSet], lat, image_lat, b: int):
    """Map each W to (representative index, image shift t) with W = rep + b t."""
    rep_of: dict[SiteSet, tuple[int, tuple]] = {}
    reps: list[SiteSet] = []
    for W in ws:
        if W in rep_of:
            continue
        k = len(reps)
        reps.append(W)
        for t in image_lat.sites:
            shifted = site_set(lat.translate(s, tuple(b * c for c in t)) for s in W)
            rep_of.setdefault(shifted, (k, t))
    return reps, [rep_of[W] for W in ws]


def jacobian_matrix(J: Interaction, T: Kernel, spec: LatticeSpec, z_family: Iterable, w_family: Iterable,
                    translation_symmetry: bool = False, threads: int = 1, method: str = "auto",
                    cap: int = DEFAULT_ENUMERATION_CAP, chunk: int = 8) -> JacobianMatrix:
    """All requested entries ``dJ'(Z)/dJ(W)``.

    For each ``W`` the map ``sigma' -> mu_{sigma'}(sigma_W)`` is computed once
    and transformed to give every ``Z`` at the same cost.  With
    ``translation_symmetry`` (periodic square volumes) only one ``W`` per
    orbit under image translations is evaluated.
    """
    zs = [site_set(Z) for Z in z_family]
    ws = [site_set(W) for W in w_family]
    lat = build_lattice(spec)
    bm = BlockMap(spec, T)
    origins = {}
    if bm.image is not None:
        img = build_lattice(bm.image)
        origins = {img.sites[j]: lat.sites[blk[0]] for j, blk in enumerate(bm.blocks)}
    if not zs or not ws:
        return JacobianMatrix(zs, ws, np.zeros((len(zs), len(ws))), spec, T, bm.image, origins)
    eng = make_engine(spec, J, T, method=method, cap=cap)
    img_lat = build_lattice(eng.image) if eng.image is not None else None
    ws_c = [site_set(lat.wrap(s) for s in W) for W in ws]
    if translation_symmetry:
        if not (spec.periodic and spec.geometry != "triangular_2d" and img_lat is not None):
            raise InvalidSpec("translation symmetry needs a periodic square volume with block spins")
        reps, where = _translation_reps(ws_c, lat, img_lat, T.b)
    else:
        reps, where = ws_c, [(k, None) for k in range(len(ws_c))]

    def work(part):
        g = eng.expectations(part)
        return [_image_char_sums(row) for row in g]

    parts = [reps[i:i + chunk] for i in range(0, len(reps), chunk)]
    if threads > 1 and len(parts) > 1:
        with ThreadPoolExecutor(threads) as ex:
            coeffs = [c for res in ex.map(work, parts) for c in res]
    else:
        coeffs = [c for p in parts for c in work(p)]
    values = np.empty((len(zs), len(ws)))
    for b, (k, t) in enumerate(where):
        for a, Z in enumerate(zs):
            if t is not None and Z:
                Z = site_set(img_lat.translate(z, tuple(-c for c in t)) for z in Z)
            values[a, b] = coeffs[k][_image_mask(eng, Z)]
    return JacobianMatrix(zs, ws, values, spec, T, eng.image, origins)


@dataclass
class BandProfile:
    bins: dict[int, float]
    alpha: float
    log_c: float
    residual: float
    reliable: bool
    nonzero_bins: int

    @property
    def majorant(self) -> float:
        """Smallest ``C`` with ``bins[n] <= C exp(-n^alpha)`` for every bin."""
        if not self.bins or not math.isfinite(self.alpha):
            return math.nan
        return max(v * math.exp(n ** self.alpha) for n, v in self.bins.items())

    def to_dict(self) -> dict:
        return {"bins": {str(k): v for k, v in sorted(self.bins.items())}, "alpha": self.alpha,
                "log_c": self.log_c, "residual": self.residual, "reliable": self.reliable,
                "nonzero_bins": self.nonzero_bins}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def inversions(self, start: int = 1) -> list[tuple[int, float]]:
        """Bins ``n >= start`` exceeding their predecessor, with relative excess."""
        keys = sorted(k for k in self.bins if k >= start)
        out = []
        for u, v in zip(keys, keys[1:]):
            if self.bins[v] > self.bins[u]:
                out.append((v, (self.bins[v] - self.bins[u]) / max(self.bins[u], 1e-300)))
        return out


def fit_band(bins: dict[int, float], floor: float = 0.0, alpha_max: float = 4.0):
    """Fit ``log m_n = log C - n^alpha`` over bins above ``floor``; returns (alpha, log C, rms)."""
    pts = sorted((n, v) for n, v in bins.items() if v > floor)
    if len(pts) < 2:
        return math.nan, math.nan, math.nan
    n = np.array([p[0] for p in pts], dtype=float)
    y = np.log([p[1] for p in pts])

    def sse(alpha):
        r = y + n ** alpha
        return float(np.sum((r - r.mean()) ** 2))

    res = optimize.minimize_scalar(sse, bounds=(1e-6, alpha_max), method="bounded",
                                   options={"xatol": 1e-12})
    alpha = float(res.x)
    log_c = float(np.mean(y + n ** alpha))
    return alpha, log_c, math.sqrt(sse(alpha) / len(pts))


def band_profile(matrix: JacobianMatrix | dict, scheme: BlockScheme, distances=None,
                 zero_floor: float = 1e-13) -> BandProfile:
    """Max ``|entry|`` per unit bin of ``l(W, Z)`` and the sub-exponential fit.

    ``matrix`` is a :class:`JacobianMatrix` or a mapping ``(l, value)`` pairs
    given as ``{key: (l, value)}``.  Bins whose maximum is below
    ``zero_floor`` times the overall maximum count as zero.
    """
    bins: dict[int, float] = {}
    if isinstance(matrix, JacobianMatrix):
        if matrix.values.size == 0:
            raise InvalidSpec("band profile of an empty matrix")
        dist = matrix.l_distances(scheme) if distances is None else distances
        pairs = [(float(d), float(v)) for d, v in zip(dist.ravel(), matrix.values.ravel()) if not np.isnan(d)]
    else:
        pairs = [(float(d), float(v)) for d, v in matrix.values()]
    for d, v in pairs:
        n = int(math.floor(d + 1e-12))
        bins[n] = max(bins.get(n, 0.0), abs(v))
    top = max(bins.values()) if bins else 0.0
    floor = zero_floor * top
    nonzero = sum(1 for v in bins.values() if v > floor)
    alpha, log_c, rms = fit_band(bins, floor)
    return BandProfile(dict(sorted(bins.items())), alpha, log_c, rms, nonzero >= 3, nonzero)


def translation_family(shapes: Iterable, spec: LatticeSpec) -> list[SiteSet]:
    """All distinct translates of the given shapes lying in the volume (wrapped when periodic)."""
    lat = build_lattice(spec)
    out = set()
    for shape in shapes:
        shape = site_set(shape)
        for t in lat.sites:
            moved = [tuple(a + b for a, b in zip(s, t)) for s in shape]
            if spec.periodic:
                moved = [lat.wrap(s) for s in moved]
            elif not all(lat.contains(s) for s in moved):
                continue
            if len(set(moved)) == len(moved):
                out.add(site_set(moved))
    return sorted(out)


def neighborhood_count(Z, E: float, w_family: Sequence, scheme: BlockScheme) -> int:
    """Number of ``W`` in the family with ``l(W, Z) <= E``."""
    return sum(1 for W in w_family if l_distance(W, Z, scheme) <= E)


def series_terms(alpha: float, d: int, n: int) -> np.ndarray:
    k = np.arange(n, dtype=float)
    return np.exp(-k ** alpha) * (k + 1.0) ** d


@dataclass
class SeriesBound:
    value: float
    partial: float
    tail: float
    terms: int


def sub_exponential_series(alpha: float, d: int, rtol: float = 1e-16, max_terms: int = 1 << 22) -> SeriesBound:
    """Upper bound for ``sum_{n>=0} exp(-n^alpha) (n+1)^d``.

    Terms are summed until they drop below ``rtol`` times the partial sum
    (and the summand is decreasing); the remainder is bounded by
    ``int_N^inf exp(-x^alpha) (2x)^d dx = 2^d / alpha * Gamma((d+1)/alpha, N^alpha)``.
    """
    if not alpha > 0:
        raise DivergentExpansion("linearization series needs alpha > 0")
    total, n, block = 0.0, 0, 1024
    while True:
        t = series_terms(alpha, d, n + block)[n:]
        csum = total + np.cumsum(t)
        k = np.arange(n, n + block, dtype=float)
        decreasing = alpha * np.maximum(k, 1.0) ** (alpha - 1.0) * (k + 1.0) > d
        small = (t < rtol * csum) & decreasing & (k >= 1)
        hit = np.flatnonzero(small)
        if hit.size:
            stop = int(hit[0])
            total = float(csum[stop])
            N = n + stop
            break
        total = float(csum[-1])
        n += block
        if n >= max_terms:
            N = n - 1
            break
    a = (d + 1) / alpha
    tail = 2.0 ** d / alpha * float(special.gammaincc(a, N ** alpha) * special.gamma(a))
    return SeriesBound(total + tail, total, tail, N + 1)


def linearization_bound(profile: BandProfile | float, k_sup: float, d: int, growth: float = 1.0,
                        prefactor: float | None = None) -> float:
    """``growth * C * ||K||_inf * sum_n exp(-n^alpha)(n+1)^d``.

    ``profile`` supplies ``alpha`` and the majorant ``C`` (or pass ``alpha``
    directly with an explicit ``prefactor``).  ``growth`` is the constant in
    the polynomial count of sets per unit distance shell.
    """
    if isinstance(profile, BandProfile):
        alpha = profile.alpha
        c = profile.majorant if prefactor is None else prefactor
    else:
        alpha, c = float(profile), 1.0 if prefactor is None else prefactor
    if not (alpha > 0) or not math.isfinite(alpha):
        raise DivergentExpansion(f"linearization bound undefined for alpha={alpha}")
    return growth * c * abs(k_sup) * sub_exponential_series(alpha, d).value


def linearize_apply(J_c: Interaction, T: Kernel, spec: LatticeSpec, K: Interaction, Z, cutoff: float,
                    scheme: BlockScheme, method: str = "auto", cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    """``sum_W dJ'(Z)/dJ(W) K(W)`` over ``W`` in the support of ``K`` with ``l(W, Z) <= cutoff``."""
    Kc = K if K.lattice is not None else instantiate(K, spec)
    bm = BlockMap(spec, T)
    lat = build_lattice(spec)
    img = build_lattice(bm.image)
    zo = tuple(lat.sites[bm.blocks[img.index[img.wrap(z)]][0]] for z in site_set(Z))
    ws, ks = [], []
    for W, v in Kc.items():
        if W and v != 0.0 and (not zo or l_distance(W, zo, scheme) <= cutoff):
            ws.append(W)
            ks.append(v)
    if not ws:
        return 0.0
    eng = make_engine(spec, J_c, T, method=method, cap=cap)
    g = eng.expectations(ws)
    cz = _backend.char_values(eng.n_image, _image_mask(eng, Z))
    d = g @ cz / g.shape[1]
    return math.fsum(a * b for a, b in zip(d, ks))


@dataclass
class BandBoundParams:
    S: float
    Q: float
    K_cut: float
    M: float
    p: int
    delta: Callable[[float], float]

    def __post_init__(self):
        if not self.M > 1:
            raise InvalidSpec("M must exceed 1")
        if min(self.S, self.Q, self.K_cut) <= 0 or self.p < 1:
            raise InvalidSpec("S, Q, K_cut and p must be positive")


def band_bound_terms(params: BandBoundParams) -> tuple[float, float]:
    """The two summands: large supports (``|R| > pS``) and the pinned remainder."""
    M, p, S = params.M, params.p, params.S
    lm = math.log(M)
    pre = M ** p * (1.0 + lm) ** p
    large = pre * params.delta(S) / lm
    pinned = pre * (params.delta(params.Q) + params.delta(params.K_cut)) * p * (1.0 + S) * M ** (p * (1.0 + S))
    return large, pinned


def band_bound_rhs(params: BandBoundParams) -> float:
    large, pinned = band_bound_terms(params)
    return large + pinned


@dataclass
class PenSchedule:
    ls: np.ndarray
    rhs: np.ndarray
    decreasing: bool
    alpha_prime: float


def pen_schedule(alpha: float, beta: float, a: float, M: float, p: int, delta: Callable[[float], float],
                 ls: Sequence[int] = tuple(range(10, 101))) -> PenSchedule:
    """Evaluate the band bound along ``S = (l/(2(3+a)))^alpha / p``, ``Q = K_cut = (l/(2(3+a)))^beta``.

    ``alpha_prime`` is the largest exponent (bisection on ``(0, 1]``) with
    ``rhs(l) <= rhs(l0) exp(l0^a' - l^a')`` on the whole grid, 0 if none.
    """
    if not 0 < alpha < beta <= 0.5:
        raise InvalidSpec("schedule needs 0 < alpha < beta <= 1/2")
    ls = np.asarray(ls, dtype=float)
    vals = []
    for l in ls:
        u = l / (2.0 * (3.0 + a))
        vals.append(band_bound_rhs(BandBoundParams(u ** alpha / p, u ** beta, u ** beta, M, p, delta)))
    rhs = np.array(vals)
    decreasing = bool(np.all(np.diff(rhs) < 0))
    logr = np.log(rhs) - math.log(rhs[0])

    def ok(ap):
        return bool(np.all(logr <= -(ls ** ap - ls[0] ** ap) + 1e-12))

    lo, hi = 0.0, 1.0
    if not ok(1e-9):
        return PenSchedule(ls, rhs, decreasing, 0.0)
    lo = 1e-9
    if ok(hi):
        lo = hi
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return PenSchedule(ls, rhs, decreasing, lo)
