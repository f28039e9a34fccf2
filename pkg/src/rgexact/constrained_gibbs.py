"""Gibbs measures constrained by a block-spin configuration, and correlation-decay fits."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .blockspin import BlockMap, Kernel
from .engine import EnumerationEngine, make_engine
from .errors import CapExceeded, InvalidSpec
from .lattice import LatticeSpec, Site, as_site, build_lattice, site_set
from .spin_model import DEFAULT_ENUMERATION_CAP, Interaction, SpinConfig, SpinFunction

CORRELATION_FLOOR = 1e-14
TAU_POLICIES = ("free", "periodic", "plus", "minus", "random")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox stream; the generator identity is part of the output contract."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


class ConstrainedMeasure:
    """``mu_{sigma'}(F) = sum_sigma F T e^{-H} / sum_sigma T e^{-H}`` on a finite volume."""

    def __init__(self, J: Interaction, T: Kernel, spec: LatticeSpec, sigma_prime=None,
                 method: str = "auto", cap: int = DEFAULT_ENUMERATION_CAP, engine=None):
        self.J, self.T, self.spec = J, T, spec
        self.engine = engine if engine is not None else make_engine(spec, J, T, method=method, cap=cap)
        self.lattice = self.engine.lattice
        if sigma_prime is None:
            if self.engine.n_image:
                raise InvalidSpec("an image configuration is required for this kernel")
            code = 0
        elif isinstance(sigma_prime, SpinConfig):
            if sigma_prime.lattice.spec != self.engine.image:
                raise InvalidSpec("image configuration does not match the kernel's block geometry")
            code = sigma_prime.to_int()
        else:
            code = int(sigma_prime)
            if not 0 <= code < 1 << self.engine.n_image:
                raise InvalidSpec(f"image configuration code {code} out of range")
        self.code = code
        self._cache: dict = {}

    def log_normalizer(self) -> float:
        return float(self.engine.log_partition([self.code])[0])

    def moments(self, subsets: Sequence) -> np.ndarray:
        keys = [site_set(W) for W in subsets]
        missing = [W for W in dict.fromkeys(keys) if W not in self._cache]
        if missing:
            vals = self.engine.expectations(missing, [self.code])[:, 0]
            self._cache.update(zip(missing, vals))
        return np.array([self._cache[W] if W else 1.0 for W in keys])


def expectation(mu: ConstrainedMeasure, F) -> float:
    """Expectation of a site set (its character), a :class:`SpinFunction`, or a callable.

    A callable receives a :class:`SpinConfig` and is evaluated by full
    enumeration, which needs the enumeration engine.
    """
    if isinstance(F, SpinFunction):
        if not F.coeffs:
            return 0.0
        m = mu.moments(list(F.coeffs))
        return math.fsum(v * x for v, x in zip(F.coeffs.values(), m))
    if callable(F):
        return _callable_expectation(mu, F)
    return float(mu.moments([F])[0])


def _callable_expectation(mu: ConstrainedMeasure, F: Callable) -> float:
    eng = mu.engine
    if not isinstance(eng, EnumerationEngine):
        raise CapExceeded("callable observables need the enumeration engine")
    logw = eng.lw.copy()
    if eng.blockmap.kernel.kind == "decimation":
        logw[eng.bins != mu.code] = -np.inf
    elif not eng.blockmap.kernel.deterministic:
        tab = eng.blockmap.kernel.log_table(eng.blockmap.block_size)
        m = eng.blockmap.block_size
        rest = eng.bins.copy()
        for j in range(eng.n_image):
            logw += tab[rest % (m + 1), (mu.code >> j) & 1]
            rest //= m + 1
    top = np.max(logw)
    w = np.exp(logw - top)
    num = 0.0
    for c in np.flatnonzero(w):
        num += w[c] * F(SpinConfig.from_int(mu.lattice, int(c)))
    return float(num / w.sum())


def truncated_correlation(mu: ConstrainedMeasure, i, j) -> float:
    """``mu(sigma_i sigma_j) - mu(sigma_i) mu(sigma_j)``."""
    i, j = mu.lattice.wrap(as_site(i)), mu.lattice.wrap(as_site(j))
    if i == j:
        m = mu.moments([(i,)])[0]
        return float(1.0 - m * m)
    mi, mj, mij = mu.moments([(i,), (j,), (i, j)])
    return float(mij - mi * mj)


@dataclass
class CorrelationSample:
    volume: str
    tau_id: str
    sigma_prime_id: int
    i: Site
    j: Site
    dist: float
    corr: float


@dataclass
class HypothesisReport:
    samples: list[CorrelationSample] = field(repr=False)
    m_hyp: float
    c_hyp: float
    holds: bool
    worst_pair: dict | None
    fitted: int
    sentinel: str | None = None
    residual: float = 0.0
    uniform: bool = True

    def bound(self, dist: float) -> float:
        if math.isinf(self.m_hyp):
            return 0.0 if dist > 0 else self.c_hyp
        return self.c_hyp * math.exp(-self.m_hyp * dist)

    def to_dict(self, include_samples: bool = False) -> dict:
        out = {
            "m_hyp": self.m_hyp if math.isfinite(self.m_hyp) else "inf",
            "c_hyp": self.c_hyp,
            "holds": self.holds,
            "uniform": self.uniform,
            "worst_pair": self.worst_pair,
            "fitted_samples": self.fitted,
            "total_samples": len(self.samples),
            "residual": self.residual,
            "sentinel": self.sentinel,
        }
        if include_samples:
            out["samples"] = [asdict(s) for s in self.samples]
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["volume", "tau_id", "sigma_prime_id", "i", "j", "dist", "corr"])
        for s in self.samples:
            w.writerow([s.volume, s.tau_id, s.sigma_prime_id, json.dumps(list(s.i)), json.dumps(list(s.j)),
                        repr(s.dist), repr(s.corr)])
        return buf.getvalue()


def fit_decay(samples: Sequence[CorrelationSample], floor: float = CORRELATION_FLOOR) -> HypothesisReport:
    """Least-squares fit of ``log|corr|`` against distance, then the tightest prefactor."""
    use = [s for s in samples if abs(s.corr) > floor]
    if not use:
        return HypothesisReport(list(samples), math.inf, 0.0, True, None, 0, sentinel="zero correlations")
    d = np.array([s.dist for s in use])
    y = np.log(np.abs([s.corr for s in use]))
    if np.ptp(d) == 0:
        return HypothesisReport(list(samples), math.nan, math.nan, False, None, len(use),
                                sentinel="single distance; decay rate not identifiable")
    slope, intercept = np.polyfit(d, y, 1)
    m = -float(slope)
    resid = float(np.sqrt(np.mean((y - (intercept + slope * d)) ** 2)))
    ratio = y + m * d
    k = int(np.argmax(ratio))
    c = float(np.exp(ratio[k]))
    worst = use[k]
    uniform = all(abs(s.corr) <= floor or abs(s.corr) <= c * math.exp(-m * s.dist) * (1 + 1e-12)
                  for s in samples)
    return HypothesisReport(
        list(samples), m, c, m > 0,
        {"volume": worst.volume, "tau_id": worst.tau_id, "sigma_prime_id": worst.sigma_prime_id,
         "i": list(worst.i), "j": list(worst.j), "dist": worst.dist, "corr": worst.corr},
        len(use), residual=resid, uniform=uniform,
    )


def boundary_variants(spec: LatticeSpec, policies: Iterable[str], rng: np.random.Generator):
    """Concrete volumes for each boundary policy, in the given order."""
    out = []
    for pol in policies:
        if pol == "free":
            out.append((pol, spec.with_boundary("free")))
        elif pol == "periodic":
            out.append((pol, spec.with_boundary("periodic")))
        elif pol == "plus":
            out.append((pol, spec.with_boundary("fixed", 1)))
        elif pol == "minus":
            out.append((pol, spec.with_boundary("fixed", -1)))
        elif pol == "random":
            outer = build_lattice(spec.with_boundary("free")).outer_boundary()
            spins = rng.choice([-1, 1], size=len(outer))
            out.append((pol, spec.with_boundary("fixed", {s: int(v) for s, v in zip(outer, spins)})))
        else:
            raise InvalidSpec(f"unknown boundary policy {pol!r}")
    return out


def _volume_samples(J, T, spec, tau_id, sp_codes, pairs, method, cap):
    eng = make_engine(spec, J, T, method=method, cap=cap)
    lat = eng.lattice
    singles = sorted({s for p in pairs for s in p})
    subsets = [(s,) for s in singles] + [site_set(p) for p in pairs]
    vals = eng.expectations(subsets, sp_codes)
    pos = {s: k for k, s in enumerate(singles)}
    off = len(singles)
    label = "x".join(map(str, spec.extent)) + f"/{spec.boundary}"
    out = []
    for col, code in enumerate(sp_codes):
        for r, (i, j) in enumerate(pairs):
            corr = float(vals[off + r, col] - vals[pos[i], col] * vals[pos[j], col])
            out.append(CorrelationSample(label, tau_id, int(code), i, j, lat.distance(i, j), corr))
    return out


def hypothesis_check(J: Interaction, T: Kernel, volumes: Sequence[LatticeSpec],
                     tau_policy: Sequence[str] = ("periodic",), sp_samples: int | None = None,
                     pair_budget: int | None = None, seed: int = 0, threads: int = 1,
                     method: str = "auto", cap: int = DEFAULT_ENUMERATION_CAP) -> HypothesisReport:
    """Sample truncated correlations over volumes, boundaries and block spins, then fit.

    Image configurations are exhaustive when there are at most 12 image
    sites and ``sp_samples`` is None, otherwise ``sp_samples`` (default 64)
    configurations are drawn uniformly from a seeded stream.  Pairs are all
    distinct site pairs, subsampled to ``pair_budget`` if given.
    """
    rng = make_rng(seed)
    units = []
    for vol in volumes:
        for tau_id, spec in boundary_variants(vol, tau_policy, rng):
            n_img = BlockMap(spec, T).n_image
            if sp_samples is None and n_img <= 12:
                codes = np.arange(1 << n_img, dtype=np.int64)
            else:
                k = 64 if sp_samples is None else int(sp_samples)
                codes = rng.integers(0, 1 << n_img, size=k, dtype=np.int64) if n_img else np.zeros(k, dtype=np.int64)
            lat = build_lattice(spec)
            pairs = list(itertools.combinations(lat.sites, 2))
            if pair_budget is not None and len(pairs) > pair_budget:
                pick = np.sort(rng.choice(len(pairs), size=pair_budget, replace=False))
                pairs = [pairs[int(p)] for p in pick]
            units.append((spec, tau_id, codes, pairs))

    def run(u):
        spec, tau_id, codes, pairs = u
        return _volume_samples(J, T, spec, tau_id, codes, pairs, method, cap)

    if threads > 1 and len(units) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, units))
    else:
        parts = [run(u) for u in units]
    return fit_decay([s for part in parts for s in part])
