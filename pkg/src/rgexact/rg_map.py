"""Exact finite-volume renormalization map and iterated flow."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .blockspin import BlockMap, Kernel, kernel_eval, kernel_normalization
from .engine import make_engine
from .errors import CapExceeded, InvalidSpec
from .lattice import LatticeSpec, build_lattice
from .spin_model import DEFAULT_ENUMERATION_CAP, Interaction, instantiate, norm

__all__ = [
    "Kernel", "BlockMap", "kernel_eval", "kernel_normalization", "renormalized_hamiltonian",
    "extract_couplings", "renormalize", "RenormalizedResult", "rg_flow", "FlowStep",
]


def renormalized_hamiltonian(J: Interaction, T: Kernel, spec: LatticeSpec, method: str = "auto",
                             cap: int = DEFAULT_ENUMERATION_CAP) -> np.ndarray:
    """``log sum_sigma T(sigma, sigma') exp(-H(sigma))`` for every image configuration.

    Entry ``c`` corresponds to the image configuration whose site ``j`` is
    -1 exactly when bit ``j`` of ``c`` is set.
    """
    eng = make_engine(spec, J, T, method=method, cap=cap)
    if eng.n_image > cap:
        raise CapExceeded(f"{eng.n_image} image sites exceed cap {cap}")
    return eng.log_partition()


def extract_couplings(logz: np.ndarray, image: LatticeSpec, tol: float = 0.0,
                      cap: int = DEFAULT_ENUMERATION_CAP) -> Interaction:
    """Invert ``-H'(sigma') = sum_Z J'(Z) sigma'_Z`` by the normalized Walsh-Hadamard transform.

    Coefficients with ``|J'(Z)| <= tol`` are dropped, except the constant.
    """
    if image is None:
        raise InvalidSpec("kernel has no image spins to carry couplings")
    lat = build_lattice(image)
    n = lat.n
    if n > cap:
        raise CapExceeded(f"{n} image sites exceed cap {cap}")
    vals = np.array(logz, dtype=np.float64).reshape(-1)
    if vals.shape[0] != 1 << n:
        raise InvalidSpec(f"need {1 << n} log-partition values, got {vals.shape[0]}")
    coef = _backend.fwht(vals) / float(1 << n)
    keep = np.flatnonzero(np.abs(coef) > tol)
    out = {(): float(coef[0])}
    sites = lat.sites
    for m in keep:
        m = int(m)
        if m:
            out[tuple(sites[k] for k in range(n) if (m >> k) & 1)] = float(coef[m])
    return Interaction(out, lattice=image, translation_invariant=image.periodic)


@dataclass
class RenormalizedResult:
    couplings: Interaction
    image: LatticeSpec
    log_z: np.ndarray = field(repr=False)
    method: str = "enumerate"

    def rebuild(self) -> np.ndarray:
        """``-H'`` rebuilt from the extracted couplings on every image configuration."""
        lat = build_lattice(self.image)
        masks, vals = self.couplings.masks(lat)
        return _backend.neg_energy(lat.n, masks, vals)


def renormalize(J: Interaction, T: Kernel, spec: LatticeSpec, method: str = "auto", tol: float = 0.0,
                cap: int = DEFAULT_ENUMERATION_CAP) -> RenormalizedResult:
    eng = make_engine(spec, J, T, method=method, cap=cap)
    if eng.image is None:
        raise InvalidSpec("renormalize needs a kernel with block spins")
    logz = eng.log_partition()
    return RenormalizedResult(extract_couplings(logz, eng.image, tol, cap), eng.image, logz, eng.method)


@dataclass
class FlowStep:
    step: int
    spec: LatticeSpec
    couplings: Interaction
    norm: float
    truncation: float


def _set_range(lat, X) -> int:
    if len(X) < 2:
        return 0
    return max(lat.sup_distance(s, t) for s in X for t in X)


def rg_flow(J0: Interaction, T: Kernel, spec: LatticeSpec, steps: int, max_range: int | None = None,
            method: str = "auto", cap: int = DEFAULT_ENUMERATION_CAP) -> list[FlowStep]:
    """Iterate the exact map; the image volume of one step is the volume of the next.

    With ``max_range`` set, couplings whose set diameter exceeds it are
    dropped after each step and the largest dropped magnitude is reported
    as the truncation error.  Step 0 is the instantiated input.
    """
    J = J0 if J0.lattice is not None else instantiate(J0, spec)
    out = [FlowStep(0, spec, J, _safe_norm(J), 0.0)]
    for k in range(1, steps + 1):
        res = renormalize(J, T, spec, method=method, cap=cap)
        Jn, dropped = res.couplings, 0.0
        if max_range is not None:
            lat = build_lattice(res.image)
            keep = {}
            for X, v in Jn.items():
                if _set_range(lat, X) <= max_range:
                    keep[X] = v
                else:
                    dropped = max(dropped, abs(v))
            Jn = Interaction(keep, lattice=res.image, translation_invariant=Jn.translation_invariant)
        spec, J = res.image, Jn
        out.append(FlowStep(k, spec, J, _safe_norm(J), dropped))
    return out


def _safe_norm(J: Interaction) -> float:
    return norm(J) if J.translation_invariant else math.nan
