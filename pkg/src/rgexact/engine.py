"""Exact evaluation of constrained partition functions and expectations.

Both engines answer the same two questions for a batch of image
configurations ``sp`` (integers, bit ``j`` set means ``sigma'_j = -1``):

* ``log_partition(sp)``: ``log sum_sigma T(sigma, sigma') exp(-H(sigma))``
* ``expectations(subsets, sp)``: ``mu_{sigma'}(sigma_W)`` for each ``W``

:class:`EnumerationEngine` visits all ``2^|V|`` configurations once and bins
them by block statistics.  :class:`TransferEngine` contracts row slices
with transfer matrices and handles larger volumes whose interaction couples
only neighbouring slices.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import _backend
from .blockspin import BlockMap, Kernel
from .errors import CapExceeded, InvalidSpec, NumericalFailure
from .lattice import Lattice, site_set
from .spin_model import DEFAULT_ENUMERATION_CAP, Interaction, as_lattice, instantiate

MAX_SIGNATURE_BINS = 1 << 22
MAX_SLICE_SITES = 12
MAX_SEGMENT_ENTRIES = 1 << 25
SP_BATCH = 4096


def _image_codes(sp, n_image: int) -> np.ndarray:
    if sp is None:
        if n_image > DEFAULT_ENUMERATION_CAP:
            raise CapExceeded(f"2^{n_image} image configurations exceed the cap")
        return np.arange(1 << n_image, dtype=np.int64)
    return np.atleast_1d(np.asarray(sp, dtype=np.int64))


class _EngineBase:
    lattice: Lattice
    blockmap: BlockMap

    @property
    def n_image(self) -> int:
        return self.blockmap.n_image

    @property
    def image(self):
        return self.blockmap.image

    def subset_mask(self, W) -> int:
        return self.lattice.mask(site_set(W))


class EnumerationEngine(_EngineBase):
    """Brute-force engine over all ``2^|V|`` configurations."""

    method = "enumerate"

    def __init__(self, lattice: Lattice, J: Interaction, blockmap: BlockMap,
                 cap: int = DEFAULT_ENUMERATION_CAP):
        n = lattice.n
        if n > cap:
            raise CapExceeded(f"volume of {n} sites exceeds enumeration cap {cap}")
        self.lattice, self.blockmap, self.cap = lattice, blockmap, cap
        masks, vals = J.masks(lattice)
        self.lw = _backend.neg_energy(n, masks, vals)
        kernel = blockmap.kernel
        c = np.arange(1 << n, dtype=np.uint64)
        if kernel.kind == "trivial":
            self.bins = np.zeros(1 << n, dtype=np.int64)
            self.nbins = 1
        elif kernel.kind == "decimation":
            bins = np.zeros(1 << n, dtype=np.int64)
            for j, i in enumerate(blockmap.kept):
                bins |= ((c >> np.uint64(i)) & np.uint64(1)).astype(np.int64) << j
            self.bins, self.nbins = bins, 1 << blockmap.n_image
        else:
            m = blockmap.block_size
            self.nbins = (m + 1) ** blockmap.n_image
            if self.nbins > MAX_SIGNATURE_BINS:
                raise CapExceeded(f"{self.nbins} block signatures exceed {MAX_SIGNATURE_BINS}")
            bins = np.zeros(1 << n, dtype=np.int64)
            for j, mask in enumerate(blockmap.block_masks):
                bins += np.bitwise_count(c & mask).astype(np.int64) * (m + 1) ** j
            self.bins = bins
            self.table = np.exp(kernel.log_table(m))
        self._grouped = None

    def _group(self):
        if self._grouped is None:
            self._grouped = _backend.group_logsumexp(self.lw, self.bins, self.nbins)
        return self._grouped

    def _contract(self, E: np.ndarray) -> np.ndarray:
        """Sum signature weights against the per-block kernel tables."""
        k = self.n_image
        m = self.blockmap.block_size
        lead = E.shape[:-1]
        T = E.reshape(lead + (m + 1,) * k)
        off = len(lead)
        for a in range(k):
            T = np.moveaxis(np.tensordot(T, self.table, axes=([off + a], [0])), -1, off + a)
        return T.reshape(lead + (1 << k,))

    def log_partition(self, sp=None) -> np.ndarray:
        codes = _image_codes(sp, self.n_image)
        G = self._group()
        if self.blockmap.kernel.deterministic:
            out = G[codes] if self.n_image else np.repeat(G, len(codes))
        else:
            top = np.max(G)
            with np.errstate(divide="ignore"):
                out = np.log(self._contract(np.exp(G - top))) + top
            out = out[codes]
        if not np.all(np.isfinite(out)):
            raise NumericalFailure("constrained partition function vanished or overflowed")
        return out

    def expectations(self, subsets: Sequence, sp=None) -> np.ndarray:
        codes = _image_codes(sp, self.n_image)
        masks = np.array([self.subset_mask(W) for W in subsets], dtype=np.uint64)
        if len(masks) == 0:
            return np.zeros((0, len(codes)))
        G = self._group()
        if self.blockmap.kernel.deterministic:
            shift = np.where(np.isfinite(G), G, 0.0)
            mom = _backend.group_moments(self.lw, self.bins, shift, masks)
            idx = codes if self.n_image else np.zeros(len(codes), dtype=np.int64)
            return mom[1:, idx] / mom[0, idx]
        shift = np.full(self.nbins, np.max(G))
        mom = self._contract(_backend.group_moments(self.lw, self.bins, shift, masks))
        return mom[1:, codes] / mom[0, codes]


class TransferEngine(_EngineBase):
    """Row-slice transfer-matrix engine.

    The volume is cut along axis 0 into slices of height 1 (decimation and
    trivial kernels) or ``b`` (block-sum kernels).  Every coupling must lie
    within one slice or join two cyclically adjacent slices.
    """

    method = "transfer"

    def __init__(self, lattice: Lattice, J: Interaction, blockmap: BlockMap):
        if lattice.geometry == "triangular_2d":
            raise InvalidSpec("transfer engine supports square geometries only")
        self.lattice, self.blockmap = lattice, blockmap
        kernel = blockmap.kernel
        g = 1 if kernel.deterministic else kernel.b
        rows = lattice.extent[0]
        if rows % g:
            raise InvalidSpec("slice height must divide the first extent")
        S = rows // g
        self.S = S
        slice_of = [s[0] // g for s in lattice.sites]
        self.slice_sites = [[i for i, s in enumerate(lattice.sites) if slice_of[i] == k] for k in range(S)]
        if max(len(x) for x in self.slice_sites) > MAX_SLICE_SITES:
            raise CapExceeded(f"slices wider than {MAX_SLICE_SITES} sites")
        self.local = {}
        for k, idx in enumerate(self.slice_sites):
            for pos, i in enumerate(idx):
                self.local[i] = (k, pos)
        self.const = 0.0
        on = [[] for _ in range(S)]
        cross = [[] for _ in range(S)]
        for X, v in J.items():
            if not X:
                self.const += v
                continue
            idx = [lattice.index[s] for s in X]
            ks = sorted({self.local[i][0] for i in idx})
            if len(ks) == 1:
                on[ks[0]].append((self._local_mask(idx, ks[0]), v))
                continue
            if len(ks) == 2 and S > 1:
                lo, hi = ks
                if hi == lo + 1:
                    a, b_ = lo, hi
                elif lo == 0 and hi == S - 1 and lattice.periodic:
                    a, b_ = hi, lo
                else:
                    raise InvalidSpec(f"coupling on {X} spans non-adjacent slices")
                if S == 2:
                    a, b_ = 0, 1
                cross[a].append((self._local_mask(idx, a), self._local_mask(idx, b_), v))
                continue
            raise InvalidSpec(f"coupling on {X} spans more than two slices")
        width = [len(x) for x in self.slice_sites]
        self.width = width
        # on-slice log weights over all states
        self.onslice = []
        for k in range(S):
            if on[k]:
                m, v = zip(*on[k])
                self.onslice.append(_backend.neg_energy(width[k], np.array(m, dtype=np.uint64), np.array(v)))
            else:
                self.onslice.append(np.zeros(1 << width[k]))
        # inter-slice matrices (linear, shifted), slice k -> k+1
        self.A = []
        for k in range(S):
            nxt = (k + 1) % S
            if S == 1:
                self.A.append(np.eye(1 << width[0]))
                continue
            logA = np.zeros((1 << width[k], 1 << width[nxt]))
            for ma, mb, v in cross[k]:
                ca = _backend.char_values(width[k], ma)
                cb = _backend.char_values(width[nxt], mb)
                logA += v * np.outer(ca, cb)
            top = float(np.max(logA))
            self.const += top
            self.A.append(np.exp(logA - top))
        self._setup_patterns()
        self._base_segments = self._segments({})

    def _local_mask(self, idx, k) -> int:
        return sum(1 << self.local[i][1] for i in idx if self.local[i][0] == k)

    def _setup_patterns(self):
        bm = self.blockmap
        kernel = bm.kernel
        S = self.S
        self.slice_blocks = [[] for _ in range(S)]
        for j, blk in enumerate(bm.blocks):
            ks = {self.local[i][0] for i in blk}
            k = self.local[blk[0]][0]
            if not kernel.deterministic and len(ks) != 1:
                raise InvalidSpec("RG block crosses a slice boundary")
            self.slice_blocks[k].append(j)
        self.support = []
        self.logd = []
        for k in range(S):
            w = self.width[k]
            states = np.arange(1 << w, dtype=np.uint64)
            blocks = self.slice_blocks[k]
            P = 1 << len(blocks)
            kern = np.zeros((P, 1 << w))
            if kernel.kind == "decimation":
                for l, j in enumerate(blocks):
                    bit = (states >> np.uint64(self.local[bm.blocks[j][0]][1])) & np.uint64(1)
                    for pi in range(P):
                        kern[pi, bit != ((pi >> l) & 1)] = -np.inf
            elif blocks:
                tab = kernel.log_table(bm.block_size)
                for l, j in enumerate(blocks):
                    lm = np.uint64(self._local_mask(bm.blocks[j], k))
                    cnt = np.bitwise_count(states & lm).astype(np.int64)
                    for pi in range(P):
                        kern[pi] += tab[cnt, (pi >> l) & 1]
            alive = np.isfinite(kern)
            size = int(alive.sum(axis=1).max())
            sup = np.zeros((P, size), dtype=np.int64)
            logd = np.full((P, size), -np.inf)
            for pi in range(P):
                st = np.flatnonzero(alive[pi])
                sup[pi, :len(st)] = st
                logd[pi, :len(st)] = self.onslice[k][st] + kern[pi, st]
            top = float(np.max(logd))
            self.const += top
            self.support.append(sup)
            self.logd.append(logd - top)
        starts = [k for k in range(S) if self.slice_blocks[k]] or [0]
        self.starts = starts
        self.seg_slices = []
        for a, s in enumerate(starts):
            end = starts[(a + 1) % len(starts)]
            span = (end - s) % S or S
            self.seg_slices.append([(s + t) % S for t in range(span)])
        for a, s in enumerate(starts):
            nxt = starts[(a + 1) % len(starts)]
            cost = (self.support[s].size * self.support[nxt].size)
            if cost > MAX_SEGMENT_ENTRIES:
                raise CapExceeded("transfer segment tensor too large")

    def _segments(self, signs: dict[int, int]) -> list[np.ndarray]:
        """Segment tensors ``[pi_start, pi_next, a, b]``; ``signs`` maps slice -> local mask."""
        return [self._segment(a, signs) for a in range(len(self.starts))]

    def _segment(self, a: int, signs: dict[int, int]) -> np.ndarray:
        sl = self.seg_slices[a]
        s = sl[0]
        nxt = self.starts[(a + 1) % len(self.starts)]
        d0 = np.exp(self.logd[s])  # (P, m)
        if s in signs:
            d0 = d0 * _backend.char_values(self.width[s], signs[s])[self.support[s]]
        # left[pi, i, state of following slice]
        left = d0[:, :, None] * self.A[s][self.support[s]]
        for k in sl[1:]:
            dk = np.exp(self.logd[k][0])
            if k in signs:
                dk = dk * _backend.char_values(self.width[k], signs[k])
            left = (left * dk[None, None, :]) @ self.A[k]
        sup_n = self.support[nxt]
        # gather columns for each next pattern: out[pi, pi', i, j]
        return np.moveaxis(left[:, :, sup_n], 2, 1)

    def _chain(self, segs, codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Trace of the segment product per image configuration, as (trace, log scale)."""
        pats = []
        for s in self.starts:
            pi = np.zeros(len(codes), dtype=np.int64)
            for l, j in enumerate(self.slice_blocks[s]):
                pi |= ((codes >> j) & 1) << l
            pats.append(pi)
        nseg = len(segs)
        tr = np.empty(len(codes))
        ls = np.empty(len(codes))
        for lo in range(0, len(codes), SP_BATCH):
            hi = min(lo + SP_BATCH, len(codes))
            M = segs[0][pats[0][lo:hi], pats[1 % nseg][lo:hi]]
            scale = np.zeros(hi - lo)
            for a in range(1, nseg):
                M = M @ segs[a][pats[a][lo:hi], pats[(a + 1) % nseg][lo:hi]]
                top = np.max(np.abs(M), axis=(1, 2))
                top[top == 0] = 1.0
                M /= top[:, None, None]
                scale += np.log(top)
            tr[lo:hi] = np.einsum("bii->b", M)
            ls[lo:hi] = scale
        return tr, ls

    def log_partition(self, sp=None) -> np.ndarray:
        codes = _image_codes(sp, self.n_image)
        tr, ls = self._chain(self._base_segments, codes)
        if np.any(tr <= 0):
            raise NumericalFailure("non-positive constrained partition function")
        return np.log(tr) + ls + self.const

    def expectations(self, subsets: Sequence, sp=None) -> np.ndarray:
        codes = _image_codes(sp, self.n_image)
        ztr, zls = self._chain(self._base_segments, codes)
        out = np.empty((len(subsets), len(codes)))
        for r, W in enumerate(subsets):
            signs: dict[int, int] = {}
            for s in site_set(W):
                k, pos = self.local[self.lattice.index[self.lattice.wrap(s)]]
                signs[k] = signs.get(k, 0) | (1 << pos)
            segs = list(self._base_segments)
            for a, sl in enumerate(self.seg_slices):
                if any(k in signs for k in sl):
                    segs[a] = self._segment(a, signs)
            tr, ls = self._chain(segs, codes)
            out[r] = tr / ztr * np.exp(ls - zls)
        return out


def make_engine(spec, J: Interaction, kernel: Kernel, method: str = "auto",
                cap: int = DEFAULT_ENUMERATION_CAP):
    """Engine for ``J`` (generator or instantiated) on the volume ``spec``."""
    lattice = as_lattice(spec)
    spec = lattice.spec
    if J.lattice is None:
        J = instantiate(J, spec)
    elif J.lattice.extent != spec.extent or J.lattice.geometry != spec.geometry:
        raise InvalidSpec("interaction volume differs from the requested volume")
    bm = BlockMap(spec, kernel)
    if method == "enumerate" or (method == "auto" and lattice.n <= cap):
        return EnumerationEngine(lattice, J, bm, cap)
    if method in ("transfer", "auto"):
        try:
            return TransferEngine(lattice, J, bm)
        except (InvalidSpec, CapExceeded) as e:
            if method == "transfer":
                raise
            raise CapExceeded(f"{lattice.n} sites exceed the enumeration cap {cap} "
                              f"and the transfer engine cannot be used: {e}") from e
    raise InvalidSpec(f"unknown engine method {method!r}")

