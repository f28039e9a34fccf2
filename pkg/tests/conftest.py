import itertools

import numpy as np
import pytest

from rgexact import _backend

KERNEL_FUNCS = ("fwht", "neg_energy", "char_values", "group_logsumexp", "group_moments")


@pytest.fixture(params=[m.NAME for m in _backend.available()])
def backend(request, monkeypatch):
    """Route every enumeration kernel through one backend for the duration of a test."""
    mod = {m.NAME: m for m in _backend.available()}[request.param]
    for name in KERNEL_FUNCS:
        monkeypatch.setattr(_backend, name, getattr(mod, name))
    return mod


def spins_of(code: int, n: int) -> np.ndarray:
    return np.array([-1 if (code >> k) & 1 else 1 for k in range(n)])


def all_configs(n: int):
    return [spins_of(c, n) for c in range(1 << n)]


def brute_log_z(weight, n: int) -> float:
    """log of sum over all 2^n spin vectors of a positive weight function."""
    vals = [weight(s) for s in all_configs(n)]
    return float(np.log(np.sum(vals)))


def pairs(xs):
    return list(itertools.combinations(xs, 2))
