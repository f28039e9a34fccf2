"""Enumeration kernels: compiled extension when importable, numpy otherwise.

Set ``RGEXACT_BACKEND=numpy`` to force the fallback.
"""
import os

from . import _fallback

_forced = os.environ.get("RGEXACT_BACKEND", "").lower()

compiled = None
if _forced != "numpy":
    try:
        from . import _core as compiled
    except ImportError:
        if _forced == "cython":
            raise

backend = compiled if compiled is not None else _fallback
fallback = _fallback

NAME = backend.NAME
fwht = backend.fwht
neg_energy = backend.neg_energy
char_values = backend.char_values
group_logsumexp = backend.group_logsumexp
group_moments = backend.group_moments


def available():
    """Backend modules importable in this environment, compiled first."""
    return [m for m in (compiled, _fallback) if m is not None]
