"""Exact finite-volume real-space renormalization for Ising-type spin systems."""

__version__ = "0.1.0"

from .blockspin import BlockMap, Kernel, kernel_eval, kernel_normalization
from .errors import CapExceeded, DivergentExpansion, InvalidSpec, NumericalFailure, RGError
from .lattice import BlockScheme, Lattice, LatticeSpec, bar_map, block_type, build_lattice, l_distance
from .rg_map import extract_couplings, renormalize, renormalized_hamiltonian, rg_flow
from .spin_model import Interaction, SpinConfig, SpinFunction, character_expand, energy, instantiate, norm

__all__ = [
    "BlockMap", "BlockScheme", "CapExceeded", "DivergentExpansion", "Interaction", "InvalidSpec", "Kernel",
    "Lattice", "LatticeSpec", "NumericalFailure", "RGError", "SpinConfig", "SpinFunction", "bar_map",
    "block_type", "build_lattice", "character_expand", "energy", "extract_couplings", "instantiate",
    "kernel_eval", "kernel_normalization", "l_distance", "norm", "renormalize", "renormalized_hamiltonian",
    "rg_flow",
]
