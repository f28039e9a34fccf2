"""Desk-scale expansion instances shared by the unit and acceptance suites."""
from rgexact.blockspin import Kernel
from rgexact.lattice import BlockScheme, LatticeSpec
from rgexact.spin_model import Interaction

RING8 = LatticeSpec("square_1d", (8,), "periodic")
RING16 = LatticeSpec("square_1d", (16,), "periodic")
SQ4F = LatticeSpec("square_2d", (4, 4), "free")
L2 = BlockScheme(2, 2, 1)
TRIV = Kernel("trivial")
DEC = Kernel("decimation", 2)
KAD = Kernel("kadanoff", 2, kappa=0.5)


def nn(beta, geometry="square_1d"):
    return Interaction.nearest_neighbor(geometry, beta)


def engineered():
    """NN plus next-nearest couplings on ring 8: decimation leaves long-range terms behind."""
    return Interaction({((0,), (1,)): 0.3, ((0,), (2,)): 0.2})


INSTANCES = [
    (nn(0.2), TRIV, RING8, L2, None),
    (nn(0.2), DEC, RING8, L2, 0b0110),
    (nn(0.2), KAD, RING8, L2, 0b1011),
    (nn(0.3), TRIV, RING16, L2, None),
    (nn(0.2), TRIV, RING16, BlockScheme(2, 4, 1), None),
    (nn(0.3, "square_2d"), DEC, SQ4F, L2, 0b1001),
    (engineered(), DEC, RING8, L2, 0b0101),
]
