import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgexact.errors import CapExceeded, InvalidSpec
from rgexact.lattice import LatticeSpec, build_lattice
from rgexact.rg_map import (BlockMap, Kernel, extract_couplings, kernel_eval, kernel_normalization, renormalize,
                            renormalized_hamiltonian, rg_flow)
from rgexact.spin_model import Interaction, SpinConfig, energy, instantiate

RING4 = LatticeSpec("square_1d", (4,), "periodic")
SQ4 = LatticeSpec("square_2d", (4, 4), "periodic")


def brute_log_z(J, T, spec):
    """Nested loop over (sigma, sigma') using kernel_eval and energy."""
    lat = build_lattice(spec)
    img = build_lattice(BlockMap(spec, T).image)
    Jc = instantiate(J, spec) if J.lattice is None else J
    out = np.zeros(1 << img.n)
    for cp in range(1 << img.n):
        sp = SpinConfig.from_int(img, cp)
        tot = 0.0
        for c in range(1 << lat.n):
            s = SpinConfig.from_int(lat, c)
            tot += kernel_eval(T, s, sp) * math.exp(-energy(Jc, s))
        out[cp] = math.log(tot)
    return out


def test_kernel_factor_examples():
    assert Kernel("decimation", 2).factor([1, -1], 1) == 1
    assert Kernel("decimation", 2).factor([1, -1], -1) == 0
    assert Kernel("kadanoff", 3, kappa=0.5).factor([1, 1, 1], 1) == pytest.approx(math.exp(1.5) / (2 * math.cosh(1.5)))
    assert Kernel("kadanoff", 3, kappa=0.5).factor([1, 1, 1], 1) == pytest.approx(0.95257, abs=1e-5)
    assert Kernel("majority", 3).factor([1, 1, -1], 1) == 1
    assert Kernel("majority", 2).factor([1, -1], 1) == 0.5


def test_kernel_eval_decimation():
    lat = build_lattice(RING4)
    T = Kernel("decimation", 2)
    img = build_lattice(BlockMap(RING4, T).image)
    s = SpinConfig(lat, [1, -1, -1, 1])
    assert kernel_eval(T, s, SpinConfig(img, [1, -1])) == 1
    assert kernel_eval(T, s, SpinConfig(img, [1, 1])) == 0


@pytest.mark.parametrize("T", [Kernel("decimation", 2), Kernel("kadanoff", 2, kappa=0.7), Kernel("majority", 2)],
                         ids=["decimation", "kadanoff", "majority"])
@pytest.mark.parametrize("spec", [LatticeSpec("square_1d", (8,), "periodic"), SQ4], ids=["ring8", "4x4"])
def test_kernel_normalization(T, spec):
    total = kernel_normalization(T, spec)
    if T.kind == "kadanoff":
        np.testing.assert_allclose(total, 1.0, atol=1e-12)
    else:
        assert np.all(total == 1.0)


def test_triangular_majority_normalized():
    spec = LatticeSpec("triangular_2d", (3, 3), "periodic")
    assert np.all(kernel_normalization(Kernel("majority", 3), spec) == 1.0)


def test_zero_coupling_decimation_is_uniform(backend):
    logz = renormalized_hamiltonian(Interaction.zero(), Kernel("decimation", 2), SQ4)
    np.testing.assert_allclose(logz, 12 * math.log(2), rtol=1e-14)
    Jp = extract_couplings(logz, BlockMap(SQ4, Kernel("decimation", 2)).image)
    assert Jp[()] == pytest.approx(12 * math.log(2))
    assert max((abs(v) for X, v in Jp.items() if X), default=0.0) < 1e-12


def test_zero_coupling_kadanoff_constant_matches_brute_force(backend):
    spec = LatticeSpec("square_1d", (6,), "periodic")
    T = Kernel("kadanoff", 2, kappa=0.8)
    logz = renormalized_hamiltonian(Interaction.zero(), T, spec)
    assert np.ptp(logz) < 1e-12
    np.testing.assert_allclose(logz, brute_log_z(Interaction.zero(), T, spec), atol=1e-12)


@pytest.mark.parametrize("T", [Kernel("decimation", 2), Kernel("kadanoff", 2, kappa=0.4), Kernel("majority", 2)],
                         ids=["decimation", "kadanoff", "majority"])
def test_ring4_matches_nested_loop(T, backend):
    J = Interaction.nearest_neighbor("square_1d", 0.6, field=0.1)
    np.testing.assert_allclose(renormalized_hamiltonian(J, T, RING4), brute_log_z(J, T, RING4), atol=1e-12)


def test_constant_logz_gives_constant_coupling():
    img = LatticeSpec("square_1d", (3,), "periodic")
    Jp = extract_couplings(np.full(8, 2.5), img)
    assert dict(Jp.items()) == {(): 2.5}


def test_ring16_decimation_closed_form(backend):
    res = renormalize(Interaction.nearest_neighbor("square_1d", 0.5), Kernel("decimation", 2),
                      LatticeSpec("square_1d", (16,), "periodic"))
    assert res.couplings[((0,), (1,))] == pytest.approx(0.5 * math.log(math.cosh(1.0)), abs=1e-10)
    assert res.couplings[((0,), (1,))] == pytest.approx(0.2168904152, abs=1e-10)
    img = build_lattice(res.image)
    nn = {X for X, _ in res.couplings.items() if len(X) == 2 and img.sup_distance(*X) == 1}
    assert len(nn) == 8
    assert max(abs(v) for X, v in res.couplings.items() if X and X not in nn) <= 1e-12


def test_extract_rejects_wrong_size_and_cap():
    img = LatticeSpec("square_1d", (3,), "periodic")
    with pytest.raises(InvalidSpec):
        extract_couplings(np.zeros(4), img)
    with pytest.raises(CapExceeded):
        extract_couplings(np.zeros(8), img, cap=2)


def _closed_form_flow(K, steps):
    out = []
    for _ in range(steps):
        K = 0.5 * math.log(math.cosh(2 * K))
        out.append(K)
    return out


def test_flow_follows_closed_form():
    steps = rg_flow(Interaction.nearest_neighbor("square_1d", 0.5), Kernel("decimation", 2),
                    LatticeSpec("square_1d", (16,), "periodic"), 3)
    K1, K2, K3 = _closed_form_flow(0.5, 3)
    assert steps[1].couplings[((0,), (1,))] == pytest.approx(K1, abs=1e-10)
    assert steps[2].couplings[((0,), (1,))] == pytest.approx(K2, abs=1e-10)
    # on the 2-site ring both image bonds join the same pair, so the coupling doubles
    assert steps[3].couplings[((0,), (1,))] == pytest.approx(2 * K3, abs=1e-10)
    assert [s.spec.extent for s in steps] == [(16,), (8,), (4,), (2,)]


def test_flow_from_zero_stays_zero():
    steps = rg_flow(Interaction.zero(), Kernel("decimation", 2), LatticeSpec("square_1d", (16,), "periodic"), 3)
    for s in steps[1:]:
        assert max((abs(v) for X, v in s.couplings.items() if X), default=0.0) < 1e-12


@pytest.mark.parametrize("beta", [0.2, 0.5, 0.9])
def test_flow_monotone_decreasing(beta):
    steps = rg_flow(Interaction.nearest_neighbor("square_1d", beta), Kernel("decimation", 2),
                    LatticeSpec("square_1d", (16,), "periodic"), 2)
    ks = [s.couplings[((0,), (1,))] for s in steps]
    assert ks[0] > ks[1] > ks[2] > 0


def test_flow_truncation_reports_dropped_size():
    steps = rg_flow(Interaction.nearest_neighbor("square_2d", 0.3), Kernel("decimation", 2), SQ4, 1, max_range=0)
    assert steps[1].truncation > 0
    assert all(len(X) <= 1 for X, _ in steps[1].couplings.items())


@pytest.mark.parametrize("T", [Kernel("decimation", 2), Kernel("kadanoff", 2, kappa=0.5), Kernel("majority", 2)],
                         ids=["decimation", "kadanoff", "majority"])
def test_rebuild_identity_and_symmetries(T, backend):
    J = Interaction.nearest_neighbor("square_2d", 0.35)
    res = renormalize(J, T, SQ4)
    np.testing.assert_allclose(res.rebuild(), res.log_z, atol=1e-10)
    img = build_lattice(res.image)
    # translation covariance of the image couplings
    for X, v in res.couplings.items():
        if X:
            moved = tuple(sorted(img.translate(s, (1, 0)) for s in X))
            assert res.couplings[moved] == pytest.approx(v, abs=1e-10)
    # even interaction and odd-symmetric kernel give an even image interaction
    assert max((abs(v) for X, v in res.couplings.items() if len(X) % 2), default=0.0) <= 1e-10


@pytest.mark.parametrize("T", [Kernel("decimation", 2), Kernel("kadanoff", 2, kappa=0.5), Kernel("majority", 2)],
                         ids=["decimation", "kadanoff", "majority"])
@pytest.mark.parametrize("spec", [SQ4, LatticeSpec("square_2d", (4, 4), "free"),
                                  LatticeSpec("square_2d", (4, 4), "fixed", -1)], ids=["periodic", "free", "fixed"])
def test_transfer_engine_matches_enumeration(T, spec):
    J = Interaction.nearest_neighbor("square_2d", 0.4, field=0.05)
    a = renormalized_hamiltonian(J, T, spec, method="enumerate")
    b = renormalized_hamiltonian(J, T, spec, method="transfer")
    np.testing.assert_allclose(a, b, atol=1e-11)


def test_cap_exceeded():
    with pytest.raises(CapExceeded):
        renormalized_hamiltonian(Interaction.nearest_neighbor("square_2d", 0.1), Kernel("decimation", 2),
                                 LatticeSpec("square_2d", (6, 6), "periodic"), method="enumerate")


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(-0.5, 0.5), st.sampled_from(["decimation", "kadanoff", "majority"]))
def test_rebuild_identity_property(beta, field, kind):
    spec = LatticeSpec("square_1d", (8,), "periodic")
    res = renormalize(Interaction.nearest_neighbor("square_1d", beta, field), Kernel(kind, 2, kappa=0.6 if kind == "kadanoff" else None), spec)
    np.testing.assert_allclose(res.rebuild(), res.log_z, atol=1e-10)
