import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgexact.blockspin import Kernel
from rgexact.combinatorics import CountingParams, delta_function
from rgexact.errors import DivergentExpansion, InvalidSpec
from rgexact.jacobian import (BandBoundParams, JacobianMatrix, band_bound_rhs, band_bound_terms, band_profile,
                              finite_difference_oracle, jacobian_matrix, linearization_bound, linearize_apply,
                              neighborhood_count, partial_derivative, pen_schedule, sub_exponential_series,
                              translation_family)
from rgexact.lattice import BlockScheme, LatticeSpec, build_lattice, l_distance
from rgexact.spin_model import Interaction

SQ4 = LatticeSpec("square_2d", (4, 4), "periodic")
IMG2 = LatticeSpec("square_2d", (2, 2), "periodic")
DEC = Kernel("decimation", 2)
NN_BONDS = [((0, 0), (0, 1)), ((1, 2), (2, 2)), ((3, 3), (0, 3)), ((2, 0), (2, 1))]


def brute_derivative(beta, Z, W):
    """Decimation derivative by enumerating all 2^16 configurations of the 4x4 torus."""
    sites = [(i, j) for i in range(4) for j in range(4)]
    idx = {s: k for k, s in enumerate(sites)}
    codes = np.arange(1 << 16)
    spins = 1 - 2 * ((codes[:, None] >> np.arange(16)) & 1)
    energy = np.zeros(len(codes))
    for (i, j) in sites:
        for nb in ((i + 1) % 4, j), (i, (j + 1) % 4):
            energy += spins[:, idx[(i, j)]] * spins[:, idx[nb]]
    weight = np.exp(beta * energy)
    obs = np.prod(spins[:, [idx[w] for w in W]], axis=1)
    image = [(0, 0), (0, 1), (1, 0), (1, 1)]
    kept = spins[:, [idx[(2 * a, 2 * b)] for a, b in image]]
    total = 0.0
    for sp in itertools.product([1, -1], repeat=4):
        sel = np.all(kept == np.array(sp), axis=1)
        mu = np.sum(weight[sel] * obs[sel]) / np.sum(weight[sel])
        total += np.prod([sp[image.index(z)] for z in Z]) * mu
    return total / 16


def kept_sites(Z):
    return tuple(sorted((2 * a, 2 * b) for a, b in Z))


def test_infinite_temperature_is_kept_site_incidence():
    lat, img = build_lattice(SQ4), build_lattice(IMG2)
    zs = [c for k in range(1, 5) for c in itertools.combinations(img.sites, k)]
    ws = [c for k in range(1, 4) for c in itertools.combinations(lat.sites, k)]
    m = jacobian_matrix(Interaction.zero(), DEC, SQ4, zs, ws)
    expected = np.array([[1.0 if tuple(sorted(W)) == kept_sites(Z) else 0.0 for W in ws] for Z in zs])
    assert np.max(np.abs(m.values - expected)) <= 1e-12
    realizable = [a for a, Z in enumerate(zs) if len(Z) <= 3]
    assert np.allclose(m.values[realizable].sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("Z,W", [([(0, 0)], [(0, 0)]), ([(0, 1), (1, 1)], [(0, 2), (2, 2)]),
                                 ([(1, 0)], [(1, 0)]), ([(0, 0), (0, 1)], [(0, 0), (0, 1)])])
def test_infinite_temperature_matches_enumeration(Z, W):
    assert partial_derivative(Interaction.zero(), DEC, SQ4, Z, W) == pytest.approx(brute_derivative(0.0, Z, W),
                                                                                    abs=1e-14)


@pytest.mark.parametrize("Z,W", [([(0, 0), (0, 1)], [(0, 0), (0, 1)]), ([(0, 0)], [(1, 1)]),
                                 ([(0, 0), (1, 1)], [(1, 1), (1, 2)]), ([(0, 0), (0, 1), (1, 0), (1, 1)], [(3, 3)])])
def test_derivative_matches_enumeration_oracle(backend, Z, W):
    J = Interaction.nearest_neighbor("square_2d", 0.3)
    assert partial_derivative(J, DEC, SQ4, Z, W) == pytest.approx(brute_derivative(0.3, Z, W), abs=1e-13)


@pytest.mark.parametrize("kernel", [DEC, Kernel("kadanoff", 2, kappa=0.7), Kernel("majority", 2)])
def test_derivative_matches_finite_differences(kernel):
    J = Interaction.nearest_neighbor("square_2d", 0.3)
    for Z, W in [([(0, 0), (0, 1)], NN_BONDS[0]), ([(1, 1)], [(2, 2)]), ([(0, 0), (1, 0)], NN_BONDS[1])]:
        exact = partial_derivative(J, kernel, SQ4, Z, W)
        assert finite_difference_oracle(J, kernel, SQ4, Z, W, h=1e-5) == pytest.approx(exact, abs=1e-6)


def test_finite_difference_step_is_second_order():
    J = Interaction.nearest_neighbor("square_1d", 0.4)
    spec = LatticeSpec("square_1d", (8,), "periodic")
    Z, W = [0, 1], [1, 2]
    exact = partial_derivative(J, DEC, spec, Z, W)
    e1 = finite_difference_oracle(J, DEC, spec, Z, W, h=0.02) - exact
    e2 = finite_difference_oracle(J, DEC, spec, Z, W, h=0.01) - exact
    assert e1 / e2 == pytest.approx(4.0, rel=0.02)
    with pytest.raises(InvalidSpec):
        finite_difference_oracle(J, DEC, spec, Z, W, h=0.0)


def test_translation_covariance():
    J = Interaction.nearest_neighbor("square_2d", 0.35, 0.1)
    base = partial_derivative(J, DEC, SQ4, [(0, 0), (0, 1)], [(0, 1), (1, 1)])
    for t in [(1, 0), (0, 1), (1, 1)]:
        Z = [((0 + t[0]) % 2, (0 + t[1]) % 2), ((0 + t[0]) % 2, (1 + t[1]) % 2)]
        W = [((0 + 2 * t[0]) % 4, (1 + 2 * t[1]) % 4), ((1 + 2 * t[0]) % 4, (1 + 2 * t[1]) % 4)]
        assert partial_derivative(J, DEC, SQ4, Z, W) == pytest.approx(base, abs=1e-10)


def test_translation_symmetry_shortcut_and_threads_agree():
    J = Interaction.nearest_neighbor("square_2d", 0.3)
    lat = build_lattice(SQ4)
    zs = [((0, 0),), ((0, 0), (0, 1)), ((1, 1), (0, 1))]
    ws = translation_family([[(0, 0), (0, 1)], [(0, 0)]], SQ4)
    full = jacobian_matrix(J, DEC, SQ4, zs, ws)
    fast = jacobian_matrix(J, DEC, SQ4, zs, ws, translation_symmetry=True, threads=3, chunk=2)
    assert np.max(np.abs(full.values - fast.values)) <= 1e-12
    assert len(ws) == 16 + 16 and all(len(W) in (1, 2) for W in ws) and lat.n == 16


def test_empty_families():
    m = jacobian_matrix(Interaction.zero(), DEC, SQ4, [], [])
    assert m.values.shape == (0, 0) and m.entries == {}


def test_matrix_csv_columns():
    scheme = BlockScheme(2, 2, 1, lattice=SQ4)
    m = jacobian_matrix(Interaction.zero(), DEC, SQ4, [[(0, 0)]], [[(0, 0)], [(1, 1)]])
    rows = m.to_csv(scheme).splitlines()
    assert rows[0] == "Z_encoding,W_encoding,l_distance,value"
    assert len(rows) == 3 and m[[(0, 0)], [(0, 0)]] == pytest.approx(1.0)


def test_band_profile_at_infinite_temperature_is_diagonal():
    scheme = BlockScheme(2, 2, 1, lattice=SQ4)
    img = build_lattice(IMG2)
    zs = [c for k in (1, 2) for c in itertools.combinations(img.sites, k)]
    ws = [c for k in (1, 2) for c in itertools.combinations(build_lattice(SQ4).sites, k)]
    prof = band_profile(jacobian_matrix(Interaction.zero(), DEC, SQ4, zs, ws), scheme)
    assert prof.bins[0] == pytest.approx(1.0)
    assert all(v <= 1e-13 for n, v in prof.bins.items() if n >= 1)
    assert not prof.reliable


def test_band_profile_fit_on_synthetic_exponential():
    data = {k: (float(k) + 0.5, math.exp(-(k + 0.5))) for k in range(8)}
    # entries e^{-l} binned at floor(l); the bin maximum e^{-n-1/2} is fit by n^alpha with alpha close to 1
    prof = band_profile(data, BlockScheme(2, 2, 1, d=1))
    assert prof.alpha == pytest.approx(1.0, abs=0.05) and prof.reliable
    assert all(prof.bins[n] <= prof.majorant * math.exp(-n ** prof.alpha) * (1 + 1e-12) for n in prof.bins)
    assert json_roundtrip(prof)["alpha"] == prof.alpha


def json_roundtrip(prof):
    import json
    return json.loads(prof.to_json())


def test_band_profile_rejects_empty_matrix():
    with pytest.raises(InvalidSpec):
        band_profile(JacobianMatrix([], [], np.zeros((0, 0))), BlockScheme(2, 2, 1, lattice=SQ4))


def test_neighborhood_count_growth():
    spec = LatticeSpec("square_2d", (16, 16), "periodic")
    scheme = BlockScheme(1, 1, 1, lattice=spec)
    bonds = translation_family([[(0, 0), (0, 1)], [(0, 0), (1, 0)]], spec)
    counts = [neighborhood_count([(8, 8)], E, bonds, scheme) for E in range(0, 9)]
    assert counts == sorted(counts)
    assert counts[0] == 4
    assert neighborhood_count([(8, 8)], 100, bonds, scheme) == len(bonds) == 512
    ratios = [counts[E] / E ** 2 for E in range(2, 7)]
    assert min(ratios) > 1 and max(ratios) < 20


def test_sub_exponential_series_matches_direct_sum():
    direct = math.fsum(math.exp(-n) * (n + 1) ** 2 for n in range(2000))
    exact = math.e ** 2 * (math.e + 1) / (math.e - 1) ** 3
    res = sub_exponential_series(1.0, 2)
    assert res.value == pytest.approx(direct, rel=1e-14)
    assert direct == pytest.approx(exact, rel=1e-14)
    assert res.value >= res.partial and res.tail >= 0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 2.0), st.integers(0, 3))
def test_sub_exponential_series_is_an_upper_bound(alpha, d):
    res = sub_exponential_series(alpha, d)
    direct = math.fsum(math.exp(-n ** alpha) * (n + 1) ** d for n in range(res.terms + 4000))
    assert res.value >= direct * (1 - 1e-12)
    assert res.value <= direct * (1 + 1e-6)


def test_linearization_bound_errors():
    with pytest.raises(DivergentExpansion):
        linearization_bound(0.0, 1.0, 2)
    assert linearization_bound(1.0, 0.0, 2) == 0.0


def test_linearize_apply_at_infinite_temperature():
    scheme = BlockScheme(2, 2, 1, lattice=SQ4)
    eps = 0.01
    nn = Interaction.nearest_neighbor("square_2d", eps)
    assert linearize_apply(Interaction.zero(), DEC, SQ4, nn, [(0, 0), (0, 1)], 10.0, scheme) == pytest.approx(0.0,
                                                                                                           abs=1e-15)
    dist2 = Interaction({((0, 0), (0, 2)): eps, ((1, 1), (1, 3)): eps}, lattice=SQ4)
    assert linearize_apply(Interaction.zero(), DEC, SQ4, dist2, [(0, 0), (0, 1)], 10.0, scheme) == pytest.approx(eps)
    assert linearize_apply(Interaction.zero(), DEC, SQ4, Interaction.zero(), [(0, 0)], 10.0, scheme) == 0.0


def test_linearize_apply_respects_majorant_bound():
    J = Interaction.nearest_neighbor("square_2d", 0.3)
    scheme = BlockScheme(2, 2, 1, lattice=SQ4)
    K = Interaction.nearest_neighbor("square_2d", 0.05)
    Z = ((0, 0), (0, 1))
    ws = [W for W, _ in K.items() if W] if K.lattice is not None else translation_family(
        [[(0, 0), (0, 1)], [(0, 0), (1, 0)]], SQ4)
    m = jacobian_matrix(J, DEC, SQ4, [Z], ws)
    prof = band_profile(m, scheme)
    applied = linearize_apply(J, DEC, SQ4, K, Z, 100.0, scheme)
    assert applied == pytest.approx(float(m.values.sum()) * 0.05, rel=1e-12)
    counted = neighborhood_count([(0, 0)], 100, ws, scheme)
    assert abs(applied) <= linearization_bound(prof, 0.05, 2, growth=counted)


def test_band_bound_hand_value():
    params = BandBoundParams(4, 4, 4, 2.0, 2, delta_function(CountingParams(2, M=2), 1 / 64))
    l2 = math.log(2)
    hand = 4 * (1 + l2) ** 2 * (1 / (12 * l2) + (2 / 12) * 2 * 5 * 2 ** 10)
    assert band_bound_rhs(params) == pytest.approx(hand, rel=1e-12)
    large, pinned = band_bound_terms(params)
    assert large == pytest.approx(4 * (1 + l2) ** 2 / (12 * l2), rel=1e-12)
    assert large + pinned == band_bound_rhs(params)


def test_band_bound_zero_delta():
    assert band_bound_rhs(BandBoundParams(3, 3, 3, 2.0, 2, lambda P: 0.0)) == 0.0
    with pytest.raises(InvalidSpec):
        BandBoundParams(3, 3, 3, 1.0, 2, lambda P: 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 20), st.integers(1, 20), st.integers(1, 20), st.integers(1, 5))
def test_band_bound_monotone_in_cutoffs(S, Q, K, step):
    delta = delta_function(CountingParams(2, M=2), 1 / 64)
    base = band_bound_rhs(BandBoundParams(S, Q, K, 2.0, 2, delta))
    assert band_bound_rhs(BandBoundParams(S, Q + step, K, 2.0, 2, delta)) < base
    assert band_bound_rhs(BandBoundParams(S, Q, K + step, 2.0, 2, delta)) < base
    large = band_bound_terms(BandBoundParams(S, Q, K, 2.0, 2, delta))[0]
    assert band_bound_terms(BandBoundParams(S + step, Q, K, 2.0, 2, delta))[0] < large


def test_band_bound_decreases_in_support_size_when_pinned_tail_vanishes():
    delta = delta_function(CountingParams(2, M=2), 1 / 64)
    rhs8 = band_bound_rhs(BandBoundParams(8, 200, 200, 2.0, 2, delta))
    rhs4 = band_bound_rhs(BandBoundParams(4, 200, 200, 2.0, 2, delta))
    assert rhs8 < rhs4


@pytest.mark.parametrize("p", [2, 3, 9])
def test_pen_schedule_decays(p):
    params = CountingParams(p, M=2)
    from rgexact.combinatorics import divergence_point
    eps = float(divergence_point(params)) * 1e-3
    sched = pen_schedule(0.25, 0.5, 3, 2.0, p, delta_function(params, eps))
    assert sched.decreasing and sched.alpha_prime > 0
    ls = sched.ls
    bound = sched.rhs[0] * np.exp(ls[0] ** sched.alpha_prime - ls ** sched.alpha_prime)
    assert np.all(sched.rhs <= bound * (1 + 1e-9))


def test_pen_schedule_validates_exponents():
    with pytest.raises(InvalidSpec):
        pen_schedule(0.5, 0.25, 3, 2.0, 2, lambda P: 0.1)


def test_l_distance_used_for_bins():
    scheme = BlockScheme(2, 2, 1, lattice=SQ4)
    m = jacobian_matrix(Interaction.zero(), DEC, SQ4, [[(0, 0)]], [[(0, 0)], [(2, 2)]])
    d = m.l_distances(scheme)
    assert d[0, 0] == l_distance([(0, 0)], [(0, 0)], scheme) == 0
