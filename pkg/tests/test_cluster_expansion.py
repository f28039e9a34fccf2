import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rgexact.cluster_expansion import (PolymerActivity, PolymerWeights, allowable, avoidance_oracle,
                                       decomposition_derivative, epsilon_L, iterated_block_sum,
                                       kp_condition_check, modified_expectation, numerator_decomposition,
                                       polymer_activity, polymer_partition, polymer_weights, random_polymer_system,
                                       reconstruct, truncation_tail, ursell)
from rgexact.constrained_gibbs import make_rng
from rgexact.errors import CapExceeded, InvalidSpec
from rgexact.jacobian import partial_derivative
from rgexact.lattice import BlockScheme, LatticeSpec
from rgexact.spin_model import Interaction, SpinFunction

from expansion_instances import DEC, INSTANCES, KAD, L2, RING8, RING16, SQ4F, TRIV, engineered, nn


def graph_sum_oracle(adj):
    """Sum over every connected spanning graph by explicit edge-subset enumeration."""
    n = len(adj)
    edges = list(itertools.combinations(range(n), 2))
    total = 0
    for k in range(len(edges) + 1):
        for chosen in itertools.combinations(edges, k):
            parent = list(range(n))

            def find(i):
                while parent[i] != i:
                    i = parent[i]
                return i
            for i, j in chosen:
                parent[find(i)] = find(j)
            if len({find(i) for i in range(n)}) == 1:
                total += math.prod(-adj[i][j] for i, j in chosen)
    return total


# -- iterated block sums ---------------------------------------------------


def test_infinite_temperature_has_no_long_range_terms():
    res = iterated_block_sum(Interaction.zero(), DEC, RING8, L2, 0b0011)
    assert all(not stage.lr for stage in res.stages)
    assert -res.F_last == pytest.approx(res.log_partition, abs=1e-13)


def test_decimated_nearest_neighbour_ring_stays_short_range():
    res = iterated_block_sum(nn(0.2), DEC, RING8, L2, 0b0110)
    assert res.activities == []
    assert -res.F_last == pytest.approx(res.log_partition, abs=1e-12)


@pytest.mark.parametrize("J,T,spec,scheme,code", INSTANCES)
def test_stage_split_and_long_range_diameter(J, T, spec, scheme, code):
    res = iterated_block_sum(J, T, spec, scheme, code)
    for i, _ in enumerate(res.stages, start=1):
        full, lr, sr = (res.stage_function(i, part) for part in ("full", "lr", "sr"))
        assert (lr + sr).coeffs == pytest.approx(full.coeffs)
        for B in res.lr_supports(i):
            assert max(res.lattice.sup_distance(s, t) for s, t in itertools.combinations(B, 2)) > scheme.L


def test_engineered_instance_has_long_range_terms():
    res = iterated_block_sum(engineered(), DEC, RING8, L2, 0b0101)
    assert len(res.activities) >= 1
    assert all(allowable(a.bar, res.scheme) for a in res.activities)


def test_rejects_inconsistent_schemes():
    with pytest.raises(InvalidSpec):
        iterated_block_sum(nn(0.2), TRIV, LatticeSpec("square_1d", (6,), "periodic"), L2)
    with pytest.raises(InvalidSpec):
        iterated_block_sum(nn(0.2), DEC, RING8, L2)
    with pytest.raises(InvalidSpec):
        iterated_block_sum(Interaction({((0,), (3,)): 0.1}), TRIV, RING8, L2)


# -- activities and the modified expectation --------------------------------


def test_activity_basics():
    zero = PolymerActivity(((0,), (3,)), 0b1001, frozenset({(0,), (1,)}), 0.0)
    assert zero.sup_norm == 0.0 and zero.K.coeffs == {(): 0.0, ((0,), (3,)): -0.0}
    act = PolymerActivity(((0,), (3,)), 0b1001, frozenset({(0,), (1,)}), 0.3)
    assert act.sup_norm == pytest.approx(math.exp(0.3) - 1)
    for s in (1, -1):
        assert act.K.coeffs[()] + s * act.K.coeffs[((0,), (3,))] == pytest.approx(math.exp(-0.3 * s) - 1)


def test_polymer_activity_lookup_and_allowability():
    res = iterated_block_sum(nn(0.2), TRIV, RING16, L2)
    for a in res.activities:
        assert polymer_activity(a.B, res) == a
    # a support present in no stage has zero activity
    assert polymer_activity([(0,), (2,)], res).coefficient == 0.0
    with pytest.raises(InvalidSpec):
        polymer_activity([(0,), (8,)], res)
    assert allowable({(0,), (2,)}, res.scheme) and not allowable({(0,), (3,)}, res.scheme)


@pytest.mark.parametrize("J,T,spec,scheme,code", INSTANCES)
def test_modified_expectation_normalized_and_linear(J, T, spec, scheme, code):
    res = iterated_block_sum(J, T, spec, scheme, code)
    assert modified_expectation(SpinFunction({(): 1.0}), res) == pytest.approx(1.0, abs=1e-12)
    assert res.modified_expectation(SpinFunction({(): 2.5})) == pytest.approx(2.5, abs=1e-12)
    s0 = res.lattice.sites[0]
    f, g = SpinFunction({(s0,): 1.0}), SpinFunction({(): 0.5})
    assert res.modified_expectation(f + g) == pytest.approx(res.modified_expectation(f) + 0.5, abs=1e-12)


def test_modified_expectation_without_activities_is_constrained_expectation():
    res = iterated_block_sum(nn(0.4), DEC, RING8, L2, 0b1100)
    assert res.activities == []
    W = [(1,), (5,)]
    assert res.modified_expectation(W) == pytest.approx(res.direct_expectation(W), abs=1e-12)


def test_epsilon_grows_with_beta():
    e1 = epsilon_L(iterated_block_sum(nn(0.1), TRIV, RING8, L2).activities)
    e2 = epsilon_L(iterated_block_sum(nn(0.2), TRIV, RING8, L2).activities)
    assert 0 < e1 < e2 < math.inf


def test_epsilon_shrinks_with_block_size():
    e2 = epsilon_L(iterated_block_sum(nn(0.2), TRIV, RING16, L2).activities)
    e4 = epsilon_L(iterated_block_sum(nn(0.2), TRIV, RING16, BlockScheme(2, 4, 1)).activities)
    assert 0 < e4 < e2
    assert epsilon_L([]) == 0.0


# -- polymer weights and reconstruction ------------------------------------


def test_no_activities_gives_unit_polymer_sum():
    res = iterated_block_sum(nn(0.2), DEC, RING8, L2, 0b0110)
    w = polymer_weights(res.activities, res)
    assert w.w == {} and polymer_partition(w) == 1.0


def test_single_activity_weight_is_its_expectation():
    res = iterated_block_sum(nn(0.2), TRIV, RING8, L2)
    act = res.activities[0]
    w = polymer_weights([act], res)
    assert w.w == {act.bar: pytest.approx(res.modified_expectation(act.K), abs=1e-14)}
    assert w.v[act.bar] == act.sup_norm


@pytest.mark.parametrize("J,T,spec,scheme,code", INSTANCES)
def test_weights_bounded_by_majorants(J, T, spec, scheme, code):
    res = iterated_block_sum(J, T, spec, scheme, code)
    w = polymer_weights(res.activities, res)
    for N in w.w:
        assert abs(w.w[N]) <= w.v[N] * (1 + 1e-12) + 1e-15


@pytest.mark.parametrize("J,T,spec,scheme,code", INSTANCES)
def test_cluster_reconstruction_of_partition_function(J, T, spec, scheme, code):
    rec = reconstruct(iterated_block_sum(J, T, spec, scheme, code))
    assert rec.relative_error <= 1e-8
    assert rec.truncation_bound == 0.0


def test_truncated_reconstruction_error_within_tail_bound():
    res = iterated_block_sum(nn(0.3), TRIV, RING16, L2)
    rec = reconstruct(res, n_max=1)
    assert rec.truncation_bound > 0
    assert abs(rec.polymer_sum - math.exp(rec.log_partition_direct + res.F_last)) <= rec.truncation_bound * 1.01


def test_truncation_tail_elementary_sums():
    assert truncation_tail([0.1, 0.2, 0.3], 1) == pytest.approx(0.1 * 0.2 + 0.1 * 0.3 + 0.2 * 0.3 + 0.006)
    assert truncation_tail([0.1, 0.2], None) == 0.0


@pytest.mark.parametrize("J,T,spec,scheme,code", INSTANCES)
def test_numerator_decomposition_reproduces_expectation(J, T, spec, scheme, code):
    res = iterated_block_sum(J, T, spec, scheme, code)
    w = polymer_weights(res.activities, res, n_max=None)
    W = res.lattice.sites[1:3]
    dec = numerator_decomposition(w, res, W, n_max=None)
    assert dec.expectation == pytest.approx(res.direct_expectation(W), abs=1e-8)
    if not res.activities:
        assert list(dec.w_tilde) == [frozenset()]
        assert dec.w_tilde[frozenset()] == pytest.approx(res.modified_expectation(W), abs=1e-14)


def test_one_link_term_of_the_numerator():
    res = iterated_block_sum(nn(0.2), TRIV, RING8, L2)
    act = res.activities[0]
    W = act.B[:1]
    dec = numerator_decomposition(polymer_weights([act], res), res, W)
    expected = res.modified_expectation(np.asarray(res.char(res.lattice.mask(W)) * res.activity_values(act)))
    assert dec.w_tilde[act.bar] == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("T,spec,Z,W", [
    (KAD, RING8, [(0,), (1,)], [(1,), (2,)]),
    (DEC, SQ4F, [(0, 0), (1, 1)], [(0, 0), (0, 1)]),
])
def test_decomposition_derivative_matches_jacobian(T, spec, Z, W):
    J = nn(0.25, spec.geometry)
    via_clusters = decomposition_derivative(J, T, spec, L2, Z, W)
    assert via_clusters == pytest.approx(partial_derivative(J, T, spec, Z, W), abs=1e-8)


def test_subset_budget():
    res = iterated_block_sum(nn(0.3), TRIV, RING16, L2)
    with pytest.raises(CapExceeded):
        polymer_weights(res.activities * 5, res, n_max=None)


# -- Ursell coefficients ---------------------------------------------------


@pytest.mark.parametrize("adj,value", [
    ([[0]], 1),
    ([[0, 1], [1, 0]], -1),
    ([[0, 1, 0], [1, 0, 1], [0, 1, 0]], 1),
    ([[0, 1, 1], [1, 0, 1], [1, 1, 0]], 2),
    ([[0, 0, 1], [0, 0, 0], [1, 0, 0]], 0),
])
def test_ursell_hand_values(adj, value):
    got = ursell(adj)
    assert got == value and isinstance(got, int)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5).flatmap(lambda n: st.lists(st.booleans(), min_size=n * (n - 1) // 2,
                                                     max_size=n * (n - 1) // 2).map(lambda b: (n, b))))
def test_ursell_matches_graph_enumeration(data):
    n, bits = data
    adj = [[0] * n for _ in range(n)]
    for (i, j), b in zip(itertools.combinations(range(n), 2), bits):
        adj[i][j] = adj[j][i] = int(b)
    assert ursell(adj) == graph_sum_oracle(adj)


def test_ursell_complete_graph_and_limits():
    # complete graph on n vertices: (-1)^{n-1} (n-1)!
    for n in range(1, 8):
        adj = [[int(i != j) for j in range(n)] for i in range(n)]
        assert ursell(adj) == (-1) ** (n - 1) * math.factorial(n - 1)
    with pytest.raises(CapExceeded):
        ursell(np.ones((9, 9)))


# -- Kotecky-Preiss --------------------------------------------------------


RING_BARS = BlockScheme(1, 1, 1, lattice=LatticeSpec("square_1d", (6,), "periodic"))


def test_kp_zero_weights_pass():
    w = PolymerWeights.from_weights({frozenset({(0,)}): 0.0}, RING_BARS)
    for M in (1.01, 2.0, 10.0):
        assert kp_condition_check(w, M).passed


def test_kp_boundary_and_doubled_cases():
    N = frozenset({(0,), (1,)})
    M = 2.0
    edge = PolymerWeights.from_weights({N: math.log(M) * M ** -2}, RING_BARS)
    rep = kp_condition_check(edge, M)
    assert rep.passed and rep.worst_margin == pytest.approx(0.0, abs=1e-15)
    doubled = PolymerWeights.from_weights({N: 2 * math.log(M) * M ** -2}, RING_BARS)
    rep = kp_condition_check(doubled, M)
    assert not rep.passed and rep.worst_margin == pytest.approx(-math.log(M))
    with pytest.raises(InvalidSpec):
        kp_condition_check(edge, 1.0)


def test_avoidance_trivial_cases():
    zero = PolymerWeights.from_weights({frozenset({(0,)}): 0.0}, RING_BARS)
    assert avoidance_oracle(zero, [(3,)], 2.0).ratio == 1.0
    scheme = BlockScheme(1, 1, 1, lattice=LatticeSpec("square_1d", (12,), "periodic"))
    far = PolymerWeights.from_weights({frozenset({(0,)}): 0.1}, scheme)
    res = avoidance_oracle(far, [(6,)], 2.0)
    assert res.ratio == 1.0 and res.bound == 2.0 and res.passed


def test_avoidance_bound_on_random_systems():
    rng = make_rng(7)
    for _ in range(100):
        w = random_polymer_system(rng, RING_BARS)
        assert kp_condition_check(w, 2.0).passed
        k = int(rng.integers(1, 3))
        Y = [RING_BARS.bar_sites[i] for i in rng.choice(6, size=k, replace=False)]
        assert avoidance_oracle(w, Y, 2.0).passed


def test_avoidance_budget():
    w = PolymerWeights.from_weights({frozenset({(i,)}): 0.01 for i in range(6)}, RING_BARS)
    with pytest.raises(CapExceeded):
        avoidance_oracle(w, [(0,)], 2.0, max_polymers=5)


def test_polymer_compatibility_is_strict_distance():
    w = PolymerWeights.from_weights({}, RING_BARS)
    a, b, c = frozenset({(0,)}), frozenset({(1,)}), frozenset({(2,)})
    assert w.adjacency(a, b) == 1 and not w.compatible(a, b)
    assert w.adjacency(a, c) == 0 and w.compatible(a, c)


def test_polymer_partition_hard_core_enumeration():
    w = PolymerWeights.from_weights({frozenset({(0,)}): 0.1, frozenset({(1,)}): 0.2, frozenset({(3,)}): 0.3},
                                    RING_BARS)
    # compatible pairs: {0,3}, {1,3}; no triple
    assert polymer_partition(w) == pytest.approx(1 + 0.1 + 0.2 + 0.3 + 0.03 + 0.06)
    assert polymer_partition(w, avoid=[(0,)]) == pytest.approx(1 + 0.3)
