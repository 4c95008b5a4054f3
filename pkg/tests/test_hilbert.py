import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dickeverify.errors import DomainError
from dickeverify.hilbert import (
    BasisState,
    Ket,
    WeightSector,
    add_scaled,
    basis_ket,
    binom,
    dicke_state,
    embed_pair,
    inner,
    normalize,
    popcount,
    singlet_pair_state,
    w_state,
    zero_ket,
)


def pascal(rows):
    tri = [[1]]
    for _ in range(rows):
        prev = tri[-1]
        tri.append([1] + [a + b for a, b in zip(prev, prev[1:])] + [1])
    return tri


class TestBinom:
    def test_matches_pascal_triangle(self):
        tri = pascal(40)
        for n, row in enumerate(tri):
            for k, value in enumerate(row):
                assert binom(n, k) == value

    @pytest.mark.parametrize("n,k", [(5, -1), (5, 6), (0, 1)])
    def test_zero_outside_range(self, n, k):
        assert binom(n, k) == 0

    def test_largest_supported(self):
        assert binom(64, 32) == 1832624140942590534

    def test_rejects_large_n(self):
        with pytest.raises(DomainError):
            binom(65, 3)


class TestBasisState:
    def test_string_round_trip(self):
        b = BasisState.from_string("0110")
        assert b.bits == 0b0110
        assert str(b) == "0110"
        assert b.weight == 2
        assert [b.bit(q) for q in range(4)] == [0, 1, 1, 0]

    def test_qubit_one_is_leftmost(self):
        assert str(BasisState(1, 3)) == "100"

    def test_rejects_overflow(self):
        with pytest.raises(DomainError):
            BasisState(8, 3)


class TestWeightSector:
    @pytest.mark.parametrize("n,k", [(4, 2), (6, 3), (8, 1), (7, 0), (5, 5)])
    def test_members_sorted_and_complete(self, n, k):
        sector = WeightSector(n, k)
        expected = sorted(sum(1 << q for q in c) for c in combinations(range(n), k))
        assert list(sector) == expected
        assert len(sector) == math.comb(n, k)

    @given(st.integers(1, 14).flatmap(lambda n: st.tuples(st.just(n), st.integers(0, n))))
    @settings(max_examples=60, deadline=None)
    def test_rank_is_position(self, nk):
        n, k = nk
        sector = WeightSector(n, k)
        for r, u in enumerate(sector):
            assert sector.rank(u) == r
            assert sector.unrank(r) == u

    def test_rank_rejects_foreign_label(self):
        with pytest.raises(DomainError):
            WeightSector(4, 2).rank(0b111)

    def test_unrank_rejects_out_of_range(self):
        with pytest.raises(DomainError):
            WeightSector(4, 2).unrank(6)


class TestKet:
    def test_sorted_and_pruned(self):
        k = Ket(3, [5, 1, 2], [0.5, 1e-16, 0.5])
        assert list(k.labels) == [2, 5]
        assert k.amplitude(1) == 0

    def test_immutable_arrays(self):
        k = dicke_state(4, 2)
        with pytest.raises(ValueError):
            k.amps[0] = 0

    @pytest.mark.parametrize("labels", [[8], [-1], [1, 1]])
    def test_rejects_bad_labels(self, labels):
        with pytest.raises(DomainError):
            Ket(3, labels, [1.0] * len(labels))

    def test_dense_round_trip(self):
        rng = np.random.default_rng(3)
        v = rng.normal(size=16) + 1j * rng.normal(size=16)
        assert np.allclose(Ket.from_dense(v).to_dense(), v)

    def test_from_dict(self):
        k = Ket.from_dict(2, {1: 1j, 2: -1})
        assert k.amplitude(1) == 1j
        assert k.norm() == pytest.approx(math.sqrt(2))

    def test_inner_is_conjugate_linear_in_first(self):
        a = Ket.from_dict(1, {0: 1j})
        b = Ket.from_dict(1, {0: 1})
        assert inner(a, b) == pytest.approx(-1j)

    def test_normalize_zero_raises(self):
        with pytest.raises(DomainError):
            normalize(zero_ket(3))

    def test_add_scaled_cancels(self):
        d = dicke_state(5, 2)
        assert len(add_scaled(d, -1, d)) == 0

    def test_qubit_mismatch(self):
        with pytest.raises(DomainError):
            inner(w_state(3), w_state(4))


class TestDickeStates:
    @pytest.mark.parametrize("n,k", [(1, 0), (3, 1), (4, 2), (8, 4), (10, 5), (20, 3)])
    def test_uniform_and_normalized(self, n, k):
        d = dicke_state(n, k)
        assert len(d) == math.comb(n, k)
        assert d.norm() == pytest.approx(1.0, abs=1e-14)
        assert np.allclose(d.amps, 1 / math.sqrt(math.comb(n, k)))
        assert set(d.weights().tolist()) == {k}

    def test_w_is_weight_one(self):
        assert np.allclose(w_state(4).to_dense(), dicke_state(4, 1).to_dense())

    def test_w2_is_bell_state(self):
        assert np.allclose(w_state(2).to_dense(), np.array([0, 1, 1, 0]) / math.sqrt(2))

    @pytest.mark.parametrize("n,k", [(3, 4), (3, -1), (0, 0)])
    def test_domain(self, n, k):
        with pytest.raises(DomainError):
            dicke_state(n, k)

    def test_basis_ket(self):
        assert basis_ket(3, 5).amplitude(5) == 1


class TestPairEmbedding:
    def test_places_rest_in_ascending_order(self):
        rest = basis_ket(2, 0b10)  # second remaining qubit set
        k = embed_pair(0, 2, [0, 1, 0, 0], rest)  # j excited
        # qubits 1, 3 are the rest; the rest's bit 1 lands on qubit 3
        assert list(k.labels) == [0b1100]

    def test_singlet_orthogonal_to_dicke(self):
        for n, k in [(4, 1), (5, 2), (6, 3)]:
            phi = singlet_pair_state(1, 3, dicke_state(n - 2, k - 1))
            assert abs(inner(dicke_state(n, k), phi)) < 1e-14
            assert phi.norm() == pytest.approx(1.0)

    def test_singlet_signs(self):
        phi = singlet_pair_state(0, 1, Ket.from_dict(1, {0: 1}))
        assert phi.amplitude(0b10) == pytest.approx(1 / math.sqrt(2))
        assert phi.amplitude(0b01) == pytest.approx(-1 / math.sqrt(2))

    def test_rejects_bad_pair(self):
        with pytest.raises(DomainError):
            embed_pair(1, 1, [1, 0, 0, 0], basis_ket(1, 0))


@given(st.integers(0, (1 << 20) - 1))
def test_popcount_matches_bin(x):
    assert popcount(x) == sum(int(c) for c in format(x, "b"))
