import math
from collections import Counter
from fractions import Fraction
from itertools import combinations

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dickeverify.errors import DomainError, TooLargeError
from dickeverify.hilbert import dicke_state, inner
from dickeverify.spectral import (
    build_strategy,
    closed_form_gap,
    full_spectrum_w,
    global_strategy,
    johnson_adjacency,
    johnson_spectrum,
    m1_matrix,
    m1_top_two,
    m2_matrix,
    m2_top_eigen,
    operator_eigenvalues,
    required_tests,
    spectral_gap,
    verify_second_eigenspace,
    worst_case_pass_probability,
)

import oracles as ora


def dense_gap(n, k, mode):
    mat = ora.adaptive_operator(n, k) if mode == "adaptive" else ora.nonadaptive_operator(n, k)
    return 1 - ora.second_eigenvalue(mat)


class TestClosedForms:
    @pytest.mark.parametrize(
        "family,n,k,expected",
        [
            ("W-adaptive", 3, 1, Fraction(1, 3)),
            ("W-adaptive", 4, 1, Fraction(1, 3)),
            ("W-adaptive", 8, 1, Fraction(1, 7)),
            ("W-nonadaptive", 3, 1, Fraction(1, 4)),
            ("W-nonadaptive", 6, 1, Fraction(1, 10)),
            ("D-adaptive", 4, 2, Fraction(1, 3)),
            ("D-adaptive", 10, 5, Fraction(1, 9)),
            ("D-nonadaptive", 8, 4, Fraction(1, 14)),
            ("D-adaptive", 5, 4, Fraction(1, 4)),
            ("bell3", None, None, Fraction(2, 3)),
            ("bell2", None, None, Fraction(1, 2)),
            ("global", None, None, Fraction(1)),
        ],
    )
    def test_values(self, family, n, k, expected):
        assert closed_form_gap(family, n, k) == expected

    @pytest.mark.parametrize("args", [("W-adaptive", 2, 1), ("D-adaptive", 4, 4), ("D-adaptive", 3, 0), ("X", 3, 1)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            closed_form_gap(*args)


class TestNumericGaps:
    @pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
    @pytest.mark.parametrize("mode", ["adaptive", "nonadaptive"])
    def test_w_against_dense_oracle(self, n, mode):
        rep = spectral_gap(build_strategy("W", n, 1, mode))
        assert rep.nu == pytest.approx(dense_gap(n, 1, mode), abs=1e-10)
        assert rep.nu == pytest.approx(float(closed_form_gap(f"W-{mode}", n)), abs=1e-10)

    @pytest.mark.parametrize("n,k", [(4, 2), (5, 2), (5, 3), (6, 2), (6, 3)])
    @pytest.mark.parametrize("mode", ["adaptive", "nonadaptive"])
    def test_dicke_against_dense_oracle(self, n, k, mode):
        rep = spectral_gap(build_strategy("D", n, k, mode))
        assert rep.nu == pytest.approx(dense_gap(n, k, mode), abs=1e-10)
        assert rep.nu_exact == closed_form_gap(f"D-{mode}", n, k)

    @pytest.mark.parametrize("n", [4, 5, 6])
    def test_complement_weight_uses_flipped_w(self, n):
        rep = spectral_gap(build_strategy("D", n, n - 1, "adaptive"))
        assert rep.nu_exact == Fraction(1, n - 1)

    @pytest.mark.parametrize("family,n,k,mode", [("W", 5, 1, "adaptive"), ("D", 6, 3, "nonadaptive")])
    def test_dense_and_block_agree(self, family, n, k, mode):
        s = build_strategy(family, n, k, mode)
        a, b = spectral_gap(s, method="dense"), spectral_gap(s, method="sector-block")
        assert a.nu == pytest.approx(b.nu, abs=1e-12)
        assert a.multiplicity2 == b.multiplicity2

    @pytest.mark.parametrize("n,k", [(4, 1), (5, 2), (6, 3), (7, 3)])
    def test_multiplicity(self, n, k):
        for mode in ("adaptive", "nonadaptive"):
            rep = spectral_gap(build_strategy("D", n, k, mode))
            assert rep.multiplicity2 == n - 1
            assert len(rep.eigvecs2) == n - 1

    def test_w3_adaptive_nondegenerate(self):
        assert spectral_gap(build_strategy("W", 3)).multiplicity2 == 1

    def test_eigenvectors_orthogonal_to_target(self):
        s = build_strategy("D", 5, 2)
        rep = spectral_gap(s)
        for v in rep.eigvecs2:
            assert abs(inner(s.target, v)) < 1e-10
            image = s.operator.apply(v)
            assert np.allclose(image.to_dense(), rep.lambda2 * v.to_dense(), atol=1e-9)

    def test_global_strategy(self):
        rep = spectral_gap(global_strategy(dicke_state(4, 2)))
        assert rep.nu == pytest.approx(1.0)

    def test_block_limit(self):
        with pytest.raises(TooLargeError):
            spectral_gap(build_strategy("D", 6, 3), method="sector-block", max_block=4)

    def test_dense_fallback_when_blocks_too_large(self):
        rep = spectral_gap(build_strategy("W", 4), max_block=2)
        assert rep.method == "dense"
        assert rep.nu_exact == Fraction(1, 3)

    def test_unknown_method(self):
        with pytest.raises(DomainError):
            spectral_gap(build_strategy("W", 3), method="lanczos")

    def test_report_json(self):
        payload = spectral_gap(build_strategy("D", 10, 5)).to_json()
        assert payload["nu"]["num"] == 1 and payload["nu"]["den"] == 9
        assert payload["lambda2"]["num"] == 8
        assert payload["multiplicity"] == 9


class TestWSpectrum:
    @pytest.mark.parametrize("n", [3, 4, 5, 6, 7])
    def test_full_multiset(self, n):
        vals = np.linalg.eigvalsh(ora.adaptive_operator(n, 1))
        predicted = full_spectrum_w(n)
        assert sum(m for _, m in predicted) == 2**n
        expected = np.sort(np.concatenate([np.full(m, float(v)) for v, m in predicted]))
        assert np.allclose(np.sort(vals), expected, atol=1e-9)

    def test_package_eigenvalues_match(self):
        vals = operator_eigenvalues(build_strategy("W", 6).operator)
        predicted = np.concatenate([np.full(m, float(v)) for v, m in full_spectrum_w(6)])
        assert np.allclose(vals, predicted, atol=1e-9)


def brute_johnson(n, k):
    verts = list(combinations(range(n), k))
    adj = np.array([[len(set(a) & set(b)) == k - 1 for b in verts] for a in verts], dtype=float)
    return adj


class TestJohnson:
    @pytest.mark.parametrize("n,k", [(4, 2), (5, 2), (6, 3), (7, 2), (8, 4)])
    def test_spectrum_formula(self, n, k):
        vals = np.round(np.linalg.eigvalsh(brute_johnson(n, k))).astype(int)
        assert Counter(vals.tolist()) == Counter({v: m for v, m in johnson_spectrum(n, k)})

    @pytest.mark.parametrize("n,k", [(4, 2), (6, 3)])
    def test_adjacency_is_johnson_graph(self, n, k):
        adj, _ = johnson_adjacency(n, k)
        assert np.allclose(np.sort(np.linalg.eigvalsh(adj)), np.sort(np.linalg.eigvalsh(brute_johnson(n, k))))

    @pytest.mark.parametrize("n", range(4, 9))
    def test_m1_top_two(self, n):
        for k in range(2, n - 1):
            top, second = m1_top_two(n, k)
            assert (top, second) == (n * (n - 1), n * (n - 2))
            dense = np.sort(np.linalg.eigvalsh(m1_matrix(n, k)[0]))[::-1]
            assert dense[0] == pytest.approx(top) and dense[1] == pytest.approx(second)

    @pytest.mark.parametrize("n", range(4, 9))
    def test_m2_top(self, n):
        for k in range(2, n - 1):
            mat, labels = m2_matrix(n, k)
            vals, vecs = np.linalg.eigh(mat)
            value, phi = m2_top_eigen(n, k)
            assert value == Fraction(n * (n + 1), 2) + k * (k - n)
            assert vals[-1] == pytest.approx(float(value), abs=1e-9)
            assert vals[-1] - vals[-2] > 1e-6
            v = phi.to_dense()[labels]
            assert np.linalg.norm(mat @ v - float(value) * v) < 1e-9

    def test_m1_plus_m2_is_operator_block(self):
        n, k = 5, 2
        big = ora.adaptive_operator(n, k) * n * (n - 1)
        m1, l1 = m1_matrix(n, k)
        m2, l2 = m2_matrix(n, k)
        assert np.allclose(big[np.ix_(l1, l1)], m1)
        assert np.allclose(big[np.ix_(l2, l2)], m2)


class TestSecondEigenspace:
    @pytest.mark.parametrize("n,k", [(4, 1), (5, 1), (4, 2), (6, 3), (6, 2)])
    @pytest.mark.parametrize("mode", ["adaptive", "nonadaptive"])
    def test_singlet_family_spans(self, n, k, mode):
        rep = verify_second_eigenspace(build_strategy("W" if k == 1 else "D", n, k, mode))
        assert rep.ok
        assert all(v == pytest.approx(rep.expected_eigenvalue) for v in rep.rayleigh.values())

    def test_rejects_small_n(self):
        with pytest.raises(DomainError):
            verify_second_eigenspace(build_strategy("W", 3))


def mp_required(nu, eps, delta):
    mpmath.mp.dps = 50
    ratio = mpmath.log(mpmath.mpf(delta)) / mpmath.log(1 - mpmath.mpf(nu) * mpmath.mpf(eps))
    return int(mpmath.ceil(ratio))


class TestRequiredTests:
    def test_reference_value(self):
        r = required_tests(1 / 3, 0.01, 0.05)
        assert r.exact == 898 == mp_required(mpmath.mpf(1) / 3, "0.01", "0.05")
        assert r.approx == pytest.approx(3 * 100 * math.log(20))

    @given(
        st.sampled_from([Fraction(1, m) for m in range(1, 20)]),
        st.floats(0.001, 0.5),
        st.floats(0.001, 0.5),
    )
    @settings(max_examples=150, deadline=None)
    def test_matches_high_precision(self, nu, eps, delta):
        got = required_tests(float(nu), eps, delta).exact
        expected = mp_required(mpmath.mpf(nu.numerator) / nu.denominator, eps, delta)
        assert got == expected

    def test_minimality(self):
        nu, eps, delta = 1 / 7, 0.05, 0.1
        n = required_tests(nu, eps, delta).exact
        assert (1 - nu * eps) ** n <= delta < (1 - nu * eps) ** (n - 1)

    def test_full_gap_full_infidelity(self):
        assert required_tests(1.0, 0.999, 0.5).exact == 1

    @pytest.mark.parametrize("args", [(0, 0.1, 0.1), (0.5, 0, 0.1), (0.5, 0.1, 1), (1.5, 0.1, 0.1)])
    def test_domain(self, args):
        with pytest.raises(DomainError):
            required_tests(*args)

    def test_worst_case_pass_probability(self):
        s = build_strategy("W", 5)
        assert worst_case_pass_probability(s, 0.2) == pytest.approx(1 - 0.25 * 0.2)
        with pytest.raises(DomainError):
            worst_case_pass_probability(s, 1.2)
