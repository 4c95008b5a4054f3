"""Pauli projectors and the pairwise W/Dicke tests.

A test acting on the pair ``(i, j)`` is kept as a branch tree: the other
``n - 2`` qubits are measured in Z first, the number of excitations seen
selects a branch, and the branch fixes the Pauli setting on ``i`` and ``j``
together with the accepted second-stage outcomes.  The operator form
``sum_a M_a (x) N_a`` is derived from the tree, never the other way round.

Second-stage outcomes are encoded as ``2*b_i + b_j`` with ``b = 0`` for the
+1 eigenvalue.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from fractions import Fraction
from itertools import combinations
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DomainError
from .hilbert import PRUNE, Ket, _popcount_array, binom

_S = 1 / math.sqrt(2)
# column b is the eigenvector for outcome b (eigenvalue (-1)**b)
LOCAL_BASIS = {
    "Z": np.array([[1, 0], [0, 1]], dtype=np.complex128),
    "X": np.array([[_S, _S], [_S, -_S]], dtype=np.complex128),
    "Y": np.array([[_S, _S], [1j * _S, -1j * _S]], dtype=np.complex128),
}

ALL_OUTCOMES = frozenset({0, 1, 2, 3})
BOTH_ZERO = frozenset({0})
BOTH_ONE = frozenset({3})
COINCIDE = frozenset({0, 3})
DIFFER = frozenset({1, 2})

HERMITIAN_TOL = 1e-12
PROJECTOR_TOL = 1e-10


class TestOperator:
    """A Hermitian operator on ``n`` qubits held as a sparse CSR matrix."""

    __test__ = False  # keep pytest from collecting this class

    def __init__(self, n: int, matrix, is_projector: bool = False, check: bool = True):
        mat = sp.csr_matrix(matrix, dtype=np.complex128)
        if mat.shape != (1 << n, 1 << n):
            raise DomainError(f"matrix shape {mat.shape} does not match n={n}")
        mat.eliminate_zeros()
        mat.sort_indices()
        self.n = n
        self.matrix = mat
        self.is_projector = is_projector
        if check:
            asym = abs(mat - mat.getH())
            if asym.nnz and asym.max() > HERMITIAN_TOL:
                raise DomainError("operator is not Hermitian")
            if is_projector:
                err = abs(mat @ mat - mat)
                if err.nnz and err.max() > PROJECTOR_TOL:
                    raise DomainError("operator flagged as projector is not idempotent")

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def apply(self, ket: Ket) -> Ket:
        if ket.n != self.n:
            raise DomainError("qubit count mismatch")
        cols = self.matrix[:, ket.labels]
        out = cols @ ket.amps
        (idx,) = np.nonzero(np.abs(out) >= PRUNE)
        return Ket(self.n, idx, out[idx])

    def expectation(self, ket: Ket) -> float:
        block = self.matrix[ket.labels][:, ket.labels]
        return float(np.real(np.vdot(ket.amps, block @ ket.amps)))

    def entry(self, u: int, v: int) -> complex:
        return complex(self.matrix[u, v])

    def __add__(self, other: "TestOperator") -> "TestOperator":
        return TestOperator(self.n, self.matrix + other.matrix, check=False)

    def scaled(self, c: float) -> "TestOperator":
        return TestOperator(self.n, self.matrix * c, check=False)

    def max_abs_diff(self, other: "TestOperator") -> float:
        diff = abs(self.matrix - other.matrix)
        return float(diff.max()) if diff.nnz else 0.0

    def to_json(self) -> dict:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        entries = [
            [int(coo.row[t]), int(coo.col[t]), float(coo.data[t].real), float(coo.data[t].imag)]
            for t in order
        ]
        return {"n": self.n, "entries": entries}

    @classmethod
    def from_json(cls, payload: dict | str) -> "TestOperator":
        if isinstance(payload, str):
            payload = json.loads(payload)
        n = int(payload["n"])
        entries = payload["entries"]
        rows = [e[0] for e in entries]
        cols = [e[1] for e in entries]
        vals = [complex(e[2], e[3]) for e in entries]
        mat = sp.coo_matrix((vals, (rows, cols)), shape=(1 << n, 1 << n))
        return cls(n, mat)

    def __repr__(self):
        return f"TestOperator(n={self.n}, nnz={self.nnz}, is_projector={self.is_projector})"


def combine(terms: Sequence[tuple[float, TestOperator]]) -> TestOperator:
    """Weighted sum of operators on the same qubit count."""
    if not terms:
        raise DomainError("empty combination")
    n = terms[0][1].n
    acc = sp.csr_matrix((1 << n, 1 << n), dtype=np.complex128)
    for w, op in terms:
        if op.n != n:
            raise DomainError("qubit count mismatch")
        acc = acc + float(w) * op.matrix
    return TestOperator(n, acc, check=False)


def identity(n: int) -> TestOperator:
    return TestOperator(n, sp.identity(1 << n, dtype=np.complex128, format="csr"), is_projector=True)


def _spread(patterns: np.ndarray, qubits: Sequence[int]) -> np.ndarray:
    """Place bit ``t`` of each pattern on qubit ``qubits[t]``."""
    out = np.zeros(patterns.shape, dtype=np.int64)
    for t, q in enumerate(qubits):
        out |= ((patterns >> t) & 1) << q
    return out


def _embed(n: int, qubits: Sequence[int], local: np.ndarray, rest_labels=None) -> sp.csr_matrix:
    """Embed a ``2^m x 2^m`` matrix acting on ``qubits`` (first = most significant).

    With ``rest_labels`` given, the block is placed only on those
    configurations of the remaining qubits; otherwise on all of them.
    """
    m = len(qubits)
    if rest_labels is None:
        others = [q for q in range(n) if q not in qubits]
        rest_labels = _spread(np.arange(1 << len(others), dtype=np.int64), others)
    rest_labels = np.asarray(rest_labels, dtype=np.int64)
    offsets = np.zeros(1 << m, dtype=np.int64)
    for idx in range(1 << m):
        for t, q in enumerate(qubits):
            if (idx >> (m - 1 - t)) & 1:
                offsets[idx] |= 1 << q
    r_loc, c_loc = np.nonzero(np.abs(local) > 0)
    vals = local[r_loc, c_loc]
    rows = (rest_labels[:, None] | offsets[r_loc][None, :]).ravel()
    cols = (rest_labels[:, None] | offsets[c_loc][None, :]).ravel()
    data = np.broadcast_to(vals, (rest_labels.size, vals.size)).ravel()
    dim = 1 << n
    return sp.csr_matrix((data, (rows, cols)), shape=(dim, dim))


def _check_qubit(q: int, n: int):
    if not 0 <= q < n:
        raise DomainError(f"qubit {q} out of range for n={n}")


def _check_pair(i: int, j: int, n: int):
    _check_qubit(i, n)
    _check_qubit(j, n)
    if i == j:
        raise DomainError("pair qubits must differ")


def pauli_projector(axis: str, sign: str, qubit: int, n: int) -> TestOperator:
    """Projector onto the ``sign`` eigenspace of the Pauli ``axis`` on ``qubit``."""
    if axis not in LOCAL_BASIS or sign not in "+-" or len(sign) != 1:
        raise DomainError(f"bad Pauli projector spec {axis}{sign}")
    _check_qubit(qubit, n)
    e = LOCAL_BASIS[axis][:, 0 if sign == "+" else 1]
    return TestOperator(n, _embed(n, [qubit], np.outer(e, e.conj())), is_projector=True)


def outcome_projector(setting: str, accept: frozenset) -> np.ndarray:
    """4x4 projector onto the accepted outcomes of a two-qubit Pauli setting."""
    if len(setting) != 2 or any(a not in LOCAL_BASIS for a in setting):
        raise DomainError(f"bad setting {setting!r}")
    proj = np.zeros((4, 4), dtype=np.complex128)
    for o in accept:
        e = np.kron(LOCAL_BASIS[setting[0]][:, o >> 1], LOCAL_BASIS[setting[1]][:, o & 1])
        proj += np.outer(e, e.conj())
    return proj


PAIR_KINDS = {
    "XX+": ("XX", COINCIDE),
    "XX-": ("XX", DIFFER),
    "YY+": ("YY", COINCIDE),
    "YY-": ("YY", DIFFER),
    "ZZ+": ("ZZ", COINCIDE),
    "ZZ-": ("ZZ", DIFFER),
    "Z+Z+": ("ZZ", BOTH_ZERO),
    "Z-Z-": ("ZZ", BOTH_ONE),
}


def pair_projector(kind: str, i: int, j: int, n: int) -> TestOperator:
    """Projector such as ``(XX)+`` on qubits ``i, j``, identity elsewhere."""
    if kind not in PAIR_KINDS:
        raise DomainError(f"unknown pair projector {kind!r}; choose from {sorted(PAIR_KINDS)}")
    _check_pair(i, j, n)
    setting, accept = PAIR_KINDS[kind]
    return TestOperator(n, _embed(n, [i, j], outcome_projector(setting, accept)), is_projector=True)


def _rest_labels(n: int, pair: tuple[int, int], weights) -> np.ndarray:
    others = [q for q in range(n) if q not in pair]
    labels = [
        sum(1 << q for q in combo)
        for w in sorted(weights)
        if 0 <= w <= len(others)
        for combo in combinations(others, w)
    ]
    return np.array(labels, dtype=np.int64)


def weight_projector(i: int, j: int, k: int, n: int) -> TestOperator:
    """Projector onto ``k`` excitations among the qubits other than ``i, j``."""
    _check_pair(i, j, n)
    if not 0 <= k <= n - 2:
        raise DomainError(f"weight {k} outside 0..{n - 2}")
    rest = _rest_labels(n, (i, j), [k])
    return TestOperator(n, _embed(n, [i, j], np.eye(4), rest), is_projector=True)


def sector_projector(n: int, k: int) -> TestOperator:
    """Diagonal projector onto all basis states of Hamming weight ``k``."""
    members = _rest_labels(n, (), [k]) if n else np.zeros(1, dtype=np.int64)
    dim = 1 << n
    mat = sp.csr_matrix((np.ones(members.size), (members, members)), shape=(dim, dim))
    return TestOperator(n, mat, is_projector=True)


@dataclass(frozen=True)
class Part:
    """Accepted second-stage outcomes for a set of first-stage excitation counts."""

    weights: frozenset
    accept: frozenset

    def __post_init__(self):
        object.__setattr__(self, "weights", frozenset(self.weights))
        object.__setattr__(self, "accept", frozenset(self.accept))
        if not self.accept <= ALL_OUTCOMES:
            raise DomainError(f"invalid outcome set {set(self.accept)}")


@dataclass(frozen=True)
class Branch:
    setting: str
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if len(self.setting) != 2 or any(a not in LOCAL_BASIS for a in self.setting):
            raise DomainError(f"bad setting {self.setting!r}")

    @property
    def weights(self) -> frozenset:
        return frozenset().union(*(p.weights for p in self.parts))

    @property
    def trivial(self) -> bool:
        return all(p.accept == ALL_OUTCOMES for p in self.parts)

    def part_for(self, w: int) -> Part | None:
        for p in self.parts:
            if w in p.weights:
                return p
        return None


@dataclass(frozen=True, eq=False)
class AdaptiveTest:
    """Two-step test on the pair ``(i, j)``: Z on the others, then a branch.

    First-stage outcomes matching no branch fail outright.
    """

    n: int
    pair: tuple
    branches: tuple
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "pair", tuple(self.pair))
        object.__setattr__(self, "branches", tuple(self.branches))
        i, j = self.pair
        _check_pair(i, j, self.n)
        seen: set = set()
        for b in self.branches:
            for p in b.parts:
                if seen & p.weights:
                    raise DomainError("branch predicates overlap")
                seen |= p.weights

    @property
    def first_stage(self) -> tuple:
        return tuple(q for q in range(self.n) if q not in self.pair)

    @property
    def alpha(self) -> int:
        """Number of branches with a nontrivial second-stage test."""
        return sum(1 for b in self.branches if not b.trivial)

    def setting_label(self, branch: Branch) -> str:
        """Canonical per-qubit axis string, qubit 0 first."""
        axes = ["Z"] * self.n
        axes[self.pair[0]], axes[self.pair[1]] = branch.setting[0], branch.setting[1]
        return "".join(axes)

    def branch_for(self, w: int) -> tuple[Branch, Part] | None:
        for b in self.branches:
            p = b.part_for(w)
            if p is not None:
                return b, p
        return None

    def part_operator(self, setting: str, part: Part) -> sp.csr_matrix:
        rest = _rest_labels(self.n, self.pair, part.weights)
        return _embed(self.n, list(self.pair), outcome_projector(setting, part.accept), rest)

    def branch_operator(self, branch: Branch) -> TestOperator:
        dim = 1 << self.n
        mat = sp.csr_matrix((dim, dim), dtype=np.complex128)
        for p in branch.parts:
            mat = mat + self.part_operator(branch.setting, p)
        return TestOperator(self.n, mat, is_projector=True, check=False)

    def first_stage_operator(self, weights) -> TestOperator:
        """The first-stage predicate ``M`` for a set of excitation counts, as an n-qubit operator."""
        rest = _rest_labels(self.n, self.pair, weights)
        return TestOperator(self.n, _embed(self.n, list(self.pair), np.eye(4), rest), is_projector=True)

    @cached_property
    def operator(self) -> TestOperator:
        dim = 1 << self.n
        mat = sp.csr_matrix((dim, dim), dtype=np.complex128)
        for b in self.branches:
            mat = mat + self.branch_operator(b).matrix
        return TestOperator(self.n, mat, is_projector=True, check=False)

    def __repr__(self):
        i, j = self.pair
        return f"AdaptiveTest({self.name or 'custom'}, n={self.n}, pair=({i + 1},{j + 1}), alpha={self.alpha})"


def _w_branches() -> tuple:
    return (
        Branch("ZZ", (Part({1}, BOTH_ZERO),)),
        Branch("XX", (Part({0}, COINCIDE),)),
    )


def _dicke_branches(k: int) -> tuple:
    branches = [Branch("ZZ", (Part({k}, BOTH_ZERO),))]
    if k >= 2:
        branches.append(Branch("ZZ", (Part({k - 2}, BOTH_ONE),)))
    branches.append(Branch("XX", (Part({k - 1}, COINCIDE),)))
    return tuple(branches)


def w_adaptive_test(i: int, j: int, n: int) -> AdaptiveTest:
    if n < 3:
        raise DomainError("the adaptive W test needs n >= 3")
    return AdaptiveTest(n, (i, j), _w_branches(), name="W-adaptive")


def _check_dicke_k(k: int, n: int):
    if n < 4 or not 2 <= k <= n - 2:
        raise DomainError(f"Dicke tests need n >= 4 and 2 <= k <= n-2, got n={n}, k={k}")


def dicke_adaptive_test(i: int, j: int, k: int, n: int) -> AdaptiveTest:
    _check_dicke_k(k, n)
    return AdaptiveTest(n, (i, j), _dicke_branches(k), name="D-adaptive")


def _sector_tree(i: int, j: int, k: int, n: int) -> AdaptiveTest:
    # all qubits in Z, pass iff the total excitation count is k
    parts = [Part({k}, BOTH_ZERO), Part({k - 1}, DIFFER)]
    if k >= 2:
        parts.append(Part({k - 2}, BOTH_ONE))
    return AdaptiveTest(n, (i, j), (Branch("ZZ", parts),), name="Z-sector")


def _xx_tree(i: int, j: int, k: int, n: int) -> AdaptiveTest:
    parts = [Part({k - 1}, COINCIDE), Part({k}, ALL_OUTCOMES)]
    if k >= 2:
        parts.append(Part({k - 2}, ALL_OUTCOMES))
    return AdaptiveTest(n, (i, j), (Branch("XX", parts),), name="XX-nonadaptive")


def w_nonadaptive_procedures(i: int, j: int, n: int) -> tuple[AdaptiveTest, AdaptiveTest]:
    """Executable single-setting forms of the two nonadaptive W tests."""
    if n < 3:
        raise DomainError("the nonadaptive W tests need n >= 3")
    return _sector_tree(i, j, 1, n), _xx_tree(i, j, 1, n)


def dicke_nonadaptive_procedures(i: int, j: int, k: int, n: int) -> tuple[AdaptiveTest, AdaptiveTest]:
    _check_dicke_k(k, n)
    return _sector_tree(i, j, k, n), _xx_tree(i, j, k, n)


def w_nonadaptive_tests(i: int, j: int, n: int) -> tuple[TestOperator, TestOperator]:
    z, x = w_nonadaptive_procedures(i, j, n)
    return z.operator, x.operator


def dicke_nonadaptive_tests(i: int, j: int, k: int, n: int) -> tuple[TestOperator, TestOperator]:
    z, x = dicke_nonadaptive_procedures(i, j, k, n)
    return z.operator, x.operator


def _bell_test(kind: str) -> AdaptiveTest:
    setting, accept = PAIR_KINDS[kind]
    return AdaptiveTest(2, (0, 1), (Branch(setting, (Part({0}, accept),)),), name=f"({kind[:2]}){kind[2:]}")


def bell_strategies():
    """The three-setting optimal strategy and the two-setting variant for |W_2>."""
    from .strategy import Strategy
    from .hilbert import w_state

    target = w_state(2)
    third = Fraction(1, 3)
    bell3 = Strategy(
        target,
        [(third, _bell_test("XX+")), (third, _bell_test("YY+")), (third, _bell_test("ZZ-"))],
        family="bell3",
    )
    half = Fraction(1, 2)
    bell2 = Strategy(target, [(half, _bell_test("XX+")), (half, _bell_test("ZZ-"))], family="bell2")
    return bell3, bell2


# ---------------------------------------------------------------------------
# Born-rule execution of a branch tree


@dataclass(frozen=True)
class Transcript:
    pair: tuple
    first_stage: tuple
    first_outcomes: tuple
    excitations: int
    setting: str | None
    second_outcomes: tuple | None
    passed: bool

    def describe(self) -> str:
        """One-line summary with 1-based qubit labels."""
        i, j = (q + 1 for q in self.pair)
        firsts = " ".join(f"q{q + 1}={b}" for q, b in zip(self.first_stage, self.first_outcomes))
        text = f"pair=({i},{j}) Z[{firsts}] excitations={self.excitations}"
        if self.setting is None:
            text += " no branch"
        else:
            bi, bj = self.second_outcomes
            text += f" {self.setting}: q{i}={bi} q{j}={bj}"
        return text + (" -> pass" if self.passed else " -> fail")


class ProcedurePlan:
    """Outcome distribution of one test applied to one pure state.

    Groups the state's amplitudes by first-stage pattern, then rotates each
    collapsed pair state into the branch's measurement basis.
    """

    def __init__(self, test: AdaptiveTest, state: Ket):
        if state.n != test.n:
            raise DomainError("state and test act on different qubit counts")
        i, j = test.pair
        self.test = test
        labels = state.labels
        pair_mask = (1 << i) | (1 << j)
        rest = labels & ~pair_mask
        local = ((labels >> i) & 1) * 2 + ((labels >> j) & 1)
        patterns, inv = np.unique(rest, return_inverse=True)
        amps = np.zeros((patterns.size, 4), dtype=np.complex128)
        amps[inv, local] = state.amps
        probs = np.sum(np.abs(amps) ** 2, axis=1)
        keep = probs >= PRUNE**2
        patterns, amps, probs = patterns[keep], amps[keep], probs[keep]
        total = probs.sum()
        if total <= 0:
            raise DomainError("zero state")
        self.patterns = patterns
        self.pattern_probs = probs / total
        self.weights = _popcount_array(patterns)
        cond = amps / np.sqrt(probs)[:, None]

        self.branch_index = np.full(patterns.size, -1, dtype=np.int64)
        self.outcome_probs = np.zeros((patterns.size, 4))
        self.accept = np.zeros((patterns.size, 4), dtype=bool)
        bases = {}
        for r, w in enumerate(self.weights.tolist()):
            found = test.branch_for(w)
            if found is None:
                continue
            branch, part = found
            self.branch_index[r] = test.branches.index(branch)
            if branch.setting not in bases:
                s = branch.setting
                bases[s] = np.kron(LOCAL_BASIS[s[0]], LOCAL_BASIS[s[1]])
            p = np.abs(bases[branch.setting].conj().T @ cond[r]) ** 2
            self.outcome_probs[r] = p / p.sum()
            self.accept[r, sorted(part.accept)] = True
        self._pattern_cdf = np.cumsum(self.pattern_probs)
        self._outcome_cdf = np.cumsum(self.outcome_probs, axis=1)

    @property
    def pass_probability(self) -> float:
        per_pattern = np.sum(self.outcome_probs * self.accept, axis=1)
        return float(np.dot(self.pattern_probs, per_pattern))

    def sample(self, rng: np.random.Generator, size: int):
        """Draw ``size`` independent runs; returns (pattern index, outcome, passed)."""
        u1 = rng.random(size)
        u2 = rng.random(size)
        r = np.minimum(np.searchsorted(self._pattern_cdf, u1 * self._pattern_cdf[-1], side="right"),
                       self.patterns.size - 1)
        cdf = self._outcome_cdf[r]
        o = np.minimum(np.sum(u2[:, None] * cdf[:, -1:] >= cdf, axis=1), 3)
        has_branch = self.branch_index[r] >= 0
        passed = has_branch & self.accept[r, o]
        o = np.where(has_branch, o, -1)
        return r, o, passed

    def transcript(self, r: int, o: int, passed: bool) -> Transcript:
        first = self.test.first_stage
        pattern = int(self.patterns[r])
        branch = self.branch_index[r]
        setting = None if branch < 0 else self.test.branches[branch].setting
        second = None if branch < 0 else (o >> 1, o & 1)
        return Transcript(
            pair=self.test.pair,
            first_stage=first,
            first_outcomes=tuple((pattern >> q) & 1 for q in first),
            excitations=int(self.weights[r]),
            setting=setting,
            second_outcomes=second,
            passed=bool(passed),
        )


def execute_branch_procedure(test: AdaptiveTest, state: Ket, rng: np.random.Generator):
    """Run the test once on ``state``; returns ``(passed, transcript)``."""
    plan = ProcedurePlan(test, state)
    r, o, passed = plan.sample(rng, 1)
    t = plan.transcript(int(r[0]), int(o[0]), bool(passed[0]))
    return t.passed, t


# ---------------------------------------------------------------------------
# X on every qubit maps |D_n^k> to |D_n^{n-k}>


@dataclass(frozen=True)
class FlipEquivalence:
    n: int
    k: int

    @property
    def target_k(self) -> int:
        return self.n - self.k

    @property
    def mask(self) -> int:
        return (1 << self.n) - 1

    @cached_property
    def permutation(self) -> np.ndarray:
        return np.arange(1 << self.n, dtype=np.int64) ^ self.mask

    def apply(self, ket: Ket) -> Ket:
        return Ket(ket.n, ket.labels ^ self.mask, ket.amps)

    def conjugate(self, op: TestOperator) -> TestOperator:
        perm = self.permutation
        return TestOperator(op.n, op.matrix[perm][:, perm], is_projector=op.is_projector, check=False)

    def conjugate_test(self, test: AdaptiveTest) -> AdaptiveTest:
        """Rewrite a branch tree so its operator is conjugated by the flip."""
        m = self.n - 2
        branches = []
        for b in test.branches:
            flip_i = 1 if b.setting[0] in "ZY" else 0
            flip_j = 1 if b.setting[1] in "ZY" else 0
            xor = (flip_i << 1) | flip_j
            parts = tuple(
                Part({m - w for w in p.weights}, {o ^ xor for o in p.accept}) for p in b.parts
            )
            branches.append(Branch(b.setting, parts))
        return AdaptiveTest(test.n, test.pair, tuple(branches), name=f"{test.name}-flipped")


def local_flip_equivalence(k: int, n: int) -> FlipEquivalence:
    if not 0 <= k <= n:
        raise DomainError(f"k={k} outside 0..{n}")
    return FlipEquivalence(n, k)


def all_pairs(n: int):
    return list(combinations(range(n), 2))


def pair_count(n: int) -> int:
    return binom(n, 2)
