"""Bitstring combinatorics, sparse kets and the target states.

Qubit ``q`` (0-based) is stored in bit ``q`` of a basis label; a set bit is
the outcome "1" of a Z measurement (eigenvalue -1), i.e. an excitation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Iterator, Mapping

import numpy as np

from .errors import DomainError

PRUNE = 1e-14
MAX_QUBITS = 62  # labels are stored as int64


def binom(n: int, k: int) -> int:
    """Exact binomial coefficient, zero outside ``0 <= k <= n``."""
    if not 0 <= n <= 64:
        raise DomainError(f"binom supports 0 <= n <= 64, got n={n}")
    if k < 0 or k > n:
        return 0
    return math.comb(n, k)


def popcount(x: int) -> int:
    return bin(x).count("1")


def _popcount_array(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros(labels.shape, dtype=np.int64)
    work = labels.copy()
    while np.any(work):
        out += work & 1
        work >>= 1
    return out


@dataclass(frozen=True)
class BasisState:
    """A computational-basis label on ``n`` qubits."""

    bits: int
    n: int

    def __post_init__(self):
        if not 0 <= self.bits < (1 << self.n):
            raise DomainError(f"label {self.bits} does not fit in {self.n} qubits")

    @cached_property
    def weight(self) -> int:
        return popcount(self.bits)

    def bit(self, q: int) -> int:
        return (self.bits >> q) & 1

    def __str__(self):
        # qubit 1 leftmost, as kets are written in the literature
        return "".join(str(self.bit(q)) for q in range(self.n))

    @classmethod
    def from_string(cls, s: str) -> "BasisState":
        return cls(sum(1 << q for q, c in enumerate(s) if c == "1"), len(s))


class WeightSector:
    """The strings of Hamming weight ``k`` on ``n`` bits, in increasing order.

    Ranking uses the combinatorial number system, whose colexicographic
    order coincides with numeric order of the labels.
    """

    def __init__(self, n: int, k: int):
        if not 0 <= k <= n:
            raise DomainError(f"weight {k} outside 0..{n}")
        self.n = n
        self.k = k
        labels = sorted(sum(1 << q for q in c) for c in combinations(range(n), k))
        self.members = np.array(labels, dtype=np.int64)
        self.members.setflags(write=False)

    def __len__(self):
        return len(self.members)

    def __iter__(self) -> Iterator[int]:
        return iter(int(u) for u in self.members)

    def rank(self, u: int) -> int:
        if popcount(u) != self.k or u >> self.n:
            raise DomainError(f"{u} is not in B({self.n},{self.k})")
        r, i = 0, 0
        for q in range(self.n):
            if (u >> q) & 1:
                i += 1
                r += binom(q, i)
        return r

    def unrank(self, r: int) -> int:
        if not 0 <= r < binom(self.n, self.k):
            raise DomainError(f"rank {r} out of range")
        u = 0
        for i in range(self.k, 0, -1):
            q = i - 1
            while binom(q + 1, i) <= r:
                q += 1
            r -= binom(q, i)
            u |= 1 << q
        return u


@dataclass(frozen=True, eq=False)
class Ket:
    """Sparse pure state: sorted basis labels with complex amplitudes."""

    n: int
    labels: np.ndarray = field(repr=False)
    amps: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not 0 <= self.n <= MAX_QUBITS:
            raise DomainError(f"unsupported qubit count {self.n}")
        labels = np.asarray(self.labels, dtype=np.int64)
        amps = np.asarray(self.amps, dtype=np.complex128)
        order = np.argsort(labels, kind="stable")
        labels, amps = labels[order], amps[order]
        if labels.size and (labels[0] < 0 or labels[-1] >> self.n):
            raise DomainError("basis label out of range")
        if np.any(np.diff(labels) == 0):
            raise DomainError("duplicate basis labels")
        keep = np.abs(amps) >= PRUNE
        labels, amps = labels[keep], amps[keep]
        labels.setflags(write=False)
        amps.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "amps", amps)

    @classmethod
    def from_dict(cls, n: int, amplitudes: Mapping[int, complex]) -> "Ket":
        items = sorted(amplitudes.items())
        return cls(n, [u for u, _ in items], [a for _, a in items])

    @classmethod
    def from_dense(cls, vec: np.ndarray) -> "Ket":
        vec = np.asarray(vec, dtype=np.complex128)
        n = int(round(math.log2(vec.size)))
        if 1 << n != vec.size:
            raise DomainError("dense vector length is not a power of two")
        (idx,) = np.nonzero(np.abs(vec) >= PRUNE)
        return cls(n, idx, vec[idx])

    def to_dense(self) -> np.ndarray:
        vec = np.zeros(1 << self.n, dtype=np.complex128)
        vec[self.labels] = self.amps
        return vec

    def amplitude(self, u: int) -> complex:
        i = np.searchsorted(self.labels, u)
        if i < self.labels.size and self.labels[i] == u:
            return complex(self.amps[i])
        return 0j

    def items(self) -> Iterator[tuple[int, complex]]:
        for u, a in zip(self.labels.tolist(), self.amps.tolist()):
            yield u, a

    def __len__(self):
        return int(self.labels.size)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amps) ** 2)))

    def weights(self) -> np.ndarray:
        return _popcount_array(self.labels)

    def scaled(self, c: complex) -> "Ket":
        return Ket(self.n, self.labels, self.amps * c)

    def __repr__(self):
        terms = ", ".join(f"{BasisState(u, self.n)}: {a:.6g}" for u, a in self.items())
        return f"Ket(n={self.n}, {{{terms}}})"


def _check_same_n(a: Ket, b: Ket):
    if a.n != b.n:
        raise DomainError(f"qubit counts differ: {a.n} vs {b.n}")


def inner(a: Ket, b: Ket) -> complex:
    """<a|b>, conjugate-linear in ``a``."""
    _check_same_n(a, b)
    common, ia, ib = np.intersect1d(a.labels, b.labels, assume_unique=True, return_indices=True)
    return complex(np.vdot(a.amps[ia], b.amps[ib]))


def normalize(a: Ket) -> Ket:
    nrm = a.norm()
    if nrm < PRUNE:
        raise DomainError("cannot normalize a zero vector")
    return a.scaled(1.0 / nrm)


def add_scaled(a: Ket, c: complex, b: Ket) -> Ket:
    """Return ``a + c*b`` (unnormalized)."""
    _check_same_n(a, b)
    labels = np.union1d(a.labels, b.labels)
    amps = np.zeros(labels.size, dtype=np.complex128)
    amps[np.searchsorted(labels, a.labels)] += a.amps
    amps[np.searchsorted(labels, b.labels)] += c * b.amps
    return Ket(a.n, labels, amps)


def dicke_state(n: int, k: int) -> Ket:
    """Uniform superposition over all ``n``-bit strings of weight ``k``."""
    if n < 1 or not 0 <= k <= n:
        raise DomainError(f"Dicke state needs n >= 1 and 0 <= k <= n, got ({n}, {k})")
    members = WeightSector(n, k).members
    return Ket(n, members, np.full(members.size, 1.0 / math.sqrt(binom(n, k))))


def w_state(n: int) -> Ket:
    return dicke_state(n, 1)


def basis_ket(n: int, u: int) -> Ket:
    return Ket(n, [u], [1.0])


def embed_pair(i: int, j: int, pair_amps, rest: Ket) -> Ket:
    """Tensor a two-qubit vector on qubits ``i, j`` with ``rest`` on the others.

    ``pair_amps`` is indexed by ``2*bit_i + bit_j``; ``rest`` occupies the
    remaining qubits in ascending order.
    """
    n = rest.n + 2
    if i == j or not (0 <= i < n and 0 <= j < n):
        raise DomainError(f"invalid qubit pair ({i}, {j}) for n={n}")
    others = [q for q in range(n) if q not in (i, j)]
    spread = np.zeros(rest.labels.size, dtype=np.int64)
    for pos, q in enumerate(others):
        spread |= ((rest.labels >> pos) & 1) << q
    labels, amps = [], []
    for ab, c in enumerate(pair_amps):
        if c == 0:
            continue
        a, b = ab >> 1, ab & 1
        labels.append(spread | (a << i) | (b << j))
        amps.append(c * rest.amps)
    return Ket(n, np.concatenate(labels), np.concatenate(amps))


def singlet_pair_state(i: int, j: int, rest: Ket) -> Ket:
    """(|0_i 1_j> - |1_i 0_j>)/sqrt(2) tensored with ``rest`` on the other qubits."""
    s = 1 / math.sqrt(2)
    return embed_pair(i, j, [0, s, -s, 0], rest)


def zero_ket(n: int) -> Ket:
    return Ket(n, [], [])
