"""Verification operators, their spectral gaps, and sample counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DomainError, NumericError, TooLargeError
from .hilbert import (
    Ket,
    WeightSector,
    add_scaled,
    binom,
    dicke_state,
    inner,
    normalize,
    singlet_pair_state,
    w_state,
)
from .measurement import (
    TestOperator,
    _sector_tree,
    _xx_tree,
    all_pairs,
    bell_strategies,
    dicke_adaptive_test,
    local_flip_equivalence,
    w_adaptive_test,
)
from .strategy import Strategy

CLUSTER_TOL = 1e-8
MAX_BLOCK = 6000
MAX_DENSE_QUBITS = 12
MODES = ("adaptive", "nonadaptive")


# ---------------------------------------------------------------------------
# assembly


def _check_mode(mode: str):
    if mode not in MODES:
        raise DomainError(f"mode must be one of {MODES}, got {mode!r}")


def assemble_w_strategy(n: int, mode: str = "adaptive") -> Strategy:
    """Uniform mixture over all pairs of the pairwise W tests."""
    _check_mode(mode)
    if n < 3:
        raise DomainError(f"W strategies need n >= 3, got {n}")
    pairs = all_pairs(n)
    per_pair = Fraction(1, len(pairs))
    if mode == "adaptive":
        tests = [(per_pair, w_adaptive_test(i, j, n)) for i, j in pairs]
    else:
        tests = [(Fraction(1, 2), _sector_tree(0, 1, 1, n))]
        tests += [(per_pair / 2, _xx_tree(i, j, 1, n)) for i, j in pairs]
    return Strategy(w_state(n), tests, family="W", mode=mode, k=1)


def assemble_dicke_strategy(n: int, k: int, mode: str = "adaptive") -> Strategy:
    """Dicke strategy; ``k = 1`` and ``k = n - 1`` go through the W construction."""
    _check_mode(mode)
    if n >= 3 and k == 1:
        s = assemble_w_strategy(n, mode)
        return Strategy(s.target, s.tests, family="D", mode=mode, k=1)
    if n >= 3 and k == n - 1:
        flip = local_flip_equivalence(1, n)
        w = assemble_w_strategy(n, mode)
        tests = [(mu, flip.conjugate_test(t)) for mu, t in w.tests]
        return Strategy(dicke_state(n, k), tests, family="D", mode=mode, k=k)
    if n < 4 or not 2 <= k <= n - 2:
        raise DomainError(f"Dicke strategies need 1 <= k <= n-1 (n >= 4 for 2 <= k <= n-2), got n={n}, k={k}")
    pairs = all_pairs(n)
    per_pair = Fraction(1, len(pairs))
    if mode == "adaptive":
        tests = [(per_pair, dicke_adaptive_test(i, j, k, n)) for i, j in pairs]
    else:
        tests = [(Fraction(1, 2), _sector_tree(0, 1, k, n))]
        tests += [(per_pair / 2, _xx_tree(i, j, k, n)) for i, j in pairs]
    return Strategy(dicke_state(n, k), tests, family="D", mode=mode, k=k)


def global_strategy(target: Ket) -> Strategy:
    """The entangled projector onto the target; gap 1."""
    from .measurement import TestOperator as _Op

    vec = target.to_dense()
    proj = _Op(target.n, sp.csr_matrix(np.outer(vec, vec.conj())), is_projector=True)
    return Strategy(target, [(1, proj)], family="global", mode="global")


def build_strategy(family: str, n: int | None = None, k: int | None = None, mode: str = "adaptive") -> Strategy:
    """Dispatch on the CLI-level family names ``W``, ``D``, ``bell3``, ``bell2``."""
    if family == "bell3":
        return bell_strategies()[0]
    if family == "bell2":
        return bell_strategies()[1]
    if n is None:
        raise DomainError(f"family {family} needs n")
    if family == "W":
        return assemble_w_strategy(n, mode)
    if family == "D":
        if k is None:
            raise DomainError("family D needs k")
        return assemble_dicke_strategy(n, k, mode)
    raise DomainError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# closed forms


def closed_form_gap(family: str, n: int | None = None, k: int | None = None) -> Fraction:
    """Exact spectral gap of a built-in strategy.

    ``family`` is one of ``W-adaptive``, ``W-nonadaptive``, ``D-adaptive``,
    ``D-nonadaptive``, ``bell3``, ``bell2`` or ``global``.
    """
    if family == "bell3":
        return Fraction(2, 3)
    if family == "bell2":
        return Fraction(1, 2)
    if family == "global":
        return Fraction(1)
    if n is None:
        raise DomainError(f"{family} needs n")
    if family in ("D-adaptive", "D-nonadaptive"):
        if k is None:
            raise DomainError(f"{family} needs k")
        if n >= 3 and k in (1, n - 1):
            return closed_form_gap("W" + family[1:], n)
        if n < 4 or not 2 <= k <= n - 2:
            raise DomainError(f"no closed form for {family} with n={n}, k={k}")
        adaptive = min(Fraction(1, n - 1), Fraction(1, 2) - Fraction(k * (k - n) + n, n * (n - 1)))
        return adaptive if family == "D-adaptive" else adaptive / 2
    if family == "W-adaptive":
        if n < 3:
            raise DomainError(f"no closed form for W with n={n}")
        return min(Fraction(1, n - 1), Fraction(1, 2) - Fraction(1, n * (n - 1)))
    if family == "W-nonadaptive":
        if n < 3:
            raise DomainError(f"no closed form for W with n={n}")
        if n == 3:
            return Fraction(1, 4)
        return Fraction(1, 2 * (n - 1))
    raise DomainError(f"unknown family {family!r}")


def strategy_gap_key(s: Strategy) -> str | None:
    if s.family in ("bell3", "bell2", "global"):
        return s.family
    if s.family in ("W", "D") and s.mode in MODES:
        return f"{s.family}-{s.mode}"
    return None


def closed_form_for(s: Strategy) -> Fraction | None:
    key = strategy_gap_key(s)
    if key is None:
        return None
    return closed_form_gap(key, s.n, s.k)


def full_spectrum_w(n: int) -> list[tuple[Fraction, int]]:
    """Every eigenvalue of the adaptive W operator with its multiplicity, largest first."""
    if n < 3:
        raise DomainError("needs n >= 3")
    pairs = n * (n - 1)
    values = [
        (Fraction(1), 1),
        (1 - Fraction(1, n - 1), n - 1),
        (Fraction(1, 2) + Fraction(1, pairs), 1),
        (Fraction(1, pairs), pairs // 2 - 1),
        (Fraction(0), 2**n - (n * n + n) // 2),
    ]
    merged: dict[Fraction, int] = {}
    for v, m in values:
        merged[v] = merged.get(v, 0) + m
    return sorted(((v, m) for v, m in merged.items() if m), reverse=True)


def johnson_spectrum(n: int, k: int) -> list[tuple[int, int]]:
    """Adjacency eigenvalues of J(n, k) with multiplicities."""
    if not 0 <= k <= n:
        raise DomainError(f"J({n},{k}) undefined")
    return [
        ((k - j) * (n - k - j) - j, binom(n, j) - binom(n, j - 1))
        for j in range(min(k, n - k) + 1)
    ]


def johnson_adjacency(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Adjacency matrix over B(n,k): strings adjacent when they differ in two bits."""
    members = WeightSector(n, k).members
    x = members[:, None] ^ members[None, :]
    adj = np.zeros(x.shape)
    for q in range(n):
        adj += (x >> q) & 1
    return (adj == 2).astype(float), members


def m1_matrix(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The weight-k block of n(n-1) times the adaptive Dicke operator."""
    adj, members = johnson_adjacency(n, k)
    return adj + (n * (n - 1) - k * (n - k)) * np.eye(len(members)), members


def m1_top_two(n: int, k: int) -> tuple[int, int]:
    """Two largest eigenvalues of M1 obtained from the Johnson spectrum."""
    shift = n * (n - 1) - k * (n - k)
    values = sorted({v for v, m in johnson_spectrum(n, k) if m}, reverse=True)
    return shift + values[0], shift + values[1]


def m2_matrix(n: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """The weight k-1 and k+1 block of n(n-1) times the adaptive Dicke operator."""
    low = WeightSector(n, k - 1).members
    high = WeightSector(n, k + 1).members
    labels = np.concatenate([low, high])
    dim = labels.size
    mat = np.zeros((dim, dim))
    mat[: low.size, : low.size] = np.eye(low.size) * ((n - k) * (n - k + 1) / 2)
    mat[low.size :, low.size :] = np.eye(high.size) * (k * (k + 1) / 2)
    cover = (low[:, None] & high[None, :]) == low[:, None]
    mat[: low.size, low.size :] = cover
    mat[low.size :, : low.size] = cover.T
    return mat, labels


def m2_top_eigen(n: int, k: int) -> tuple[Fraction, Ket]:
    """Largest eigenvalue of M2 and its eigenvector, both in closed form."""
    if n < 4 or not 2 <= k <= n - 2:
        raise DomainError(f"needs n >= 4 and 2 <= k <= n-2, got n={n}, k={k}")
    value = Fraction(n * (n + 1), 2) + k * (k - n)
    vec = add_scaled(
        dicke_state(n, k - 1).scaled(math.sqrt(binom(n, k + 1))),
        math.sqrt(binom(n, k - 1)),
        dicke_state(n, k + 1),
    )
    return value, normalize(vec)


# ---------------------------------------------------------------------------
# numerics


def _rationalize(x: float, max_den: int = 10**6, tol: float = 1e-9) -> Fraction | None:
    f = Fraction(x).limit_denominator(max_den)
    return f if abs(float(f) - x) < tol else None


def _fraction_json(f: Fraction | None, value: float) -> dict:
    out = {"value": value}
    if f is not None:
        out.update(num=f.numerator, den=f.denominator)
    return out


def _fix_phase(v: np.ndarray) -> np.ndarray:
    idx = int(np.argmax(np.abs(v) > np.abs(v).max() - 1e-9))
    return v * (abs(v[idx]) / v[idx])


@dataclass(frozen=True)
class SpectralReport:
    lambda1: float
    lambda2: float
    nu: float
    multiplicity2: int
    eigvecs2: tuple = field(repr=False)
    method: str
    family: str = "custom"
    mode: str = "custom"
    n: int = 0
    k: int | None = None

    @property
    def lambda2_exact(self) -> Fraction | None:
        return _rationalize(self.lambda2)

    @property
    def nu_exact(self) -> Fraction | None:
        return _rationalize(self.nu)

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "n": self.n,
            "k": self.k,
            "mode": self.mode,
            "lambda2": _fraction_json(self.lambda2_exact, self.lambda2),
            "nu": _fraction_json(self.nu_exact, self.nu),
            "multiplicity": self.multiplicity2,
            "method": self.method,
        }


def _blocks(mat: sp.csr_matrix, target: Ket):
    """Connected components of the operator graph, with the target's merged into one."""
    pattern = (abs(mat) > 0).astype(np.int8)
    ncomp, comp = connected_components(pattern, directed=False)
    target_comps = np.unique(comp[target.labels])
    if target_comps.size > 1:
        comp = np.where(np.isin(comp, target_comps), target_comps[0], comp)
    return comp, int(target_comps[0])


def operator_eigenvalues(op: TestOperator, max_block: int = MAX_BLOCK) -> np.ndarray:
    """All 2^n eigenvalues of a Hermitian operator, largest first."""
    mat = op.matrix
    pattern = (abs(mat) > 0).astype(np.int8)
    _, comp = connected_components(pattern, directed=False)
    sizes = np.bincount(comp)
    diag = mat.diagonal().real
    values = [diag[sizes[comp] == 1]]
    for c in np.nonzero(sizes > 1)[0]:
        if sizes[c] > max_block:
            raise TooLargeError(f"block of size {sizes[c]} exceeds {max_block}")
        idx = np.nonzero(comp == c)[0]
        values.append(np.linalg.eigvalsh(mat[idx][:, idx].toarray()))
    return np.sort(np.concatenate(values))[::-1]


def _analyze_dense(mat: sp.csr_matrix, target: Ket):
    vec = target.to_dense()
    dense = mat.toarray() - np.outer(vec, vec.conj())
    vals, vecs = np.linalg.eigh(dense)
    labels = np.arange(dense.shape[0], dtype=np.int64)
    return [(vals, vecs, labels)], 0


def _analyze_blocks(mat: sp.csr_matrix, target: Ket, max_block: int):
    comp, tcomp = _blocks(mat, target)
    sizes = np.bincount(comp)
    diag = mat.diagonal().real
    singles = sizes[comp] == 1
    single_labels = np.nonzero(singles & (comp != tcomp))[0]
    pieces = []
    # isolated basis states are eigenvectors with their diagonal entry
    pieces.append((diag[single_labels], None, single_labels))
    for c in np.nonzero(sizes > 0)[0]:
        if c != tcomp and sizes[c] == 1:
            continue
        if sizes[c] > max_block:
            raise TooLargeError(f"block of size {sizes[c]} exceeds {max_block}")
        idx = np.nonzero(comp == c)[0]
        block = mat[idx][:, idx].toarray()
        if c == tcomp:
            t = np.zeros(idx.size, dtype=np.complex128)
            t[np.searchsorted(idx, target.labels)] = target.amps
            block = block - np.outer(t, t.conj())
        vals, vecs = np.linalg.eigh(block)
        pieces.append((vals, vecs, idx))
    return pieces, 1 if tcomp >= 0 else 0


def spectral_gap(s: Strategy, method: str = "auto", max_block: int = MAX_BLOCK) -> SpectralReport:
    """Second largest eigenvalue of the verification operator and its gap.

    The operator is split into the connected components of its nonzero
    pattern (for the built-in strategies these sit inside a few adjacent
    Hamming-weight sectors) and each block is diagonalized densely.  The
    target direction is deflated, so the largest remaining eigenvalue is the
    one on the orthogonal complement of the target.
    """
    if method not in ("auto", "dense", "sector-block"):
        raise DomainError(f"unknown method {method!r}")
    mat = s.operator.matrix
    n = s.n
    used = method
    if method == "dense":
        if n > MAX_DENSE_QUBITS:
            raise TooLargeError(f"dense eigensolve limited to n <= {MAX_DENSE_QUBITS}")
        pieces, _ = _analyze_dense(mat, s.target)
    else:
        try:
            pieces, _ = _analyze_blocks(mat, s.target, max_block)
            used = "sector-block"
        except TooLargeError:
            if method == "sector-block" or n > MAX_DENSE_QUBITS:
                raise
            pieces, _ = _analyze_dense(mat, s.target)
            used = "dense"

    all_vals = np.concatenate([p[0] for p in pieces])
    if not np.all(np.isfinite(all_vals)):
        raise NumericError("eigensolver returned non-finite values")
    lam2 = float(all_vals.max())
    tol = CLUSTER_TOL * max(1.0, abs(lam2))
    mult = int(np.sum(np.abs(all_vals - lam2) <= tol))
    if used == "sector-block" or used == "dense":
        # the deflated target contributes one spurious zero
        if abs(lam2) <= tol:
            mult -= 1
    vecs = []
    for vals, block_vecs, labels in pieces:
        hits = np.nonzero(np.abs(vals - lam2) <= tol)[0]
        for h in hits:
            if block_vecs is None:
                vecs.append(Ket(n, [labels[h]], [1.0]))
            else:
                v = _fix_phase(block_vecs[:, h])
                if abs(np.vdot(_target_on(labels, s.target), v)) > 1e-6:
                    continue
                vecs.append(Ket(n, labels, v))
    lam2 = max(lam2, 0.0)
    return SpectralReport(
        lambda1=1.0,
        lambda2=lam2,
        nu=1.0 - lam2,
        multiplicity2=mult,
        eigvecs2=tuple(vecs),
        method=used,
        family=s.family,
        mode=s.mode,
        n=n,
        k=s.k,
    )


def _target_on(labels: np.ndarray, target: Ket) -> np.ndarray:
    t = np.zeros(labels.size, dtype=np.complex128)
    pos = np.searchsorted(labels, target.labels)
    ok = (pos < labels.size) & (labels[np.minimum(pos, labels.size - 1)] == target.labels)
    t[pos[ok]] = target.amps[ok]
    return t


def worst_case_pass_probability(s: Strategy, eps: float, report: SpectralReport | None = None) -> float:
    """Largest pass probability of a state with infidelity ``eps``: 1 - nu*eps."""
    if not 0 <= eps <= 1:
        raise DomainError(f"infidelity must lie in [0, 1], got {eps}")
    if report is None:
        report = spectral_gap(s)
    return 1.0 - report.nu * eps


@dataclass(frozen=True)
class RequiredTests:
    exact: int
    approx: float


def required_tests(nu: float, eps: float, delta: float) -> RequiredTests:
    """Number of tests reaching infidelity ``eps`` at confidence ``1 - delta``.

    ``exact`` is the smallest N with (1 - nu*eps)^N <= delta; ``approx`` is
    the first-order form ln(1/delta) / (nu*eps).
    """
    if not 0 < nu <= 1:
        raise DomainError(f"gap must lie in (0, 1], got {nu}")
    if not 0 < eps < 1:
        raise DomainError(f"infidelity must lie in (0, 1), got {eps}")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    log_inv_delta = -math.log(delta)
    approx = log_inv_delta / (nu * eps)
    if nu * eps >= 1:
        return RequiredTests(1, approx)
    ratio = log_inv_delta / -math.log1p(-nu * eps)
    exact = math.ceil(ratio - 1e-12 * ratio)
    return RequiredTests(max(exact, 1), approx)


# ---------------------------------------------------------------------------
# second eigenspace


def singlet_family(n: int, k: int) -> dict[tuple[int, int], Ket]:
    """|psi^->_{ij} (x) |D_{n-2}^{k-1}> for every pair i < j."""
    rest = dicke_state(n - 2, k - 1)
    return {(i, j): singlet_pair_state(i, j, rest) for i, j in all_pairs(n)}


@dataclass(frozen=True)
class SecondEigenspaceReport:
    expected_eigenvalue: float
    max_residual: float
    rayleigh: dict
    gram_rank: int
    expected_rank: int
    orthogonal_to_target: bool

    @property
    def ok(self) -> bool:
        return (
            self.max_residual < 1e-9
            and self.gram_rank == self.expected_rank
            and self.orthogonal_to_target
        )


def verify_second_eigenspace(s: Strategy, family: str | None = None, n: int | None = None, k: int | None = None) -> SecondEigenspaceReport:
    """Check that the singlet-pair vectors span the second eigenspace."""
    family = family or s.family
    n = n if n is not None else s.n
    k = k if k is not None else s.k
    if family == "W":
        k = 1
    if family not in ("W", "D") or n < 4 or k is None:
        raise DomainError("second-eigenspace check covers W and Dicke strategies with n >= 4")
    gap = Fraction(1, n - 1) if s.mode == "adaptive" else Fraction(1, 2 * (n - 1))
    lam = float(1 - gap)
    op = s.operator
    vectors = singlet_family(n, k)
    residuals, rayleigh = [], {}
    for pair, phi in vectors.items():
        image = op.apply(phi)
        residuals.append(add_scaled(image, -lam, phi).norm())
        rayleigh[pair] = float(inner(phi, image).real)
    dense = np.array([phi.to_dense() for phi in vectors.values()])
    gram = dense.conj() @ dense.T
    rank = int(np.linalg.matrix_rank(gram, tol=1e-9))
    orth = all(abs(inner(s.target, phi)) < 1e-12 for phi in vectors.values())
    return SecondEigenspaceReport(lam, float(max(residuals)), rayleigh, rank, n - 1, orth)
