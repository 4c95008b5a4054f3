"""Simulated verification runs against a worst-case noisy source.

Each trial feeds copies of the noisy state into randomly chosen tests until
the first failure and records how many passed.  The ``delta``-quantile of
these counts over many trials estimates the number of tests needed, and a
regression on ``ln(1/delta)/eps`` recovers the inverse spectral gap.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError
from .hilbert import Ket, add_scaled, inner, normalize
from .measurement import ProcedurePlan
from .spectral import SpectralReport, singlet_family, spectral_gap
from .strategy import Strategy, as_operator

MAX_TESTS = 10**7
BLOCK_SIZE = 1000
CHUNK_ELEMENTS = 1 << 20
SIM_MODES = ("bernoulli", "procedure")


def default_eps_grid(points: int = 40, low: float = 0.02, high: float = 0.5) -> np.ndarray:
    return np.geomspace(low, high, points)


def default_deltas(count: int = 100, low: float = 0.01, high: float = 0.2) -> np.ndarray:
    return np.linspace(low, high, count)


@dataclass(frozen=True)
class NoisyInput:
    target: Ket
    tau: Ket
    eps: float
    psi_prime: Ket

    @classmethod
    def build(cls, target: Ket, tau: Ket, eps: float) -> "NoisyInput":
        if not 0 <= eps <= 1:
            raise DomainError(f"infidelity must lie in [0, 1], got {eps}")
        if abs(inner(target, tau)) > 1e-10:
            raise DomainError("noise must be orthogonal to the target")
        tau = normalize(tau)
        psi = add_scaled(target.scaled(math.sqrt(1 - eps)), math.sqrt(eps), tau)
        return cls(target, tau, eps, psi)


def worst_case_noise(s: Strategy, report: SpectralReport | None = None) -> tuple[Ket, str]:
    """A unit vector of the second eigenspace, orthogonal to the target.

    Returns the vector and a short description of how it was chosen.
    """
    report = report or spectral_gap(s)
    if report.nu >= 1 - 1e-12:
        raise DomainError("strategy has no second eigenspace (gap 1)")
    if s.family in ("W", "D") and s.k is not None and s.n >= 4:
        phi = normalize(singlet_family(s.n, s.k)[(0, 1)])
        image = s.operator.apply(phi)
        if add_scaled(image, -report.lambda2, phi).norm() < 1e-9:
            return phi, "singlet-pair(1,2)"
    if not report.eigvecs2:
        raise DomainError("no eigenvector available for the second eigenvalue")
    return normalize(report.eigvecs2[0]), "eigensolver"


def random_noise(target: Ket, rng: np.random.Generator) -> Ket:
    """Haar-like random direction orthogonal to the target (not worst case)."""
    dim = 1 << target.n
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    t = target.to_dense()
    v -= t * np.vdot(t, v)
    return normalize(Ket.from_dense(v))


class TrialResult(NamedTuple):
    passes: int
    capped: bool


class _Sampler:
    """Vectorized test selection and pass/fail draws for one input state."""

    def __init__(self, s: Strategy, state: Ket, mode: str):
        if mode not in SIM_MODES:
            raise DomainError(f"simulation mode must be one of {SIM_MODES}")
        if mode == "procedure" and not s.executable:
            raise DomainError("procedure mode needs branch-tree tests")
        self.mode = mode
        self.cum_weights = np.cumsum(s.weights)
        self.cum_weights /= self.cum_weights[-1]
        if mode == "procedure":
            self.plans = [ProcedurePlan(t, state) for _, t in s.tests]
            self.pass_probs = np.array([p.pass_probability for p in self.plans])
        else:
            self.plans = None
            self.pass_probs = np.clip([as_operator(t).expectation(state) for _, t in s.tests], 0.0, 1.0)
        self.mean_pass = float(np.dot(np.diff(np.concatenate([[0.0], self.cum_weights])), self.pass_probs))

    def _choose(self, rng, shape):
        idx = np.searchsorted(self.cum_weights, rng.random(shape), side="right")
        return np.minimum(idx, self.cum_weights.size - 1)

    def _passes(self, rng, tests: np.ndarray) -> np.ndarray:
        if self.plans is None:
            return rng.random(tests.shape) < self.pass_probs[tests]
        ok = np.empty(tests.shape, dtype=bool)
        flat_tests = tests.ravel()
        flat_ok = ok.reshape(-1)
        for j in np.unique(flat_tests):
            where = np.nonzero(flat_tests == j)[0]
            flat_ok[where] = self.plans[j].sample(rng, where.size)[2]
        return ok

    def run(self, rng: np.random.Generator, size: int, max_tests: int = MAX_TESTS):
        counts = np.zeros(size, dtype=np.int64)
        capped = np.zeros(size, dtype=bool)
        if self.mean_pass >= 1.0 - 1e-15 and np.all(self.pass_probs >= 1.0 - 1e-15):
            counts[:] = max_tests
            capped[:] = True
            return counts, capped
        active = np.arange(size)
        expected_run = 1.0 / max(1.0 - self.mean_pass, 1e-12)
        while active.size:
            length = int(min(max(8, 2 * expected_run), max(8, CHUNK_ELEMENTS // active.size)))
            tests = self._choose(rng, (active.size, length))
            ok = self._passes(rng, tests)
            failed = ~ok.all(axis=1)
            counts[active] += np.where(failed, np.argmin(ok, axis=1), length)
            # a first failure beyond the cap still counts as capped
            over = counts[active] >= max_tests
            counts[active[over]] = max_tests
            capped[active[over]] = True
            active = active[~failed & ~over]
        return counts, capped


def run_protocol_once(s: Strategy, state: Ket, rng: np.random.Generator, mode: str = "bernoulli",
                      max_tests: int = MAX_TESTS) -> TrialResult:
    """Number of tests passed before the first failure (one trial).

    A state that passes every test with certainty hits ``max_tests`` and is
    reported as capped.
    """
    counts, capped = _Sampler(s, state, mode).run(rng, 1, max_tests)
    return TrialResult(int(counts[0]), bool(capped[0]))


def sample_passes(s: Strategy, state: Ket, rng: np.random.Generator, size: int,
                  mode: str = "bernoulli") -> np.ndarray:
    """Outcomes of ``size`` independent single tests, each drawn from the strategy."""
    sampler = _Sampler(s, state, mode)
    return sampler._passes(rng, sampler._choose(rng, (size,)))


def _block_rng(seed: int, eps_index: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(eps_index, block))))


def order_statistic_index(delta: float, M: int) -> int:
    # guard against floor(0.29 * 100) == 28
    return int(math.floor(delta * M * (1 + 1e-12)))


def threshold(samples: np.ndarray, delta: float) -> int:
    """N_{floor(delta*M)} with the samples in decreasing order (1-based)."""
    M = len(samples)
    idx = order_statistic_index(delta, M)
    if idx < 1:
        raise DomainError(f"floor(delta*M) = 0 for delta={delta}, M={M}")
    ordered = np.sort(np.asarray(samples), kind="stable")[::-1]
    return int(ordered[idx - 1])


def thresholds_table(samples: Sequence[np.ndarray], deltas: Sequence[float]) -> np.ndarray:
    out = np.zeros((len(samples), len(deltas)), dtype=np.int64)
    for e, row in enumerate(samples):
        ordered = np.sort(np.asarray(row), kind="stable")[::-1]
        for d, delta in enumerate(deltas):
            idx = order_statistic_index(delta, ordered.size)
            if idx < 1:
                raise DomainError(f"floor(delta*M) = 0 for delta={delta}")
            out[e, d] = ordered[idx - 1]
    return out


def fit_slopes(eps: Sequence[float], deltas: Sequence[float], table: np.ndarray) -> np.ndarray:
    """Through-origin least-squares slope of N against ln(1/delta)/eps, one per delta."""
    eps = np.asarray(eps, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    if eps.size < 2 or deltas.size < 2:
        raise DomainError("fit needs at least two eps points and two deltas")
    if np.unique(eps).size < 2:
        raise DomainError("degenerate eps grid")
    x = np.log(1 / deltas)[None, :] / eps[:, None]
    y = np.asarray(table, dtype=float)
    return np.sum(x * y, axis=0) / np.sum(x * x, axis=0)


@dataclass
class SimulationReport:
    family: str
    strategy_mode: str
    n: int
    k: int | None
    sim_mode: str
    M: int
    seed: int
    eps: list
    deltas: list
    samples: list = field(repr=False)
    thresholds: list = field(repr=False)
    fit: float
    fit_std: float
    noise: str
    nu: float
    capped: int = 0

    def to_json(self, include_samples: bool = True) -> dict:
        out = {
            "family": self.family,
            "strategy_mode": self.strategy_mode,
            "n": self.n,
            "k": self.k,
            "sim_mode": self.sim_mode,
            "M": self.M,
            "seed": self.seed,
            "eps": [float(e) for e in self.eps],
            "deltas": [float(d) for d in self.deltas],
            "thresholds": [[int(v) for v in row] for row in self.thresholds],
            "fit": float(self.fit),
            "fit_std": float(self.fit_std),
            "noise": self.noise,
            "nu": float(self.nu),
            "capped": int(self.capped),
        }
        if include_samples:
            out["samples"] = [[int(v) for v in row] for row in self.samples]
        return out

    def dumps(self, include_samples: bool = True) -> str:
        return json.dumps(self.to_json(include_samples), sort_keys=True)

    @classmethod
    def from_json(cls, payload: dict | str) -> "SimulationReport":
        if isinstance(payload, str):
            payload = json.loads(payload)
        return cls(
            family=payload["family"],
            strategy_mode=payload["strategy_mode"],
            n=payload["n"],
            k=payload["k"],
            sim_mode=payload["sim_mode"],
            M=payload["M"],
            seed=payload["seed"],
            eps=list(payload["eps"]),
            deltas=list(payload["deltas"]),
            samples=[np.asarray(row, dtype=np.int64) for row in payload.get("samples", [])],
            thresholds=[list(row) for row in payload["thresholds"]],
            fit=payload["fit"],
            fit_std=payload["fit_std"],
            noise=payload["noise"],
            nu=payload["nu"],
            capped=payload.get("capped", 0),
        )

    def thresholds_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["eps", "delta", "N"])
        for e, row in zip(self.eps, self.thresholds):
            for d, value in zip(self.deltas, row):
                writer.writerow([repr(float(e)), repr(float(d)), int(value)])
        return buf.getvalue()

    def scatter_csv(self, points: int = 500) -> str:
        """(1/eps, N_i) pairs, an evenly strided subsample of about ``points`` rows."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["eps_inv", "N"])
        per_eps = max(1, points // max(1, len(self.eps)))
        for e, row in zip(self.eps, self.samples):
            stride = max(1, len(row) // per_eps)
            for value in list(row)[::stride][:per_eps]:
                writer.writerow([repr(1 / float(e)), int(value)])
        return buf.getvalue()


def simulate(
    s: Strategy,
    eps_grid: Sequence[float] | None = None,
    M: int = 10_000,
    deltas: Sequence[float] | None = None,
    seed: int = 0,
    mode: str = "bernoulli",
    noise: str = "worst",
    max_tests: int = MAX_TESTS,
) -> SimulationReport:
    """Repeat the pass-until-failure experiment ``M`` times per infidelity.

    Trials are drawn in fixed blocks of ``BLOCK_SIZE``; each block has its own
    stream keyed by ``(seed, eps index, block index)`` so results do not
    depend on how the work is scheduled.
    """
    if M < 100:
        raise DomainError("M must be at least 100")
    eps_grid = default_eps_grid() if eps_grid is None else np.asarray(eps_grid, dtype=float)
    deltas = default_deltas() if deltas is None else np.asarray(deltas, dtype=float)
    for d in deltas:
        if order_statistic_index(d, M) < 1:
            raise DomainError(f"floor(delta*M) = 0 for delta={d}, M={M}")
    report = spectral_gap(s)
    if noise == "worst":
        tau, how = worst_case_noise(s, report)
    elif noise == "random":
        tau, how = random_noise(s.target, _block_rng(seed, len(eps_grid), 0)), "random"
    else:
        raise DomainError(f"unknown noise model {noise!r}")

    samples, capped = [], 0
    for e_idx, eps in enumerate(eps_grid):
        state = NoisyInput.build(s.target, tau, float(eps)).psi_prime
        sampler = _Sampler(s, state, mode)
        row = []
        for b, start in enumerate(range(0, M, BLOCK_SIZE)):
            size = min(BLOCK_SIZE, M - start)
            counts, cap = sampler.run(_block_rng(seed, e_idx, b), size, max_tests)
            row.append(counts)
            capped += int(cap.sum())
        samples.append(np.concatenate(row))
    table = thresholds_table(samples, deltas)
    slopes = fit_slopes(eps_grid, deltas, table)
    return SimulationReport(
        family=s.family,
        strategy_mode=s.mode,
        n=s.n,
        k=s.k,
        sim_mode=mode,
        M=M,
        seed=seed,
        eps=[float(e) for e in eps_grid],
        deltas=[float(d) for d in deltas],
        samples=samples,
        thresholds=table.tolist(),
        fit=float(np.mean(slopes)),
        fit_std=float(np.std(slopes, ddof=1)),
        noise=how,
        nu=report.nu,
        capped=capped,
    )


def fit_inverse_gap(report: SimulationReport, deltas: Sequence[float] | None = None) -> tuple[float, float]:
    """Mean and standard deviation over deltas of the fitted 1/nu."""
    if deltas is None:
        table, deltas = np.asarray(report.thresholds), report.deltas
    else:
        table = thresholds_table(report.samples, deltas)
    slopes = fit_slopes(report.eps, deltas, table)
    return float(np.mean(slopes)), float(np.std(slopes, ddof=1))
