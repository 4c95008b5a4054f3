from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

from .errors import DomainError
from .hilbert import Ket, add_scaled
from .measurement import AdaptiveTest, TestOperator, combine

WEIGHT_TOL = 1e-12
FIX_TOL = 1e-10


def as_operator(test) -> TestOperator:
    return test.operator if isinstance(test, AdaptiveTest) else test


@dataclass(frozen=True, eq=False)
class Strategy:
    """A target state with a probability distribution over tests.

    Tests are either branch trees (executable) or bare operators.
    ``family``/``mode``/``k`` are descriptive labels used in reports.
    """

    target: Ket
    tests: tuple
    family: str = "custom"
    mode: str = "custom"
    k: int | None = None

    def __post_init__(self):
        tests = tuple((w, t) for w, t in self.tests)
        object.__setattr__(self, "tests", tests)
        if not tests:
            raise DomainError("a strategy needs at least one test")
        if any(w <= 0 for w, _ in tests):
            raise DomainError("test weights must be positive")
        total = float(sum(float(w) for w, _ in tests))
        if abs(total - 1.0) > WEIGHT_TOL:
            raise DomainError(f"test weights sum to {total}, not 1")
        if any(as_operator(t).n != self.target.n for _, t in tests):
            raise DomainError("tests and target act on different qubit counts")
        diff = add_scaled(self.operator.apply(self.target), -1.0, self.target).norm()
        if diff > FIX_TOL:
            raise DomainError(f"strategy does not fix its target (residual {diff:.3g})")

    @property
    def n(self) -> int:
        return self.target.n

    @property
    def weights(self) -> list[float]:
        return [float(w) for w, _ in self.tests]

    @property
    def operators(self) -> list[TestOperator]:
        return [as_operator(t) for _, t in self.tests]

    @property
    def executable(self) -> bool:
        return all(isinstance(t, AdaptiveTest) for _, t in self.tests)

    @property
    def alpha(self) -> int:
        """Branch number of the protocol: the largest branch number of its tests."""
        if not self.executable:
            raise DomainError("branch number needs branch-tree tests")
        return max(t.alpha for _, t in self.tests)

    @cached_property
    def operator(self) -> TestOperator:
        return combine([(float(w), as_operator(t)) for w, t in self.tests])

    def __repr__(self):
        return f"Strategy({self.family}, mode={self.mode}, n={self.n}, k={self.k}, tests={len(self.tests)})"
