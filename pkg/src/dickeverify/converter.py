"""Turning two-step adaptive tests into nonadaptive ones.

Each branch ``a`` of an adaptive test gives one nonadaptive test: the pair
is always measured in branch ``a``'s setting, outcomes in branch ``a`` are
judged by its own second-stage test, and first-stage outcomes belonging to
any other branch pass.  Mixing these with weight ``mu_j / alpha_j`` loses at
most a factor ``alpha`` in the spectral gap.

With ``merge=True`` branches sharing a setting are fused first, and the
outcomes of the other branches are accepted only where the target itself
can land in the fixed setting (rather than unconditionally).  For the W and
Dicke protocols this reproduces the hand-built nonadaptive strategies.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable

import numpy as np

from .errors import DomainError
from .hilbert import Ket
from .measurement import (
    ALL_OUTCOMES,
    LOCAL_BASIS,
    AdaptiveTest,
    Branch,
    Part,
    TestOperator,
    combine,
)
from .spectral import SpectralReport, _fraction_json, spectral_gap
from .strategy import Strategy

GUARANTEE_TOL = 1e-10


def branch_number(t: AdaptiveTest | Strategy) -> int:
    """alpha of a test, or the maximum over the tests of a strategy."""
    if isinstance(t, Strategy):
        return t.alpha
    return t.alpha


def merge_branches(t: AdaptiveTest, classifier: Callable[[AdaptiveTest, Branch], str] | None = None) -> AdaptiveTest:
    """Fuse branches whose second stage uses the same measurement setting.

    ``classifier`` labels a branch; the default is its canonical setting
    string.  Grouping branches with different actual settings is an error.
    """
    classify = classifier or (lambda test, b: test.setting_label(b))
    groups: dict[str, list[Branch]] = {}
    for b in t.branches:
        groups.setdefault(classify(t, b), []).append(b)
    merged = []
    for label, members in groups.items():
        settings = {b.setting for b in members}
        if len(settings) > 1:
            raise DomainError(f"label {label!r} groups different settings {sorted(settings)}")
        merged.append(Branch(members[0].setting, tuple(p for b in members for p in b.parts)))
    return AdaptiveTest(t.n, t.pair, tuple(merged), name=t.name)


def _target_support(t: AdaptiveTest, target: Ket, setting: str, weights) -> frozenset:
    """Outcomes of ``setting`` the target can produce after first-stage weights ``weights``."""
    i, j = t.pair
    labels = target.labels
    rest = labels & ~((1 << i) | (1 << j))
    local = ((labels >> i) & 1) * 2 + ((labels >> j) & 1)
    basis = np.kron(LOCAL_BASIS[setting[0]], LOCAL_BASIS[setting[1]])
    support: set[int] = set()
    patterns, inv = np.unique(rest, return_inverse=True)
    amps = np.zeros((patterns.size, 4), dtype=np.complex128)
    amps[inv, local] = target.amps
    for r, pattern in enumerate(patterns.tolist()):
        if bin(pattern).count("1") not in weights:
            continue
        probs = np.abs(basis.conj().T @ amps[r]) ** 2
        support |= {o for o in range(4) if probs[o] > 1e-20}
    return frozenset(support)


def nonadaptive_procedures(t: AdaptiveTest, target: Ket | None = None) -> list[AdaptiveTest]:
    """One single-setting test per nontrivial branch of ``t``.

    Without ``target`` the other branches' outcomes pass unconditionally;
    with it they pass only on outcomes the target can produce.
    """
    nontrivial = [b for b in t.branches if not b.trivial]
    if not nontrivial:
        return [AdaptiveTest(t.n, t.pair, t.branches, name=t.name)]
    out = []
    for a in nontrivial:
        parts = list(a.parts)
        for b in t.branches:
            if b is a:
                continue
            for p in b.parts:
                if target is None:
                    parts.append(Part(p.weights, ALL_OUTCOMES))
                else:
                    accept = _target_support(t, target, a.setting, p.weights)
                    parts.append(Part(p.weights, accept))
        out.append(AdaptiveTest(t.n, t.pair, (Branch(a.setting, tuple(parts)),), name=f"{t.name}/{a.setting}"))
    return out


def convert_test(t: AdaptiveTest, target: Ket | None = None) -> list[TestOperator]:
    return [p.operator for p in nonadaptive_procedures(t, target)]


@dataclass(frozen=True)
class ConversionResult:
    input: Strategy
    output: Strategy
    alpha_in: int
    alpha: int
    merged: bool
    gap_in: float
    gap_out: float
    report_in: SpectralReport
    report_out: SpectralReport

    @property
    def guarantee_ok(self) -> bool:
        return self.gap_out >= self.gap_in / self.alpha - GUARANTEE_TOL

    def to_json(self) -> dict:
        return {
            "family": self.input.family,
            "n": self.input.n,
            "k": self.input.k,
            "merged": self.merged,
            "alpha_in": self.alpha_in,
            "alpha": self.alpha,
            "gap_in": _fraction_json(self.report_in.nu_exact, self.gap_in),
            "gap_out": _fraction_json(self.report_out.nu_exact, self.gap_out),
            "bound": _fraction_json(
                None if self.report_in.nu_exact is None else self.report_in.nu_exact / self.alpha,
                self.gap_in / self.alpha,
            ),
            "guarantee_ok": self.guarantee_ok,
            "tests_out": len(self.output.tests),
        }


def convert_strategy(s: Strategy, merge: bool = False) -> ConversionResult:
    """Nonadaptive strategy built from the branches of an adaptive one."""
    if not s.executable:
        raise DomainError("conversion needs branch-tree tests")
    alpha_in = s.alpha
    tests = []
    alphas = []
    for mu, t in s.tests:
        tree = merge_branches(t) if merge else t
        alphas.append(tree.alpha)
        procs = nonadaptive_procedures(tree, s.target if merge else None)
        w = Fraction(mu) / len(procs) if isinstance(mu, (int, Fraction)) else mu / len(procs)
        tests.extend((w, p) for p in procs)
    out = Strategy(s.target, tests, family=s.family, mode="converted", k=s.k)
    rin = spectral_gap(s)
    rout = spectral_gap(out)
    return ConversionResult(
        input=s,
        output=out,
        alpha_in=alpha_in,
        alpha=max(alphas),
        merged=merge,
        gap_in=rin.nu,
        gap_out=rout.nu,
        report_in=rin,
        report_out=rout,
    )


def slack_operator(s: Strategy) -> tuple[TestOperator, int]:
    """The remainder Omega' with converted = Omega/alpha + Omega' (unmerged conversion)."""
    alpha = s.alpha
    terms = []
    for mu, t in s.tests:
        a_j = t.alpha
        mu = float(mu)
        for b in t.branches:
            m_b = t.first_stage_operator(b.weights)
            terms.append((mu * (1 - 1 / a_j), m_b))
            terms.append((mu * (1 / a_j - 1 / alpha), t.branch_operator(b)))
    return combine(terms), alpha
