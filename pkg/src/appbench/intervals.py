"""Interval arithmetic over signed 64-bit integers for path feasibility.

A variable's possible values are a sorted tuple of disjoint closed intervals.
Branch atoms (`x < c`, `x == c`, ...) intersect away parts of the set; an
empty set means the path is infeasible. Witness extraction picks the smallest
admissible value near zero so generated test inputs stay small and readable.
"""

from __future__ import annotations

from dataclasses import dataclass

I64_MIN = -(1 << 63)
I64_MAX = (1 << 63) - 1

# Witnesses prefer this band when it intersects the feasible set; generated
# inputs stay human-sized without sacrificing completeness.
SOFT_CLAMP_LO = -1000
SOFT_CLAMP_HI = 1000


@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi]; lo <= hi always holds."""

    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"empty interval [{self.lo}, {self.hi}]")

    def contains(self, value: int) -> bool:
        return self.lo <= value <= self.hi


@dataclass(frozen=True)
class IntervalSet:
    """Union of disjoint, sorted, non-adjacent closed intervals."""

    intervals: tuple[Interval, ...]

    @classmethod
    def full(cls) -> "IntervalSet":
        return cls((Interval(I64_MIN, I64_MAX),))

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(())

    @classmethod
    def of(cls, lo: int, hi: int) -> "IntervalSet":
        if lo > hi:
            return cls.empty()
        return cls((Interval(lo, hi),))

    @classmethod
    def from_intervals(cls, pairs: list[tuple[int, int]]) -> "IntervalSet":
        """Normalize arbitrary [lo, hi] pairs: drop empties, sort, merge
        overlapping or adjacent runs."""
        valid = sorted((lo, hi) for lo, hi in pairs if lo <= hi)
        merged: list[tuple[int, int]] = []
        for lo, hi in valid:
            if merged and lo <= merged[-1][1] + 1:
                merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
            else:
                merged.append((lo, hi))
        return cls(tuple(Interval(lo, hi) for lo, hi in merged))

    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, value: int) -> bool:
        return any(iv.contains(value) for iv in self.intervals)

    def min(self) -> int:
        if self.is_empty():
            raise ValueError("empty interval set has no minimum")
        return self.intervals[0].lo

    def intersect(self, other: "IntervalSet") -> "IntervalSet":
        out: list[tuple[int, int]] = []
        i = j = 0
        a, b = self.intervals, other.intervals
        while i < len(a) and j < len(b):
            lo = max(a[i].lo, b[j].lo)
            hi = min(a[i].hi, b[j].hi)
            if lo <= hi:
                out.append((lo, hi))
            if a[i].hi < b[j].hi:
                i += 1
            else:
                j += 1
        return IntervalSet.from_intervals(out)


def atom_set(cmp: str, const: int) -> IntervalSet:
    """Interval set satisfying `x <cmp> const` within the 64-bit domain."""
    if cmp == "<":
        return IntervalSet.of(I64_MIN, const - 1) if const > I64_MIN else IntervalSet.empty()
    if cmp == "<=":
        return IntervalSet.of(I64_MIN, min(const, I64_MAX))
    if cmp == "==":
        return IntervalSet.of(const, const)
    if cmp == "!=":
        return IntervalSet.from_intervals([(I64_MIN, const - 1), (const + 1, I64_MAX)])
    if cmp == ">":
        return IntervalSet.of(const + 1, I64_MAX) if const < I64_MAX else IntervalSet.empty()
    if cmp == ">=":
        return IntervalSet.of(max(const, I64_MIN), I64_MAX)
    raise ValueError(f"unknown comparator {cmp!r}")


NEGATE = {"<": ">=", "<=": ">", "==": "!=", "!=": "==", ">": "<=", ">=": "<"}


def negate_atom(cmp: str) -> str:
    """Comparator of the complementary constraint (taking the else edge)."""
    return NEGATE[cmp]


@dataclass(frozen=True)
class Atom:
    """One branch outcome along a path: variable <cmp> constant."""

    var: str
    cmp: str
    const: int

    def negated(self) -> "Atom":
        return Atom(self.var, negate_atom(self.cmp), self.const)

    def holds(self, value: int) -> bool:
        return {
            "<": value < self.const,
            "<=": value <= self.const,
            "==": value == self.const,
            "!=": value != self.const,
            ">": value > self.const,
            ">=": value >= self.const,
        }[self.cmp]


def solve(
    atoms: list[Atom],
    variables: list[str],
    domain: tuple[int, int] | None = None,
) -> dict[str, int] | None:
    """Find one assignment satisfying every atom, or None when infeasible.

    Each variable's set starts at the full 64-bit range (or `domain` when
    given — a hard restriction applied before any atom). Witness choice:
    smallest value in the soft clamp band when possible, otherwise the set's
    true minimum; variables with no remaining constraint take the band's
    smallest admissible value (0 for the default full domain).
    """
    sets: dict[str, IntervalSet] = {}
    base = IntervalSet.full() if domain is None else IntervalSet.of(*domain)
    if base.is_empty():
        return None
    for var in variables:
        sets[var] = base
    constrained: set[str] = set()
    for atom in atoms:
        if atom.var not in sets:
            raise KeyError(f"atom references unknown variable {atom.var!r}")
        constrained.add(atom.var)
        sets[atom.var] = sets[atom.var].intersect(atom_set(atom.cmp, atom.const))
        if sets[atom.var].is_empty():
            return None
    clamp = IntervalSet.of(SOFT_CLAMP_LO, SOFT_CLAMP_HI)
    witness: dict[str, int] = {}
    for var in variables:
        feasible = sets[var]
        if var not in constrained and feasible.contains(0):
            witness[var] = 0
            continue
        preferred = feasible.intersect(clamp)
        pick = preferred if not preferred.is_empty() else feasible
        witness[var] = pick.min()
    return witness
