"""Invariant checks recorded alongside solver output."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class InvariantCheck:
    """One checked property.

    ``margin`` is the slack left before the check would fail, in the units
    of the checked quantity; it is negative for a failed check.
    """

    name: str
    passed: bool
    margin: float
    detail: str = ""


@dataclass
class Diagnostics:
    checks: list[InvariantCheck] = field(default_factory=list)

    def record(self, name: str, margin: float, detail: str = "") -> InvariantCheck:
        margin = float(margin) + 0.0  # no negative zero in reports
        check = InvariantCheck(name, margin >= 0.0, margin, detail)
        self.checks = [c for c in self.checks if c.name != name] + [check]
        return check

    def extend(self, other: "Diagnostics", prefix: str = ""):
        for c in other.checks:
            self.record(prefix + c.name, c.margin, c.detail)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> InvariantCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(c.name == name for c in self.checks)

    def failures(self) -> list[InvariantCheck]:
        return [c for c in self.checks if not c.passed]
