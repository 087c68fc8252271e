"""Structured results for criteria checks and series estimates.

Every checker returns a LyapunovReport: a three-way verdict, the scanned
range, the numerical constants it certified, and free-form notes. Reports
render to a stable plain-text block and parse back, so golden files and CLI
output stay machine-readable.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field


class Verdict(enum.Enum):
    HOLDS = "holds-on-range"
    FAILS = "fails"
    INCONCLUSIVE = "inconclusive"

    def __bool__(self) -> bool:
        return self is Verdict.HOLDS


@dataclass(frozen=True)
class SeriesEstimate:
    """A partial sum with a certified tail bound.

    ``converged`` means the trailing terms were geometrically decaying and the
    extrapolated tail is below the requested tolerance; the true sum then lies
    within ``tail_bound`` of ``value``. When ``diverges`` is set the series was
    flagged as (numerically) divergent and ``value`` is the partial sum only.
    """

    value: float
    tail_bound: float
    converged: bool
    terms_used: int
    diverges: bool = False
    ratio: float = math.nan   # trailing consecutive-term ratio estimate
    slope: float = math.nan   # log-log growth rate of the partial sums, for divergence calls

    def __float__(self) -> float:
        return self.value


@dataclass(frozen=True)
class LyapunovReport:
    criterion: str
    verdict: Verdict
    scan_range: tuple[int, int]
    constants: dict[str, float] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    @property
    def holds(self) -> bool:
        return self.verdict is Verdict.HOLDS

    def constant(self, name: str) -> float:
        try:
            return self.constants[name]
        except KeyError:
            raise KeyError(f"report {self.criterion!r} has no constant {name!r}") from None


def render_report(report: LyapunovReport) -> str:
    lines = [
        f"criterion: {report.criterion}",
        f"verdict: {report.verdict.value}",
        f"range: {report.scan_range[0]}..{report.scan_range[1]}",
    ]
    for name in sorted(report.constants):
        lines.append(f"constant {name}: {report.constants[name]!r}")
    for note in report.notes:
        lines.append(f"note: {note}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> LyapunovReport:
    criterion = None
    verdict = None
    scan_range = None
    constants: dict[str, float] = {}
    notes: list[str] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition(":")
        key, value = key.strip(), value.strip()
        if key == "criterion":
            criterion = value
        elif key == "verdict":
            verdict = Verdict(value)
        elif key == "range":
            lo, _, hi = value.partition("..")
            scan_range = (int(lo), int(hi))
        elif key.startswith("constant "):
            constants[key[len("constant "):]] = float(value)
        elif key == "note":
            notes.append(value)
        else:
            raise ValueError(f"line {lineno}: unrecognized report line {line!r}")
    if criterion is None or verdict is None or scan_range is None:
        raise ValueError("report text is missing criterion, verdict or range")
    return LyapunovReport(
        criterion=criterion, verdict=verdict, scan_range=scan_range,
        constants=constants, notes=tuple(notes),
    )
