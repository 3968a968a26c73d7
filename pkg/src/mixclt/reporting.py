"""Check outcomes and deterministic report serialization.

Reports must be byte-identical across repeated runs, so all formatting is
fixed here: JSON is emitted with sorted keys and the default shortest
round-trip float repr; CSV numbers use 17 significant digits, which
round-trips every double.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

PASS = "pass"
FAIL = "fail"
SKIPPED = "skipped"


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one inequality or identity check.

    ``margin`` is rhs - lhs: the slack the inequality had left. A skipped
    check carries a note explaining why its precondition failed.
    """

    name: str
    status: str
    lhs: float = float("nan")
    rhs: float = float("nan")
    margin: float = float("nan")
    note: str = ""

    @property
    def failed(self) -> bool:
        return self.status == FAIL

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "status": self.status,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "note": self.note,
        }


def check(name: str, lhs: float, rhs: float, slack: float,
          note: str = "") -> CheckResult:
    """Record lhs <= rhs + slack."""
    lhs = float(lhs)
    rhs = float(rhs)
    status = PASS if lhs <= rhs + slack else FAIL
    return CheckResult(name, status, lhs, rhs, rhs - lhs, note)


def skipped(name: str, note: str) -> CheckResult:
    return CheckResult(name, SKIPPED, note=note)


def any_failed(checks: Iterable[CheckResult]) -> bool:
    return any(c.failed for c in checks)


def fmt17(x) -> str:
    """17-significant-digit decimal (round-trip safe for doubles)."""
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def csv_lines(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    out = [",".join(header)]
    for row in rows:
        out.append(",".join(fmt17(v) for v in row))
    return "\n".join(out) + "\n"
