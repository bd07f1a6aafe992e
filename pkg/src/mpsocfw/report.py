from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Optional

from .kernel import Simulator

__all__ = ["RunReport", "cross_check", "summarize", "dumps"]


def cross_check(sim: Simulator) -> dict[str, Any]:
    """Compare every transaction's ledger against the cycles charged in the event log."""
    bad = []
    charges = sim.charged_cycles()
    for c in sim.completions:
        charged = charges.get(c.seq, 0)
        if charged != c.ledger.total + c.bus_cycles:
            bad.append({"seq": c.seq, "charged": charged, "ledger": c.ledger.total, "bus": c.bus_cycles})
        elif c.status in ("ok", "blocked") and c.latency != c.ledger.total + c.bus_cycles + c.wait_cycles:
            bad.append({"seq": c.seq, "latency": c.latency, "ledger": c.ledger.total,
                        "bus": c.bus_cycles, "wait": c.wait_cycles})
    return {"ok": not bad, "transactions": len(sim.completions), "mismatches": bad}


def summarize(sim: Simulator) -> dict[str, Any]:
    flags: Counter = Counter()
    blocked_at: Counter = Counter()
    for c in sim.completions:
        flags.update(c.flags)
        blocked_at.update(c.blocked_by)
    kinds = Counter(e.kind for e in sim.events)
    up = sim.updates
    return {
        "cycles": sim.cycle,
        "transactions": len(sim.completions),
        "status": dict(sorted(Counter(c.status for c in sim.completions).items())),
        "flags": dict(sorted(flags.items())),
        "blocked_at": dict(sorted(blocked_at.items())),
        "interrupts": up.interrupt_count,
        "system_resets": up.resets,
        "modes": {fw.name: up.modes[fw.fw_id].value for fw in sim.firewalls.values()},
        "reg_m": f"0x{up.registers.reg_m:08x}",
        "updates": [r.as_dict() for r in up.reports],
        "events": dict(sorted(kinds.items())),
        "ledger_total": sum(c.ledger.total for c in sim.completions),
    }


@dataclass
class RunReport:
    scenario: str
    checks: dict[str, bool] = field(default_factory=dict)
    runs: dict[str, dict[str, Any]] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)
    expect_detection: bool = False
    meta: dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.error is None and all(self.checks.values())

    @property
    def detected(self) -> bool:
        return any(r["summary"]["flags"] for r in self.runs.values())

    @property
    def exit_code(self) -> int:
        if not self.passed:
            return 1
        if self.expect_detection and self.detected:
            return 2
        return 0

    def add_run(self, label: str, sim: Simulator, transactions: bool = True) -> None:
        xc = cross_check(sim)
        self.checks[f"{label}:cross_check"] = xc["ok"]
        run: dict[str, Any] = {"summary": summarize(sim), "cross_check": xc}
        if transactions:
            run["transactions"] = [c.as_dict() for c in sim.completions]
        self.runs[label] = run

    def as_dict(self, canonical: bool = False) -> dict[str, Any]:
        d: dict[str, Any] = {
            "scenario": self.scenario,
            "passed": self.passed,
            "exit_code": self.exit_code,
            "checks": dict(sorted(self.checks.items())),
            "runs": self.runs,
            "extra": self.extra,
        }
        if self.error:
            d["error"] = self.error
        if not canonical and self.meta:
            d["meta"] = self.meta
        return d


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)
