from __future__ import annotations

from dataclasses import dataclass

__all__ = ["FlagSet", "CF", "NF", "AF"]

CF, NF, AF = "cF", "nF", "aF"


@dataclass(frozen=True)
class FlagSet:
    """Error flags one firewall reports to the monitoring IP."""

    firewall_id: int
    cF: bool = False
    nF: bool = False
    aF: bool = False
    firewall: str = ""

    def __post_init__(self) -> None:
        if not (self.cF or self.nF or self.aF):
            raise ValueError("a FlagSet carries at least one raised flag")

    @property
    def names(self) -> list[str]:
        return [n for n, v in ((CF, self.cF), (NF, self.nF), (AF, self.aF)) if v]

    def bits(self) -> int:
        """Three significant bits, idle-high: a raised flag reads as 0."""
        return (0 if self.cF else 1) | (0 if self.nF else 2) | (0 if self.aF else 4)
