"""Cycle-accounted simulator of an MPSoC guarded by distributed hardware firewalls."""

from __future__ import annotations

from .bus import CycleLedger, Event, Kind, SimTopology, Transaction, load_topology, read_topology_file
from .firewall_crypto import CryptoFirewall, max_protectable, tag_budget
from .firewall_local import LocalFirewall, check_word
from .flags import FlagSet
from .harness import build_case_study, estimate_area, run_comparison, section_base
from .kernel import Simulator, TraceItem, simulate
from .monitor import SecurityMode, UpdateProcessor
from .policy import CorrespondenceTable, Rights, SecurityPolicy, load_policies, lookup

__version__ = "0.1.0"

__all__ = [
    "CorrespondenceTable",
    "CryptoFirewall",
    "CycleLedger",
    "Event",
    "FlagSet",
    "Kind",
    "LocalFirewall",
    "Rights",
    "SecurityMode",
    "SecurityPolicy",
    "SimTopology",
    "Simulator",
    "TraceItem",
    "Transaction",
    "UpdateProcessor",
    "build_case_study",
    "check_word",
    "estimate_area",
    "load_policies",
    "load_topology",
    "lookup",
    "max_protectable",
    "read_topology_file",
    "run_comparison",
    "section_base",
    "simulate",
    "tag_budget",
]
