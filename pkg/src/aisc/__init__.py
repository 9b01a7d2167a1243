"""Simulator for instruction-set approximation on a toy load-store ISA."""
from aisc.interp import ExecHooks, HookPlan, RunResult, RunStats, Status, read_output, run
from aisc.isa import Category, EngineProfile, Program, assemble, disassemble
from aisc.models import DEFAULT_EPI, EpiTable, energy
from aisc.transforms import Technique, make_technique

__version__ = "0.1.0"

__all__ = [
    "Category",
    "DEFAULT_EPI",
    "EngineProfile",
    "EpiTable",
    "ExecHooks",
    "HookPlan",
    "Program",
    "RunResult",
    "RunStats",
    "Status",
    "Technique",
    "assemble",
    "disassemble",
    "energy",
    "make_technique",
    "read_output",
    "run",
]
