"""Differential evolution with event-triggered impulsive control.

Modules: ``benchfn`` (seeded benchmark suite), ``de`` (DE engine),
``eti`` (impulse scheme), ``variants`` (named configurations), ``stats``
(rank-sum and Holm procedures) and ``harness`` (experiment runner).
"""
from .benchfn import make_suite
from .de import Budget, BudgetExhausted, Population, Strategy, StrategyParams
from .eti import EtiState, eti_generation_hook
from .harness import ExperimentConfig, RunRecord, run_cell, run_experiment
from .variants import AlgorithmConfig, named_config

__version__ = "0.1.0"
