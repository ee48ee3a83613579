"""Named algorithm configurations and parameter-control plugins.

Names are ``<family>/<mode>`` with family in ``de-rand-1``, ``de-best-1``,
``jde`` and mode in ``plain``, ``eti``, ``eti1``..``eti4``, ``etigb``,
``r1``, ``r2``, ``nor``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np

from .de import Strategy, StrategyParams


class EtiMode(str, Enum):
    OFF = "off"
    FULL = "full"
    ETI1 = "ETI1"  # only the UR == 0 destabilising branch
    ETI2 = "ETI2"  # no UR == 0 branch
    ETI3 = "ETI3"  # no destabilising fallback after failed stabilising impulses
    ETI4 = "ETI4"  # no destabilising impulses at all


class ReferenceMode(str, Enum):
    MIXED = "mixed"
    GBEST_ONLY = "gbest_only"


class RankingMode(str, Enum):
    COMBINED = "combined"
    FITNESS_ONLY = "fitness_only"
    STAGNATION_ONLY = "stagnation_only"
    RANDOM = "random"


@dataclass(frozen=True)
class AblationConfig:
    eti_mode: EtiMode = EtiMode.FULL
    reference_mode: ReferenceMode = ReferenceMode.MIXED
    ranking_mode: RankingMode = RankingMode.COMBINED

    def __post_init__(self):
        object.__setattr__(self, "eti_mode", EtiMode(self.eti_mode))
        object.__setattr__(self, "reference_mode", ReferenceMode(self.reference_mode))
        object.__setattr__(self, "ranking_mode", RankingMode(self.ranking_mode))

    @property
    def enabled(self) -> bool:
        return self.eti_mode is not EtiMode.OFF

    @property
    def zero_rate_branch(self) -> bool:
        return self.eti_mode in (EtiMode.FULL, EtiMode.ETI1, EtiMode.ETI3)

    @property
    def stabilizing_branch(self) -> bool:
        return self.eti_mode in (EtiMode.FULL, EtiMode.ETI2, EtiMode.ETI3, EtiMode.ETI4)

    @property
    def fallback_branch(self) -> bool:
        return self.eti_mode in (EtiMode.FULL, EtiMode.ETI2)


@dataclass
class JdeParams:
    F: np.ndarray
    CR: np.ndarray
    tau1: float = 0.1
    tau2: float = 0.1


F_LOWER = 0.1
F_UPPER = 1.0


def jde_adapt(params: JdeParams, rng) -> tuple[np.ndarray, np.ndarray]:
    """Candidate ``(F', CR')`` per individual; nothing is stored here."""
    n = params.F.shape[0]
    r = rng.random((4, n))
    F = np.where(r[1] < params.tau1, F_LOWER + r[0] * (F_UPPER - F_LOWER), params.F)
    CR = np.where(r[3] < params.tau2, r[2], params.CR)
    return F, CR


class JdeControl:
    """Self-adaptive F/CR; candidate values survive only when the trial wins."""

    def __init__(self, NP: int, F0: float = 0.5, CR0: float = 0.9, tau1: float = 0.1, tau2: float = 0.1):
        self.params = JdeParams(np.full(NP, F0), np.full(NP, CR0), tau1, tau2)
        self._pending: Optional[tuple[np.ndarray, np.ndarray]] = None

    def propose(self, NP: int, rng) -> tuple[np.ndarray, np.ndarray]:
        self._pending = jde_adapt(self.params, rng)
        return self._pending

    def commit(self, replaced: np.ndarray) -> None:
        F, CR = self._pending
        self.params.F[replaced] = F[replaced]
        self.params.CR[replaced] = CR[replaced]
        self._pending = None


@dataclass(frozen=True)
class AlgorithmConfig:
    name: str
    strategy: Strategy
    F: float
    CR: float
    NP: int
    control: str = "fixed"  # or "jde"
    ablation: AblationConfig = field(default_factory=lambda: AblationConfig(EtiMode.OFF))
    LN: int = 1
    UN: Optional[int] = None  # None means NP
    pr_base: float = 0.2
    destab_dm_mode: str = "all"  # or "subset"
    tau1: float = 0.1
    tau2: float = 0.1

    @property
    def params(self) -> StrategyParams:
        return StrategyParams(self.strategy, self.F, self.CR)

    @property
    def upper_count(self) -> int:
        return self.NP if self.UN is None else self.UN

    def make_control(self):
        if self.control == "jde":
            return JdeControl(self.NP, self.F, self.CR, self.tau1, self.tau2)
        return None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strategy"] = self.strategy.value
        d["ablation"] = {k: v.value for k, v in asdict(self.ablation).items()}
        return d


_FAMILIES = {
    "de-rand-1": dict(strategy=Strategy.RAND_1, F=0.5, CR=0.9, NP=100, control="fixed"),
    "de-best-1": dict(strategy=Strategy.BEST_1, F=0.7, CR=0.5, NP=50, control="fixed"),
    # jDE starts from F=0.5, CR=0.9 and adapts per individual
    "jde": dict(strategy=Strategy.RAND_1, F=0.5, CR=0.9, NP=100, control="jde"),
}

_MODES = {
    "plain": AblationConfig(EtiMode.OFF),
    "eti": AblationConfig(EtiMode.FULL),
    "eti1": AblationConfig(EtiMode.ETI1),
    "eti2": AblationConfig(EtiMode.ETI2),
    "eti3": AblationConfig(EtiMode.ETI3),
    "eti4": AblationConfig(EtiMode.ETI4),
    "etigb": AblationConfig(EtiMode.FULL, ReferenceMode.GBEST_ONLY),
    "r1": AblationConfig(EtiMode.FULL, ranking_mode=RankingMode.FITNESS_ONLY),
    "r2": AblationConfig(EtiMode.FULL, ranking_mode=RankingMode.STAGNATION_ONLY),
    "nor": AblationConfig(EtiMode.FULL, ranking_mode=RankingMode.RANDOM),
}

NAMES = tuple(f"{fam}/{mode}" for fam in _FAMILIES for mode in _MODES)


def split_name(name: str) -> tuple[str, str]:
    family, _, mode = name.partition("/")
    return family, mode or "plain"


def named_config(name: str, **overrides) -> AlgorithmConfig:
    family, mode = split_name(name)
    if family not in _FAMILIES or mode not in _MODES:
        raise KeyError(f"unknown algorithm {name!r}; known: {', '.join(NAMES)}")
    cfg = AlgorithmConfig(name=f"{family}/{mode}", ablation=_MODES[mode], **_FAMILIES[family])
    return replace(cfg, **overrides) if overrides else cfg


def base_name(name: str) -> str:
    family, _ = split_name(name)
    return f"{family}/plain"
