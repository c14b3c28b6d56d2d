"""Per-period testing decisions: split the capacity into exploitation and
exploration budgets, take the top-ranked exploit set, and fill the explore
set by uniform random sampling or Thompson sampling over expert-defined arms.

Rounding favors exploitation: the explore budget is floor(rho * capacity).
Exploration draws from the pool excluding the exploit picks, so no candidate
is tested twice. Thompson arm posteriors stay frozen within a period (results
only arrive at period end); :func:`update_arm` applies the period-end counts.
"""

from __future__ import annotations

import configparser
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .records import FEATURE_NAMES
from .scoring import RiskModel, score_matrix
from .seeds import derive_seed

log = logging.getLogger(__name__)


class Sampler(Enum):
    UNIFORM_RANDOM = "uniform_random"
    THOMPSON = "thompson"


class PolicyError(Exception):
    pass


class UncoveredCandidateError(PolicyError):
    """Strict arm coverage: a pool member matches no arm predicate."""


@dataclass(frozen=True)
class ArmPredicate:
    """Conjunction of feature = value constraints over the base encoding."""

    constraints: tuple[tuple[str, float], ...]

    def __post_init__(self):
        for name, value in self.constraints:
            if name not in FEATURE_NAMES:
                raise PolicyError(f"unknown feature {name!r} in arm predicate")
            if value not in (0.0, 1.0):
                raise PolicyError(f"arm predicate values must be 0 or 1, got {value}")

    @classmethod
    def from_text(cls, text: str) -> "ArmPredicate":
        """Parse e.g. ``contact_with_confirmed=1 & fever=0``."""
        constraints = []
        for clause in text.split("&"):
            clause = clause.strip()
            if not clause:
                continue
            name, sep, value = clause.partition("=")
            if not sep:
                raise PolicyError(f"bad predicate clause {clause!r} (want feature=value)")
            constraints.append((name.strip(), float(value.strip())))
        if not constraints:
            raise PolicyError(f"empty arm predicate {text!r}")
        return cls(constraints=tuple(constraints))

    def to_text(self) -> str:
        return " & ".join(f"{name}={int(value)}" for name, value in self.constraints)

    def mask(self, X: np.ndarray) -> np.ndarray:
        """Boolean membership over rows of a base feature matrix."""
        out = np.ones(len(X), dtype=bool)
        for name, value in self.constraints:
            out &= X[:, FEATURE_NAMES.index(name)] == value
        return out


@dataclass(frozen=True)
class ArmSpec:
    name: str
    predicate: ArmPredicate
    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise PolicyError(f"arm {self.name!r}: Beta prior pseudo-counts must be > 0")


@dataclass(frozen=True)
class ArmState:
    """Current Beta posterior of one arm."""

    spec: ArmSpec
    alpha: float
    beta: float

    @classmethod
    def initial(cls, spec: ArmSpec) -> "ArmState":
        return cls(spec=spec, alpha=spec.alpha, beta=spec.beta)

    @property
    def name(self) -> str:
        return self.spec.name


def update_arm(arm: ArmState, positives: int, negatives: int) -> ArmState:
    """Conjugate Beta-Bernoulli update with a period's outcome counts."""
    if positives < 0 or negatives < 0:
        raise PolicyError("outcome counts must be >= 0")
    return replace(arm, alpha=arm.alpha + positives, beta=arm.beta + negatives)


@dataclass(frozen=True)
class PolicyConfig:
    capacity: int
    exploration_fraction: float = 0.0
    sampler: Sampler = Sampler.UNIFORM_RANDOM
    arms: tuple[ArmSpec, ...] = ()
    retrain_on: str = "all_labeled"  # "all_labeled" | "exploration_only"
    seed: int = 0
    strict_arm_coverage: bool = False

    def __post_init__(self):
        if self.capacity <= 0:
            raise PolicyError("capacity must be a positive integer")
        if not 0.0 <= self.exploration_fraction <= 1.0:
            raise PolicyError("exploration_fraction must lie in [0, 1]")
        if self.retrain_on not in ("all_labeled", "exploration_only"):
            raise PolicyError(f"unknown retrain_on {self.retrain_on!r}")
        if self.sampler is Sampler.THOMPSON and not self.arms:
            raise PolicyError("Thompson sampling needs at least one arm")
        names = [a.name for a in self.arms]
        if len(set(names)) != len(names):
            raise PolicyError("arm names must be unique")

    @classmethod
    def from_file(cls, path: str | Path) -> "PolicyConfig":
        """Load an INI policy file: a [policy] block plus [arm NAME] blocks."""
        parser = configparser.ConfigParser(interpolation=None)
        read = parser.read(path, encoding="utf-8")
        if not read:
            raise PolicyError(f"cannot read policy file {path}")
        if "policy" not in parser:
            raise PolicyError(f"{path}: missing [policy] section")
        pol = parser["policy"]
        arms = []
        for section in parser.sections():
            if not section.startswith("arm "):
                continue
            name = section[4:].strip()
            block = parser[section]
            if "predicate" not in block:
                raise PolicyError(f"{path}: [{section}] needs a predicate")
            arms.append(
                ArmSpec(
                    name=name,
                    predicate=ArmPredicate.from_text(block["predicate"]),
                    alpha=block.getfloat("alpha", 1.0),
                    beta=block.getfloat("beta", 1.0),
                )
            )
        try:
            sampler = Sampler(pol.get("sampler", "uniform_random").strip().lower())
        except ValueError as exc:
            raise PolicyError(f"{path}: unknown sampler {pol.get('sampler')!r}") from exc
        return cls(
            capacity=pol.getint("capacity"),
            exploration_fraction=pol.getfloat("exploration_fraction", 0.0),
            sampler=sampler,
            arms=tuple(arms),
            retrain_on=pol.get("retrain_on", "all_labeled").strip(),
            seed=pol.getint("seed", 0),
            strict_arm_coverage=pol.getboolean("strict_arm_coverage", False),
        )


@dataclass(frozen=True)
class Selection:
    """One period's decision: who gets tested, through which channel."""

    exploit_ids: tuple[int, ...]
    explore_ids: tuple[int, ...]
    arm_assignments: Mapping[int, str] = field(default_factory=dict)
    explore_shortfall: int = 0

    @property
    def all_ids(self) -> tuple[int, ...]:
        return self.exploit_ids + self.explore_ids

    def __post_init__(self):
        overlap = set(self.exploit_ids) & set(self.explore_ids)
        if overlap:
            raise PolicyError(f"exploit and explore sets overlap: {sorted(overlap)[:5]}")


def split_budget(capacity: int, exploration_fraction: float) -> tuple[int, int]:
    """(k_exploit, k_explore) with k_explore = floor(rho * capacity)."""
    if capacity < 0:
        raise PolicyError("capacity must be >= 0")
    if not 0.0 <= exploration_fraction <= 1.0:
        raise PolicyError("exploration_fraction must lie in [0, 1]")
    k_explore = math.floor(exploration_fraction * capacity)
    return capacity - k_explore, k_explore


def rank_candidates(
    model: RiskModel,
    ids: np.ndarray | Sequence[int],
    X: np.ndarray,
    seed: int,
) -> np.ndarray:
    """ids in descending score order; ties broken by a seeded pre-shuffle.

    The pool is permuted uniformly at random before a stable sort, so tie
    order is reproducible for a given seed but carries no input-order bias.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        raise PolicyError("cannot rank an empty pool")
    scores = score_matrix(model, X)
    rng = np.random.default_rng(derive_seed(seed, "rank"))
    perm = rng.permutation(len(ids))
    order = np.argsort(-scores[perm], kind="stable")
    return ids[perm[order]]


def thompson_allocate(
    arms: Sequence[ArmState],
    k: int,
    ids: np.ndarray | Sequence[int],
    X: np.ndarray,
    seed: int,
) -> tuple[list[tuple[int, str]], int]:
    """Assign up to k exploration slots across arms by Thompson sampling.

    Per slot: draw theta ~ Beta(alpha, beta) for every arm with untested
    members left, give the slot to the argmax arm, and pick one of its
    remaining members uniformly. Posteriors are frozen for the whole batch.
    Returns (picks as (record_id, arm_name), shortfall). A positive shortfall
    means the covered pool ran out before k slots were filled.
    """
    if k < 0:
        raise PolicyError("k must be >= 0")
    if not arms:
        raise PolicyError("need at least one arm")
    ids = np.asarray(ids, dtype=np.int64)
    rng = np.random.default_rng(derive_seed(seed, "thompson"))

    members: dict[str, set[int]] = {
        arm.name: set(ids[arm.spec.predicate.mask(X)].tolist()) for arm in arms
    }
    picks: list[tuple[int, str]] = []
    for _ in range(k):
        live = [arm for arm in arms if members[arm.name]]
        if not live:
            break
        draws = [rng.beta(arm.alpha, arm.beta) for arm in live]
        winner = live[int(np.argmax(draws))]
        pool = sorted(members[winner.name])
        chosen = pool[int(rng.integers(len(pool)))]
        picks.append((chosen, winner.name))
        for remaining in members.values():
            remaining.discard(chosen)
    shortfall = k - len(picks)
    if shortfall:
        log.warning("thompson allocation truncated: %d uncovered slots", shortfall)
    return picks, shortfall


def select(
    ids: np.ndarray | Sequence[int],
    X: np.ndarray,
    model: RiskModel,
    config: PolicyConfig,
    arm_states: Sequence[ArmState] | None = None,
    seed: int | None = None,
) -> Selection:
    """One period's selection from the pool (ids, X) under the policy.

    The exploit set is the top of the ranking; the explore set is drawn
    without replacement from the rest by the configured sampler. A pool no
    larger than the capacity is selected in full. Pure function of
    (pool, model, config/arm_states, seed).
    """
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        raise PolicyError("cannot select from an empty pool")
    seed = config.seed if seed is None else seed
    k_exploit, k_explore = split_budget(config.capacity, config.exploration_fraction)
    ranked = rank_candidates(model, ids, X, seed)

    if len(ids) <= config.capacity:
        return Selection(
            exploit_ids=tuple(ranked[:k_exploit].tolist()),
            explore_ids=tuple(ranked[k_exploit:].tolist()),
        )

    exploit = ranked[:k_exploit]
    taken = set(exploit.tolist())
    rest_mask = np.array([i not in taken for i in ids.tolist()], dtype=bool)
    rest_ids = ids[rest_mask]
    rest_X = X[rest_mask]

    if k_explore == 0:
        return Selection(exploit_ids=tuple(exploit.tolist()), explore_ids=())

    if config.sampler is Sampler.UNIFORM_RANDOM:
        rng = np.random.default_rng(derive_seed(seed, "explore"))
        take = min(k_explore, len(rest_ids))
        chosen = rng.choice(rest_ids, size=take, replace=False)
        return Selection(
            exploit_ids=tuple(exploit.tolist()),
            explore_ids=tuple(chosen.tolist()),
            explore_shortfall=k_explore - take,
        )

    states = list(arm_states) if arm_states is not None else [
        ArmState.initial(spec) for spec in config.arms
    ]
    if config.strict_arm_coverage:
        covered = np.zeros(len(rest_ids), dtype=bool)
        for state in states:
            covered |= state.spec.predicate.mask(rest_X)
        if not covered.all():
            missing = rest_ids[~covered]
            raise UncoveredCandidateError(
                f"{len(missing)} pool candidates match no arm (first: {missing[:5].tolist()})"
            )
    picks, shortfall = thompson_allocate(states, k_explore, rest_ids, rest_X, seed)
    return Selection(
        exploit_ids=tuple(exploit.tolist()),
        explore_ids=tuple(pid for pid, _ in picks),
        arm_assignments={pid: arm for pid, arm in picks},
        explore_shortfall=shortfall,
    )
