"""Composition-controlled dataset assembly and iteration splitting.

Apportions a total sample count across the four packing/label categories by
largest remainder, draws minimally overlapping per-iteration sample sets
from a corpus pool, and produces stratified train/validation/test splits.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .errors import ConfigError, InsufficientPoolError
from .manifest import CATEGORIES, CorpusManifest, categorize  # noqa: F401  (categorize is part of this module's API)
from .util import derive_seed

TRAIN_VAL_TEST = (0.64, 0.16, 0.20)


@dataclass(frozen=True)
class CompositionSpec:
    alpha: float  # UB fraction
    beta: float   # PB fraction
    gamma: float  # UM fraction
    delta: float  # PM fraction
    total: int
    iterations: int = 5
    seed: int = 0

    def fractions(self) -> tuple[float, float, float, float]:
        return (self.alpha, self.beta, self.gamma, self.delta)

    def validate(self) -> None:
        fracs = self.fractions()
        if any(f < 0 for f in fracs):
            raise ConfigError("composition fractions must be >= 0")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise ConfigError(f"composition fractions sum to {sum(fracs)}, not 1")
        if self.total < 1:
            raise ConfigError("total must be >= 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
            "delta": self.delta, "total": self.total,
            "iterations": self.iterations, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "CompositionSpec":
        try:
            spec = cls(
                alpha=float(raw["alpha"]), beta=float(raw["beta"]),
                gamma=float(raw["gamma"]), delta=float(raw["delta"]),
                total=int(raw["total"]), iterations=int(raw.get("iterations", 5)),
                seed=int(raw.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad composition spec: {exc}") from exc
        spec.validate()
        return spec


def largest_remainder(fractions: tuple[float, ...], total: int) -> tuple[int, ...]:
    """Apportion total across fractions: floor the quotas, then hand the
    leftover seats to the largest fractional remainders (ties to the earlier
    position). Always sums to total."""
    quotas = [f * total for f in fractions]
    counts = [int(q) for q in quotas]
    leftover = total - sum(counts)
    remainders = sorted(
        range(len(fractions)), key=lambda i: (-(quotas[i] - counts[i]), i)
    )
    for i in remainders[:leftover]:
        counts[i] += 1
    return tuple(counts)


def compose_counts(spec: CompositionSpec) -> tuple[int, int, int, int]:
    """Per-category sample counts (UB, PB, UM, PM) for a composition."""
    spec.validate()
    return largest_remainder(spec.fractions(), spec.total)  # type: ignore[return-value]


@dataclass
class IterationPlan:
    iterations: list[list[str]]  # sample ids per iteration, each of size total
    counts: dict[str, int]
    jaccard: list[list[float]]  # symmetric, unit diagonal
    seed: int

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "counts": self.counts,
            "jaccard_matrix": self.jaccard,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "IterationPlan":
        return cls(
            iterations=[list(x) for x in raw["iterations"]],
            counts={k: int(v) for k, v in raw["counts"].items()},
            jaccard=[list(map(float, row)) for row in raw["jaccard_matrix"]],
            seed=int(raw["seed"]),
        )


def _jaccard(a: set[str], b: set[str]) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 1.0


def iteration_split(pool: CorpusManifest, spec: CompositionSpec) -> IterationPlan:
    """Draw the per-iteration sample id sets.

    Per category: when the pool holds at least iterations * needed samples,
    the draws are disjoint consecutive chunks of a seeded shuffle. Otherwise
    a round-robin over the shuffled pool minimizes reuse, and the achieved
    overlap is reported in the Jaccard matrix rather than hidden.
    """
    spec.validate()
    needed = dict(zip(CATEGORIES, compose_counts(spec)))
    pools = pool.pools()
    for cat, n in needed.items():
        if n > 0 and len(pools[cat]) < n:
            raise InsufficientPoolError(
                f"category {cat} needs {n} samples per iteration but the pool has {len(pools[cat])}"
            )

    per_iteration: list[list[str]] = [[] for _ in range(spec.iterations)]
    for cat in CATEGORIES:
        n = needed[cat]
        if n == 0:
            continue
        ids = list(pools[cat])
        random.Random(derive_seed(spec.seed, "shuffle", cat)).shuffle(ids)
        if len(ids) >= spec.iterations * n:
            for t in range(spec.iterations):
                per_iteration[t].extend(ids[t * n : (t + 1) * n])
        else:
            for t in range(spec.iterations):
                start = (t * n) % len(ids)
                picked = [ids[(start + k) % len(ids)] for k in range(n)]
                per_iteration[t].extend(picked)

    sets = [set(x) for x in per_iteration]
    jaccard = [
        [round(_jaccard(sets[i], sets[j]), 12) for j in range(spec.iterations)]
        for i in range(spec.iterations)
    ]
    return IterationPlan(
        iterations=per_iteration, counts=needed, jaccard=jaccard, seed=spec.seed
    )


def split_train_val_test(
    ids: list[str], seed: int, categories: dict[str, str] | None = None
) -> tuple[list[str], list[str], list[str]]:
    """Stratified 64:16:20 split with largest-remainder sizing per stratum.

    categories maps sample id -> stratum; None treats all ids as one stratum.
    """
    if len(ids) < 5:
        raise ConfigError("need at least 5 ids for a 64:16:20 split")
    strata: dict[str, list[str]] = {}
    for sid in ids:
        key = categories.get(sid, "?") if categories else "all"
        strata.setdefault(key, []).append(sid)

    train: list[str] = []
    val: list[str] = []
    test: list[str] = []
    for key in sorted(strata):
        members = list(strata[key])
        random.Random(derive_seed(seed, "tvt", key)).shuffle(members)
        n_train, n_val, n_test = largest_remainder(TRAIN_VAL_TEST, len(members))
        train.extend(members[:n_train])
        val.extend(members[n_train : n_train + n_val])
        test.extend(members[n_train + n_val :])
    return train, val, test
