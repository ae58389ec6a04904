"""Paired A/B ablations over seeds with a one-sided sign test."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .config import RunConfig
from .run import run_storyboard


@dataclass(frozen=True)
class Ablation:
    """Arm A has the mechanism, arm B lacks it; ``metric`` is read off each report."""

    name: str
    metric: str
    expect: str        # "lower" or "higher": the direction A should win in

    def arms(self, config: RunConfig) -> tuple[RunConfig, RunConfig]:
        if self.name == "bounding":
            return replace(config, bounding="cross"), replace(config, bounding="off")
        if self.name == "merging":
            return replace(config, merging=True), replace(config, merging=False)
        if self.name == "negative":
            return (replace(config, merging=True),
                    replace(config, merging=True, schedule=config.schedule.without_negative()))
        if self.name == "dropout":
            return (replace(config, dropout_enabled=False),
                    replace(config, dropout_enabled=True))
        raise KeyError(self.name)


ABLATIONS = {
    "bounding": Ablation("bounding", "mean_leakage", "lower"),
    "merging": Ablation("merging", "mean_consistency", "higher"),
    "negative": Ablation("negative", "mean_pose_variance", "higher"),
    "dropout": Ablation("dropout", "mean_leakage", "lower"),
}


def sign_test(wins: int, trials: int) -> float:
    """One-sided P(X >= wins) for X ~ Binomial(trials, 1/2)."""
    if not 0 <= wins <= trials:
        raise ValueError("wins must lie in [0, trials]")
    return sum(math.comb(trials, k) for k in range(wins, trials + 1)) / 2.0 ** trials


@dataclass(frozen=True)
class Comparison:
    ablation: str
    metric: str
    expect: str
    seeds: tuple
    a: tuple
    b: tuple

    @property
    def wins(self) -> int:
        better = np.less if self.expect == "lower" else np.greater
        return int(np.sum(better(np.asarray(self.a), np.asarray(self.b))))

    @property
    def p_value(self) -> float:
        return sign_test(self.wins, len(self.seeds))

    @property
    def mean_a(self) -> float:
        return float(np.mean(self.a))

    @property
    def mean_b(self) -> float:
        return float(np.mean(self.b))

    def to_document(self) -> dict:
        return {
            "ablation": self.ablation, "metric": self.metric, "expect": self.expect,
            "seeds": list(self.seeds), "a": list(self.a), "b": list(self.b),
            "mean_a": self.mean_a, "mean_b": self.mean_b,
            "wins": self.wins, "n": len(self.seeds), "p_value": self.p_value,
        }

    def table(self) -> str:
        rows = [f"{'seed':>6}  {'A (with)':>14}  {'B (without)':>14}"]
        rows += [f"{s:>6}  {a:>14.6g}  {b:>14.6g}" for s, a, b in zip(self.seeds, self.a, self.b)]
        rows.append(f"{'mean':>6}  {self.mean_a:>14.6g}  {self.mean_b:>14.6g}")
        rows.append(f"{self.ablation}: {self.metric} {self.expect} with the mechanism in "
                    f"{self.wins}/{len(self.seeds)} seeds, sign test p = {self.p_value:.4g}")
        return "\n".join(rows)


def _metric(args) -> float:
    config, metric = args
    value = getattr(run_storyboard(config, emit=False).report, metric)
    return float("nan") if value is None else float(value)


def compare(config: RunConfig, ablation: str, seeds: int = 20, *, jobs: int = 1,
            first_seed: int | None = None) -> Comparison:
    """Run both arms of ``ablation`` for ``seeds`` paired seed offsets.

    Seed i shifts every seed in the config by i, so the two arms of a pair
    share initial latents, weights and dropout draws.
    """
    if ablation not in ABLATIONS:
        raise KeyError(ablation)
    if seeds < 1:
        raise ValueError("seeds must be >= 1")
    arm_spec = ABLATIONS[ablation]
    offsets = range(seeds) if first_seed is None else range(first_seed, first_seed + seeds)
    tasks = []
    for i in offsets:
        a, b = arm_spec.arms(replace(config, seeds=config.seeds.shifted(i), out_dir=None))
        tasks += [(a, arm_spec.metric), (b, arm_spec.metric)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_metric, tasks))
    else:
        values = [_metric(t) for t in tasks]
    return Comparison(ablation, arm_spec.metric, arm_spec.expect, tuple(offsets),
                      tuple(values[0::2]), tuple(values[1::2]))
