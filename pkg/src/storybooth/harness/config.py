"""Run configuration: JSON document <-> validated :class:`RunConfig`."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from ..errors import PlanParseError, PlanValidationError, UsageError
from ..masks import TokenGrid
from ..plan import StoryboardPlan, load_plan, plan_from_document, plan_to_document
from ..tokenmerge import DEFAULT_SCHEDULE, MergeSchedule
from .toy import BOUNDING_MODES, ToyDenoiserConfig

T_MAX = 1000
DEFAULT_STEPS = 20

_KEYS = {"plan_path", "plan_inline", "grid", "steps", "beta_d", "dropout_enabled", "bounding",
         "merging", "merge_schedule", "seeds", "out_dir", "model"}
_MODEL_KEYS = {"layers", "channels", "heads"}
_SEED_KEYS = {"noise", "dropout", "weights"}


def uniform_ladder(steps: int, t_max: int = T_MAX) -> tuple[int, ...]:
    """``steps + 1`` integer timesteps from ``t_max`` down to 0."""
    if steps < 1:
        raise UsageError(f"steps must be >= 1, got {steps}")
    return tuple(round(t_max * (steps - i) / steps) for i in range(steps + 1))


def check_ladder(ladder) -> tuple[int, ...]:
    ladder = tuple(int(t) for t in ladder)
    if len(ladder) < 2:
        raise UsageError("a timestep ladder needs at least two entries")
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise UsageError(f"timestep ladder must be strictly descending: {list(ladder)}")
    if ladder[-1] < 0:
        raise UsageError("timesteps must be non-negative")
    return ladder


@dataclass(frozen=True)
class Seeds:
    noise: int = 0
    dropout: int = 0
    weights: int = 0

    def shifted(self, offset: int) -> "Seeds":
        return Seeds(self.noise + offset, self.dropout + offset, self.weights + offset)


@dataclass(frozen=True, eq=False)
class RunConfig:
    plan: StoryboardPlan
    grid: tuple[int, int] = (8, 8)
    ladder: tuple[int, ...] = uniform_ladder(DEFAULT_STEPS)
    beta_d: float = 0.9
    dropout_enabled: bool = True
    bounding: str = "cross"
    merging: bool = True
    schedule: MergeSchedule = DEFAULT_SCHEDULE
    seeds: Seeds = Seeds()
    out_dir: Path | None = None
    layers: int = 1
    channels: int = 16
    heads: int = 2
    plan_path: str | None = None

    def __post_init__(self):
        check_ladder(self.ladder)
        if self.bounding not in BOUNDING_MODES:
            raise UsageError(f"bounding must be one of {BOUNDING_MODES}, got {self.bounding!r}")
        if not 0.0 <= self.beta_d <= 1.0:
            raise UsageError(f"beta_d must lie in [0, 1], got {self.beta_d}")
        self.toy_config()  # validates grid and model sizes

    @property
    def steps(self) -> int:
        return len(self.ladder) - 1

    def token_grid(self) -> TokenGrid:
        return TokenGrid(self.grid[0], self.grid[1], self.plan.prompt.frame_count)

    def toy_config(self) -> ToyDenoiserConfig:
        return ToyDenoiserConfig(layers=self.layers, channels=self.channels, heads=self.heads,
                                 grid=self.token_grid(), weight_seed=self.seeds.weights)

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_document(self) -> dict:
        """Self-contained echo; the plan is always inlined."""
        return {
            "plan_path": self.plan_path,
            "plan_inline": plan_to_document(self.plan),
            "grid": {"h": self.grid[0], "w": self.grid[1]},
            "steps": list(self.ladder),
            "beta_d": self.beta_d,
            "dropout_enabled": self.dropout_enabled,
            "bounding": self.bounding,
            "merging": self.merging,
            "merge_schedule": self.schedule.to_config(),
            "seeds": {"noise": self.seeds.noise, "dropout": self.seeds.dropout,
                      "weights": self.seeds.weights},
            "out_dir": None if self.out_dir is None else str(self.out_dir),
            "model": {"layers": self.layers, "channels": self.channels, "heads": self.heads},
        }


def _int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise UsageError(f"{name} must be an integer, got {value!r}")
    return value


def _bool(value, name: str) -> bool:
    if not isinstance(value, bool):
        raise UsageError(f"{name} must be true or false, got {value!r}")
    return value


def _mapping(value, name: str, allowed: set) -> dict:
    if not isinstance(value, dict):
        raise UsageError(f"{name} must be an object")
    unknown = set(value) - allowed
    if unknown:
        raise UsageError(f"{name}: unknown keys {sorted(unknown)}")
    return value


def config_from_document(doc: dict, base_dir: Path | None = None) -> RunConfig:
    """Validate a run-config document; relative paths resolve against ``base_dir``."""
    doc = _mapping(doc, "config", _KEYS)
    base_dir = base_dir or Path.cwd()
    kwargs: dict = {}

    has_path, has_inline = doc.get("plan_path") is not None, doc.get("plan_inline") is not None
    if has_path == has_inline:
        raise UsageError("config needs exactly one of plan_path or plan_inline")
    try:
        if has_path:
            path = base_dir / doc["plan_path"]
            kwargs["plan"] = load_plan(path)
            kwargs["plan_path"] = str(doc["plan_path"])
        else:
            kwargs["plan"] = plan_from_document(doc["plan_inline"])
    except FileNotFoundError as exc:
        raise UsageError(f"plan file not found: {exc.filename}") from exc
    except (PlanParseError, PlanValidationError) as exc:
        raise UsageError(f"invalid plan: {exc}") from exc

    if "grid" in doc:
        grid = _mapping(doc["grid"], "grid", {"h", "w"})
        kwargs["grid"] = (_int(grid.get("h"), "grid.h"), _int(grid.get("w"), "grid.w"))
    if "steps" in doc:
        steps = doc["steps"]
        if isinstance(steps, list):
            kwargs["ladder"] = check_ladder([_int(t, "steps[]") for t in steps])
        else:
            kwargs["ladder"] = uniform_ladder(_int(steps, "steps"))
    if "beta_d" in doc:
        beta = doc["beta_d"]
        if isinstance(beta, bool) or not isinstance(beta, (int, float)):
            raise UsageError(f"beta_d must be a number, got {beta!r}")
        kwargs["beta_d"] = float(beta)
    if "dropout_enabled" in doc:
        kwargs["dropout_enabled"] = _bool(doc["dropout_enabled"], "dropout_enabled")
    if "bounding" in doc:
        kwargs["bounding"] = doc["bounding"]
    if "merging" in doc:
        kwargs["merging"] = _bool(doc["merging"], "merging")
    if "merge_schedule" in doc:
        if not isinstance(doc["merge_schedule"], list):
            raise UsageError("merge_schedule must be a list of windows")
        kwargs["schedule"] = MergeSchedule.from_config(doc["merge_schedule"])
    if "seeds" in doc:
        seeds = _mapping(doc["seeds"], "seeds", _SEED_KEYS)
        kwargs["seeds"] = Seeds(**{k: _int(v, f"seeds.{k}") for k, v in seeds.items()})
    if doc.get("out_dir") is not None:
        kwargs["out_dir"] = base_dir / doc["out_dir"]
    if "model" in doc:
        model = _mapping(doc["model"], "model", _MODEL_KEYS)
        kwargs.update({k: _int(v, f"model.{k}") for k, v in model.items()})
    return RunConfig(**kwargs)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_document(doc, path.parent)
