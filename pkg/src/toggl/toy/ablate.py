"""Cumulative ablation grid: each row removes one more ingredient."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from ..errors import ConfigError
from .evaluate import evaluate
from .task import SyntheticTask
from .train import TrainConfig, train

# knob -> overrides that switch the ingredient off
KNOBS: dict[str, dict] = {
    "pit": {"pit_enabled": False},
    # without duplication some overlapped targets outgrow the frame count;
    # those items contribute no CTC loss instead of aborting training
    "ctc_enhancement": {"duplication_factor": 1, "skip_infeasible_ctc": True},
    "ctc": {"ctc_weight": 0.0},
    "three_mix": {"mix_weights": (0.5, 0.5)},
}
KNOB_LABELS = {
    "pit": "- PIT",
    "ctc_enhancement": "- CTC enhancement",
    "ctc": "- CTC",
    "three_mix": "- 3-mix data",
}
DEFAULT_KNOBS = ("pit", "ctc_enhancement", "ctc", "three_mix")
FULL_MIX_WEIGHTS = (1 / 3, 1 / 3, 1 / 3)


@dataclass(frozen=True)
class AblationRow:
    label: str
    config: TrainConfig
    wers: dict[int, float]

    def to_dict(self) -> dict:
        d = {"system": self.label}
        d.update({f"{n}-mix": w for n, w in sorted(self.wers.items())})
        return d


def validate_knobs(knobs: Sequence[str]) -> tuple[str, ...]:
    unknown = [k for k in knobs if k not in KNOBS]
    if unknown:
        raise ConfigError(f"unknown ablation knob(s): {', '.join(unknown)}; valid: {', '.join(KNOBS)}")
    if len(set(knobs)) != len(knobs):
        raise ConfigError("ablation knobs must not repeat")
    return tuple(knobs)


def ablation_configs(base: TrainConfig, knobs: Sequence[str] = DEFAULT_KNOBS) -> list[tuple[str, TrainConfig]]:
    """The full system plus one row per knob, each removal stacking on the last."""
    knobs = validate_knobs(knobs)
    cfg = base.with_overrides(mix_weights=FULL_MIX_WEIGHTS, pit_enabled=True)
    rows = [("full", cfg)]
    label = ""
    for k in knobs:
        cfg = cfg.with_overrides(**KNOBS[k])
        label = f"{label} {KNOB_LABELS[k]}".strip()
        rows.append((label, cfg))
    return rows


def run_ablation(
    base: TrainConfig,
    task: SyntheticTask,
    knobs: Sequence[str] = DEFAULT_KNOBS,
    conditions: Sequence[int] = (1, 2, 3),
    eval_count: int = 200,
    eval_seed: int = 1000,
    progress: Callable[[str], None] | None = None,
) -> list[AblationRow]:
    """Train and score every row sequentially.  All rows share the base seed,
    so differences come from the removed ingredient rather than the draw."""
    plan = ablation_configs(base, knobs)
    out = []
    for label, cfg in plan:
        if progress:
            progress(label)
        model, _ = train(cfg, task)
        results = evaluate(model, task, conditions, eval_count, eval_seed, baseline=False)
        out.append(AblationRow(label, cfg, {r.n_mix: r.report.wer for r in results}))
    return out
