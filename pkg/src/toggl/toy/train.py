"""Seeded training loop for the toy model."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from ..codec import enumerate_permutation_targets
from ..errors import ConfigError, NumericError
from .model import LossConfig, ModelDims, ToyModelParams, init_params, loss_and_grad
from .task import SyntheticTask, sample_item


@dataclass(frozen=True)
class TrainConfig:
    ctc_weight: float = 0.3
    pit_enabled: bool = True
    duplication_factor: int = 3
    learning_rate: float = 3e-3
    steps: int = 4000
    seed: int = 0
    batch_size: int = 32
    hidden: int = 64
    output_hidden: int = 256
    mix_weights: tuple[float, ...] = (0.5, 0.5)
    optimizer: str = "adam"
    grad_clip: float = 1.0
    warmup_steps: int = 200
    skip_infeasible_ctc: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mix_weights", tuple(float(w) for w in self.mix_weights))
        LossConfig(self.ctc_weight, self.pit_enabled, self.duplication_factor)
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not self.mix_weights or any(w < 0 for w in self.mix_weights) or sum(self.mix_weights) <= 0:
            raise ConfigError("mix_weights must be non-negative with a positive sum")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.grad_clip < 0 or self.warmup_steps < 0:
            raise ConfigError("grad_clip and warmup_steps must be >= 0")

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(self.ctc_weight, self.pit_enabled, self.duplication_factor, self.skip_infeasible_ctc)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mix_weights"] = list(self.mix_weights)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown train config keys: {', '.join(unknown)}")
        return cls(**data)

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


def lr_at(config: TrainConfig, step: int) -> float:
    """Linear warmup then cosine decay; constant for plain gradient descent."""
    if config.optimizer == "sgd":
        return config.learning_rate
    warm = min(1.0, (step + 1) / config.warmup_steps) if config.warmup_steps else 1.0
    return config.learning_rate * warm * 0.5 * (1 + math.cos(math.pi * min(step, config.steps) / max(1, config.steps)))


class Adam:
    def __init__(self, params: dict[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.b1, self.b2, self.eps, self.t = beta1, beta2, eps, 0

    def update(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1 - self.b1**self.t
        c2 = 1 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def model_for(task: SyntheticTask, config: TrainConfig) -> ToyModelParams:
    dims = ModelDims(task.input_dim, config.hidden, task.vocab_size, config.output_hidden)
    return init_params(dims, task.lexicon, int(np.random.SeedSequence([config.seed, 0]).generate_state(1)[0]))


def sample_batch(task: SyntheticTask, config: TrainConfig, rng: np.random.Generator, tables: np.ndarray):
    w = np.asarray(config.mix_weights, dtype=float)
    if len(w) > task.max_speakers:
        raise ConfigError("mix_weights has more entries than task.max_speakers")
    n_mix = rng.choice(len(w), size=config.batch_size, p=w / w.sum()) + 1
    return [sample_item(task, int(n), rng, tables) for n in n_mix]


def train(
    config: TrainConfig,
    task: SyntheticTask | None = None,
    log_path: str | Path | None = None,
    callback: Callable[[dict], None] | None = None,
) -> tuple[ToyModelParams, list[dict]]:
    """Train from a seeded initialization on freshly sampled batches.

    Every step logs ``{step, loss, ctc_loss, att_loss, perm_index}``, where
    ``perm_index`` lists the speaker-order index picked for each batch item.
    A non-finite loss raises ``NumericError`` naming the step.
    """
    task = task or SyntheticTask()
    model = model_for(task, config)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    tables = task.voice_tables()
    opt = Adam(model.tensors) if config.optimizer == "adam" else None
    loss_cfg = config.loss_config
    log: list[dict] = []
    fh = open(log_path, "w") if log_path else None
    try:
        for step in range(config.steps):
            items = sample_batch(task, config, rng, tables)
            targets = [enumerate_permutation_targets(it.transcripts, task.max_speakers) for it in items]
            res = loss_and_grad(model, [it.frames for it in items], targets, loss_cfg)
            if not math.isfinite(res.total):
                raise NumericError(f"training diverged at step {step}: loss={res.total}")
            norm = clip_gradients(res.grads, config.grad_clip)
            if not math.isfinite(norm):
                raise NumericError(f"training diverged at step {step}: gradient norm={norm}")
            lr = lr_at(config, step)
            if opt is None:
                for k, g in res.grads.items():
                    model.tensors[k] -= lr * g
            else:
                opt.update(model.tensors, res.grads, lr)
            entry = {
                "step": step,
                "loss": res.total,
                "ctc_loss": res.ctc_loss,
                "att_loss": res.att_loss,
                "perm_index": res.perm_index,
            }
            log.append(entry)
            if fh:
                fh.write(json.dumps(entry) + "\n")
            if callback:
                callback(entry)
    finally:
        if fh:
            fh.close()
    return model, log
