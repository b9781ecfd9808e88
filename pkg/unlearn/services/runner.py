"""
Unlearning loops: circuit-aware updates and the uniform baselines.

Every method shares the same batching, seeding, reference probabilities and
telemetry so their traces are directly comparable.
"""

from __future__ import annotations

import logging
import time
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import pandas as pd
import torch

from circuits.services.partition import ParameterPartition
from curerec import const
from curerec.exceptions import ConfigurationError
from interactions.services.prompts import PromptSample
from nanorec.services.model import ModelState, node_param_keys

from .config import OPTIMIZER_ADAMW, UnlearnConfig
from .losses import reference_probs
from .step import COMBINE_PCGRAD, COMBINE_SUM, OBJECTIVE_KL, OBJECTIVE_NLL, baseline_step, unlearn_step

logger = logging.getLogger(__name__)


@dataclass
class AlignmentTrace:
    """One row per optimizer step, columns as in const.TRACE_COLUMNS."""

    method: str = ""
    rows: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def append(self, row: dict) -> None:
        self.rows.append({column: row.get(column) for column in const.TRACE_COLUMNS})

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=list(const.TRACE_COLUMNS))

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False)
        return path

    @classmethod
    def read_csv(cls, path: str | Path, method: str = "") -> AlignmentTrace:
        frame = pd.read_csv(path)
        missing = set(const.TRACE_COLUMNS) - set(frame.columns)
        if missing:
            raise ConfigurationError(f"trace {path} lacks columns {sorted(missing)}")
        frame = frame.astype(object).where(frame.notna(), None)
        trace = cls(method=method)
        for record in frame.to_dict(orient="records"):
            record["conflict_flag"] = str(record["conflict_flag"]).lower() == "true"
            trace.append(record)
        return trace

    def cos_values(self, column: str = "cos_psi") -> list[float]:
        """Defined cosines of column; cos_psi_raw holds them before projection."""
        return [float(row[column]) for row in self.rows if row[column] is not None]

    def conflict_rate(self, threshold: float = -const.CONFLICT_BUCKET_EDGE) -> float:
        """Fraction of steps with a defined cos(psi) below threshold."""
        values = self.cos_values()
        if not values:
            return 0.0
        return sum(value < threshold for value in values) / len(values)


@dataclass
class UnlearnResult:
    state: ModelState
    trace: AlignmentTrace
    wall_seconds: float
    method: str


def component_keys(state: ModelState) -> list[str]:
    """Every head and MLP parameter; the default scope of the baselines."""
    return sorted(key for node in state.graph.component_nodes for key in node_param_keys(node, state.config))


def _batches(count: int, size: int, generator: torch.Generator) -> Iterator[list[int]]:
    """Endless shuffled passes over range(count)."""
    size = min(size, count)
    while True:
        order = torch.randperm(count, generator=generator).tolist()
        for start in range(0, count - size + 1, size):
            yield order[start : start + size]


def _perturb(state: ModelState, keys: Sequence[str], scale: float, generator: torch.Generator) -> None:
    if scale <= 0:
        return
    with torch.no_grad():
        for key in sorted(keys):
            param = state.params[key]
            param.add_(torch.randn(param.shape, generator=generator, dtype=param.dtype) * scale)


def _optimizer(state: ModelState, keys: Sequence[str], config: UnlearnConfig) -> torch.optim.Optimizer | None:
    if config.optimizer != OPTIMIZER_ADAMW or not keys:
        return None
    return torch.optim.AdamW([state.params[key] for key in sorted(keys)], lr=config.lr, weight_decay=0.0)


def _loop(
    method: str,
    original: ModelState,
    forget: Sequence[PromptSample],
    retain_buffer: Sequence[PromptSample],
    keys: Sequence[str],
    config: UnlearnConfig,
    step_fn,
) -> UnlearnResult:
    if not forget:
        raise ConfigurationError("forget set is empty")
    if not retain_buffer:
        raise ConfigurationError("retain buffer is empty")
    current = original.clone()
    trace = AlignmentTrace(method=method)
    if config.steps == 0:
        return UnlearnResult(current, trace, 0.0, method)

    started = time.perf_counter()
    generator = torch.Generator().manual_seed(config.seed)
    _perturb(current, keys, config.init_noise, generator)
    reference_forget = reference_probs(original, forget)
    reference_retain = reference_probs(original, retain_buffer)
    optimizer = _optimizer(current, keys, config)
    forget_batches = _batches(len(forget), config.batch_size, generator)
    retain_batches = _batches(len(retain_buffer), config.retain_batch_size, generator)

    for step in range(1, config.steps + 1):
        tick = time.perf_counter()
        f_idx, r_idx = next(forget_batches), next(retain_batches)
        result = step_fn(
            original,
            current,
            [forget[i] for i in f_idx],
            [retain_buffer[i] for i in r_idx],
            step=step,
            reference_forget=reference_forget[f_idx],
            reference_retain=reference_retain[r_idx],
            optimizer=optimizer,
        )
        result.row["wall_ms"] = (time.perf_counter() - tick) * 1000.0
        trace.append(result.row)
        if step == 1 or step % 10 == 0 or step == config.steps:
            logger.info(
                "%s step %d/%d: L_F %.6f, L_R %.6f, cos %s",
                method,
                step,
                config.steps,
                result.loss_forget,
                result.loss_retain,
                result.row["cos_psi"],
            )

    wall = time.perf_counter() - started
    logger.info(
        "%s finished %d steps in %.2fs; conflict rate %.3f",
        method,
        config.steps,
        wall,
        trace.conflict_rate(config.conflict_threshold),
    )
    return UnlearnResult(current, trace, wall, method)


def run_unlearning(
    original: ModelState,
    forget: Sequence[PromptSample],
    retain_buffer: Sequence[PromptSample],
    partition: ParameterPartition,
    config: UnlearnConfig,
) -> UnlearnResult:
    """Circuit-aware unlearning: routed group updates with shared-gradient projection."""

    def step_fn(original, current, forget_batch, retain_batch, **kwargs):
        return unlearn_step(original, current, partition, forget_batch, retain_batch, config, **kwargs)

    return _loop(const.METHOD_CURE, original, forget, retain_buffer, sorted(partition.trainable), config, step_fn)


def _weight(config: UnlearnConfig, omega_r: float | None) -> float:
    weight = config.omega_r if omega_r is None else omega_r
    if not 0 <= weight <= 1:
        raise ConfigurationError(f"omega_r must be in [0, 1], got {weight}")
    return weight


def _baseline(method, objective, how, original, forget, retain_buffer, config, keys, omega_r):
    keys = sorted(keys) if keys is not None else component_keys(original)
    weight = _weight(config, omega_r)

    def step_fn(original, current, forget_batch, retain_batch, **kwargs):
        return baseline_step(
            original, current, keys, forget_batch, retain_batch, config,
            omega_r=weight, objective=objective, how=how, **kwargs,
        )

    return _loop(method, original, forget, retain_buffer, keys, config, step_fn)


def baseline_uniform(
    original: ModelState,
    forget: Sequence[PromptSample],
    retain_buffer: Sequence[PromptSample],
    config: UnlearnConfig,
    *,
    keys: Sequence[str] | None = None,
    omega_r: float | None = None,
) -> UnlearnResult:
    """Same KL objectives, one joint gradient applied to every key."""
    return _baseline(const.METHOD_UNIFORM, OBJECTIVE_KL, COMBINE_SUM, original, forget, retain_buffer, config, keys, omega_r)


def baseline_gradient_ascent(
    original: ModelState,
    forget: Sequence[PromptSample],
    retain_buffer: Sequence[PromptSample],
    config: UnlearnConfig,
    *,
    keys: Sequence[str] | None = None,
    omega_r: float | None = None,
) -> UnlearnResult:
    """Ascend the answer NLL on the forget set, descend it on the buffer."""
    return _baseline(
        const.METHOD_GRADIENT_ASCENT, OBJECTIVE_NLL, COMBINE_SUM, original, forget, retain_buffer, config, keys, omega_r
    )


def baseline_pcgrad(
    original: ModelState,
    forget: Sequence[PromptSample],
    retain_buffer: Sequence[PromptSample],
    config: UnlearnConfig,
    *,
    keys: Sequence[str] | None = None,
    omega_r: float | None = None,
) -> UnlearnResult:
    """KL objectives with two-task gradient surgery on raw gradients, no routing."""
    return _baseline(const.METHOD_PCGRAD, OBJECTIVE_KL, COMBINE_PCGRAD, original, forget, retain_buffer, config, keys, omega_r)


def run_method(
    method: str,
    original: ModelState,
    forget: Sequence[PromptSample],
    retain_buffer: Sequence[PromptSample],
    partition: ParameterPartition,
    config: UnlearnConfig,
) -> UnlearnResult:
    """Dispatch by method name; baselines update every circuit parameter."""
    if method == const.METHOD_CURE:
        return run_unlearning(original, forget, retain_buffer, partition, config)
    keys = sorted(partition.trainable)
    runners = {
        const.METHOD_UNIFORM: baseline_uniform,
        const.METHOD_GRADIENT_ASCENT: baseline_gradient_ascent,
        const.METHOD_PCGRAD: baseline_pcgrad,
    }
    if method not in runners:
        raise ConfigurationError(f"unknown unlearning method {method!r}; choose from {const.UNLEARN_METHODS}")
    return runners[method](original, forget, retain_buffer, config, keys=keys)
