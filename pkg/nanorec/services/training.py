from __future__ import annotations

import logging
from collections.abc import Sequence

import torch

from curerec import const
from curerec.exceptions import ConfigurationError, TrainingDivergedError
from evaluation.services.metrics import roc_auc
from interactions.services.prompts import PromptSample
from interactions.services.splits import DatasetSplit

from .config import TrainConfig
from .model import ForwardRecord, ModelState, forward, predict_proba

logger = logging.getLogger(__name__)


def nll_loss(record: ForwardRecord, answers: Sequence[str]) -> torch.Tensor:
    """Mean negative log-likelihood of the answer token at the answer position."""
    if len(answers) != record.p_yes.shape[0]:
        raise ConfigurationError(f"{len(answers)} answers for a batch of {record.p_yes.shape[0]}")
    columns = []
    for answer in answers:
        if answer not in const.ANSWERS:
            raise ConfigurationError(f"answer must be one of {const.ANSWERS}, got {answer!r}")
        columns.append(0 if answer == const.ANSWER_YES else 1)
    log_probs = record.answer_log_probs()
    picked = log_probs[torch.arange(len(columns)), torch.tensor(columns)]
    return -picked.mean()


def fit(
    state: ModelState,
    samples: Sequence[PromptSample],
    config: TrainConfig,
    *,
    seed: int,
    val: Sequence[PromptSample] = (),
    history: list[float] | None = None,
) -> ModelState:
    """Mini-batch AdamW on the answer NLL; returns a new state."""
    trained = state.clone()
    if config.epochs == 0 or not samples:
        return trained

    trained.requires_grad_(True)
    optimizer = torch.optim.AdamW(
        [trained.params[key] for key in sorted(trained.params)],
        lr=config.lr,
        weight_decay=config.weight_decay,
    )
    generator = torch.Generator().manual_seed(seed)
    val_labels = [s.label for s in val]

    for epoch in range(1, config.epochs + 1):
        order = torch.randperm(len(samples), generator=generator).tolist()
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [samples[i] for i in order[start : start + config.batch_size]]
            loss = nll_loss(forward(trained, batch), [s.answer for s in batch])
            if not torch.isfinite(loss):
                logger.error(
                    "Training diverged at epoch %d, batch %d: loss=%s",
                    epoch,
                    start // config.batch_size,
                    loss.item(),
                )
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            trained.backward_passes += 1
            optimizer.step()
            total += loss.item() * len(batch)

        epoch_loss = total / len(samples)
        if history is not None:
            history.append(epoch_loss)
        if val:
            auc = roc_auc(val_labels, predict_proba(trained, val))
            logger.info("Epoch %d/%d: loss %.5f, val AUC %s", epoch, config.epochs, epoch_loss, auc)
        else:
            logger.info("Epoch %d/%d: loss %.5f", epoch, config.epochs, epoch_loss)

    trained.requires_grad_(False)
    if not trained.is_finite():
        raise TrainingDivergedError("parameters became non-finite")
    return trained


def train(
    state: ModelState,
    split: DatasetSplit,
    config: TrainConfig,
    *,
    history: list[float] | None = None,
) -> ModelState:
    """Train on the split's labeled prompts and negatives, logging val AUC."""
    return fit(
        state,
        split.training_samples,
        config,
        seed=state.config.seed,
        val=split.val,
        history=history,
    )
