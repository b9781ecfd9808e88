"""
Retrain oracle: the recommender trained from scratch without the forget set.

The oracle starts from the same initialization and seed as the original
model, so any divergence between them comes from the removed data. Weights
are cached on disk under a content hash of everything that determines them.
"""

from __future__ import annotations

import logging
import time
from pathlib import Path

from curerec.cache_keys import artifact_keys, content_hash
from interactions.services.splits import DatasetSplit
from nanorec.services import training
from nanorec.services.checkpoint import load_checkpoint, read_header, save_checkpoint
from nanorec.services.config import ModelConfig, TrainConfig
from nanorec.services.model import ModelState, init

logger = logging.getLogger(__name__)


def oracle_digest(model_config: ModelConfig, train_config: TrainConfig, split: DatasetSplit) -> str:
    retained = sorted(set(split.retain_ids) - set(split.forget_ids))
    return content_hash(
        {
            "model": model_config.model_dump(),
            "train": train_config.model_dump(),
            "seed": model_config.seed,
            "graph_hash": split.graph.graph_hash,
            "retained": retained,
            "forget": sorted(split.forget_ids),
        }
    )


def retrain_oracle_timed(
    model_config: ModelConfig,
    train_config: TrainConfig,
    split: DatasetSplit,
    cache_dir: str | Path | None = None,
) -> tuple[ModelState, float | None]:
    """Train on the retained interactions only, or load the cached result.

    Also returns the retraining wall time in seconds; cache hits report the
    time recorded when the checkpoint was written.
    """
    path = None
    if cache_dir is not None:
        path = artifact_keys.oracle(oracle_digest(model_config, train_config, split)).checkpoint(cache_dir)
        if path.exists():
            logger.info("Retrain oracle cache hit: %s", path)
            return load_checkpoint(path), read_header(path)["extra"].get("train_seconds")
        logger.info("Retrain oracle cache miss: %s", path)

    retained = split.retain_only() if split.forget else split
    logger.info(
        "Retraining oracle on %d samples (%d forgotten interactions removed)",
        len(retained.training_samples),
        len(split.forget),
    )
    started = time.perf_counter()
    oracle = training.train(init(model_config), retained, train_config)
    seconds = time.perf_counter() - started
    if path is not None:
        save_checkpoint(oracle, path, extra={"oracle": True, "forget": len(split.forget), "train_seconds": seconds})
    return oracle, seconds


def retrain_oracle(
    model_config: ModelConfig,
    train_config: TrainConfig,
    split: DatasetSplit,
    cache_dir: str | Path | None = None,
) -> ModelState:
    return retrain_oracle_timed(model_config, train_config, split, cache_dir)[0]
