"""
End-to-end orchestration behind the management commands.

Every step reads what the previous one left in the run directory and writes
its own outputs through ``artifact_keys.run(out)``. The split is rebuilt from
the config on every step and checked against the manifest written by train,
so all steps see the same prompts.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import torch

from attribution.services.scoring import METHOD_PATCHING, aggregate, gini, score_maps
from circuits.services.extract import Circuit, budget_from_fraction, extract_per_sample, greedy_extract
from circuits.services.partition import partition
from curerec import const
from curerec.cache_keys import artifact_keys
from curerec.exceptions import ConfigurationError, CorruptSampleError
from evaluation.models import RunRecord
from evaluation.services.metrics import MetricsReport, append_runs_csv, auc_acc_logloss, jsd_forget
from evaluation.services.oracle import retrain_oracle_timed
from interactions.services.graph import InteractionGraph
from interactions.services.ingest import ingest_tsv
from interactions.services.prompts import PromptSample, PromptTemplate
from interactions.services.splits import DatasetSplit, split
from interactions.services.synth import synthesize
from nanorec.services.checkpoint import load_checkpoint, save_checkpoint
from nanorec.services.model import ModelState, init
from nanorec.services.training import train
from ppr.services.cache import precompute_item_vectors
from ppr.services.corrupt import build_corrupt_sample, item_importances
from ppr.services.retain_buffer import select_retain_buffer
from unlearn.services.runner import AlignmentTrace, UnlearnResult, run_method

from .config import SOURCE_TSV, RunConfig

logger = logging.getLogger(__name__)

FORGET = "forget"
RETAIN = "retain"
CIRCUIT_SETS = (FORGET, RETAIN)

LABEL_ORIGINAL = "original"
LABEL_ORACLE = "oracle"


def configure_threads(config: RunConfig) -> None:
    torch.set_num_threads(config.threads)


def load_graph(config: RunConfig) -> InteractionGraph:
    data = config.data
    if data.source == SOURCE_TSV:
        path = Path(data.path)
        if not path.exists():
            raise ConfigurationError(f"data.path: {path} does not exist")
        return ingest_tsv(path, data.rating_threshold, header=data.header)
    return synthesize(data.users, data.items, data.clusters, config.seed)


def build_split(config: RunConfig, graph: InteractionGraph | None = None) -> DatasetSplit:
    graph = graph if graph is not None else load_graph(config)
    return split(
        graph,
        config.data.ratios,
        config.data.forget_fraction,
        config.data.deletion_mode,
        config.seed,
        template=PromptTemplate(max_history=config.data.max_history),
    )


@dataclass
class RunContext:
    """The trained model and its split, as every step after train sees them."""

    config: RunConfig
    split: DatasetSplit
    state: ModelState

    @property
    def keys(self):
        return artifact_keys.run(self.config.out_dir)

    def retain_buffer(self) -> tuple[PromptSample, ...]:
        ppr = self.config.ppr
        return select_retain_buffer(
            self.split.train_graph,
            self.split.forget,
            self.split.retain_pool,
            self.config.unlearn.k,
            ppr.alpha,
            ppr.eps,
            swap_alpha=ppr.swap_alpha,
        )

    def circuit(self, which: str) -> Circuit:
        path = self.keys.circuit(which)
        if not path.exists():
            raise ConfigurationError(f"{path} is missing; run `circuits --set {which}` first")
        return Circuit.from_json(path.read_text(encoding="utf-8"))


def run_train(config: RunConfig) -> Path:
    """Train the original model; writes the checkpoint, split manifest and config echo."""
    keys = artifact_keys.run(config.out_dir)
    data = build_split(config)
    model_config = config.model_config_for(data.vocab)
    logger.info(
        "Training on %d samples (%d users, %d items), model %s",
        len(data.training_samples),
        len(data.graph.users),
        len(data.graph.items),
        config.model.model_dump(),
    )
    state = train(init(model_config), data, config.train)
    path = save_checkpoint(state, keys.model(), extra={"config_hash": config.config_hash()})
    keys.split_manifest().write_text(json.dumps(data.manifest(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    config.write_echo(keys.config_echo())
    return path


def load_context(config: RunConfig) -> RunContext:
    keys = artifact_keys.run(config.out_dir)
    if not keys.model().exists():
        raise ConfigurationError(f"{keys.model()} is missing; run `train` first")
    data = build_split(config)
    manifest_path = keys.split_manifest()
    if manifest_path.exists():
        stored = json.loads(manifest_path.read_text(encoding="utf-8"))
        if stored != json.loads(json.dumps(data.manifest())):
            raise ConfigurationError(f"the configured split differs from {manifest_path}; rerun `train`")
    return RunContext(config, data, load_checkpoint(keys.model()))


@dataclass
class CircuitOutcome:
    path: Path
    circuit: Circuit
    samples: int
    failures: int = 0
    candidates: list[int] = field(default_factory=list)


def corrupt_samples(context: RunContext, samples: list[PromptSample]) -> tuple[list[PromptSample], list[PromptSample], list[int]]:
    """Build one corrupt prompt per sample; returns kept clean prompts, their corrupt twins and candidate counts."""
    config, data = context.config, context.split
    precomputed = precompute_item_vectors(
        data.train_graph,
        config.ppr.alpha,
        config.ppr.eps,
        config.cache_path,
        swap_alpha=config.ppr.swap_alpha,
    )
    importances = item_importances(context.state, samples)
    clean, corrupt, counts = [], [], []
    for sample, importance in zip(samples, importances):
        try:
            candidate = build_corrupt_sample(
                context.state,
                data.train_graph,
                sample,
                config.ppr.tau,
                precomputed,
                template=data.template,
                vocab=data.vocab,
                importance=importance,
            )
        except CorruptSampleError as exc:
            logger.warning("No corrupt prompt for %s/%s: %s", sample.user, sample.target, exc)
            continue
        clean.append(sample)
        corrupt.append(candidate.sample)
        counts.append(candidate.candidates)

    failures = len(samples) - len(clean)
    if samples and failures / len(samples) > const.MAX_CORRUPT_FAILURE_RATE:
        raise CorruptSampleError(
            f"corrupt prompt construction failed for {failures} of {len(samples)} samples"
        )
    if counts:
        logger.info(
            "Corrupt prompts for %d samples: %d to %d candidates each (mean %.1f), %d failures",
            len(clean),
            min(counts),
            max(counts),
            sum(counts) / len(counts),
            failures,
        )
    return clean, corrupt, counts


def run_circuits(config: RunConfig, which: str) -> CircuitOutcome:
    """Score the named sample set and extract its circuit."""
    if which not in CIRCUIT_SETS:
        raise ConfigurationError(f"--set must be one of {CIRCUIT_SETS}, got {which!r}")
    context = load_context(config)
    samples = list(context.split.forget if which == FORGET else context.retain_buffer())
    if not samples:
        raise ConfigurationError(f"the {which} set is empty")

    method = config.attribution.method
    corrupts, counts, scored = None, [], samples
    if method == METHOD_PATCHING:
        scored, corrupts, counts = corrupt_samples(context, samples)

    maps = score_maps(
        context.state,
        scored,
        method,
        corrupts=corrupts,
        batch_size=config.attribution.batch_size,
    )
    scores = aggregate(maps, config.attribution.aggregate)
    budget = budget_from_fraction(scores, config.attribution.fraction)
    if config.attribution.per_sample:
        circuit = extract_per_sample(maps, budget)
    else:
        circuit = greedy_extract(scores, budget)
    logger.info(
        "%s circuit: %d of %d edges over %d samples (%s, score gini %.3f)",
        which,
        len(circuit),
        len(scores.scores),
        len(scored),
        method,
        gini(scores),
    )
    path = context.keys.circuit(which)
    path.write_text(circuit.to_json() + "\n", encoding="utf-8")
    return CircuitOutcome(path, circuit, len(scored), len(samples) - len(scored), counts)


def unlearn_label(method: str, omega_r: float | None = None) -> str:
    return method if omega_r is None else f"{method}_omega{omega_r:g}"


def run_unlearn(config: RunConfig, method: str, omega_r: float | None = None) -> tuple[str, UnlearnResult]:
    """Unlearn the forget set with one method; writes checkpoint, trace and timing."""
    if method not in const.UNLEARN_METHODS:
        raise ConfigurationError(f"unknown unlearning method {method!r}; choose from {const.UNLEARN_METHODS}")
    context = load_context(config)
    unlearn = config.unlearn_config
    if omega_r is not None:
        unlearn = unlearn.model_copy(update={"omega_r": omega_r})
    groups = partition(context.circuit(FORGET), context.circuit(RETAIN), context.state)
    logger.info("Parameter partition: %s", groups.summary())

    result = run_method(method, context.state, context.split.forget, context.retain_buffer(), groups, unlearn)

    label = unlearn_label(method, omega_r)
    keys = context.keys
    save_checkpoint(result.state, keys.unlearned(label), extra={"method": method, "omega_r": unlearn.omega_r})
    result.trace.write_csv(keys.trace(label))
    timing = {
        "label": label,
        "method": method,
        "omega_r": unlearn.omega_r,
        "steps": unlearn.steps,
        "wall_seconds": result.wall_seconds,
    }
    keys.timing(label).write_text(json.dumps(timing, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return label, result


def _unlearned_labels(out_dir: Path) -> list[str]:
    return sorted(path.stem.removeprefix("unlearned_") for path in out_dir.glob("unlearned_*.ckpt"))


def _report(
    context: RunContext,
    label: str,
    method: str,
    state: ModelState,
    oracle: ModelState,
    wall: float | None = None,
) -> MetricsReport:
    keys, data = context.keys, context.split
    utility = auc_acc_logloss(state, data.test)
    forget_auc = auc_acc_logloss(state, data.forget).auc
    conflict_rate = None
    if keys.timing(label).exists():
        timing = json.loads(keys.timing(label).read_text(encoding="utf-8"))
        wall, method = timing["wall_seconds"], timing["method"]
    if keys.trace(label).exists():
        trace = AlignmentTrace.read_csv(keys.trace(label), method)
        conflict_rate = trace.conflict_rate(context.config.unlearn.conflict_threshold)
    return MetricsReport(
        label=label,
        method=method,
        auc=utility.auc,
        acc=utility.acc,
        logloss=utility.logloss,
        jsd_forget=jsd_forget(state, oracle, data.forget),
        unlearn_wall_seconds=wall,
        conflict_rate=conflict_rate,
        forget_auc=forget_auc,
        config_hash=context.config.config_hash(),
        config=context.config.model_dump(mode="json"),
    )


def run_eval(config: RunConfig, labels: list[str] | None = None) -> list[MetricsReport]:
    """Evaluate the original, the retrain oracle and every unlearned checkpoint."""
    context = load_context(config)
    keys = context.keys
    started = time.perf_counter()
    oracle, retrain_seconds = retrain_oracle_timed(context.state.config, config.train, context.split, config.cache_path)
    logger.info("Retrain oracle ready in %.2fs", time.perf_counter() - started)

    models = [(LABEL_ORIGINAL, LABEL_ORIGINAL, context.state), (LABEL_ORACLE, LABEL_ORACLE, oracle)]
    for label in labels if labels else _unlearned_labels(config.out_dir):
        path = keys.unlearned(label)
        if not path.exists():
            raise ConfigurationError(f"{path} is missing; run `unlearn` first")
        models.append((label, label, load_checkpoint(path)))

    reports = []
    for label, method, state in models:
        # the oracle row carries its retraining time as its wall time
        wall = retrain_seconds if label == LABEL_ORACLE else None
        report = _report(context, label, method, state, oracle, wall)
        report.write(keys.metrics(label))
        append_runs_csv(keys.runs_csv(), report)
        RunRecord.record(config.out_dir, report)
        logger.info(
            "%s: AUC %s, ACC %.4f, LogLoss %.4f, JSD forget %.5f",
            label,
            report.auc,
            report.acc,
            report.logloss,
            report.jsd_forget,
        )
        reports.append(report)
    return reports
