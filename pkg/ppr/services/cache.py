"""
Per-item PPR precomputation with an on-disk cache.

Cache strategy:
- In-process: LRU of whole item-vector tables keyed by content digest.
- On disk: <cache>/ppr-<digest>.bin with float64 (index, value) pairs and a
  JSON index {graph_hash, alpha, eps, swap_alpha, size, items: {item: [offset, length]}}.
A stale or mismatching index is ignored and the vectors are recomputed.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
from cachetools import LRUCache

from curerec.cache_keys import artifact_keys, content_hash
from interactions.services.graph import InteractionGraph, item_node

from . import push
from .push import DEFAULT_ALPHA, DEFAULT_EPS, PprVector

logger = logging.getLogger(__name__)

_memory: LRUCache = LRUCache(maxsize=8)


def cache_digest(graph: InteractionGraph, alpha: float, eps: float, swap_alpha: bool = False) -> str:
    return content_hash(
        {"graph_hash": graph.graph_hash, "alpha": alpha, "eps": eps, "swap_alpha": swap_alpha}
    )


def _index_payload(graph, alpha, eps, swap_alpha) -> dict:
    return {
        "graph_hash": graph.graph_hash,
        "alpha": alpha,
        "eps": eps,
        "swap_alpha": swap_alpha,
        "size": len(graph.nodes),
    }


def _write(vectors: dict[str, PprVector], graph, alpha, eps, swap_alpha, cache_dir: Path, digest: str) -> None:
    keys = artifact_keys.ppr(digest)
    cache_dir.mkdir(parents=True, exist_ok=True)
    items: dict[str, list[int]] = {}
    chunks = []
    offset = 0
    for item in sorted(vectors):
        vector = vectors[item]
        pairs = np.empty((len(vector.indices), 2), dtype="<f8")
        pairs[:, 0] = vector.indices
        pairs[:, 1] = vector.values
        chunks.append(pairs.reshape(-1))
        items[item] = [offset, len(vector.indices)]
        offset += len(vector.indices)
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    keys.vectors(cache_dir).write_bytes(blob.astype("<f8").tobytes())
    payload = _index_payload(graph, alpha, eps, swap_alpha) | {"items": items}
    keys.index(cache_dir).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


def _read(graph, alpha, eps, swap_alpha, cache_dir: Path, digest: str) -> dict[str, PprVector] | None:
    keys = artifact_keys.ppr(digest)
    index_path, vectors_path = keys.index(cache_dir), keys.vectors(cache_dir)
    if not index_path.exists() or not vectors_path.exists():
        return None
    try:
        index = json.loads(index_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        logger.warning("Unreadable PPR index %s; recomputing", index_path)
        return None
    expected = _index_payload(graph, alpha, eps, swap_alpha)
    if {k: index.get(k) for k in expected} != expected or set(index.get("items", {})) != graph.items:
        logger.warning("PPR cache %s does not match the graph; recomputing", index_path)
        return None

    pairs = np.frombuffer(vectors_path.read_bytes(), dtype="<f8").reshape(-1, 2)
    vectors = {}
    for item, (offset, length) in index["items"].items():
        chunk = pairs[offset : offset + length]
        vectors[item] = PprVector(
            chunk[:, 0].astype(np.int64),
            chunk[:, 1].copy(),
            len(graph.nodes),
            alpha,
            eps,
            item_node(item),
        )
    return vectors


def precompute_item_vectors(
    graph: InteractionGraph,
    alpha: float = DEFAULT_ALPHA,
    eps: float = DEFAULT_EPS,
    cache_dir: str | Path | None = None,
    *,
    swap_alpha: bool = False,
) -> dict[str, PprVector]:
    """One-hot push per item, reused across calls and processes."""
    digest = cache_digest(graph, alpha, eps, swap_alpha)
    if digest in _memory:
        logger.debug("PPR vectors for %s served from memory", digest[:12])
        return _memory[digest]

    if cache_dir is not None:
        cached = _read(graph, alpha, eps, swap_alpha, Path(cache_dir), digest)
        if cached is not None:
            logger.info("PPR cache hit %s (%d items)", digest[:12], len(cached))
            _memory[digest] = cached
            return cached

    vectors = {
        item: push.push_ppr(graph, item_node(item), alpha, eps, swap_alpha=swap_alpha)
        for item in sorted(graph.items)
    }
    logger.info("Precomputed PPR vectors for %d items (alpha=%s, eps=%s)", len(vectors), alpha, eps)
    if cache_dir is not None:
        _write(vectors, graph, alpha, eps, swap_alpha, Path(cache_dir), digest)
    _memory[digest] = vectors
    return vectors


def clear_memory_cache() -> None:
    _memory.clear()
