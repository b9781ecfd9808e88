"""
Centralized artifact and cache naming.

Usage:
    from curerec.cache_keys import artifact_keys

    # Content-hash caches
    path = artifact_keys.oracle(content_hash).checkpoint(cache_dir)
    path = artifact_keys.ppr(content_hash).vectors(cache_dir)
    path = artifact_keys.ppr(content_hash).index(cache_dir)

    # Per-run outputs
    path = artifact_keys.run(out_dir).circuit("forget")
    path = artifact_keys.run(out_dir).trace("cure")
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Final


SPLIT_MANIFEST_NAME: Final[str] = "split.json"
CONFIG_ECHO_NAME: Final[str] = "config.effective"
RUNS_CSV_NAME: Final[str] = "runs.csv"


def content_hash(payload: Any) -> str:
    """SHA-256 over the canonical JSON form of a payload."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class OracleKeys:
    """Builder for retrain-oracle cache files."""

    def __init__(self, digest: str):
        self._digest = digest

    def checkpoint(self, cache_dir: Path) -> Path:
        """Cached oracle weights for this retain set and config."""
        return Path(cache_dir) / f"oracle-{self._digest[:16]}.ckpt"


class PprKeys:
    """Builder for precomputed item PPR cache files."""

    def __init__(self, digest: str):
        self._digest = digest

    def vectors(self, cache_dir: Path) -> Path:
        """Binary sparse vectors."""
        return Path(cache_dir) / f"ppr-{self._digest[:16]}.bin"

    def index(self, cache_dir: Path) -> Path:
        """JSON index with graph hash, alpha, eps and per-item offsets."""
        return Path(cache_dir) / f"ppr-{self._digest[:16]}.json"


class RunKeys:
    """Builder for files inside one run output directory."""

    def __init__(self, out_dir: Path):
        self._out = Path(out_dir)

    def model(self) -> Path:
        return self._out / "model.ckpt"

    def split_manifest(self) -> Path:
        return self._out / SPLIT_MANIFEST_NAME

    def config_echo(self) -> Path:
        return self._out / CONFIG_ECHO_NAME

    def circuit(self, which: str) -> Path:
        return self._out / f"circuit_{which}.json"

    def unlearned(self, label: str) -> Path:
        return self._out / f"unlearned_{label}.ckpt"

    def trace(self, label: str) -> Path:
        return self._out / f"trace_{label}.csv"

    def timing(self, label: str) -> Path:
        return self._out / f"timing_{label}.json"

    def metrics(self, label: str) -> Path:
        return self._out / f"metrics_{label}.json"

    def runs_csv(self) -> Path:
        return self._out / RUNS_CSV_NAME

    def summary(self) -> Path:
        return self._out / "summary.md"

    def plot(self, name: str) -> Path:
        return self._out / f"{name}.svg"


class ArtifactKeyManager:
    """
    Central manager for artifact paths.

    Keeps every file name in one place so commands agree on where the
    previous step left its outputs.
    """

    def oracle(self, digest: str) -> OracleKeys:
        return OracleKeys(digest)

    def ppr(self, digest: str) -> PprKeys:
        return PprKeys(digest)

    def run(self, out_dir: Path) -> RunKeys:
        return RunKeys(out_dir)


# Singleton instance for app-wide use
artifact_keys = ArtifactKeyManager()
