"""
Rating file ingestion.

Rows are ``user<TAB>item<TAB>rating<TAB>timestamp``; ratings strictly above the
threshold become positive labels.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import pandas as pd

from curerec import const
from curerec.exceptions import ConfigurationError, EmptyDatasetError, ParseError

from .graph import Interaction, InteractionGraph

logger = logging.getLogger(__name__)

COLUMNS = ["user", "item", "rating", "timestamp"]

_PANDAS_LINE = re.compile(r"line (\d+)")


def ingest_tsv(
    path: str | Path,
    rating_threshold: int = const.DEFAULT_RATING_THRESHOLD,
    *,
    header: bool = False,
) -> InteractionGraph:
    """Read a rating TSV into a binarized InteractionGraph."""
    path = Path(path)
    offset = 2 if header else 1  # file line number of the first data row
    try:
        frame = pd.read_csv(
            path,
            sep="\t",
            header=0 if header else None,
            names=COLUMNS,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError as exc:
        raise EmptyDatasetError(f"{path} contains no rows") from exc
    except pd.errors.ParserError as exc:
        match = _PANDAS_LINE.search(str(exc))
        line = int(match.group(1)) if match else 0
        raise ParseError(line, f"wrong number of fields in {path.name}") from exc

    if frame.empty:
        raise EmptyDatasetError(f"{path} contains no rows")

    ratings = pd.to_numeric(frame["rating"], errors="coerce")
    stamps = pd.to_numeric(frame["timestamp"], errors="coerce")
    missing_ids = (frame["user"].str.strip() == "") | (frame["item"].str.strip() == "")
    bad = ratings.isna() | stamps.isna() | missing_ids
    if bad.any():
        row = int(bad.to_numpy().nonzero()[0][0])
        raise ParseError(row + offset, f"malformed row {frame.iloc[row].tolist()!r}")

    if rating_threshold < ratings.min():
        raise ConfigurationError(
            f"rating_threshold {rating_threshold} is below the minimum rating {ratings.min()}"
        )

    frame = frame.assign(
        user=frame["user"].str.strip(),
        item=frame["item"].str.strip(),
        label=(ratings > rating_threshold).astype(int),
        timestamp=stamps.astype("int64"),
    )
    # repeated (user, item) ratings keep the latest one
    before = len(frame)
    frame = frame.sort_values(["user", "item", "timestamp"]).drop_duplicates(
        ["user", "item"], keep="last"
    )
    if len(frame) < before:
        logger.warning("Dropped %d repeated ratings from %s", before - len(frame), path.name)

    interactions = [
        Interaction(row.user, row.item, int(row.label), int(row.timestamp))
        for row in frame.itertuples(index=False)
    ]
    items = sorted(frame["item"].unique())
    graph = InteractionGraph(interactions, {item: item for item in items})
    logger.info(
        "Ingested %s: %d users, %d items, %d edges, positive rate %.3f",
        path.name,
        len(graph.users),
        len(graph.items),
        len(graph),
        graph.positive_rate(),
    )
    return graph
