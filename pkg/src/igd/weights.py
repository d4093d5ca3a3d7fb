"""Decisiveness-aware token weights for fine-tuning and the weighted loss they feed."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .catalog import InteractionSet, ItemRecord
from .errors import ConfigError, DataError
from .trie import IGValue, PrefixTrie, global_ig_max

DEFAULT_BETA_GRID = (0.08, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 1.0)


@dataclass(frozen=True)
class WeightScheme:
    kind: str = "binary"
    beta: float = 1.0
    ig_max: float | None = None

    def __post_init__(self):
        if self.kind not in ("binary", "linear"):
            raise ConfigError(f"unknown weight scheme {self.kind!r}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        if self.kind == "linear" and (self.ig_max is None or not self.ig_max > 0):
            raise ConfigError("linear scheme needs a positive ig_max")

    @classmethod
    def for_trie(cls, trie: PrefixTrie, kind: str = "binary", beta: float = 1.0) -> "WeightScheme":
        return cls(kind, beta, global_ig_max(trie) if kind == "linear" else None)


@dataclass(frozen=True)
class TokenWeightRecord:
    position: int
    token: int
    ig: IGValue
    weight: float


@dataclass(frozen=True)
class WeightedSequence:
    item_id: str
    records: tuple[TokenWeightRecord, ...]

    @property
    def omega(self) -> float:
        return math.fsum(r.weight for r in self.records)

    @property
    def weights(self) -> list[float]:
        return [r.weight for r in self.records]


def tuning_weight(ig: IGValue, scheme: WeightScheme) -> float:
    """beta for zero-IG tokens and 1 otherwise; the linear scheme interpolates on IG / ig_max."""
    if scheme.kind == "binary":
        return scheme.beta if ig.is_zero else 1.0
    if scheme.ig_max is None or not scheme.ig_max > 0:
        raise ConfigError("linear scheme needs a positive ig_max")
    w = scheme.beta + (1.0 - scheme.beta) * (ig.value / scheme.ig_max)
    return min(1.0, max(scheme.beta, w))


def annotate_path(trie: PrefixTrie, item_id: str, scheme: WeightScheme) -> WeightedSequence:
    recs = []
    for pos, node in enumerate(trie.path_nodes(item_id), 1):
        ig = trie.edge_ig(node)
        recs.append(TokenWeightRecord(pos, trie.nodes[node].token, ig, tuning_weight(ig, scheme)))
    return WeightedSequence(item_id, tuple(recs))


def annotate_sequence(item: ItemRecord, trie: PrefixTrie, scheme: WeightScheme) -> WeightedSequence:
    if item.item_id not in trie:
        raise DataError(f"item {item.item_id!r} is not in the trie")
    seq = annotate_path(trie, item.item_id, scheme)
    if tuple(r.token for r in seq.records) != tuple(item.tokens):
        raise DataError(f"item {item.item_id!r} tokens do not match its trie path")
    return seq


def weighted_loss(per_token_losses: Sequence[float], weights: Sequence[float]) -> float:
    """sum(w * l) / sum(w) over whatever aggregation unit the caller passes in."""
    if len(per_token_losses) != len(weights):
        raise DataError(f"length mismatch: {len(per_token_losses)} losses vs {len(weights)} weights")
    if any(w < 0 for w in weights):
        raise DataError("weights must be non-negative")
    omega = math.fsum(weights)
    if not omega > 0:
        raise DataError("weights are all zero")
    return math.fsum(w * l for w, l in zip(weights, per_token_losses)) / omega


def export_records(train: InteractionSet, trie: PrefixTrie, scheme: WeightScheme) -> list[dict]:
    cache: dict[str, WeightedSequence] = {}
    out = []
    for rec in train.records:
        seq = cache.get(rec.target)
        if seq is None:
            seq = cache[rec.target] = annotate_path(trie, rec.target, scheme)
        out.append({
            "user_id": rec.user_id,
            "item_id": rec.target,
            "tokens": [r.token for r in seq.records],
            "ig": [r.ig.value for r in seq.records],
            "weights": seq.weights,
        })
    return out


def export_weights(train: InteractionSet, trie: PrefixTrie, scheme: WeightScheme, path: str | Path) -> Path:
    """Write one JSONL weight record per training example, in input order."""
    path = Path(path)
    lines = [json.dumps(r, separators=(",", ":")) for r in export_records(train, trie, scheme)]
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("".join(line + "\n" for line in lines))
    except OSError as exc:
        raise OSError(f"cannot write weight sidecar {path}: {exc.strerror or exc}") from exc
    return path


def read_weights(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
