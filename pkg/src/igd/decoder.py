"""Constrained beam search over the prefix trie, with optional IG-based step reweighting.

Scores are accumulated log-probabilities with no length penalty.  In ``igd`` mode a
step contribution is ``w_d * log p`` where ``w_d = 1 - alpha * IG~`` and ``IG~`` is the
token's gain min-max scaled over every (hypothesis, token) expansion of that step.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .catalog import InteractionSet
from .errors import ConfigError, DataError
from .scorer import Scorer, UserContext
from .trie import PrefixTrie

DEFAULT_ALPHA_GRID = (0.0, 0.1, 0.2, 0.3, 0.4)


@dataclass(frozen=True)
class BeamConfig:
    width: int = 10
    top_k: int = 10
    alpha: float = 0.0
    mode: str = "standard"

    def __post_init__(self):
        if self.width < 1:
            raise ConfigError(f"beam width must be >= 1, got {self.width}")
        if self.top_k < 1:
            raise ConfigError(f"top_k must be >= 1, got {self.top_k}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.mode not in ("standard", "igd"):
            raise ConfigError(f"unknown decoding mode {self.mode!r}")
        if self.top_k > self.width:
            warnings.warn(f"top_k={self.top_k} exceeds beam width {self.width}; fewer items may be returned",
                          stacklevel=3)


@dataclass(frozen=True)
class Hypothesis:
    score: float
    node: int
    terminated: bool = False


@dataclass(frozen=True)
class StepReweight:
    ig_norm: float
    w_d: float


@dataclass(frozen=True)
class RankedList:
    entries: tuple[tuple[str, float], ...]

    @property
    def items(self) -> list[str]:
        return [i for i, _ in self.entries]

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def normalized_gains(igs: Sequence[float]) -> list[float]:
    lo = min(igs)
    hi = max(igs)
    if not hi > lo:
        return [0.0] * len(igs)
    span = hi - lo
    return [(g - lo) / span for g in igs]


def step_reweights(candidates: Iterable, alpha: float) -> list[StepReweight]:
    """Decoding weights for one beam step.

    ``candidates`` holds ``(hypothesis, token, ig, log_p)`` tuples or bare IG values.
    """
    igs = [c[2] if isinstance(c, tuple) else float(c) for c in candidates]
    if not igs:
        return []
    return [StepReweight(g, 1.0 - alpha * g) for g in normalized_gains(igs)]


def beam_search(scorer: Scorer, trie: PrefixTrie, ctx: UserContext, cfg: BeamConfig) -> RankedList:
    if trie.n_items == 0:
        raise DataError("empty catalog")
    nodes = trie.nodes
    igd = cfg.mode == "igd" and cfg.alpha != 0.0
    live = [Hypothesis(0.0, trie.root)]
    finished: list[Hypothesis] = []
    while live:
        cand_nodes: list[int] = []
        cand_base: list[float] = []
        cand_logp: list[float] = []
        for hyp in live:
            dist = scorer.distribution(ctx, hyp.node)
            children = nodes[hyp.node].children
            for tok, p in dist.items():
                child = children.get(tok)
                if child is None:
                    raise DataError(f"scorer proposed token {tok} outside the trie")
                cand_nodes.append(child)
                cand_base.append(hyp.score)
                cand_logp.append(math.log(p))
        if igd:
            weights = [1.0 - cfg.alpha * g for g in normalized_gains([nodes[c].ig for c in cand_nodes])]
            scores = [b + w * lp for b, w, lp in zip(cand_base, weights, cand_logp)]
        else:
            scores = [b + lp for b, lp in zip(cand_base, cand_logp)]
        order = sorted(range(len(cand_nodes)), key=lambda i: (-scores[i], nodes[cand_nodes[i]].min_item))
        live = []
        for rank, i in enumerate(order):
            node = cand_nodes[i]
            if nodes[node].terminal_item is not None:
                if rank < cfg.width:
                    finished.append(Hypothesis(scores[i], node, True))
            elif len(live) < cfg.width:
                live.append(Hypothesis(scores[i], node))
            if rank >= cfg.width and len(live) >= cfg.width:
                break
        if len(finished) >= cfg.top_k and live:
            kth = sorted(h.score for h in finished)[-cfg.top_k]
            # contributions are never positive, so live hypotheses can only fall further
            if kth > max(h.score for h in live):
                break
    finished.sort(key=lambda h: (-h.score, nodes[h.node].terminal_item))
    return RankedList(tuple((nodes[h.node].terminal_item, h.score) for h in finished[:cfg.top_k]))


def context_of(record) -> UserContext:
    return UserContext(record.user_id, tuple(record.history))


def decode_batch(scorer: Scorer, trie: PrefixTrie, test: InteractionSet, cfg: BeamConfig) -> list[RankedList]:
    out = []
    for idx, rec in enumerate(test.records):
        try:
            out.append(beam_search(scorer, trie, context_of(rec), cfg))
        except DataError as exc:
            raise DataError(f"record {idx} (user {rec.user_id!r}): {exc}") from exc
    return out


def save_decoded(lists: Sequence[RankedList], test: InteractionSet, path: str | Path) -> Path:
    """One JSONL line per test record: user id, ranked items and their scores."""
    if len(lists) != len(test):
        raise DataError(f"{len(lists)} ranked lists for {len(test)} records")
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ranked, rec in zip(lists, test.records):
            fh.write(json.dumps({"user_id": rec.user_id, "items": ranked.items, "scores": ranked.scores},
                                separators=(",", ":")) + "\n")
    return path


def load_decoded(path: str | Path) -> tuple[list[str], list[RankedList]]:
    """Inverse of :func:`save_decoded`; returns user ids and ranked lists in file order."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"decode output not found: {path}")
    users, lists = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                items, scores = obj["items"], obj["scores"]
                users.append(str(obj["user_id"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed decode line ({exc})") from None
            if len(items) != len(scores):
                raise DataError(f"{path}:{lineno}: items and scores differ in length")
            lists.append(RankedList(tuple(zip(map(str, items), map(float, scores)))))
    return users, lists


def enumerate_paths(scorer: Scorer, trie: PrefixTrie, ctx: UserContext, alpha: float = 0.0,
                    mode: str = "standard") -> dict[str, float]:
    """Exhaustive scores of every item without pruning (the reference for beam search).

    The IGD normalization pool at depth t is every expansion of every depth t-1 node,
    which is what an unpruned beam sees.
    """
    nodes = trie.nodes
    scores = {trie.root: 0.0}
    frontier = [trie.root]
    result = {}
    while frontier:
        expansions = []
        for node in frontier:
            dist = scorer.distribution(ctx, node)
            for tok, p in dist.items():
                expansions.append((node, nodes[node].children[tok], math.log(p)))
        if mode == "igd":
            ws = [r.w_d for r in step_reweights([nodes[c].ig for _, c, _ in expansions], alpha)]
        else:
            ws = [1.0] * len(expansions)
        frontier = []
        for (parent, child, lp), w in zip(expansions, ws):
            scores[child] = scores[parent] + (w * lp if mode == "igd" and alpha != 0.0 else lp)
            if nodes[child].terminal_item is not None:
                result[nodes[child].terminal_item] = scores[child]
            else:
                frontier.append(child)
    return result
