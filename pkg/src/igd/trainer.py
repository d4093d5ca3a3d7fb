"""Tabular next-token model trained by mini-batch SGD on (optionally reweighted) token cross-entropy.

One logit per (trie node, continuation token).  With ``support="vocab"`` the training
softmax also covers every other vocabulary entry, as fine-tuning over a full LM
vocabulary does.  Those off-trie logits never appear as targets and start equal, so
they stay equal forever and are stored as one shared value per node together with
their multiplicity.  Scoring always uses the softmax over continuations only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import InteractionSet
from .errors import ConfigError, DataError
from .scorer import Scorer
from .trie import PrefixTrie
from .weights import WeightScheme, tuning_weight

MODEL_FORMAT = "igd-tabular"
MODEL_VERSION = 1


class TabularLM:
    def __init__(self, trie: PrefixTrie, learning_rate: float = 1.0, seed: int = 0,
                 support: str = "vocab", vocab_size: int | None = None):
        if not learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if support not in ("vocab", "continuations"):
            raise ConfigError(f"unknown softmax support {support!r}")
        self.trie = trie
        self.learning_rate = learning_rate
        self.seed = seed
        self.support = support
        if vocab_size is None:
            vocab_size = len(trie.surfaces) if trie.surfaces else 1 + max(n.token for n in trie.nodes)
        self.vocab_size = vocab_size
        self.logits: dict[int, np.ndarray] = {}
        self.off = np.zeros(len(trie.nodes))
        self.n_off = np.zeros(len(trie.nodes), dtype=np.int64)
        for n in trie.nodes:
            if n.children:
                k = len(n.children)
                self.logits[n.node_id] = np.zeros(k)
                if support == "vocab":
                    if vocab_size < k:
                        raise ConfigError(f"vocab_size {vocab_size} smaller than a node's fan-out {k}")
                    self.n_off[n.node_id] = vocab_size - k
        # position of each node among its parent's token-sorted children
        self.child_index = np.full(len(trie.nodes), -1, dtype=np.int64)
        for n in trie.nodes:
            for i, c in enumerate(trie.children_of(n.node_id)):
                self.child_index[c] = i

    def logit(self, node: int, token: int) -> float:
        child = self.trie.nodes[node].children[token]
        return float(self.logits[node][self.child_index[child]])

    def training_probs(self, node: int) -> tuple[np.ndarray, float, float]:
        """Continuation probabilities, per-entry off-trie probability and log-partition under the training softmax."""
        z = self.logits[node]
        m = int(self.n_off[node])
        top = z.max()
        if m:
            top = max(top, self.off[node])
        s = np.exp(z - top).sum()
        if m:
            s += m * math.exp(self.off[node] - top)
        lse = top + math.log(s)
        p = np.exp(z - lse)
        p_off = math.exp(self.off[node] - lse) if m else 0.0
        return p, p_off, lse

    def continuation_probs(self, node: int) -> np.ndarray:
        z = self.logits[node]
        e = np.exp(z - z.max())
        return e / e.sum()

    # -- persistence ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "catalog_hash": self.trie.catalog_hash,
            "learning_rate": self.learning_rate,
            "seed": self.seed,
            "support": self.support,
            "vocab_size": self.vocab_size,
            "logits": {str(n): z.tolist() for n, z in sorted(self.logits.items())},
            "off": {str(n): float(self.off[n]) for n in sorted(self.logits)},
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, trie: PrefixTrie) -> "TabularLM":
        path = Path(path)
        if not path.exists():
            raise DataError(f"model snapshot not found: {path}")
        obj = json.loads(path.read_text(encoding="utf-8"))
        if obj.get("format") != MODEL_FORMAT or obj.get("version") != MODEL_VERSION:
            raise DataError("unsupported model snapshot")
        if obj["catalog_hash"] != trie.catalog_hash:
            raise DataError("model snapshot does not belong to this trie (catalog_hash mismatch)")
        model = cls(trie, obj["learning_rate"], obj["seed"], obj["support"], obj["vocab_size"])
        for n, z in obj["logits"].items():
            node = int(n)
            if node not in model.logits or len(z) != len(model.logits[node]):
                raise DataError(f"model snapshot logits for node {node} do not match the trie")
            model.logits[node] = np.asarray(z, dtype=float)
            model.off[node] = obj["off"][n]
        return model


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 32
    scheme: WeightScheme | None = None
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")


@dataclass(frozen=True)
class StepRecord:
    epoch: int
    step: int
    mean_loss_zero_ig: float
    mean_loss_nonzero_ig: float
    overall: float


@dataclass
class LossTrace:
    records: list[StepRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def epoch(self, epoch: int) -> "LossTrace":
        return LossTrace([r for r in self.records if r.epoch == epoch])


@dataclass(frozen=True)
class TokenInstance:
    node: int      # node whose softmax predicts the token
    target: int    # index of the token among that node's continuations
    zero_ig: bool
    weight: float


def item_instances(model: TabularLM, item_id: str, scheme: WeightScheme | None) -> list[TokenInstance]:
    trie = model.trie
    out = []
    for c in trie.path_nodes(item_id):
        n = trie.nodes[c]
        w = 1.0 if scheme is None else tuning_weight(trie.edge_ig(c), scheme)
        out.append(TokenInstance(n.parent, int(model.child_index[c]), n.zero_ig, w))
    return out


def token_loss_and_grad(model: TabularLM, tok: TokenInstance) -> tuple[float, np.ndarray, float]:
    """Unweighted CE of one token with its gradient wrt the node's continuation logits and one off-trie logit."""
    p, p_off, lse = model.training_probs(tok.node)
    g = p.copy()
    g[tok.target] -= 1.0
    return lse - model.logits[tok.node][tok.target], g, p_off


def batch_loss_and_grad(model: TabularLM, batch: list[TokenInstance]):
    """Batch objective sum_t (w_t / Omega) * l_t, its per-token losses and gradients.

    Returns ``(objective, losses, grads)`` where ``grads`` maps node -> (continuation
    gradient, gradient of each individual off-trie logit).
    """
    omega = math.fsum(t.weight for t in batch)
    if not omega > 0:
        raise DataError("batch weights sum to zero")
    cache: dict[int, tuple[np.ndarray, float, float]] = {}
    grads: dict[int, list] = {}
    losses = []
    objective = 0.0
    for tok in batch:
        probs = cache.get(tok.node)
        if probs is None:
            probs = cache[tok.node] = model.training_probs(tok.node)
        p, p_off, lse = probs
        loss = lse - model.logits[tok.node][tok.target]
        losses.append(loss)
        scale = tok.weight / omega
        objective += scale * loss
        acc = grads.get(tok.node)
        if acc is None:
            acc = grads[tok.node] = [np.zeros_like(p), 0.0]
        acc[0] += scale * p
        acc[0][tok.target] -= scale
        acc[1] += scale * p_off
    return objective, losses, {n: (g, off) for n, (g, off) in grads.items()}


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values) if values else float("nan")


def train(model: TabularLM, train: InteractionSet, trie: PrefixTrie, cfg: TrainConfig) -> tuple[TabularLM, LossTrace]:
    """Mini-batch SGD; batches are groups of ``batch_size`` training examples."""
    if trie is not model.trie and trie.catalog_hash != model.trie.catalog_hash:
        raise DataError("model and trie disagree on the catalog")
    if len(train) == 0:
        raise DataError("empty training set")
    cache: dict[str, list[TokenInstance]] = {}
    examples = []
    for rec in train.records:
        inst = cache.get(rec.target)
        if inst is None:
            inst = cache[rec.target] = item_instances(model, rec.target, cfg.scheme)
        examples.append(inst)
    rng = np.random.default_rng(cfg.shuffle_seed)
    trace = LossTrace()
    lr = model.learning_rate
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(examples))
        for start in range(0, len(order), cfg.batch_size):
            batch = [tok for i in order[start:start + cfg.batch_size] for tok in examples[i]]
            _, losses, grads = batch_loss_and_grad(model, batch)
            step += 1
            trace.records.append(StepRecord(
                epoch, step,
                _mean([l for l, t in zip(losses, batch) if t.zero_ig]),
                _mean([l for l, t in zip(losses, batch) if not t.zero_ig]),
                _mean(losses),
            ))
            for node, (g, g_off) in grads.items():
                model.logits[node] -= lr * g
                if model.n_off[node]:
                    model.off[node] -= lr * g_off
    return model, trace


class TabularScorer(Scorer):
    context_free = True

    def __init__(self, model: TabularLM):
        super().__init__(model.trie)
        self.model = model
        self._cache: dict[int, dict[int, float]] = {}

    def distribution(self, ctx, node):
        dist = self._cache.get(node)
        if dist is None:
            if node not in self.model.logits:
                raise DataError(f"node {node} is a leaf; nothing to score")
            p = self.model.continuation_probs(node)
            nodes = self.trie.nodes
            dist = {nodes[c].token: float(pi) for c, pi in zip(self.trie.children_of(node), p)}
            self._cache[node] = dist
        return dist


def as_scorer(model: TabularLM) -> TabularScorer:
    return TabularScorer(model)


def loss_split_report(trace: LossTrace, path: str | Path) -> Path:
    if not len(trace):
        raise DataError("empty loss trace")
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "step", "loss_zero_ig", "loss_nonzero_ig", "loss_overall"])
        for r in trace.records:
            w.writerow([r.epoch, r.step, repr(r.mean_loss_zero_ig), repr(r.mean_loss_nonzero_ig), repr(r.overall)])
    return path
