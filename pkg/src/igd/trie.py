"""Token prefix trie over a catalog with per-node entropy and per-edge information gain.

Node entropy is the unnormalized sum of ``-p log p`` over the items below the node,
using each item's global prior.  Removing items from that sum can never increase
it, so the gain of every edge (parent entropy minus child entropy) is non-negative.
A token is zero-IG exactly when it is the only continuation of its prefix, i.e.
the candidate item set does not change.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .catalog import Catalog, InteractionSet
from .errors import DataError, PrefixError

SNAPSHOT_FORMAT = "igd-trie"
SNAPSHOT_VERSION = 1
LOG_BASES = {"natural": math.e, "base2": 2.0}
_LOG_BASE_ALIASES = {"nat": "natural", "e": "natural", "ln": "natural", "2": "base2", "bits": "base2"}


def canonical_log_base(name: str) -> str:
    name = _LOG_BASE_ALIASES.get(name, name)
    if name not in LOG_BASES:
        raise DataError(f"unknown log base {name!r}; expected natural or base2")
    return name


@dataclass(slots=True)
class TrieNode:
    node_id: int
    parent: int
    token: int
    depth: int
    children: dict[int, int] = field(default_factory=dict)
    mass: float = 0.0
    entropy: float = 0.0
    n_items: int = 0
    ig: float = 0.0
    zero_ig: bool = False
    terminal_item: str | None = None
    min_item: str | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class IGValue:
    value: float
    is_zero: bool


@dataclass(frozen=True)
class Continuation:
    token: int
    ig: IGValue
    mass: float
    node: int


class PrefixTrie:
    def __init__(self, nodes: list[TrieNode], catalog_hash: str, log_base: str, eos_id: int,
                 surfaces: Sequence[str] | None = None):
        self.nodes = nodes
        self.root = 0
        self.catalog_hash = catalog_hash
        self.log_base = log_base
        self.eos_id = eos_id
        self.surfaces = list(surfaces) if surfaces is not None else None
        self.leaves: dict[str, int] = {}
        for n in nodes:
            if n.terminal_item is not None:
                self.leaves[n.terminal_item] = n.node_id
        self._sorted_children: list[list[int]] = [
            [n.children[t] for t in sorted(n.children)] for n in nodes
        ]

    # -- navigation -------------------------------------------------------

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def item_ids(self) -> list[str]:
        return sorted(self.leaves)

    @property
    def n_items(self) -> int:
        return len(self.leaves)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self.leaves

    def children_of(self, node: int) -> list[int]:
        """Child node ids ordered by token id."""
        return self._sorted_children[node]

    def locate(self, prefix: Iterable[int]) -> int:
        node = self.root
        for step, tok in enumerate(prefix, 1):
            nxt = self.nodes[node].children.get(tok)
            if nxt is None:
                raise PrefixError(f"token {tok} at step {step} is not a valid continuation", step)
            node = nxt
        return node

    def prefix_of(self, node: int) -> tuple[int, ...]:
        out = []
        while node != self.root:
            n = self.nodes[node]
            out.append(n.token)
            node = n.parent
        return tuple(reversed(out))

    def leaf(self, item_id: str) -> int:
        try:
            return self.leaves[item_id]
        except KeyError:
            raise DataError(f"item {item_id!r} is not in the trie") from None

    def path_nodes(self, item_id: str) -> list[int]:
        """Node ids from the first token to the leaf (root excluded)."""
        node = self.leaf(item_id)
        out = []
        while node != self.root:
            out.append(node)
            node = self.nodes[node].parent
        out.reverse()
        return out

    def item_tokens(self, item_id: str) -> tuple[int, ...]:
        return self.prefix_of(self.leaf(item_id))

    def prior(self, item_id: str) -> float:
        return self.nodes[self.leaf(item_id)].mass

    def first_token(self, item_id: str) -> int:
        return self.nodes[self.path_nodes(item_id)[0]].token

    def edge_ig(self, node: int) -> IGValue:
        n = self.nodes[node]
        return IGValue(n.ig, n.zero_ig)

    def surface(self, token: int) -> str:
        if self.surfaces is None:
            return str(token)
        return self.surfaces[token]

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes)

    def rebased(self, log_base: str) -> "PrefixTrie":
        """Copy with entropies and gains expressed in another log base."""
        log_base = canonical_log_base(log_base)
        factor = math.log(LOG_BASES[self.log_base]) / math.log(LOG_BASES[log_base])
        nodes = []
        for n in self.nodes:
            nodes.append(TrieNode(
                n.node_id, n.parent, n.token, n.depth, dict(n.children), n.mass,
                n.entropy * factor, n.n_items, 0.0 if n.zero_ig else n.ig * factor,
                n.zero_ig, n.terminal_item, n.min_item,
            ))
        return PrefixTrie(nodes, self.catalog_hash, log_base, self.eos_id, self.surfaces)

    # -- persistence ------------------------------------------------------

    def to_json(self) -> str:
        header = {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "log_base": self.log_base,
            "catalog_hash": self.catalog_hash,
            "eos_id": self.eos_id,
        }
        rows = [
            [n.parent, n.token, n.mass, n.entropy, n.ig, int(n.zero_ig), n.terminal_item]
            for n in self.nodes
        ]
        return json.dumps({"header": header, "surfaces": self.surfaces, "nodes": rows},
                          separators=(",", ":"), ensure_ascii=False)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, text: str, catalog: Catalog | None = None) -> "PrefixTrie":
        try:
            obj = json.loads(text)
            header = obj["header"]
            rows = obj["nodes"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"malformed trie snapshot ({exc})") from None
        if header.get("format") != SNAPSHOT_FORMAT or header.get("version") != SNAPSHOT_VERSION:
            raise DataError(f"unsupported trie snapshot {header.get('format')!r} v{header.get('version')}")
        if catalog is not None and catalog.fingerprint() != header["catalog_hash"]:
            raise DataError("trie snapshot was built from a different catalog (catalog_hash mismatch)")
        nodes = []
        for i, (parent, token, mass, ent, ig, zero, term) in enumerate(rows):
            depth = 0 if parent < 0 else nodes[parent].depth + 1
            node = TrieNode(i, parent, token, depth, {}, mass, ent, 0, ig, bool(zero), term)
            nodes.append(node)
            if parent >= 0:
                nodes[parent].children[token] = i
        _fill_counts(nodes)
        return cls(nodes, header["catalog_hash"], header["log_base"], header["eos_id"], obj.get("surfaces"))

    @classmethod
    def load(cls, path: str | Path, catalog: Catalog | None = None) -> "PrefixTrie":
        path = Path(path)
        if not path.exists():
            raise DataError(f"trie snapshot not found: {path}")
        return cls.from_json(path.read_text(encoding="utf-8"), catalog)


def _fill_counts(nodes: list[TrieNode]) -> None:
    # children always have larger ids than their parent
    for n in reversed(nodes):
        if n.terminal_item is not None:
            n.n_items = 1
            n.min_item = n.terminal_item
        else:
            kids = [nodes[c] for c in n.children.values()]
            n.n_items = sum(k.n_items for k in kids)
            n.min_item = min(k.min_item for k in kids) if kids else None


def build_trie(catalog: Catalog, log_base: str = "natural") -> PrefixTrie:
    """Insert every item's token sequence and accumulate mass and entropy bottom-up."""
    log_base = canonical_log_base(log_base)
    if len(catalog) == 0:
        raise DataError("cannot build a trie over an empty catalog")
    priors = [it.prior for it in catalog.items]
    if min(priors) <= 0:
        bad = next(it.item_id for it in catalog.items if it.prior <= 0)
        raise DataError(f"item {bad!r} has non-positive prior")
    total = math.fsum(priors)
    if abs(total - 1.0) > 1e-9:
        raise DataError(f"priors sum to {total!r}, expected 1 within 1e-9")

    eos = catalog.eos_id
    nodes = [TrieNode(0, -1, -1, 0)]
    leaf_prior: dict[int, float] = {}
    for it in catalog.items:
        toks = it.tokens
        if not toks or toks[-1] != eos or eos in toks[:-1]:
            raise DataError(f"item {it.item_id!r}: token sequence must end with exactly one EOS")
        node = 0
        for tok in toks:
            nxt = nodes[node].children.get(tok)
            if nxt is None:
                nxt = len(nodes)
                nodes.append(TrieNode(nxt, node, tok, nodes[node].depth + 1))
                nodes[node].children[tok] = nxt
            node = nxt
        if nodes[node].terminal_item is not None:
            raise DataError(f"items {nodes[node].terminal_item!r} and {it.item_id!r} have identical token sequences")
        nodes[node].terminal_item = it.item_id
        leaf_prior[node] = it.prior

    scale = 1.0 / math.log(LOG_BASES[log_base])
    for n in reversed(nodes):
        if n.terminal_item is not None:
            p = leaf_prior[n.node_id]
            n.mass = p
            n.entropy = -p * math.log(p) * scale + 0.0
        else:
            kids = [nodes[c] for c in n.children.values()]
            n.mass = math.fsum(k.mass for k in kids)
            n.entropy = math.fsum(k.entropy for k in kids)
    for n in nodes[1:]:
        parent = nodes[n.parent]
        n.zero_ig = len(parent.children) == 1
        n.ig = 0.0 if n.zero_ig else parent.entropy - n.entropy
    _fill_counts(nodes)
    return PrefixTrie(nodes, catalog.fingerprint(), log_base, eos, catalog.vocab.surfaces)


def entropy(trie: PrefixTrie, prefix: Sequence[int]) -> float:
    return trie.nodes[trie.locate(prefix)].entropy


def information_gain(trie: PrefixTrie, prefix: Sequence[int], token: int) -> IGValue:
    node = trie.locate(prefix)
    child = trie.nodes[node].children.get(token)
    if child is None:
        raise PrefixError(f"token {token} is not a valid continuation of the prefix", len(prefix) + 1)
    return trie.edge_ig(child)


def valid_continuations(trie: PrefixTrie, prefix: Sequence[int]) -> list[Continuation]:
    node = trie.locate(prefix)
    return [
        Continuation(trie.nodes[c].token, trie.edge_ig(c), trie.nodes[c].mass, c)
        for c in trie.children_of(node)
    ]


def global_ig_max(trie: PrefixTrie) -> float:
    """Largest edge gain anywhere in the trie."""
    best = max((n.ig for n in trie.nodes[1:]), default=0.0)
    if not best > 0:
        raise DataError("no edge has positive information gain (single-item catalog?)")
    return best


@dataclass
class ZeroIGStats:
    total_token_instances: int
    zero_ig_instances: int
    percent: float
    per_depth_histogram: dict[int, tuple[int, int]]
    n_items: int = 0
    n_interactions: int = 0

    def to_dict(self) -> dict:
        return {
            "items": self.n_items,
            "interactions": self.n_interactions,
            "tokens": self.total_token_instances,
            "zero_ig_tokens": self.zero_ig_instances,
            "zero_ig_percent": self.percent,
            "total_token_instances": self.total_token_instances,
            "zero_ig_instances": self.zero_ig_instances,
            "percent": self.percent,
            "per_depth_histogram": {str(d): list(v) for d, v in sorted(self.per_depth_histogram.items())},
        }


def zero_ig_stats(trie: PrefixTrie, train: InteractionSet) -> ZeroIGStats:
    """Count token instances over all training targets (k occurrences count k times)."""
    per_item: dict[str, list[int]] = {}
    hist: dict[int, list[int]] = {}
    total = zero = 0
    for rec in train.records:
        path = per_item.get(rec.target)
        if path is None:
            path = per_item[rec.target] = trie.path_nodes(rec.target)
        for node in path:
            n = trie.nodes[node]
            bucket = hist.setdefault(n.depth, [0, 0])
            bucket[0] += 1
            total += 1
            if n.zero_ig:
                bucket[1] += 1
                zero += 1
    percent = 100.0 * zero / total if total else 0.0
    return ZeroIGStats(total, zero, percent, {d: (v[0], v[1]) for d, v in hist.items()},
                       trie.n_items, len(train))
