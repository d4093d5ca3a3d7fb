"""Next-token scorers: constrained distributions p(token | context, prefix) over trie continuations."""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .catalog import InteractionSet
from .errors import ConfigError, DataError
from .trie import PrefixTrie

Distribution = dict[int, float]


@dataclass(frozen=True)
class UserContext:
    user_id: str
    history: tuple[str, ...] = ()


class Scorer:
    """Base class.  Subclasses implement ``distribution(ctx, node)`` over the node's continuations."""

    context_free = False

    def __init__(self, trie: PrefixTrie):
        self.trie = trie

    def distribution(self, ctx: UserContext, node: int) -> Distribution:
        raise NotImplementedError

    def score(self, ctx: UserContext, prefix: Sequence[int]) -> Distribution:
        node = self.trie.locate(prefix)
        if self.trie.nodes[node].is_leaf:
            raise DataError(f"prefix {list(prefix)} ends at a leaf; nothing to score")
        return self.distribution(ctx, node)

    def path_probability(self, ctx: UserContext, node: int) -> float:
        """Product of conditional probabilities from the root down to ``node``."""
        prob = 1.0
        for n in _path_from_root(self.trie, node):
            parent = self.trie.nodes[n].parent
            prob *= self.distribution(ctx, parent).get(self.trie.nodes[n].token, 0.0)
        return prob


def _path_from_root(trie: PrefixTrie, node: int) -> list[int]:
    out = []
    while node != trie.root:
        out.append(node)
        node = trie.nodes[node].parent
    out.reverse()
    return out


def _normalize(weights: Mapping[int, float]) -> Distribution:
    z = math.fsum(weights.values())
    return {t: w / z for t, w in weights.items()}


class TriePriorScorer(Scorer):
    """p(t | prefix) = mass(child) / mass(node); path products telescope to item priors."""

    context_free = True

    def __init__(self, trie: PrefixTrie):
        super().__init__(trie)
        self._cache: dict[int, Distribution] = {}

    def distribution(self, ctx, node):
        dist = self._cache.get(node)
        if dist is None:
            nodes = self.trie.nodes
            dist = _normalize({nodes[c].token: nodes[c].mass for c in self.trie.children_of(node)})
            self._cache[node] = dist
        return dist

    def path_probability(self, ctx, node):
        return self.trie.nodes[node].mass


class PersonalizedScorer(Scorer):
    """Interpolates a base scorer with a last-item co-occurrence model.

    Item score s(i | ctx) = lam * P_base(i) + (1 - lam) * cooc(last(history), i) with
    cooc(a, i) = (n(a, i) + 1) / (n(a) + |I|).  The token distribution at a node is the
    ratio of subtree sums of s over its children.  Empty histories fall back to the base.
    """

    def __init__(self, trie: PrefixTrie, train: InteractionSet, lam: float, base: Scorer | None = None):
        super().__init__(trie)
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
        self.lam = lam
        self.base = base or TriePriorScorer(trie)
        self.pairs: dict[str, Counter] = defaultdict(Counter)
        for rec in train.records:
            if rec.history:
                self.pairs[rec.history[-1]][rec.target] += 1
        self._totals = {a: sum(c.values()) for a, c in self.pairs.items()}
        self._subtree_counts: dict[str, dict[int, int]] = {}
        self._base_path: dict[int, float] = {}

    def _counts_for(self, source: str) -> dict[int, int]:
        counts = self._subtree_counts.get(source)
        if counts is None:
            counts = defaultdict(int)
            for target, n in self.pairs.get(source, {}).items():
                if target not in self.trie:
                    continue
                for node in self.trie.path_nodes(target):
                    counts[node] += n
            counts = self._subtree_counts[source] = dict(counts)
        return counts

    def _base_mass(self, ctx: UserContext, node: int) -> float:
        if not self.base.context_free:
            return self.base.path_probability(ctx, node)
        p = self._base_path.get(node)
        if p is None:
            p = self._base_path[node] = self.base.path_probability(ctx, node)
        return p

    def distribution(self, ctx, node):
        if not ctx.history or self.lam == 1.0:
            return self.base.distribution(ctx, node)
        source = ctx.history[-1]
        counts = self._counts_for(source)
        denom = self._totals.get(source, 0) + self.trie.n_items
        nodes = self.trie.nodes
        lam = self.lam
        weights = {}
        for c in self.trie.children_of(node):
            cooc = (counts.get(c, 0) + nodes[c].n_items) / denom
            weights[nodes[c].token] = lam * self._base_mass(ctx, c) + (1.0 - lam) * cooc
        return _normalize(weights)


def apply_ig_bias(dist: Mapping[int, float], igs: Mapping[int, float], gamma: float, ig_scale: float) -> Distribution:
    """Tilt ``dist`` toward less decisive tokens.

    Each token's probability is multiplied by exp(-gamma * IG / ig_scale) and the result
    renormalized.  Tokens with equal gain keep their relative probabilities, so a
    distribution whose continuations all share one gain is returned unchanged.
    """
    if gamma < 0:
        raise ConfigError(f"gamma must be non-negative, got {gamma}")
    if not ig_scale > 0:
        raise ConfigError(f"ig_scale must be positive, got {ig_scale}")
    if gamma == 0 or not dist:
        return dict(dist)
    lo = min(igs[t] for t in dist)
    if all(igs[t] == lo for t in dist):
        return dict(dist)
    # shifting by the smallest gain leaves the normalized result unchanged and avoids underflow
    return _normalize({t: p * math.exp(-gamma * (igs[t] - lo) / ig_scale) for t, p in dist.items()})


class BiasedScorer(Scorer):
    """Wraps a scorer and shifts probability toward low-IG continuations (decoding-bias model).

    Gains are scaled by the largest edge gain in the trie, so ``gamma`` is the log-odds
    penalty paid by the most decisive token relative to a zero-IG one.
    """

    def __init__(self, base: Scorer, trie: PrefixTrie, gamma: float):
        super().__init__(trie)
        if gamma < 0:
            raise ConfigError(f"gamma must be non-negative, got {gamma}")
        self.base = base
        self.gamma = gamma
        self.ig_scale = max((n.ig for n in trie.nodes[1:]), default=0.0) or 1.0
        self.context_free = base.context_free
        self._cache: dict[int, Distribution] = {}

    def distribution(self, ctx, node):
        if self.context_free:
            dist = self._cache.get(node)
            if dist is not None:
                return dist
        dist = self.base.distribution(ctx, node)
        if self.gamma != 0:
            nodes = self.trie.nodes
            igs = {nodes[c].token: nodes[c].ig for c in self.trie.children_of(node)}
            dist = apply_ig_bias(dist, igs, self.gamma, self.ig_scale)
        if self.context_free:
            self._cache[node] = dist
        return dist


class ReplayScorer(Scorer):
    """Looks up per-step distributions exported from an external model.

    Entries are keyed by (user_id, prefix token ids).  Mass on tokens that are not
    valid continuations is dropped and the remainder renormalized.
    """

    def __init__(self, trie: PrefixTrie, entries: Mapping[tuple[str, tuple[int, ...]], Mapping[int, float]]):
        super().__init__(trie)
        self.entries = dict(entries)

    @classmethod
    def from_file(cls, trie: PrefixTrie, path: str | Path) -> "ReplayScorer":
        path = Path(path)
        if not path.exists():
            raise DataError(f"replay file not found: {path}")
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                    key = (str(obj["user_id"]), tuple(int(t) for t in obj["prefix"]))
                    probs = {int(t): float(p) for t, p in obj["probs"].items()}
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                    raise DataError(f"{path}:{lineno}: malformed replay entry ({exc})") from None
                if any(p < 0 for p in probs.values()):
                    raise DataError(f"{path}:{lineno}: negative probability")
                entries[key] = probs
        return cls(trie, entries)

    def distribution(self, ctx, node):
        prefix = self.trie.prefix_of(node)
        raw = self.entries.get((ctx.user_id, prefix))
        if raw is None:
            raise DataError(f"replay has no entry for user {ctx.user_id!r} at prefix {list(prefix)} (step {len(prefix) + 1})")
        valid = self.trie.nodes[node].children
        kept = {t: p for t, p in raw.items() if t in valid and p > 0}
        if not kept:
            raise DataError(f"replay entry for user {ctx.user_id!r} at prefix {list(prefix)} has no mass on valid continuations")
        return _normalize(kept)


def make_trie_prior_scorer(trie: PrefixTrie) -> TriePriorScorer:
    return TriePriorScorer(trie)


def make_personalized_scorer(trie: PrefixTrie, train: InteractionSet, lam: float, base: Scorer | None = None) -> PersonalizedScorer:
    return PersonalizedScorer(trie, train, lam, base)


def make_biased_scorer(base: Scorer, trie: PrefixTrie, gamma: float) -> BiasedScorer:
    return BiasedScorer(base, trie, gamma)


def make_replay_scorer(trie: PrefixTrie, path: str | Path) -> ReplayScorer:
    return ReplayScorer.from_file(trie, path)


def check_distribution(dist: Mapping[int, float], trie: PrefixTrie, node: int, tol: float = 1e-9) -> None:
    """Raise if ``dist`` is not a normalized, positive distribution over valid continuations."""
    valid = trie.nodes[node].children
    if not dist:
        raise DataError("empty distribution")
    for t, p in dist.items():
        if t not in valid:
            raise DataError(f"token {t} is not a valid continuation of node {node}")
        if not p > 0:
            raise DataError(f"token {t} has non-positive probability {p}")
    total = math.fsum(dist.values())
    if abs(total - 1.0) > tol:
        raise DataError(f"distribution sums to {total!r}")


@dataclass(frozen=True)
class ScorerSpec:
    """Declarative scorer description used by the CLI and sweep runner.

    kinds: trie_prior | personalized (lam, base) | biased (gamma, base) | replay (path) |
    tabular (path to a model snapshot, or a model supplied at build time).
    """

    kind: str = "trie_prior"
    lam: float = 0.5
    gamma: float = 0.0
    path: str | None = None
    base: "ScorerSpec | None" = None
    seed: int = 0

    KINDS = ("trie_prior", "personalized", "biased", "replay", "tabular")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown scorer kind {self.kind!r}; expected one of {self.KINDS}")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lambda must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScorerSpec":
        base = d.get("base")
        return cls(
            kind=d.get("kind", "trie_prior"),
            lam=float(d.get("lam", d.get("lambda", 0.5))),
            gamma=float(d.get("gamma", 0.0)),
            path=d.get("path"),
            base=cls.from_dict(base) if isinstance(base, Mapping) else None,
            seed=int(d.get("seed", 0)),
        )

    @classmethod
    def parse(cls, text: str) -> "ScorerSpec":
        """Accepts a bare kind name or a JSON object."""
        text = text.strip()
        if text.startswith("{"):
            try:
                return cls.from_dict(json.loads(text))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"bad scorer JSON: {exc}") from None
        return cls(kind=text)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "personalized":
            d["lam"] = self.lam
        if self.kind == "biased":
            d["gamma"] = self.gamma
        if self.path is not None:
            d["path"] = self.path
        if self.base is not None:
            d["base"] = self.base.to_dict()
        return d


def build_scorer(spec: ScorerSpec, trie: PrefixTrie, train: InteractionSet | None = None, model=None) -> Scorer:
    """Instantiate ``spec``.  ``model`` is a trained TabularLM used for ``tabular`` nodes without a path."""
    base = build_scorer(spec.base, trie, train, model) if spec.base is not None else None
    if spec.kind == "trie_prior":
        return TriePriorScorer(trie)
    if spec.kind == "personalized":
        if train is None:
            raise ConfigError("personalized scorer needs training interactions")
        return PersonalizedScorer(trie, train, spec.lam, base)
    if spec.kind == "biased":
        return BiasedScorer(base or TriePriorScorer(trie), trie, spec.gamma)
    if spec.kind == "replay":
        if spec.path is None:
            raise ConfigError("replay scorer needs a path")
        return ReplayScorer.from_file(trie, spec.path)
    from .trainer import TabularLM, as_scorer

    if spec.path is not None:
        model = TabularLM.load(spec.path, trie)
    if model is None:
        raise ConfigError("tabular scorer needs a model snapshot path or a trained model")
    return as_scorer(model)
