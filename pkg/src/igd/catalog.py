"""Item catalogs, tokenization, interaction logs and empirical item priors."""

from __future__ import annotations

import hashlib
import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataError

EOS_SURFACE = "<eos>"
SPLITS = ("train", "valid", "test")
TOKENIZER_MODES = ("whitespace", "character", "vocab")


def normalize_title(title: str) -> str:
    return unicodedata.normalize("NFC", title).strip()


@dataclass(frozen=True)
class TokenizerSpec:
    """How titles become tokens.

    ``whitespace`` and ``character`` grow an open vocabulary as titles are seen;
    ``vocab`` segments by greedy longest match against a closed list of surfaces
    (``vocab_path`` or ``surfaces``), where line number is the token id.
    """

    mode: str = "whitespace"
    vocab_path: str | None = None
    surfaces: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.mode not in TOKENIZER_MODES:
            raise ConfigError(f"unknown tokenizer mode {self.mode!r}; expected one of {TOKENIZER_MODES}")
        if self.mode == "vocab" and self.vocab_path is None and self.surfaces is None:
            raise ConfigError("vocab tokenizer needs vocab_path or surfaces")

    def to_dict(self) -> dict:
        d = {"mode": self.mode}
        if self.vocab_path is not None:
            d["vocab_path"] = self.vocab_path
        return d


class Vocab:
    """Bidirectional token table with a reserved EOS id."""

    def __init__(self, surfaces: Iterable[str] = (), closed: bool = False):
        self._surfaces: list[str] = []
        self._ids: dict[str, int] = {}
        for s in surfaces:
            if s in self._ids:
                raise DataError(f"duplicate vocabulary entry {s!r}")
            self._add(s)
        if EOS_SURFACE in self._ids:
            raise DataError(f"vocabulary may not contain the reserved surface {EOS_SURFACE!r}")
        self.eos_id = self._add(EOS_SURFACE)
        self.closed = closed

    def _add(self, surface: str) -> int:
        idx = len(self._surfaces)
        self._surfaces.append(surface)
        self._ids[surface] = idx
        return idx

    def id_of(self, surface: str) -> int:
        idx = self._ids.get(surface)
        if idx is None:
            if self.closed:
                raise DataError(f"token {surface!r} not in closed vocabulary")
            idx = self._add(surface)
        return idx

    def surface(self, token_id: int) -> str:
        return self._surfaces[token_id]

    def __contains__(self, surface: str) -> bool:
        return surface in self._ids

    def __len__(self) -> int:
        return len(self._surfaces)

    @property
    def surfaces(self) -> list[str]:
        return list(self._surfaces)


def load_vocab_file(path: str | Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def split_surfaces(title: str, spec: TokenizerSpec, vocab: Vocab | None = None) -> list[str]:
    """Segment a normalized title into surface strings (no EOS)."""
    if spec.mode == "whitespace":
        return title.split()
    if spec.mode == "character":
        return list(title)
    if vocab is None:
        raise ConfigError("vocab mode needs a vocabulary")
    return _greedy_longest_match(title, vocab)


def _greedy_longest_match(text: str, vocab: Vocab) -> list[str]:
    longest = max((len(s) for s in vocab.surfaces), default=0)
    out = []
    i = 0
    while i < len(text):
        for j in range(min(len(text), i + longest), i, -1):
            piece = text[i:j]
            if piece in vocab and piece != EOS_SURFACE:
                out.append(piece)
                i = j
                break
        else:
            # report the run up to the next position where some entry matches
            k = i + 1
            while k < len(text) and not any(text.startswith(s, k) for s in vocab.surfaces if s != EOS_SURFACE):
                k += 1
            raise DataError(f"unknown fragment {text[i:k]!r} at offset {i} not covered by vocabulary")
    return out


class Tokenizer:
    """Maps titles to EOS-terminated token id tuples."""

    def __init__(self, spec: TokenizerSpec | None = None):
        self.spec = spec or TokenizerSpec()
        if self.spec.mode == "vocab":
            surfaces = self.spec.surfaces
            if surfaces is None:
                surfaces = tuple(load_vocab_file(self.spec.vocab_path))
            self.vocab = Vocab(surfaces, closed=True)
        else:
            self.vocab = Vocab()

    def tokenize(self, title: str) -> tuple[int, ...]:
        norm = normalize_title(title)
        if not norm:
            raise DataError("empty title")
        pieces = split_surfaces(norm, self.spec, self.vocab)
        return tuple(self.vocab.id_of(p) for p in pieces) + (self.vocab.eos_id,)

    def surfaces(self, tokens: Sequence[int]) -> list[str]:
        return [self.vocab.surface(t) for t in tokens]


def tokenize(title: str, spec: TokenizerSpec | Tokenizer) -> tuple[int, ...]:
    tok = spec if isinstance(spec, Tokenizer) else Tokenizer(spec)
    return tok.tokenize(title)


@dataclass(frozen=True)
class ItemRecord:
    item_id: str
    title: str
    tokens: tuple[int, ...]
    train_count: int = 0
    prior: float = 1.0
    group: str | None = None


@dataclass(frozen=True)
class Catalog:
    items: tuple[ItemRecord, ...]
    vocab: Vocab = field(compare=False)
    tokenizer_spec: TokenizerSpec = TokenizerSpec()

    def __post_init__(self):
        index = {}
        for pos, item in enumerate(self.items):
            if item.item_id in index:
                raise DataError(f"duplicate item_id {item.item_id!r}")
            index[item.item_id] = pos
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._index

    def __getitem__(self, item_id: str) -> ItemRecord:
        try:
            return self.items[self._index[item_id]]
        except KeyError:
            raise DataError(f"unknown item_id {item_id!r}") from None

    @property
    def item_ids(self) -> list[str]:
        return [it.item_id for it in self.items]

    @property
    def eos_id(self) -> int:
        return self.vocab.eos_id

    def priors(self) -> dict[str, float]:
        return {it.item_id: it.prior for it in self.items}

    def fingerprint(self) -> str:
        """Checksum over ids, token sequences and priors; binds a trie to this catalog."""
        h = hashlib.sha256()
        h.update(f"eos={self.eos_id}\n".encode())
        for it in self.items:
            h.update(json.dumps([it.item_id, list(it.tokens), repr(it.prior)]).encode())
            h.update(b"\n")
        return h.hexdigest()


def build_catalog(
    rows: Iterable[tuple[str, str]] | Iterable[tuple[str, str, str | None]],
    spec: TokenizerSpec | None = None,
) -> Catalog:
    """Tokenize ``(item_id, title[, group])`` rows into a catalog with uniform placeholder priors."""
    tok = Tokenizer(spec)
    items = []
    seen = set()
    for row in rows:
        item_id, title = row[0], row[1]
        group = row[2] if len(row) > 2 else None
        if item_id in seen:
            raise DataError(f"duplicate item_id {item_id!r}")
        seen.add(item_id)
        norm = normalize_title(title)
        if not norm:
            raise DataError(f"empty title for item {item_id!r}")
        try:
            tokens = tok.tokenize(norm)
        except DataError as exc:
            raise DataError(f"item {item_id!r}: {exc}") from None
        items.append(ItemRecord(item_id, norm, tokens, group=group))
    if items:
        p = 1.0 / len(items)
        items = [replace(it, prior=p) for it in items]
    return Catalog(tuple(items), tok.vocab, tok.spec)


def load_catalog(path: str | Path, format: str = "jsonl", spec: TokenizerSpec | None = None) -> Catalog:
    path = Path(path)
    if format not in ("jsonl", "tsv"):
        raise DataError(f"unknown catalog format {format!r}")
    if not path.exists():
        raise DataError(f"catalog file not found: {path}")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            if format == "jsonl":
                try:
                    obj = json.loads(line)
                    rows.append((str(obj["item_id"]), str(obj["title"]), obj.get("group")))
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise DataError(f"{path}:{lineno}: malformed catalog line ({exc})") from None
            else:
                parts = line.rstrip("\n").split("\t")
                if len(parts) < 2:
                    raise DataError(f"{path}:{lineno}: expected item_id<TAB>title")
                rows.append((parts[0], parts[1]))
    return build_catalog(rows, spec)


def save_catalog(catalog: Catalog, path: str | Path, format: str = "jsonl") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for it in catalog.items:
            if format == "jsonl":
                obj = {"item_id": it.item_id, "title": it.title}
                if it.group is not None:
                    obj["group"] = it.group
                fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
            elif format == "tsv":
                fh.write(f"{it.item_id}\t{it.title}\n")
            else:
                raise DataError(f"unknown catalog format {format!r}")


@dataclass(frozen=True)
class Interaction:
    user_id: str
    history: tuple[str, ...]
    target: str


@dataclass(frozen=True)
class InteractionSet:
    records: tuple[Interaction, ...]
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def targets(self) -> list[str]:
        return [r.target for r in self.records]


def parse_interactions(lines: Iterable[str], split: str, known_items=None, source: str = "<input>") -> InteractionSet:
    records = []
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise DataError(f"{source}: row {lineno}: expected user_id<TAB>history<TAB>target")
        user, hist, target = parts
        history = tuple(h for h in hist.split(",") if h) if hist else ()
        if known_items is not None:
            for ref in history + (target,):
                if ref not in known_items:
                    raise DataError(f"{source}: row {lineno}: unknown item_id {ref!r}")
        records.append(Interaction(user, history, target))
    return InteractionSet(tuple(records), split)


def load_interactions(path: str | Path, split: str = "train", catalog=None) -> InteractionSet:
    """Read an interactions TSV; ``catalog`` is anything supporting ``in`` over item ids."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"interactions file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        return parse_interactions(fh, split, catalog, source=str(path))


def save_interactions(interactions: InteractionSet, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in interactions.records:
            fh.write(f"{r.user_id}\t{','.join(r.history)}\t{r.target}\n")


def estimate_priors(catalog: Catalog, train: InteractionSet, smoothing: str = "laplace", epsilon: float = 1e-6) -> Catalog:
    """Empirical item priors from training-target counts.

    ``laplace``: (count + 1) / (N + |I|). ``floor``: max(count / N, epsilon), renormalized.
    """
    if train.split != "train":
        raise DataError(f"priors must come from the train split, got {train.split!r}")
    counts = Counter(train.targets())
    unknown = [t for t in counts if t not in catalog]
    if unknown:
        raise DataError(f"training target {unknown[0]!r} not in catalog")
    n_total = sum(counts.values())
    n_items = len(catalog)
    if smoothing == "laplace":
        raw = [(counts[it.item_id] + 1) / (n_total + n_items) for it in catalog.items]
    elif smoothing == "floor":
        if n_total == 0:
            raise DataError("floor smoothing needs at least one training record")
        if not epsilon > 0:
            raise ConfigError("floor epsilon must be positive")
        raw = [max(counts[it.item_id] / n_total, epsilon) for it in catalog.items]
    else:
        raise ConfigError(f"unknown smoothing {smoothing!r}")
    z = math.fsum(raw)
    items = tuple(
        replace(it, train_count=counts[it.item_id], prior=r / z) for it, r in zip(catalog.items, raw)
    )
    return Catalog(items, catalog.vocab, catalog.tokenizer_spec)


def with_priors(catalog: Catalog, priors: dict[str, float]) -> Catalog:
    """Replace priors wholesale (normalized here); mostly for tests and synthetic setups."""
    z = math.fsum(priors[it.item_id] for it in catalog.items)
    items = tuple(replace(it, prior=priors[it.item_id] / z) for it in catalog.items)
    return Catalog(items, catalog.vocab, catalog.tokenizer_spec)

