"""Seeded synthetic catalogs with franchise prefixes and filler tokens, and Zipf-skewed interactions.

Titles are built as ``[article] franchise-words decisive-word [fillers]``:

* franchises share a leading word run (optionally behind a common article such as
  "The"), so early tokens are shared by many items and carry little information;
* the decisive word distinguishes an item within its franchise;
* filler words follow the decisive word.  Their prefix already identifies a single
  item, so every filler edge is a sole continuation and therefore zero-IG.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .catalog import Catalog, Interaction, InteractionSet, build_catalog
from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

ARTICLE = "The"


@dataclass(frozen=True)
class CatalogGenConfig:
    n_items: int = 100
    n_franchises: int = 10
    shared_prefix_len: tuple[int, int] = (1, 3)
    filler_rate: float = 0.0
    vocab_size: int = 1000
    seed: int = 0
    filler_slots: int = 2
    article_rate: float = 0.0
    franchise_skew: float = 0.0

    def __post_init__(self):
        lo, hi = self.shared_prefix_len
        if self.n_items < 1 or self.n_franchises < 1:
            raise ConfigError("n_items and n_franchises must be positive")
        if self.n_franchises > self.n_items:
            raise ConfigError("n_franchises cannot exceed n_items")
        if not 1 <= lo <= hi:
            raise ConfigError("shared_prefix_len must satisfy 1 <= min <= max")
        if not 0.0 <= self.filler_rate <= 1.0 or not 0.0 <= self.article_rate <= 1.0:
            raise ConfigError("filler_rate and article_rate must lie in [0, 1]")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size too small")


def _word(i: int) -> str:
    return f"w{i}"


def _franchise_sizes(cfg: CatalogGenConfig, rng: np.random.Generator) -> list[int]:
    if cfg.franchise_skew == 0:
        base, extra = divmod(cfg.n_items, cfg.n_franchises)
        return [base + (1 if f < extra else 0) for f in range(cfg.n_franchises)]
    weights = 1.0 / np.arange(1, cfg.n_franchises + 1) ** cfg.franchise_skew
    sizes = np.ones(cfg.n_franchises, dtype=int)
    rest = rng.multinomial(cfg.n_items - cfg.n_franchises, weights / weights.sum())
    return (sizes + rest).tolist()


def gen_catalog(cfg: CatalogGenConfig) -> Catalog:
    """Deterministic for a given config.  Filler choices use their own random stream so
    two configs that differ only in ``filler_rate`` share the rest of the structure."""
    rng = np.random.default_rng([cfg.seed, 0])
    filler_rng = np.random.default_rng([cfg.seed, 1])
    # word ids: franchise words and decisive words come from disjoint halves, fillers from a small pool
    n_filler_pool = max(1, min(20, cfg.vocab_size // 10))
    content = cfg.vocab_size - n_filler_pool
    half = content // 2
    sizes = _franchise_sizes(cfg, rng)
    if max(sizes) > content - half:
        raise DataError(f"infeasible: a franchise of {max(sizes)} items needs more decisive words than vocab_size allows")

    prefixes: list[tuple[str, ...]] = []
    seen = set()
    lo, hi = cfg.shared_prefix_len
    for f in range(cfg.n_franchises):
        for _ in range(1000):
            length = int(rng.integers(lo, hi + 1))
            words = tuple(_word(int(w)) for w in rng.integers(0, half, size=length))
            if rng.random() < cfg.article_rate:
                words = (ARTICLE,) + words
            if words not in seen:
                break
        else:
            raise DataError("infeasible: cannot draw distinct franchise prefixes; raise vocab_size")
        seen.add(words)
        prefixes.append(words)

    rows = []
    titles = set()
    idx = 0
    for f, size in enumerate(sizes):
        decisive = rng.choice(np.arange(half, content), size=size, replace=False)
        for d in decisive:
            words = list(prefixes[f]) + [_word(int(d))]
            for _ in range(cfg.filler_slots):
                use = filler_rng.random() < cfg.filler_rate
                word = _word(content + int(filler_rng.integers(0, n_filler_pool)))
                if use:
                    words.append(word)
            title = " ".join(words)
            if title in titles:
                raise DataError(f"infeasible: duplicate title {title!r}")
            titles.add(title)
            rows.append((f"i{idx:05d}", title, f"f{f:04d}"))
            idx += 1
    return build_catalog(rows)


@dataclass(frozen=True)
class InteractionGenConfig:
    n_users: int = 100
    history_len: tuple[int, int] = (5, 10)
    zipf_s: float = 1.0
    cluster_affinity: float = 0.5
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.history_len
        if self.n_users < 1 or not 1 <= lo <= hi:
            raise ConfigError("n_users and history_len must be positive")
        if self.zipf_s < 0:
            raise ConfigError("zipf_s must be non-negative")
        if not 0.0 <= self.cluster_affinity <= 1.0:
            raise ConfigError("cluster_affinity must lie in [0, 1]")


def zipf_weights(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1, dtype=float) ** s
    return w / w.sum()


def split_sizes(n: int) -> tuple[int, int, int]:
    """8:1:1 record split sizes (valid and test get the rounded tenths)."""
    n_valid = int(round(n * 0.1))
    n_test = int(round(n * 0.1))
    return n - n_valid - n_test, n_valid, n_test


def gen_interactions(cfg: InteractionGenConfig, catalog: Catalog) -> tuple[InteractionSet, InteractionSet, InteractionSet]:
    """Users draw item sequences; each position becomes a record whose history is everything before it.

    Records are ordered by a synthetic timestamp and split 8:1:1 (train, valid, test).
    """
    if len(catalog) == 0:
        raise DataError("empty catalog")
    rng = np.random.default_rng(cfg.seed)
    ids = catalog.item_ids
    n = len(ids)
    # popularity rank is a random permutation of the catalog
    pop = np.empty(n)
    pop[rng.permutation(n)] = zipf_weights(n, cfg.zipf_s)
    groups = [it.group if it.group is not None else str(it.tokens[0]) for it in catalog.items]
    members: dict[str, np.ndarray] = {}
    for g in sorted(set(groups)):
        members[g] = np.array([i for i, gi in enumerate(groups) if gi == g])
    group_names = sorted(members)
    group_pop = np.array([pop[members[g]].sum() for g in group_names])

    timed = []
    lo, hi = cfg.history_len
    for u in range(cfg.n_users):
        user = f"u{u:05d}"
        home = group_names[rng.choice(len(group_names), p=group_pop / group_pop.sum())]
        idx_home = members[home]
        p_home = pop[idx_home] / pop[idx_home].sum()
        length = int(rng.integers(lo, hi + 1))
        seq = []
        for _ in range(length):
            if rng.random() < cfg.cluster_affinity:
                seq.append(int(idx_home[rng.choice(len(idx_home), p=p_home)]))
            else:
                seq.append(int(rng.choice(n, p=pop)))
        times = np.sort(rng.random(length))
        for pos in range(length):
            hist = tuple(ids[i] for i in seq[:pos])
            timed.append((float(times[pos]), user, pos, Interaction(user, hist, ids[seq[pos]])))
    timed.sort(key=lambda r: (r[0], r[1], r[2]))
    records = [r[3] for r in timed]
    n_train, n_valid, _ = split_sizes(len(records))
    train = InteractionSet(tuple(records[:n_train]), "train")
    valid = InteractionSet(tuple(records[n_train:n_train + n_valid]), "valid")
    test = InteractionSet(tuple(records[n_train + n_valid:]), "test")
    if cfg.zipf_s == 0:
        chi2, dof = target_chi2(records, catalog)
        log.info("zipf_s=0 uniformity check: chi2=%.1f over %d dof", chi2, dof)
    return train, valid, test


def target_chi2(records: InteractionSet | list, catalog: Catalog) -> tuple[float, int]:
    """Pearson chi-squared of target counts against a uniform distribution, with degrees of freedom."""
    recs = records.records if isinstance(records, InteractionSet) else records
    freq: dict[str, int] = {}
    for r in recs:
        freq[r.target] = freq.get(r.target, 0) + 1
    obs = np.array([freq.get(i, 0) for i in catalog.item_ids], dtype=float)
    expected = obs.sum() / len(obs)
    return float(((obs - expected) ** 2 / expected).sum()), len(obs) - 1


PRESETS = {
    # the token taxonomy of a small game catalog: shared article, decisive franchise words, forced fillers
    "fig1": dict(
        catalog=CatalogGenConfig(n_items=12, n_franchises=4, shared_prefix_len=(2, 3), filler_rate=1.0,
                                 vocab_size=200, seed=1, filler_slots=1, article_rate=0.5),
        interactions=InteractionGenConfig(n_users=40, history_len=(5, 8), zipf_s=1.0, cluster_affinity=0.6, seed=1),
    ),
    "bench": dict(
        catalog=CatalogGenConfig(n_items=400, n_franchises=20, shared_prefix_len=(2, 4), filler_rate=0.5,
                                 vocab_size=3000, seed=7, filler_slots=2, article_rate=0.3),
        interactions=InteractionGenConfig(n_users=300, history_len=(8, 14), zipf_s=1.0, cluster_affinity=0.7, seed=7),
    ),
}


def simulate(preset: str = "bench", seed: int | None = None):
    """Catalog and (train, valid, test) for a named preset; ``seed`` overrides both generator seeds."""
    try:
        spec = PRESETS[preset]
    except KeyError:
        raise ConfigError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}") from None
    ccfg, icfg = spec["catalog"], spec["interactions"]
    if seed is not None:
        ccfg = replace(ccfg, seed=seed)
        icfg = replace(icfg, seed=seed)
    catalog = gen_catalog(ccfg)
    return catalog, gen_interactions(icfg, catalog)

