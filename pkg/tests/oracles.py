"""Reference computations for the tests.

Everything here works from raw token sequences and priors by enumerating candidate
sets directly.  It deliberately avoids the package's trie and decoder so that
agreement between the two is evidence rather than tautology.
"""

from __future__ import annotations

import json
import math
import random
from collections import defaultdict

EOS = "<eos>"


def random_rows(rng: random.Random, n_items: int, n_words: int = 4, max_len: int = 4) -> list[tuple[str, str]]:
    """Distinct titles over a tiny alphabet, so prefixes are shared heavily."""
    words = [f"t{i}" for i in range(n_words)]
    titles: set[str] = set()
    while len(titles) < n_items:
        titles.add(" ".join(rng.choice(words) for _ in range(rng.randint(1, max_len))))
    return [(f"i{k:03d}", t) for k, t in enumerate(sorted(titles))]


def random_priors(rng: random.Random, ids: list[str]) -> dict[str, float]:
    raw = {i: rng.random() + 1e-3 for i in ids}
    z = math.fsum(raw.values())
    return {i: v / z for i, v in raw.items()}


def candidate_sets(seqs: dict[str, tuple]) -> dict[tuple, frozenset]:
    """prefix -> set of items whose sequence starts with it, for every prefix of every item."""
    acc: dict[tuple, set] = defaultdict(set)
    for item, seq in seqs.items():
        for k in range(len(seq) + 1):
            acc[tuple(seq[:k])].add(item)
    return {p: frozenset(s) for p, s in acc.items()}


def entropy_of(items, priors: dict[str, float]) -> float:
    return math.fsum(-priors[i] * math.log(priors[i]) for i in items)


def edges(seqs: dict[str, tuple]):
    """Every (prefix, token) pair that occurs in the catalog."""
    seen = set()
    for seq in seqs.values():
        for k in range(len(seq)):
            e = (tuple(seq[:k]), seq[k])
            if e not in seen:
                seen.add(e)
                yield e


def brute_zero_ig(cands: dict[tuple, frozenset], prefix: tuple, token) -> bool:
    return cands[prefix + (token,)] == cands[prefix]


def brute_ig(cands, priors, prefix: tuple, token) -> float:
    return entropy_of(cands[prefix], priors) - entropy_of(cands[prefix + (token,)], priors)


def recount_stats(catalog_path, train_path) -> dict:
    """Zero-IG token counts straight from the files: whitespace words plus an end marker."""
    seqs = {}
    with open(catalog_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                seqs[obj["item_id"]] = tuple(obj["title"].split()) + (EOS,)
    cands = candidate_sets(seqs)
    tokens = zero = n = 0
    with open(train_path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            target = line.rstrip("\n").split("\t")[2]
            n += 1
            seq = seqs[target]
            for k in range(len(seq)):
                tokens += 1
                zero += brute_zero_ig(cands, seq[:k], seq[k])
    return {"items": len(seqs), "interactions": n, "tokens": tokens, "zero_ig_tokens": zero,
            "zero_ig_percent": 100.0 * zero / tokens if tokens else 0.0}


def exhaustive_scores(dist_at, seqs: dict[str, tuple], priors: dict[str, float], alpha: float = 0.0,
                      igd: bool = False) -> dict[str, float]:
    """Score of every item with no pruning.

    ``dist_at(prefix)`` returns {token: prob}.  In IGD mode the step-t pool holds every
    expansion of every unfinished depth t-1 prefix, and each contribution is
    (1 - alpha * IG~) * log p with IG~ min-max scaled over that pool.
    """
    cands = candidate_sets(seqs)
    ent = {p: entropy_of(s, priors) for p, s in cands.items()}
    finished = {}
    frontier = {(): 0.0}
    while frontier:
        pool = []
        for prefix, score in frontier.items():
            for tok, p in dist_at(prefix).items():
                child = prefix + (tok,)
                pool.append((child, score, math.log(p), ent[prefix] - ent[child]))
        igs = [g for *_, g in pool]
        lo, hi = min(igs), max(igs)
        frontier = {}
        for child, score, lp, g in pool:
            w = 1.0
            if igd and hi > lo:
                w = 1.0 - alpha * (g - lo) / (hi - lo)
            s = score + w * lp
            done = [i for i in cands[child] if seqs[i] == child]
            if done:
                finished[done[0]] = s
            else:
                frontier[child] = s
    return finished


def central_difference(f, x, eps: float = 1e-6):
    """Numerical gradient of scalar ``f`` at the float list ``x``."""
    out = []
    for i in range(len(x)):
        hi = list(x)
        lo = list(x)
        hi[i] += eps
        lo[i] -= eps
        out.append((f(hi) - f(lo)) / (2 * eps))
    return out
