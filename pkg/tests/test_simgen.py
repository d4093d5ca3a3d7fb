import math
from collections import defaultdict
from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st

from igd.catalog import save_catalog
from igd.errors import ConfigError, DataError
from igd.simgen import (
    PRESETS,
    CatalogGenConfig,
    InteractionGenConfig,
    gen_catalog,
    gen_interactions,
    simulate,
    split_sizes,
    target_chi2,
)
from igd.trie import build_trie, zero_ig_stats

import oracles


def brute_zero_fraction(catalog):
    seqs = {it.item_id: it.tokens for it in catalog.items}
    cands = oracles.candidate_sets(seqs)
    total = zero = 0
    for s in seqs.values():
        for t in range(len(s)):
            total += 1
            zero += oracles.brute_zero_ig(cands, s[:t], s[t])
    return zero / total


def test_same_config_byte_identical(tmp_path):
    cfg = CatalogGenConfig(n_items=60, n_franchises=6, filler_rate=0.4, seed=3)
    save_catalog(gen_catalog(cfg), tmp_path / "a.jsonl")
    save_catalog(gen_catalog(cfg), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_four_items_two_franchises():
    cat = gen_catalog(CatalogGenConfig(n_items=4, n_franchises=2, shared_prefix_len=(1, 2), vocab_size=100, seed=5))
    groups = defaultdict(list)
    for it in cat.items:
        groups[it.group].append(it)
    assert sorted(len(g) for g in groups.values()) == [2, 2]
    for members in groups.values():
        a, b = (m.title.split() for m in members)
        assert a[:-1] == b[:-1] and a[-1] != b[-1]
    trie = build_trie(cat)
    nodes = [trie.nodes[n] for it in cat.items for n in trie.path_nodes(it.item_id)]
    assert sum(n.zero_ig for n in nodes) / len(nodes) == pytest.approx(brute_zero_fraction(cat), abs=1e-15)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**4))
def test_fillers_raise_zero_ig_fraction(seed):
    base = CatalogGenConfig(n_items=40, n_franchises=5, filler_rate=0.0, vocab_size=500, seed=seed)
    plain = brute_zero_fraction(gen_catalog(base))
    filled = brute_zero_fraction(gen_catalog(replace(base, filler_rate=1.0)))
    assert filled > plain


def test_every_filler_edge_is_zero_ig():
    cfg = CatalogGenConfig(n_items=80, n_franchises=8, filler_rate=0.7, vocab_size=400, seed=9)
    cat = gen_catalog(cfg)
    trie = build_trie(cat)
    first_filler = cfg.vocab_size - max(1, min(20, cfg.vocab_size // 10))
    n = 0
    for it in cat.items:
        for pos, w in enumerate(it.title.split()):
            if w.startswith("w") and int(w[1:]) >= first_filler:
                assert trie.nodes[trie.locate(it.tokens[:pos + 1])].zero_ig
                n += 1
    assert n > 0


def test_titles_distinct_and_infeasible_rejected():
    cat = gen_catalog(CatalogGenConfig(n_items=200, n_franchises=3, seed=1))
    assert len({it.title for it in cat.items}) == 200
    with pytest.raises(DataError, match="infeasible"):
        gen_catalog(CatalogGenConfig(n_items=50, n_franchises=1, vocab_size=20))


def test_bad_configs():
    with pytest.raises(ConfigError):
        CatalogGenConfig(n_items=2, n_franchises=3)
    with pytest.raises(ConfigError):
        InteractionGenConfig(zipf_s=-1)
    with pytest.raises(ConfigError):
        simulate("nope")


def test_ten_users_ten_records():
    cat = gen_catalog(CatalogGenConfig(n_items=20, n_franchises=4, seed=2))
    train, valid, test = gen_interactions(InteractionGenConfig(n_users=10, history_len=(10, 10), seed=2), cat)
    assert (len(train), len(valid), len(test)) == (80, 10, 10)
    assert split_sizes(100) == (80, 10, 10)


def test_interactions_deterministic_and_valid():
    cat = gen_catalog(CatalogGenConfig(n_items=30, n_franchises=3, seed=4))
    cfg = InteractionGenConfig(n_users=25, seed=4)
    first = gen_interactions(cfg, cat)
    assert first == gen_interactions(cfg, cat)
    known = set(cat.item_ids)
    for split, name in zip(first, ("train", "valid", "test")):
        assert split.split == name
        for r in split.records:
            assert r.target in known and set(r.history) <= known
    zero_ig_stats(build_trie(cat), first[0])


def test_uniform_popularity_chi2():
    cat = gen_catalog(CatalogGenConfig(n_items=50, n_franchises=5, seed=6))
    splits = gen_interactions(InteractionGenConfig(n_users=2000, history_len=(10, 10), zipf_s=0.0,
                                                   cluster_affinity=0.5, seed=6), cat)
    records = [r for s in splits for r in s.records]
    chi2, dof = target_chi2(records, cat)
    # about five standard deviations above the mean of a chi-squared variable
    assert chi2 < dof + 5 * math.sqrt(2 * dof)


def test_skew_concentrates_targets():
    cat = gen_catalog(CatalogGenConfig(n_items=50, n_franchises=5, seed=6))
    cfg = InteractionGenConfig(n_users=500, history_len=(10, 10), zipf_s=1.5, seed=6)
    records = [r for s in gen_interactions(cfg, cat) for r in s.records]
    chi2, dof = target_chi2(records, cat)
    assert chi2 > dof + 5 * math.sqrt(2 * dof)


def test_presets_and_seed_override():
    cat, (train, valid, test) = simulate("fig1")
    assert len(cat) == PRESETS["fig1"]["catalog"].n_items
    other, _ = simulate("fig1", seed=2)
    assert [it.title for it in other.items] != [it.title for it in cat.items]
    assert len(train) > len(valid) > 0 and len(test) > 0
