import math

import pytest
from hypothesis import given, settings, strategies as st

from igd.catalog import Interaction, InteractionSet, build_catalog, with_priors
from igd.errors import DataError, PrefixError
from igd.simgen import PRESETS, gen_catalog
from igd.trie import (
    PrefixTrie,
    build_trie,
    entropy,
    global_ig_max,
    information_gain,
    valid_continuations,
    zero_ig_stats,
)

import oracles
from conftest import LN3, random_setup


def ids(catalog, *words):
    return tuple(catalog.vocab.id_of(w) for w in words)


class TestToyCatalog:
    def test_root_entropy(self, toy_trie):
        assert toy_trie.nodes[toy_trie.root].entropy == pytest.approx(LN3, abs=1e-12)
        assert entropy(toy_trie, ()) == pytest.approx(1.0986, abs=1e-4)

    def test_super_node(self, toy_catalog, toy_trie):
        node = toy_trie.locate(ids(toy_catalog, "Super"))
        assert toy_trie.nodes[node].entropy == pytest.approx(2 * LN3 / 3, abs=1e-12)
        assert toy_trie.nodes[node].n_items == 2

    def test_leaf_entropy(self, toy_catalog, toy_trie):
        prefix = ids(toy_catalog, "Zelda") + (toy_catalog.eos_id,)
        assert entropy(toy_trie, prefix) == pytest.approx(LN3 / 3, abs=1e-12)

    def test_invalid_step_reported(self, toy_catalog, toy_trie):
        prefix = ids(toy_catalog, "Zelda", "Mario")
        with pytest.raises(PrefixError) as exc:
            entropy(toy_trie, prefix)
        assert exc.value.step == 2

    def test_information_gain(self, toy_catalog, toy_trie):
        sup = information_gain(toy_trie, (), ids(toy_catalog, "Super")[0])
        zel = information_gain(toy_trie, (), ids(toy_catalog, "Zelda")[0])
        assert sup.value == pytest.approx(LN3 - 2 * LN3 / 3, abs=1e-12) and not sup.is_zero
        assert zel.value == pytest.approx(2 * LN3 / 3, abs=1e-12) and not zel.is_zero
        eos = information_gain(toy_trie, ids(toy_catalog, "Zelda"), toy_catalog.eos_id)
        assert eos.value == 0.0 and eos.is_zero

    def test_information_gain_rejects_invalid_token(self, toy_catalog, toy_trie):
        with pytest.raises(PrefixError):
            information_gain(toy_trie, (), ids(toy_catalog, "Mario")[0])

    def test_valid_continuations(self, toy_catalog, toy_trie):
        root = {c.token: c for c in valid_continuations(toy_trie, ())}
        sup, zel = ids(toy_catalog, "Super", "Zelda")
        assert set(root) == {sup, zel}
        assert root[sup].ig.value == pytest.approx(0.3662, abs=1e-4)
        assert root[sup].mass == pytest.approx(2 / 3)
        assert root[zel].ig.value == pytest.approx(0.7324, abs=1e-4)
        assert root[zel].mass == pytest.approx(1 / 3)
        under = valid_continuations(toy_trie, (sup,))
        assert {c.token for c in under} == set(ids(toy_catalog, "Mario", "Man"))
        assert all(c.mass == pytest.approx(1 / 3) for c in under)
        leaf = ids(toy_catalog, "Zelda") + (toy_catalog.eos_id,)
        assert valid_continuations(toy_trie, leaf) == []

    def test_global_ig_max(self, toy_trie):
        assert global_ig_max(toy_trie) == pytest.approx(2 * LN3 / 3, abs=1e-12)

    def test_stats_single_target(self, toy_trie):
        stats = zero_ig_stats(toy_trie, InteractionSet((Interaction("u", (), "c"),), "train"))
        assert (stats.total_token_instances, stats.zero_ig_instances) == (2, 1)
        assert stats.percent == 50.0
        assert stats.per_depth_histogram == {1: (1, 0), 2: (1, 1)}


def test_single_item_catalog():
    trie = build_trie(build_catalog([("x", "Only One Title")]))
    assert trie.nodes[0].entropy == 0.0
    stats = zero_ig_stats(trie, InteractionSet((Interaction("u", (), "x"),) * 3, "train"))
    assert stats.percent == 100.0
    with pytest.raises(DataError):
        global_ig_max(trie)


def test_two_disjoint_items_ig_max():
    # H(root) = 2 * (1/2) ln 2 = ln 2 and each child keeps (1/2) ln 2, so each first edge gains (1/2) ln 2
    trie = build_trie(build_catalog([("x", "A"), ("y", "B")]))
    assert global_ig_max(trie) == pytest.approx(math.log(2) / 2, abs=1e-12)
    for c in trie.children_of(trie.root):
        assert trie.nodes[c].ig == pytest.approx(math.log(2) / 2, abs=1e-12)


def test_unnormalized_priors_rejected(toy_catalog):
    from dataclasses import replace

    from igd.catalog import Catalog

    bad = Catalog(tuple(replace(it, prior=0.5) for it in toy_catalog.items), toy_catalog.vocab)
    with pytest.raises(DataError, match="sum"):
        build_trie(bad)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6))
    def test_against_candidate_set_oracle(self, seed):
        _, trie, seqs, priors = random_setup(seed, max_items=25)
        cands = oracles.candidate_sets(seqs)
        for prefix, tok in oracles.edges(seqs):
            node = trie.locate(prefix + (tok,))
            n = trie.nodes[node]
            assert n.ig >= 0
            assert n.zero_ig == oracles.brute_zero_ig(cands, prefix, tok)
            assert n.ig == pytest.approx(oracles.brute_ig(cands, priors, prefix, tok), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6))
    def test_mass_conservation_and_monotone_entropy(self, seed):
        _, trie, _, _ = random_setup(seed, max_items=25)
        assert trie.nodes[0].mass == pytest.approx(1.0, abs=1e-9)
        for n in trie.nodes:
            if n.children:
                kids = [trie.nodes[c] for c in n.children.values()]
                assert abs(n.mass - math.fsum(k.mass for k in kids)) <= 1e-9
                assert all(k.entropy <= n.entropy for k in kids)
        assert sum(1 for n in trie.nodes if n.is_leaf) == trie.n_items

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 10**6))
    def test_telescoping(self, seed):
        _, trie, _, priors = random_setup(seed, max_items=25)
        root = trie.nodes[0].entropy
        for item, p in priors.items():
            total = math.fsum(trie.nodes[n].ig for n in trie.path_nodes(item))
            assert abs(total - (root + p * math.log(p))) <= 1e-9


class TestSnapshot:
    def test_round_trip(self, tmp_path):
        catalog, trie, _, _ = random_setup(11, max_items=40)
        path = tmp_path / "t.json"
        trie.save(path)
        back = PrefixTrie.load(path, catalog)
        assert back.to_json() == trie.to_json()
        for a, b in zip(trie.nodes, back.nodes):
            assert (a.mass, a.entropy, a.ig, a.zero_ig, a.terminal_item, a.min_item, a.n_items) == \
                   (b.mass, b.entropy, b.ig, b.zero_ig, b.terminal_item, b.min_item, b.n_items)

    def test_catalog_mismatch(self, tmp_path, toy_trie):
        path = tmp_path / "t.json"
        toy_trie.save(path)
        other = build_catalog([("a", "Super Mario"), ("b", "Super Man"), ("c", "Zelda II")])
        with pytest.raises(DataError, match="catalog_hash"):
            PrefixTrie.load(path, other)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "t.json"
        path.write_text('{"header": {"format": "other", "version": 9}, "nodes": []}', encoding="utf-8")
        with pytest.raises(DataError):
            PrefixTrie.load(path)


def test_log_base_changes_scale_not_classification():
    catalog, trie, _, _ = random_setup(5, max_items=30)
    bits = build_trie(catalog, "base2")
    for a, b in zip(trie.nodes, bits.nodes):
        assert a.zero_ig == b.zero_ig
        assert b.ig == pytest.approx(a.ig / math.log(2), abs=1e-12)
    rebased = trie.rebased("2")
    for a, b in zip(bits.nodes, rebased.nodes):
        assert b.entropy == pytest.approx(a.entropy, abs=1e-12)


def test_fig1_fillers_are_zero_ig():
    cfg = PRESETS["fig1"]["catalog"]
    catalog = gen_catalog(cfg)
    trie = build_trie(catalog)
    n_pool = max(1, min(20, cfg.vocab_size // 10))
    first_filler = cfg.vocab_size - n_pool
    checked = 0
    for it in catalog.items:
        words = it.title.split()
        for pos, w in enumerate(words):
            if w.startswith("w") and int(w[1:]) >= first_filler:
                node = trie.locate(it.tokens[:pos + 1])
                assert trie.nodes[node].zero_ig
                checked += 1
    assert checked == len(catalog) * cfg.filler_slots


def test_priors_from_with_priors_feed_trie():
    cat = build_catalog([("a", "x y"), ("b", "x z")])
    trie = build_trie(with_priors(cat, {"a": 3.0, "b": 1.0}))
    assert trie.prior("a") == pytest.approx(0.75)
