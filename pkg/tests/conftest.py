import math
import random

import pytest

from igd.catalog import build_catalog, with_priors
from igd.trie import build_trie

import oracles

TOY_ROWS = [("a", "Super Mario"), ("b", "Super Man"), ("c", "Zelda")]


@pytest.fixture
def toy_catalog():
    return build_catalog(TOY_ROWS)


@pytest.fixture
def toy_trie(toy_catalog):
    return build_trie(toy_catalog)


def random_setup(seed: int, max_items: int = 50, n_words: int = 4, max_len: int = 4):
    """Random catalog with random priors, its trie and the raw sequences for the oracles."""
    rng = random.Random(seed)
    rows = oracles.random_rows(rng, rng.randint(1, max_items), n_words, max_len)
    catalog = build_catalog(rows)
    catalog = with_priors(catalog, oracles.random_priors(rng, catalog.item_ids))
    trie = build_trie(catalog)
    seqs = {it.item_id: it.tokens for it in catalog.items}
    return catalog, trie, seqs, catalog.priors()


LN3 = math.log(3)


# -- acceptance reporting ------------------------------------------------------

_criteria: list[tuple[int, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        _criteria.append((marker.args[0], status, item.name))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    by_n: dict[int, list[tuple[str, str]]] = {}
    for n, status, name in _criteria:
        by_n.setdefault(n, []).append((status, name))
    for n in sorted(by_n):
        results = by_n[n]
        failed = [name for status, name in results if status != "PASS"]
        line = f"criterion {n}: {'FAIL' if failed else 'PASS'} ({len(results) - len(failed)}/{len(results)} checks)"
        if failed:
            line += " failing: " + ", ".join(failed)
        terminalreporter.write_line(line)
