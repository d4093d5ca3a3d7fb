import csv
import json

import pytest

from igd.abrun import DEFAULT_SCORER, METRICS, SUMMARY_COLUMNS, RunConfig, ab_run, load_run_data
from igd.catalog import save_catalog, save_interactions
from igd.cli import main
from igd.decoder import BeamConfig, decode_batch
from igd.errors import ConfigError, StageError
from igd.evaluation import diversity, entropy_gap, hr_ndcg
from igd.scorer import ScorerSpec, build_scorer
from igd.simgen import simulate
from igd.trainer import TabularLM, TrainConfig, train
from igd.weights import WeightScheme


def small(tmp_path, name="ab", **kw):
    base = dict(preset="fig1", out_dir=str(tmp_path / name), beta_grid=(0.2, 1.0), alpha_grid=(0.0, 0.3))
    base.update(kw)
    return RunConfig(**base)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def test_degenerate_grid_equals_single_run(tmp_path):
    cfg = small(tmp_path, beta_grid=(1.0,), alpha_grid=(0.0,))
    summary = ab_run(cfg)
    assert summary["best"] == summary["baseline"]

    # the same cell assembled by hand from the library pieces
    catalog, (tr, va, te) = simulate("fig1")
    data = load_run_data(cfg)
    trie = data.trie
    model = TabularLM(trie, 5.0, 0, "vocab")
    train(model, tr, trie, TrainConfig(1, 32, WeightScheme.for_trie(trie, "binary", 1.0), 0))
    scorer = build_scorer(ScorerSpec.from_dict(DEFAULT_SCORER), trie, tr, model)
    lists = decode_batch(scorer, trie, te, BeamConfig(10, 10, 0.0, "standard"))
    truths = te.targets()
    m = hr_ndcg(lists, truths, (5, 10))
    expected = {"hr5": m.hr[5], "hr10": m.hr[10], "ndcg5": m.ndcg[5], "ndcg10": m.ndcg[10],
                "fwr": diversity(lists, trie).fwr, "ise": diversity(lists, trie).ise,
                "entropy_gap_mean": entropy_gap(lists, truths, trie).mean_gap}
    assert summary["best"]["test"] == expected


def test_outputs_and_selection(tmp_path):
    summary = ab_run(small(tmp_path))
    out = tmp_path / "ab"
    rows = read_rows(out / "summary.csv")
    assert tuple(rows[0]) == SUMMARY_COLUMNS
    # two beta cells plus one non-zero alpha cell
    assert len(rows) == 4
    valid = read_rows(out / "validation.csv")[1:]
    beta_rows = [r for r in valid if float(r[1]) == 0.0]
    best_beta = max(beta_rows, key=lambda r: float(r[3]))
    assert summary["selected_beta"] == float(best_beta[0])
    assert summary["complete"] is True
    for b in (0.2, 1.0):
        assert (out / "models" / f"beta={b!r}.json").exists()
    cell = out / "cells" / f"beta={summary['selected_beta']!r}_alpha=0.3"
    assert {p.name for p in cell.iterdir()} >= {"valid.jsonl", "test.jsonl", "metrics.json"}


def test_rerun_byte_identical(tmp_path):
    cfg = small(tmp_path)
    ab_run(cfg)
    first = {n: (tmp_path / "ab" / n).read_bytes() for n in ("summary.csv", "validation.csv", "summary.json")}
    ab_run(cfg)
    assert first == {n: (tmp_path / "ab" / n).read_bytes() for n in first}
    # a different output directory changes nothing but the recorded path
    ab_run(small(tmp_path, "b"))
    for name in ("summary.csv", "validation.csv"):
        assert (tmp_path / "b" / name).read_bytes() == first[name]


def test_jobs_do_not_change_results(tmp_path):
    ab_run(small(tmp_path, "one", jobs=1))
    ab_run(small(tmp_path, "two", jobs=2))
    assert (tmp_path / "one" / "summary.csv").read_bytes() == (tmp_path / "two" / "summary.csv").read_bytes()


def test_failure_marks_incomplete(tmp_path):
    cfg = small(tmp_path, scorer={"kind": "replay", "path": str(tmp_path / "missing.jsonl")})
    with pytest.raises(StageError) as exc:
        ab_run(cfg)
    assert exc.value.stage == "beta-sweep"
    marker = json.loads((tmp_path / "ab" / "summary.json").read_text())
    assert marker["complete"] is False and marker["stage"] == "beta-sweep"


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig()
    with pytest.raises(ConfigError):
        small(tmp_path, beta_grid=(1.5,))
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"preset": "fig1", "nonsense": 1})
    cfg = small(tmp_path)
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


def test_cell_matches_individual_cli_runs(tmp_path, capsys):
    data = tmp_path / "data"
    catalog, (tr, va, te) = simulate("fig1")
    data.mkdir()
    save_catalog(catalog, data / "catalog.jsonl")
    for name, split in (("train", tr), ("valid", va), ("test", te)):
        save_interactions(split, data / f"{name}.tsv")
    summary = ab_run(small(tmp_path, beta_grid=(0.2,), alpha_grid=(0.0, 0.3)))
    beta, alpha = summary["selected_beta"], 0.3

    run = lambda *a: main([str(x) for x in a])
    assert run("build-trie", "--catalog", data / "catalog.jsonl", "--train", data / "train.tsv",
               "--out", tmp_path / "trie.json") == 0
    assert run("train", "--trie", tmp_path / "trie.json", "--train", data / "train.tsv", "--beta", beta,
               "--out", tmp_path / "m.json") == 0
    spec = {"kind": "biased", "gamma": 2.0,
            "base": {"kind": "personalized", "lam": 0.5, "base": {"kind": "tabular", "path": str(tmp_path / "m.json")}}}
    assert run("decode", "--trie", tmp_path / "trie.json", "--test", data / "test.tsv", "--train", data / "train.tsv",
               "--scorer", json.dumps(spec), "--mode", "igd", "--alpha", alpha, "--out", tmp_path / "d.jsonl") == 0
    capsys.readouterr()
    assert run("eval", "--trie", tmp_path / "trie.json", "--test", data / "test.tsv",
               "--decoded", tmp_path / "d.jsonl") == 0
    rep = json.loads(capsys.readouterr().out)
    cell = json.loads((tmp_path / "ab" / "cells" / f"beta={beta!r}_alpha={alpha!r}" / "metrics.json").read_text())
    assert rep["hr"]["10"] == cell["test"]["hr10"]
    assert rep["ndcg"]["5"] == cell["test"]["ndcg5"]
    assert (tmp_path / "d.jsonl").read_bytes() == \
        (tmp_path / "ab" / "cells" / f"beta={beta!r}_alpha={alpha!r}" / "test.jsonl").read_bytes()


def test_metric_columns():
    assert METRICS == ("hr5", "hr10", "ndcg5", "ndcg10", "fwr", "ise", "entropy_gap_mean")
