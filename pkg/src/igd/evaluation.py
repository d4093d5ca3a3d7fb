"""Ranking metrics, entropy-gap curves, diversity, and IG-vs-probability diagnostics."""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .catalog import InteractionSet
from .decoder import RankedList, context_of
from .errors import DataError
from .scorer import Scorer
from .trie import PrefixTrie


@dataclass
class MetricReport:
    hr: dict[int, float]
    ndcg: dict[int, float]
    n_users: int

    def to_dict(self) -> dict:
        return {
            "hr": {str(k): v for k, v in sorted(self.hr.items())},
            "ndcg": {str(k): v for k, v in sorted(self.ndcg.items())},
            "n_users": self.n_users,
        }


def _items(entry) -> list[str]:
    return entry.items if isinstance(entry, RankedList) else list(entry)


def hr_ndcg(lists: Sequence, truths: Sequence[str], ks: Iterable[int] = (5, 10)) -> MetricReport:
    """All-ranking HR@K and NDCG@K with one relevant item per user."""
    if len(lists) != len(truths):
        raise DataError(f"{len(lists)} ranked lists but {len(truths)} ground truths")
    ks = sorted(set(ks))
    hits = {k: 0 for k in ks}
    gains = {k: [] for k in ks}
    for ranked, truth in zip(lists, truths):
        items = _items(ranked)
        rank = items.index(truth) + 1 if truth in items else None
        for k in ks:
            if rank is not None and rank <= k:
                hits[k] += 1
                gains[k].append(1.0 / math.log2(1 + rank))
    n = len(truths)
    hr = {k: hits[k] / n if n else 0.0 for k in ks}
    ndcg = {k: math.fsum(gains[k]) / n if n else 0.0 for k in ks}
    return MetricReport(hr, ndcg, n)


@dataclass
class EntropyGapCurve:
    steps: list[int]
    mean_pred_entropy: list[float]
    mean_gt_entropy: list[float]

    @property
    def gap(self) -> list[float]:
        return [p - g for p, g in zip(self.mean_pred_entropy, self.mean_gt_entropy)]

    @property
    def mean_gap(self) -> float:
        gaps = [g for g in self.gap if not math.isnan(g)]
        return math.fsum(gaps) / len(gaps) if gaps else float("nan")

    def to_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "mean_pred_entropy", "mean_gt_entropy", "gap"])
            for row in zip(self.steps, self.mean_pred_entropy, self.mean_gt_entropy, self.gap):
                w.writerow([row[0]] + [repr(x) for x in row[1:]])
        return path


def _prefix_entropies(trie: PrefixTrie, item: str, max_step: int, hold: bool) -> list[float | None]:
    path = trie.path_nodes(item)
    ent = [trie.nodes[n].entropy for n in path]
    if len(ent) >= max_step:
        return ent[:max_step]
    tail = ent[-1] if hold else None
    return ent + [tail] * (max_step - len(ent))


def entropy_gap(lists: Sequence, truths: Sequence[str], trie: PrefixTrie, max_step: int | None = None,
                top_n: int = 10, hold_leaf: bool = True) -> EntropyGapCurve:
    """Mean prefix entropy of predicted items minus that of ground truths at each step.

    Predictions contribute their top ``top_n`` items.  Items shorter than t keep their leaf
    entropy (``hold_leaf``) or drop out of the average.
    """
    if len(lists) != len(truths):
        raise DataError(f"{len(lists)} ranked lists but {len(truths)} ground truths")
    for t in truths:
        trie.leaf(t)
    if max_step is None:
        max_step = trie.depth
    pred_rows = []
    for ranked in lists:
        for item in _items(ranked)[:top_n]:
            pred_rows.append(_prefix_entropies(trie, item, max_step, hold_leaf))
    gt_rows = [_prefix_entropies(trie, t, max_step, hold_leaf) for t in truths]

    def column_mean(rows, t):
        vals = [r[t] for r in rows if r[t] is not None]
        return math.fsum(vals) / len(vals) if vals else float("nan")

    steps = list(range(1, max_step + 1))
    return EntropyGapCurve(steps, [column_mean(pred_rows, t) for t in range(max_step)],
                           [column_mean(gt_rows, t) for t in range(max_step)])


@dataclass
class DiversityReport:
    fwr: float
    ise: float
    per_list_fwr: list[float] = field(default_factory=list, repr=False)
    per_list_ise: list[float] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {"fwr": self.fwr, "ise": self.ise}


def score_entropy(scores: Sequence[float]) -> float:
    """Entropy (nats) of the softmax over a list's final scores."""
    s = np.asarray(scores, dtype=float)
    p = np.exp(s - s.max())
    p /= p.sum()
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def diversity(lists: Sequence[RankedList], trie: PrefixTrie, top_k: int = 10) -> DiversityReport:
    """First-word repetition rate and item score entropy, averaged over lists."""
    fwrs, ises = [], []
    for ranked in lists:
        entries = ranked.entries[:top_k]
        if not entries:
            raise DataError("cannot compute diversity of an empty ranked list")
        first = Counter(trie.first_token(item) for item, _ in entries)
        fwrs.append(max(first.values()) / len(entries))
        ises.append(score_entropy([s for _, s in entries]))
    if not fwrs:
        raise DataError("no ranked lists")
    return DiversityReport(math.fsum(fwrs) / len(fwrs), math.fsum(ises) / len(ises), fwrs, ises)


@dataclass
class IGLogitReport:
    mean_logp_zero_ig: float
    mean_logp_nonzero_ig: float
    rank_correlation_nonzero: float | None
    histogram_edges: list[float]
    histogram_zero: list[int]
    histogram_nonzero: list[int]
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "mean_logp_zero_ig": self.mean_logp_zero_ig,
            "mean_logp_nonzero_ig": self.mean_logp_nonzero_ig,
            "rank_correlation_nonzero": self.rank_correlation_nonzero,
            "histogram": {
                "edges": self.histogram_edges,
                "zero_ig": self.histogram_zero,
                "nonzero_ig": self.histogram_nonzero,
            },
            "n_samples": self.n_samples,
        }


def ig_logit_report(scorer: Scorer, trie: PrefixTrie, sample: InteractionSet, bins: int = 10) -> IGLogitReport:
    """Walk ground-truth paths recording (IG, log p) per step.

    The Spearman correlation over non-zero-IG steps is ``None`` when it is undefined
    (fewer than two such steps, or a constant IG or log p).
    """
    if len(sample) == 0:
        raise DataError("empty sample")
    ig_nz, lp_nz, lp_z = [], [], []
    for rec in sample.records:
        ctx = context_of(rec)
        for node in trie.path_nodes(rec.target):
            n = trie.nodes[node]
            lp = math.log(scorer.distribution(ctx, n.parent)[n.token])
            if n.zero_ig:
                lp_z.append(lp)
            else:
                ig_nz.append(n.ig)
                lp_nz.append(lp)
    corr = None
    if len(ig_nz) >= 2 and len(set(ig_nz)) > 1 and len(set(lp_nz)) > 1:
        corr = float(spearmanr(ig_nz, lp_nz).statistic)
    all_lp = lp_z + lp_nz
    lo = min(all_lp)
    edges = np.linspace(lo if lo < 0 else -1.0, 0.0, bins + 1)
    hz = np.histogram(lp_z, bins=edges)[0].tolist() if lp_z else [0] * bins
    hn = np.histogram(lp_nz, bins=edges)[0].tolist() if lp_nz else [0] * bins
    nan = float("nan")
    return IGLogitReport(
        math.fsum(lp_z) / len(lp_z) if lp_z else nan,
        math.fsum(lp_nz) / len(lp_nz) if lp_nz else nan,
        corr, edges.tolist(), hz, hn, len(all_lp),
    )


def save_metric_report(report: MetricReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
