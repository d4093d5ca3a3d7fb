"""Run configuration and the beta/alpha sweep: tune beta at alpha=0, then sweep alpha at the chosen beta."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .catalog import TokenizerSpec, estimate_priors, load_catalog, load_interactions
from .decoder import DEFAULT_ALPHA_GRID, BeamConfig, decode_batch, save_decoded
from .errors import ConfigError, StageError
from .evaluation import diversity, entropy_gap, hr_ndcg
from .scorer import ScorerSpec, build_scorer
from .simgen import simulate
from .trainer import TabularLM, TrainConfig, loss_split_report, train
from .trie import PrefixTrie, build_trie
from .weights import DEFAULT_BETA_GRID, WeightScheme

log = logging.getLogger(__name__)

METRICS = ("hr5", "hr10", "ndcg5", "ndcg10", "fwr", "ise", "entropy_gap_mean")
SUMMARY_COLUMNS = ("beta", "alpha") + METRICS + ("seed",)

# a tabular model, personalized by last-item co-occurrence, seen through the decoding-bias model
DEFAULT_SCORER = {"kind": "biased", "gamma": 2.0,
                  "base": {"kind": "personalized", "lam": 0.5, "base": {"kind": "tabular"}}}


@dataclass
class RunConfig:
    # data: either a simulator preset or explicit files
    preset: str | None = None
    data_seed: int | None = None
    catalog: str | None = None
    catalog_format: str = "jsonl"
    train: str | None = None
    valid: str | None = None
    test: str | None = None
    trie: str | None = None
    out_dir: str = "ab_run"
    tokenizer: str = "whitespace"
    vocab: str | None = None
    log_base: str = "natural"
    smoothing: str = "laplace"
    # tuning
    scheme: str = "binary"
    beta: float = 1.0
    epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 5.0
    support: str = "vocab"
    # decoding (the sweep always decodes in igd mode, where alpha=0 is standard beam search)
    width: int = 10
    top_k: int = 10
    alpha: float = 0.0
    mode: str = "standard"
    scorer: dict = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_SCORER)))
    # sweep
    beta_grid: tuple[float, ...] = DEFAULT_BETA_GRID
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    select_metric: str = "hr10"
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        self.beta_grid = tuple(float(b) for b in self.beta_grid)
        self.alpha_grid = tuple(float(a) for a in self.alpha_grid)
        if not self.beta_grid or not self.alpha_grid:
            raise ConfigError("beta_grid and alpha_grid must be non-empty")
        for b in self.beta_grid:
            if not 0.0 <= b <= 1.0:
                raise ConfigError(f"beta grid value {b} outside [0, 1]")
        for a in self.alpha_grid:
            if not 0.0 <= a <= 1.0:
                raise ConfigError(f"alpha grid value {a} outside [0, 1]")
        if self.select_metric not in METRICS[:4]:
            raise ConfigError(f"select_metric must be one of {METRICS[:4]}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if self.preset is None and not (self.catalog and self.train and self.valid and self.test):
            raise ConfigError("need either a preset or catalog, train, valid and test paths")
        ScorerSpec.from_dict(self.scorer)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad config JSON in {path}: {exc}") from None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta_grid"] = list(self.beta_grid)
        d["alpha_grid"] = list(self.alpha_grid)
        return d


@dataclass
class RunData:
    trie: PrefixTrie
    train: object
    valid: object
    test: object


def load_run_data(cfg: RunConfig) -> RunData:
    """Materialize the catalog, splits and trie; priors come from training targets."""
    if cfg.preset is not None:
        catalog, (tr, va, te) = simulate(cfg.preset, cfg.data_seed)
    else:
        spec = TokenizerSpec(cfg.tokenizer, cfg.vocab)
        catalog = load_catalog(cfg.catalog, cfg.catalog_format, spec)
        tr = load_interactions(cfg.train, "train", catalog)
        va = load_interactions(cfg.valid, "valid", catalog)
        te = load_interactions(cfg.test, "test", catalog)
    catalog = estimate_priors(catalog, tr, cfg.smoothing)
    if cfg.trie is not None:
        trie = PrefixTrie.load(cfg.trie, catalog)
        if trie.log_base != cfg.log_base:
            trie = trie.rebased(cfg.log_base)
    else:
        trie = build_trie(catalog, cfg.log_base)
    return RunData(trie, tr, va, te)


def cell_metrics(lists, records, trie: PrefixTrie, top_k: int = 10) -> dict[str, float]:
    truths = records.targets()
    m = hr_ndcg(lists, truths, (5, 10))
    d = diversity(lists, trie, top_k)
    g = entropy_gap(lists, truths, trie, top_n=top_k)
    return {"hr5": m.hr[5], "hr10": m.hr[10], "ndcg5": m.ndcg[5], "ndcg10": m.ndcg[10],
            "fwr": d.fwr, "ise": d.ise, "entropy_gap_mean": g.mean_gap}


@dataclass
class CellResult:
    beta: float
    alpha: float
    valid: dict[str, float]
    test: dict[str, float]

    def row(self, seed: int) -> list:
        return [self.beta, self.alpha] + [self.test[m] for m in METRICS] + [seed]

    def valid_row(self, seed: int) -> list:
        return [self.beta, self.alpha] + [self.valid[m] for m in METRICS] + [seed]


def _tag(beta: float, alpha: float | None = None) -> str:
    return f"beta={beta!r}" if alpha is None else f"beta={beta!r}_alpha={alpha!r}"


def train_model(cfg: RunConfig, data: RunData, beta: float):
    scheme = WeightScheme.for_trie(data.trie, cfg.scheme, beta)
    model = TabularLM(data.trie, cfg.learning_rate, cfg.seed, cfg.support)
    tcfg = TrainConfig(cfg.epochs, cfg.batch_size, scheme, cfg.seed)
    return train(model, data.train, data.trie, tcfg)


def evaluate_cell(cfg: RunConfig, data: RunData, model: TabularLM, beta: float, alpha: float,
                  out: Path | None = None) -> CellResult:
    scorer = build_scorer(ScorerSpec.from_dict(cfg.scorer), data.trie, data.train, model)
    beam = BeamConfig(cfg.width, cfg.top_k, alpha, "igd")
    results = {}
    for name, records in (("valid", data.valid), ("test", data.test)):
        lists = decode_batch(scorer, data.trie, records, beam)
        results[name] = cell_metrics(lists, records, data.trie, cfg.top_k)
        if out is not None:
            save_decoded(lists, records, out / f"{name}.jsonl")
    if out is not None:
        (out / "metrics.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return CellResult(beta, alpha, results["valid"], results["test"])


# worker-side state, set once per process
_STATE: dict = {}


def _init_worker(cfg: RunConfig, data: RunData) -> None:
    _STATE["cfg"] = cfg
    _STATE["data"] = data


def _beta_cell(beta: float) -> CellResult:
    cfg, data = _STATE["cfg"], _STATE["data"]
    out = Path(cfg.out_dir)
    model, trace = train_model(cfg, data, beta)
    model.save(out / "models" / f"{_tag(beta)}.json")
    loss_split_report(trace, out / "models" / f"{_tag(beta)}.trace.csv")
    cell_dir = out / "cells" / _tag(beta, 0.0)
    cell_dir.mkdir(parents=True, exist_ok=True)
    return evaluate_cell(cfg, data, model, beta, 0.0, cell_dir)


def _alpha_cell(args: tuple[float, float]) -> CellResult:
    beta, alpha = args
    cfg, data = _STATE["cfg"], _STATE["data"]
    out = Path(cfg.out_dir)
    model = TabularLM.load(out / "models" / f"{_tag(beta)}.json", data.trie)
    cell_dir = out / "cells" / _tag(beta, alpha)
    cell_dir.mkdir(parents=True, exist_ok=True)
    return evaluate_cell(cfg, data, model, beta, alpha, cell_dir)


def _run_map(cfg: RunConfig, data: RunData, fn, args: list) -> list:
    if cfg.jobs == 1 or len(args) == 1:
        _init_worker(cfg, data)
        return [fn(a) for a in args]
    with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_init_worker, initargs=(cfg, data)) as pool:
        return list(pool.map(fn, args))


def _select(cells: list[CellResult], metric: str) -> CellResult:
    """Highest validation metric; ties go to the earliest grid position."""
    best = cells[0]
    for c in cells[1:]:
        if c.valid[metric] > best.valid[metric]:
            best = c
    return best


def _write_csv(path: Path, rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def _cell_dict(c: CellResult | None) -> dict | None:
    return None if c is None else {"beta": c.beta, "alpha": c.alpha, "valid": c.valid, "test": c.test}


def ab_run(cfg: RunConfig, data: RunData | None = None) -> dict:
    """Sweep beta at alpha=0, pick beta on validation, sweep alpha at that beta.

    Writes ``summary.csv`` (test metrics), ``validation.csv``, ``summary.json`` and per-cell
    artifacts under ``cfg.out_dir``.  A failing stage leaves ``summary.json`` marked incomplete.
    """
    out = Path(cfg.out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps({"complete": False, "stage": "running"}) + "\n", encoding="utf-8")
    stage = "load"
    try:
        if data is None:
            data = load_run_data(cfg)
        stage = "beta-sweep"
        beta_cells = _run_map(cfg, data, _beta_cell, list(cfg.beta_grid))
        best_beta = _select(beta_cells, cfg.select_metric)
        log.info("selected beta=%r (validation %s=%.4f)", best_beta.beta, cfg.select_metric,
                 best_beta.valid[cfg.select_metric])
        stage = "alpha-sweep"
        todo = [(best_beta.beta, a) for a in cfg.alpha_grid if a != 0.0]
        alpha_cells = _run_map(cfg, data, _alpha_cell, todo) if todo else []
        by_alpha = {0.0: best_beta, **{c.alpha: c for c in alpha_cells}}
        sweep = [by_alpha[a] for a in cfg.alpha_grid if a in by_alpha]
        best = _select(sweep, cfg.select_metric)
        stage = "summary"
        cells = beta_cells + alpha_cells
        _write_csv(out / "summary.csv", [c.row(cfg.seed) for c in cells])
        _write_csv(out / "validation.csv", [c.valid_row(cfg.seed) for c in cells])
        baseline = next((c for c in beta_cells if c.beta == 1.0), None)
        summary = {
            "complete": True,
            "select_metric": cfg.select_metric,
            "selected_beta": best_beta.beta,
            "selected_alpha": best.alpha,
            "best": _cell_dict(best),
            "baseline": _cell_dict(baseline),
            "config": cfg.to_dict(),
        }
    except Exception as exc:
        summary_path.write_text(json.dumps({"complete": False, "stage": stage, "error": str(exc)}, indent=2) + "\n",
                                encoding="utf-8")
        raise StageError(stage, exc) from exc
    summary_path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return summary
