"""Stage-by-stage pipeline: split, judge, select, annotate, partition, emit, report.

Every stage reads its inputs from the output directory and writes its own
artifacts there, so a failed run can be resumed from the last good stage.
``run_pipeline`` runs all stages in a scratch directory and only moves the
files into place when every stage succeeded.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import shutil
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import (Split, load_features, load_graph, load_label_space, load_labels, load_split, load_texts,
                    make_few_shot_split, save_split)
from .influence import InfluenceSelector, SelectionShortfallWarning, load_selection, \
    save_selection
from .judge import propagate, read_probs, train_judge, write_probs
from .labeling import MISSING, PartitionResult, PredictionSet, build_report, co_label, save_report
from .llm import ReplayCache, fetch_llm_predictions, load_predictions, write_predictions
from .prompts import EmptyTextWarning, PromptTemplate

logger = logging.getLogger(__name__)

OUTPUTS = ("judge.json", "scores.csv", "selected.json", "partition.json", "report.json",
           "instruct.jsonl", "prefs.jsonl", "manifest.json")
INTERMEDIATES = ("split.json", "gnn_probs.csv", "llm_pred.jsonl")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class PipelineConfig:
    graph: str
    features: str
    labels: str
    label_space: str
    texts: str
    out_dir: str
    llm_pred: str | None = None
    endpoint: str | None = None
    replay: str | None = None
    shots: int = 3
    val_size: int | None = None
    seed: int = 0
    top_k: int = 1500
    tau: float = 0.7
    lam: float = 0.1
    hops: int = 2
    lr: float = 0.2
    weight_decay: float = 5e-4
    max_epochs: int = 200
    patience: int = 100
    subgraph_hops: int | None = None
    template: str = "generic"
    strict: bool = False
    max_in_flight: int = 4
    timeout: float = 30.0

    def validate(self) -> None:
        if (self.llm_pred is None) == (self.endpoint is None):
            raise ValueError("exactly one of llm_pred and endpoint must be given")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.shots < 1:
            raise ValueError("shots must be at least 1")

    def hash(self) -> str:
        """SHA-256 over every field except ``out_dir``."""
        d = dataclasses.asdict(self)
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_env(cls, **kwargs) -> "PipelineConfig":
        """Build a config, letting ``COLABEL_SEED`` override the seed."""
        env = os.environ.get("COLABEL_SEED")
        if env is not None and env.strip():
            kwargs["seed"] = int(env)
        return cls(**kwargs)


class _Context:
    """Lazily loaded inputs shared by the stages of one run."""

    def __init__(self, cfg: PipelineConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def graph(self):
        return self._get("graph", lambda: load_graph(self.cfg.graph))

    @property
    def label_space(self):
        return self._get("ls", lambda: load_label_space(self.cfg.label_space))

    @property
    def labels(self):
        return self._get("labels", lambda: load_labels(self.cfg.labels, self.label_space, self.graph.n_nodes))

    @property
    def features(self):
        return self._get("features", lambda: load_features(self.cfg.features, self.graph.n_nodes))

    @property
    def texts(self):
        return self._get("texts", lambda: load_texts(self.cfg.texts, self.graph.n_nodes))

    @property
    def split(self) -> Split:
        return self._get("split", lambda: load_split(self.out / "split.json"))

    @property
    def gnn(self) -> PredictionSet:
        def load():
            P = read_probs(self.out / "gnn_probs.csv", self.graph.n_nodes, len(self.label_space))
            return PredictionSet.from_probs(P)
        return self._get("gnn", load)

    @property
    def selected(self) -> list[int]:
        return self._get("selected", lambda: load_selection(self.out / "selected.json"))

    @property
    def template(self) -> PromptTemplate:
        return PromptTemplate.named(self.cfg.template)


def stage_split(ctx: _Context) -> None:
    labels = ctx.labels
    C = len(ctx.label_space)
    val_size = ctx.cfg.val_size
    if val_size is None:
        remaining = int(np.sum(labels >= 0)) - ctx.cfg.shots * C
        val_size = max(0, min(500, remaining // 5))
    split = make_few_shot_split(labels, ctx.cfg.shots, val_size, ctx.cfg.seed, n_classes=C)
    save_split(split, ctx.out / "split.json")


def stage_train_judge(ctx: _Context) -> None:
    cfg = ctx.cfg
    split = ctx.split
    split.validate(ctx.labels, len(ctx.label_space))
    smoothed = propagate(ctx.features, ctx.graph, cfg.hops)
    model = train_judge(smoothed, split, ctx.labels, len(ctx.label_space), seed=cfg.seed, hops=cfg.hops,
                        lr=cfg.lr, weight_decay=cfg.weight_decay, max_epochs=cfg.max_epochs,
                        patience=cfg.patience)
    model.save(ctx.out / "judge.json")
    write_probs(model.predict_proba(smoothed), ctx.out / "gnn_probs.csv")
    ctx._cache.pop("gnn", None)


def stage_select(ctx: _Context) -> None:
    selector = InfluenceSelector(top_k=ctx.cfg.top_k, max_hops=ctx.cfg.subgraph_hops)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SelectionShortfallWarning)
        selector.fit(ctx.graph, ctx.split.train)
    for msg in selector.shortfall_:
        logger.warning(msg)
    selector.scores_.to_csv(ctx.out / "scores.csv")
    save_selection(selector.selected_, ctx.out / "selected.json")
    ctx._cache.pop("selected", None)


def _render(ctx: _Context, node: int) -> str:
    text = ctx.texts[node]
    if ctx.cfg.strict and (node in ctx.texts.missing or not text.strip()):
        raise ValueError(f"node {node} has no text (strict mode)")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyTextWarning)
        return ctx.template.render(text, ctx.label_space)


def stage_annotate(ctx: _Context) -> None:
    cfg = ctx.cfg
    n = ctx.graph.n_nodes
    target = ctx.out / "llm_pred.jsonl"
    if cfg.llm_pred is not None:
        raw = {}
        with open(cfg.llm_pred, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    raw[int(rec["node_id"])] = rec["label"]
                except (ValueError, KeyError, TypeError):
                    raise ValueError(f"{cfg.llm_pred}:{lineno}: expected {{\"node_id\": int, \"label\": str}}") \
                        from None
        write_predictions(raw, target)
        return
    replay = Path(cfg.replay) if cfg.replay else ctx.out / "llm_cache.jsonl"
    prompts = [(v, _render(ctx, v)) for v in sorted(ctx.selected)]
    result = fetch_llm_predictions(cfg.endpoint, prompts, ctx.label_space, n, max_in_flight=cfg.max_in_flight,
                                   timeout=cfg.timeout, cache=ReplayCache(replay))
    write_predictions(result.raw, target)


def stage_partition(ctx: _Context) -> None:
    llm = load_predictions(ctx.out / "llm_pred.jsonl", ctx.label_space, ctx.graph.n_nodes)
    missing = [v for v in ctx.selected if llm.labels[v] == MISSING]
    if missing:
        raise ValueError(f"missing predictions for {len(missing)} selected nodes: {sorted(missing)}")
    result = co_label(ctx.gnn, llm, ctx.selected, ctx.cfg.tau)
    result.save(ctx.out / "partition.json")


def _write_jsonl(records, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def stage_emit(ctx: _Context) -> None:
    part = PartitionResult.load(ctx.out / "partition.json")
    llm = load_predictions(ctx.out / "llm_pred.jsonl", ctx.label_space, ctx.graph.n_nodes)
    names = ctx.label_space.class_names
    gnn = ctx.gnn
    instruct = [{"prompt": _render(ctx, v), "completion": names[gnn.labels[v]]} for v in sorted(part.agreed)]
    prefs = []
    for v in sorted(part.disagreed_filtered):
        chosen, rejected = names[gnn.labels[v]], names[llm.labels[v]]
        if chosen == rejected:
            raise ValueError(f"node {v}: chosen equals rejected")
        prefs.append({"prompt": _render(ctx, v), "chosen": chosen, "rejected": rejected})
    _write_jsonl(instruct, ctx.out / "instruct.jsonl")
    _write_jsonl(prefs, ctx.out / "prefs.jsonl")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _line_count(path: Path) -> int:
    with open(path, "rb") as fh:
        return sum(1 for line in fh if line.strip())


def stage_report(ctx: _Context) -> None:
    cfg = ctx.cfg
    part = PartitionResult.load(ctx.out / "partition.json")
    llm = load_predictions(ctx.out / "llm_pred.jsonl", ctx.label_space, ctx.graph.n_nodes)
    notes = []
    if len(ctx.selected) < cfg.top_k:
        notes.append(f"selection shortfall: {len(ctx.selected)} of {cfg.top_k} requested nodes reachable")
    empty = [v for v in part.agreed + part.disagreed_filtered if not ctx.texts[v].strip()]
    if empty:
        notes.append(f"{len(empty)} emitted nodes have empty text")
    # accuracies need known labels on at least one selected node
    truth = np.asarray(ctx.labels) if np.any(np.asarray(ctx.labels)[ctx.selected] >= 0) else None
    report = build_report(part, ctx.gnn, llm, truth, n_classes=len(ctx.label_space), warnings=notes)
    report["judge"] = {"kind": "sgc", "hops": cfg.hops}
    save_report(report, ctx.out / "report.json")

    files = {}
    for name in INTERMEDIATES + OUTPUTS:
        p = ctx.out / name
        if name != "manifest.json" and p.exists():
            files[name] = {"sha256": _sha256(p), "lines": _line_count(p)}
    inputs = {}
    for key in ("graph", "features", "labels", "label_space", "texts", "llm_pred"):
        path = getattr(cfg, key)
        if path is not None:
            inputs[key] = _sha256(Path(path))
    manifest = {
        "config_hash": cfg.hash(),
        "config": {k: v for k, v in dataclasses.asdict(cfg).items() if k != "out_dir"},
        "seed": cfg.seed,
        "inputs": inputs,
        "counts": {
            "selected": len(ctx.selected),
            "agreed": len(part.agreed),
            "disagreed": len(part.disagreed),
            "disagreed_filtered": len(part.disagreed_filtered),
            "unparsed": len(part.unparsed),
            "instruct": _line_count(ctx.out / "instruct.jsonl"),
            "prefs": _line_count(ctx.out / "prefs.jsonl"),
        },
        "files": files,
    }
    (ctx.out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                           encoding="utf-8")


STAGES = {
    "split": stage_split,
    "train-judge": stage_train_judge,
    "select": stage_select,
    "annotate": stage_annotate,
    "partition": stage_partition,
    "emit": stage_emit,
    "report": stage_report,
}


def run_stage(name: str, cfg: PipelineConfig, out: Path | None = None, ctx: _Context | None = None) -> None:
    out = Path(out or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = ctx or _Context(cfg, out)
    try:
        STAGES[name](ctx)
    except PipelineError:
        raise
    except (ValueError, KeyError, IndexError, OSError, RuntimeError) as exc:
        raise PipelineError(name, str(exc)) from exc


def run_pipeline(cfg: PipelineConfig) -> Path:
    """Run every stage; on failure nothing is left in ``out_dir`` from this run."""
    try:
        cfg.validate()
    except ValueError as exc:
        raise PipelineError("config", str(exc)) from exc
    out = Path(cfg.out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{out.name}-", dir=out.parent))
    try:
        ctx = _Context(cfg, scratch)
        for name in STAGES:
            logger.info("stage %s", name)
            run_stage(name, cfg, scratch, ctx)
        out.mkdir(exist_ok=True)
        for p in sorted(scratch.iterdir()):
            os.replace(p, out / p.name)
    finally:
        shutil.rmtree(scratch, ignore_errors=True)
    return out
