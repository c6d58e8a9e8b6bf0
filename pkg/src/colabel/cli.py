"""Command-line entry point: ``colabel <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .pipeline import PipelineConfig, PipelineError

logger = logging.getLogger("colabel")


def _pipeline_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--graph", required=True, help="TSV edge list")
    p.add_argument("--features", required=True, help="CSV feature rows")
    p.add_argument("--labels", required=True, help="CSV node_id,class_name")
    p.add_argument("--label-space", required=True, help="JSON array of class names")
    p.add_argument("--texts", required=True, help="JSON lines {node_id, text}")
    p.add_argument("--out", required=True, help="output directory")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--llm-pred", help="JSON lines {node_id, label} from the text predictor")
    src.add_argument("--endpoint", help="HTTP endpoint answering {prompt} with {label}")
    p.add_argument("--replay", help="response cache for endpoint mode (default: OUT/llm_cache.jsonl)")
    p.add_argument("--shots", type=int, default=3)
    p.add_argument("--val-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=0, help="overridden by $COLABEL_SEED")
    p.add_argument("--top-k", type=int, default=1500)
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=100)
    p.add_argument("--subgraph-hops", type=int, default=None,
                   help="only consider candidates within this many hops of a labeled node")
    p.add_argument("--template", default="generic")
    p.add_argument("--strict", action="store_true", help="fail when an emitted node has no text")
    p.add_argument("--max-in-flight", type=int, default=4)
    p.add_argument("--timeout", type=float, default=30.0)
    return p


def _config(args) -> PipelineConfig:
    return PipelineConfig.from_env(
        graph=args.graph, features=args.features, labels=args.labels, label_space=args.label_space,
        texts=args.texts, out_dir=args.out, llm_pred=args.llm_pred, endpoint=args.endpoint,
        replay=args.replay, shots=args.shots, val_size=args.val_size, seed=args.seed, top_k=args.top_k,
        tau=args.tau, lam=args.lam, hops=args.hops, lr=args.lr, weight_decay=args.weight_decay,
        max_epochs=args.max_epochs, patience=args.patience, subgraph_hops=args.subgraph_hops,
        template=args.template, strict=args.strict, max_in_flight=args.max_in_flight, timeout=args.timeout,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="colabel", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _pipeline_parser()
    sub.add_parser("run", parents=[common], help="run every pipeline stage")
    for name in pipeline.STAGES:
        sub.add_parser(name, parents=[common], help=f"run only the {name} stage")

    sim = sub.add_parser("simulate", help="two-annotator Monte-Carlo and tau sweep")
    sim.add_argument("--n", type=int, default=200_000)
    sim.add_argument("--classes", type=int, default=7)
    sim.add_argument("--p-llm", type=float, default=0.8)
    sim.add_argument("--p-gnn", type=float, default=0.7)
    sim.add_argument("--tau", type=float, default=0.7)
    sim.add_argument("--taus", default="0,0.1,0.3,0.5,0.7,0.9")
    sim.add_argument("--hard-fraction", type=float, default=0.0)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True)

    vb = sub.add_parser("verify-bounds", help="oracle checks of both bounds")
    vb.add_argument("--graphs", type=int, default=100)
    vb.add_argument("--trees", type=int, default=50)
    vb.add_argument("--scan-n", type=int, default=100_000)
    vb.add_argument("--seed", type=int, default=0)
    vb.add_argument("--out", required=True, help="JSON report path")

    toy = sub.add_parser("make-toy", help="write a synthetic text-attributed graph")
    toy.add_argument("--out", required=True)
    toy.add_argument("--n", type=int, default=300)
    toy.add_argument("--seed", type=int, default=0)

    tt = sub.add_parser("train-text", help="train the bag-of-words model on emitted datasets")
    tt.add_argument("--run-dir", required=True, help="directory holding instruct.jsonl and prefs.jsonl")
    tt.add_argument("--label-space", required=True)
    tt.add_argument("--lambda", dest="lam", type=float, default=0.1)
    tt.add_argument("--epochs", type=int, default=200)
    tt.add_argument("--lr", type=float, default=0.5)
    tt.add_argument("--seed", type=int, default=0)
    return parser


def _simulate(args) -> None:
    from .simulation import SimConfig, selection_summary, simulate, tau_sweep, write_sweep_csv
    from .labeling import agreement_accuracy_bound, error_correlation

    cfg = SimConfig(n=args.n, n_classes=args.classes, p_llm=args.p_llm, p_gnn=args.p_gnn, seed=args.seed,
                    hard_fraction=args.hard_fraction)
    res = simulate(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    taus = [float(t) for t in args.taus.split(",")]
    write_sweep_csv(tau_sweep(res, taus), out / "tau_sweep.csv")
    n_agree, acc = res.agreement()
    summary = {
        "config": {k: getattr(cfg, k) for k in cfg.__dataclass_fields__},
        "n_agreed": n_agree,
        "agree_acc": acc,
        "bound": agreement_accuracy_bound(cfg.p_llm, cfg.p_gnn, cfg.n_classes)._asdict(),
        "selection": selection_summary(res, args.tau),
        "error_correlation": error_correlation(res.gnn, res.llm, res.truth).__dict__,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    print(json.dumps({"agree_acc": acc, "bound": summary["bound"]["value"]}))


def _verify(args) -> int:
    from .verification import check_influence_bounds, default_agreement_scan

    infl = check_influence_bounds(n_graphs=args.graphs, n_trees=args.trees, seed=args.seed)
    scan = default_agreement_scan(n=args.scan_n, seed=args.seed)
    ok = infl["ok"] and scan["n_violations"] == 0
    Path(args.out).write_text(json.dumps({"influence": infl, "agreement": scan, "ok": ok}, indent=1) + "\n",
                              encoding="utf-8")
    print(f"influence bound: {'ok' if infl['ok'] else 'FAILED'} ({infl['pairs_checked']} pairs); "
          f"agreement scan: {scan['n_violations']} violations")
    return 0 if ok else 1


def _train_text(args) -> None:
    from .graph import load_label_space
    from .text_model import train_weakly_supervised

    ls = load_label_space(args.label_space)
    run = Path(args.run_dir)
    agree = [(r["prompt"], ls.index(r["completion"])) for r in _read_jsonl(run / "instruct.jsonl")]
    prefs = [(r["prompt"], ls.index(r["chosen"]), ls.index(r["rejected"])) for r in _read_jsonl(run / "prefs.jsonl")]
    model, curve = train_weakly_supervised(agree, prefs, len(ls), seed=args.seed, lam=args.lam,
                                           epochs=args.epochs, lr=args.lr)
    model.save(run / "text_model.json")
    curve.to_csv(run / "curve.csv")


def _read_jsonl(path: Path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            _simulate(args)
        elif args.command == "verify-bounds":
            return _verify(args)
        elif args.command == "make-toy":
            from .toy import make_toy_tag, write_toy_tag
            write_toy_tag(make_toy_tag(n=args.n, seed=args.seed), args.out)
        elif args.command == "train-text":
            _train_text(args)
        else:
            cfg = _config(args)
            if args.command == "run":
                pipeline.run_pipeline(cfg)
            else:
                if args.command == "annotate":
                    cfg.validate()
                pipeline.run_stage(args.command, cfg)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
