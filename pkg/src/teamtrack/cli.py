"""Command-line entry points: every pipeline stage, headless.

Each subcommand prints a human-readable summary by default and a versioned
JSON document with --json; exit code 0 on success, 1 with a message on
stderr otherwise.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import ProjectConfig
from .pipeline import (
    auto_annotate,
    run_association,
    run_metrics,
    run_training,
)
from .project import Project, ProjectError
from .simulate import SimConfig, simulate
from .tracklets import mean_length
from .training import gradient_check


def _emit(args, doc: dict, text: str) -> None:
    if args.json:
        doc = {"v": 1, **doc}
        print(json.dumps(doc, indent=2))
    else:
        print(text)


def _cmd_simulate(args) -> int:
    if args.config:
        cfg = SimConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        cfg = SimConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    result = simulate(cfg, args.out)
    _emit(args, {
        "out": str(result.out_dir),
        "detections": result.n_detections,
        "ground_truth_rows": result.n_ground_truth,
        "agents": result.n_agents,
        "seed": cfg.seed,
    }, f"simulated {result.n_detections} detections for {result.n_agents} agents "
       f"into {result.out_dir} (seed {cfg.seed})")
    return 0


def _cmd_tracklets(args) -> int:
    project = Project(args.project)
    tracklets = project.tracklets(regenerate=True)
    mean = mean_length(tracklets)
    _emit(args, {
        "tracklets": len(tracklets),
        "mean_length": mean,
    }, f"{len(tracklets)} tracklets, mean length {mean:.1f} frames")
    return 0


def _cmd_annotate(args) -> int:
    project = Project(args.project)
    if args.tracklet is not None:
        if args.identity is None:
            raise ProjectError("--identity required with --tracklet")
        if project.tracklet_by_id(args.tracklet) is None:
            raise ProjectError(f"unknown tracklet {args.tracklet}")
        record = project.add_annotation(args.tracklet, args.identity)
        added = [record]
    else:
        added = auto_annotate(project, per_player=args.per_player, class0=args.class0)
    doc = {"added": [
        {"tracklet_id": a.tracklet_id, "identity": a.identity, "round": a.round}
        for a in added
    ]}
    lines = [f"tracklet {a.tracklet_id} -> identity {a.identity} (round {a.round})"
             for a in added]
    _emit(args, doc, "\n".join(lines) if lines else "nothing to annotate")
    return 0


def _cmd_train(args) -> int:
    project = Project(args.project)
    round_ = project.advance_round()
    result = run_training(project, args.alpha, args.seed, round_)
    final = result["history"][-1]
    _emit(args, {
        "checkpoint": result["checkpoint"],
        "checkpoint_hash": result["checkpoint_hash"],
        "round": result["round"],
        "n_annotated": result["n_annotated"],
        "final_loss": final["loss"],
    }, f"trained round {result['round']} on {result['n_annotated']} annotations; "
       f"final loss {final['loss']:.4f}\ncheckpoint {result['checkpoint']}\n"
       f"sha256 {result['checkpoint_hash']}")
    return 0


def _cmd_associate(args) -> int:
    project = Project(args.project)
    doc = run_association(project, args.method)
    by_prov: dict[str, int] = {}
    for e in doc["entries"]:
        by_prov[e["provenance"]] = by_prov.get(e["provenance"], 0) + 1
    summary = ", ".join(f"{k}: {v}" for k, v in sorted(by_prov.items()))
    _emit(args, {
        "method": doc["method"],
        "round": doc["round"],
        "checkpoint_hash": doc["checkpoint_hash"],
        "entries": len(doc["entries"]),
        "provenance_counts": by_prov,
    }, f"associated {len(doc['entries'])} tracklets via {doc['method']} ({summary})")
    return 0


def _evaluate_once(project: Project) -> dict:
    report = run_metrics(project)
    return report.to_dict()


def _cmd_evaluate(args) -> int:
    project = Project(args.project)
    if args.seeds is None:
        report = run_metrics(project)
        _emit(args, {"report": report.to_dict()}, report.text_table())
        return 0

    rows = []
    for seed in range(args.seeds):
        round_ = project.advance_round()
        run_training(project, args.alpha, seed, round_)
        run_association(project, args.method)
        rows.append(_evaluate_once(project))
    idf1s = np.array([r["idf1"] for r in rows])
    motas = np.array([r["mota"] for r in rows])
    idsws = np.array([r["idsw"] for r in rows], dtype=float)
    doc = {
        "seeds": args.seeds,
        "alpha": args.alpha,
        "method": args.method,
        "idf1_mean": float(idf1s.mean()), "idf1_std": float(idf1s.std()),
        "mota_mean": float(motas.mean()), "mota_std": float(motas.std()),
        "idsw_mean": float(idsws.mean()), "idsw_std": float(idsws.std()),
        "runs": rows,
    }
    text = (f"{args.seeds} seeds, alpha={args.alpha}, method={args.method}\n"
            f"IDF1 {idf1s.mean():.3f} +/- {idf1s.std():.3f}   "
            f"IDs {idsws.mean():.1f} +/- {idsws.std():.1f}   "
            f"MOTA {motas.mean():.3f} +/- {motas.std():.3f}")
    _emit(args, doc, text)
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.project, frontend_dir=args.frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def _cmd_gradcheck(args) -> int:
    alphas = [0, 1] if args.alpha is None else [args.alpha]
    results = [gradient_check(alpha=a, seed=args.seed) for a in alphas]
    ok = all(r["passed"] for r in results)
    lines = [
        f"alpha={r['alpha']}: max relative error {r['max_rel_err']:.2e} "
        f"over {r['n_coords']} coordinates (worst {r['worst_coord']}) -> "
        f"{'PASS' if r['passed'] else 'FAIL'}"
        for r in results
    ]
    _emit(args, {"results": results, "passed": ok}, "\n".join(lines))
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="teamtrack",
        description="semi-interactive team-sport player tracking pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.set_defaults(func=func)
        return p

    p = add("simulate", _cmd_simulate, "generate a synthetic game project")
    p.add_argument("--config", help="SimConfig JSON file")
    p.add_argument("--out", required=True, help="project directory to create")
    p.add_argument("--seed", type=int, default=None)

    p = add("tracklets", _cmd_tracklets, "build non-ambiguous tracklets from detections")
    p.add_argument("--project", required=True)

    p = add("annotate", _cmd_annotate,
            "add annotations; by hand or simulated from ground truth")
    p.add_argument("--project", required=True)
    p.add_argument("--tracklet", type=int, help="annotate one tracklet by id")
    p.add_argument("--identity", type=int, help="identity for --tracklet")
    p.add_argument("--per-player", type=int, default=1,
                   help="auto mode: longest unannotated tracklets per player")
    p.add_argument("--class0", type=int, default=2,
                   help="auto mode: class-0 tracklets to add")

    p = add("train", _cmd_train, "train the tracklet classifier on the annotations")
    p.add_argument("--project", required=True)
    p.add_argument("--alpha", type=int, choices=(0, 1), default=0,
                   help="0: identity loss only, 1: plus triplet loss")
    p.add_argument("--seed", type=int, default=0)

    p = add("associate", _cmd_associate, "assign an identity to every tracklet")
    p.add_argument("--project", required=True)
    p.add_argument("--method", choices=("iterative", "rnmf"), default="iterative")

    p = add("evaluate", _cmd_evaluate, "score the association against ground truth")
    p.add_argument("--project", required=True)
    p.add_argument("--seeds", type=int, default=None,
                   help="retrain over N seeds and report mean +/- spread")
    p.add_argument("--alpha", type=int, choices=(0, 1), default=0)
    p.add_argument("--method", choices=("iterative", "rnmf"), default="iterative")

    p = add("serve", _cmd_serve, "run the annotation HTTP service")
    p.add_argument("--project", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--frontend", default=None,
                   help="static frontend build to serve at /")

    p = add("gradcheck", _cmd_gradcheck, "finite-difference gradient validation")
    p.add_argument("--alpha", type=int, choices=(0, 1), default=None,
                   help="check one loss mode (default: both)")
    p.add_argument("--seed", type=int, default=0)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ProjectError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
