"""Command line pipeline: preprocess -> select -> evaluate -> report.

Every subcommand reads and writes files in one run directory::

    train.csv, test.csv      encoded features + label (last column)
    dataset.json             schema, category codes, min/max, class counts
    measures_<key>.npz       cached measure matrices
    front.json, trace.csv    Pareto front and per-generation summary
    metrics_<clf>.json       cross-validation of every front member
    report.txt, scatter.csv  human-readable summary and plot data
    manifest.json            configs, input hashes, timings, file inventory
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Sequence

import numpy as np

from . import classify, dataset, measures, nsga2, objectives

logger = logging.getLogger("moofs")

PHASES = {"subsample": 0, "select": 1, "evaluate": 2}


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def phase_seed(master: int, phase: str) -> int:
    """Independent seed per pipeline phase derived from one master seed."""
    return int(np.random.SeedSequence([int(master), PHASES[phase]]).generate_state(1)[0])


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing {what}: {path}")
    return path


def update_manifest(run_dir: Path, phase: str, config: dict, timing: dict,
                    inputs: dict | None = None) -> None:
    path = run_dir / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {"phases": {}, "inputs": {}}
    manifest["tool_version"] = tool_version()
    manifest["phases"][phase] = {"config": config, "timing_seconds": timing}
    manifest["inputs"].update(inputs or {})
    manifest["files"] = {
        p.name: dataset.file_sha256(p)
        for p in sorted(run_dir.iterdir()) if p.is_file() and p.name != "manifest.json"
    }
    dump_json(manifest, path)


def load_run_dataset(run_dir: Path, which: str = "train") -> tuple[dataset.NumericDataset, dict]:
    sidecar = json.loads(_require(run_dir / "dataset.json", "dataset sidecar").read_text())
    ds = dataset.load_encoded(_require(run_dir / f"{which}.csv", f"{which} data"), sidecar)
    return ds, sidecar


# -- subcommands ---------------------------------------------------------------

def cmd_preprocess(data: str | Path, schema: str, out: str | Path, test: str | Path | None = None,
                   subsample: int | None = None, seed: int = 0) -> Path:
    t0 = time.perf_counter()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sch = dataset.load_schema(schema)
    ds = dataset.encode(dataset.load_csv(data, sch))
    if subsample:
        ds = dataset.subsample_stratified(ds, subsample, phase_seed(seed, "subsample"))
    t_load = time.perf_counter() - t0
    view = dataset.normalize_minmax(ds)
    inputs = {"train": {"path": str(data), "sha256": dataset.file_sha256(data)}}
    dataset.save_encoded(ds, out / "train.csv")
    if test:
        test_ds = dataset.encode(dataset.load_csv(test, sch), tables=ds.encodings)
        dataset.save_encoded(test_ds, out / "test.csv")
        inputs["test"] = {"path": str(test), "sha256": dataset.file_sha256(test)}
    extra = {"seed": seed, "subsample": subsample, "source_sha256": inputs["train"]["sha256"]}
    dump_json(dataset.sidecar_dict(ds, view.mins, view.maxs, extra), out / "dataset.json")
    config = {"data": str(data), "schema": schema, "test": str(test) if test else None,
              "subsample": subsample, "seed": seed}
    update_manifest(out, "preprocess", config,
                    {"load_encode": t_load, "total": time.perf_counter() - t0}, inputs)
    logger.info("encoded %d rows x %d features into %s", ds.n_samples, ds.n_features, out)
    return out


def model_for(token: str, ds: dataset.NumericDataset) -> objectives.ObjectiveModel:
    names = ds.feature_names
    exclusions = [names.index(n) for n in ds.schema.sd_exclusions if n in names]
    return objectives.get_model(token, exclusions)


def cmd_select(data: str | Path, model: str = "model3a", pop: int = 100, gens: int = 200,
               cx: float = 0.9, mut: float = 0.0244, seed: int = 0, bins: int = measures.DEFAULT_BINS,
               crossover: str = "single_point", tournament: int = 2) -> Path:
    t0 = time.perf_counter()
    run_dir = Path(data)
    ds, _ = load_run_dataset(run_dir)
    obj_model = model_for(model, ds)
    cfg = nsga2.GaConfig(pop_size=pop, max_generations=gens, crossover_rate=cx,
                         mutation_rate=mut, seed=phase_seed(seed, "select"),
                         tournament_size=tournament, crossover_kind=crossover)
    cache = measures.load_or_build_cache(ds, bins, run_dir)
    t_cache = time.perf_counter() - t0
    trace: list = []
    front = nsga2.evolve(cache, obj_model, cfg, trace=trace, dataset_hash=ds.content_hash())
    doc = front.to_dict()
    doc.update({"master_seed": seed, "bins": bins, "sd_exclusions": sorted(obj_model.sd_exclusions)})
    dump_json(doc, run_dir / "front.json")
    nsga2.write_trace(trace, run_dir / "trace.csv")
    config = {"model": model, "pop": pop, "gens": gens, "cx": cx, "mut": mut, "seed": seed,
              "bins": bins, "crossover": crossover, "tournament": tournament}
    update_manifest(run_dir, "select", config,
                    {"measures": t_cache, "total": time.perf_counter() - t0})
    lengths = [len(m.selected) for m in front.members]
    logger.info("front of %d subsets, lengths %d..%d", len(front), min(lengths), max(lengths))
    return run_dir / "front.json"


def _pick_best(rows: list[dict]) -> dict:
    ok = [r for r in rows if "error" not in r]
    if not ok:
        raise RuntimeError("every front member failed to evaluate")
    return min(ok, key=lambda r: (-r["mean_accuracy"], r["n_selected"], r["index"]))


def _evaluate_member(job) -> tuple[dict, classify.CVResult | None]:
    i, selected, ds, classifier, folds, cv_seed = job
    row = {"index": i, "selected": selected, "n_selected": len(selected)}
    try:
        res = classify.cross_validate(ds, selected, classifier, folds, cv_seed)
    except Exception as exc:  # recorded, evaluation continues with the next subset
        logger.warning("subset %d failed: %s", i, exc)
        row["error"] = f"{type(exc).__name__}: {exc}"
        return row, None
    row.update({"mean_accuracy": res.mean_accuracy, "min_accuracy": res.min_accuracy,
                "fold_accuracies": res.fold_accuracies,
                "weighted_accuracy": res.pooled.weighted.accuracy})
    return row, res


def cmd_evaluate(front: str | Path, classifier: str = "dtree", folds: int = 10, seed: int = 0,
                 binary: bool = False, jobs: int = 1) -> Path:
    t0 = time.perf_counter()
    front_path = _require(Path(front), "front file")
    run_dir = front_path.parent
    doc = json.loads(front_path.read_text())
    if not doc["members"]:
        raise ValueError("front is empty")
    ds, _ = load_run_dataset(run_dir)
    cv_seed = phase_seed(seed, "evaluate")
    work = [(i, m["selected"], ds, classifier, folds, cv_seed) for i, m in enumerate(doc["members"])]
    if jobs > 1:
        # map keeps submission order, so the merge is deterministic
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_evaluate_member, work))
    else:
        done = [_evaluate_member(w) for w in work]
    rows = [row for row, _ in done]
    results = {row["index"]: res for row, res in done if res is not None}
    best = _pick_best(rows)
    best_res = results[best["index"]]
    out = {
        "classifier": classifier, "folds": folds, "seed": seed, "model": doc.get("model", ""),
        "subsets": rows,
        "summary": {
            "max_accuracy": max(r["mean_accuracy"] for r in rows if "error" not in r),
            "avg_accuracy": float(np.mean([r["mean_accuracy"] for r in rows if "error" not in r])),
            "min_accuracy": min(r["mean_accuracy"] for r in rows if "error" not in r),
        },
        "best": {"index": best["index"], "selected": best["selected"],
                 "feature_names": [ds.feature_names[j] for j in best["selected"]],
                 "cv": best_res.to_dict(), "test": None, "binary": None},
    }
    if (run_dir / "test.csv").exists():
        test_ds, _ = load_run_dataset(run_dir, "test")
        out["best"]["test"] = classify.holdout_evaluate(
            ds, test_ds, best["selected"], classifier).to_dict()
    if binary:
        out["best"]["binary"] = {
            str(c): m.to_dict() for c, m in
            classify.one_vs_rest(ds, best["selected"], classifier, folds, cv_seed).items()}
    path = run_dir / f"metrics_{classifier}.json"
    dump_json(out, path)
    update_manifest(run_dir, f"evaluate_{classifier}",
                    {"classifier": classifier, "folds": folds, "seed": seed, "binary": binary},
                    {"total": time.perf_counter() - t0})
    logger.info("best subset #%d (%d features), mean CV accuracy %.4f",
                best["index"], best["n_selected"], best["mean_accuracy"])
    return path


def _binary_table(binary: dict, names: dict) -> str:
    head = ["Class", *classify.METRIC_TITLES]
    rows = [[names.get(c, c)] + [f"{100 * m[f]:.2f}" for f in classify.METRIC_FIELDS]
            for c, m in binary.items()]
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    return "\n".join("  ".join(s.ljust(widths[0]) if i == 0 else s.rjust(widths[i])
                               for i, s in enumerate(r)) for r in [head] + rows) + "\n"


def cmd_report(run: str | Path) -> Path:
    t0 = time.perf_counter()
    run_dir = Path(run)
    front_doc = json.loads(_require(run_dir / "front.json", "front file").read_text())
    sidecar = json.loads(_require(run_dir / "dataset.json", "dataset sidecar").read_text())
    metric_files = sorted(run_dir.glob("metrics_*.json"))
    if not metric_files:
        raise FileNotFoundError(f"missing metrics file: {run_dir}/metrics_<classifier>.json")

    scatter = run_dir / "scatter.csv"
    with open(scatter, "w") as fh:
        fh.write("f_sel,f_unsel,f_disp\n")
        for m in front_doc["members"]:
            o = m["objectives"]
            fh.write(f"{o['f_sel']!r},{o['f_unsel']!r},{o['f_disp']!r}\n")

    lengths = [m["n_selected"] for m in front_doc["members"]]
    cfg = front_doc["config"]
    names = sidecar.get("class_names", {})
    out = [
        "Feature selection run report",
        "============================",
        f"dataset: {sidecar['schema']['name']}, {sidecar['n_samples']} rows, "
        f"{len(sidecar['feature_names'])} features",
        f"model: {front_doc['model']}  master seed: {front_doc.get('master_seed')}  "
        f"pop: {cfg['pop_size']}  generations: {cfg['max_generations']}  "
        f"crossover: {cfg['crossover_rate']}  mutation: {cfg['mutation_rate']}",
        "",
        "Pareto front",
        "------------",
        f"subsets: {len(lengths)}  max length: {max(lengths)}  min length: {min(lengths)}  "
        f"avg length: {np.mean(lengths):.1f}",
        "",
    ]
    for mf in metric_files:
        doc = json.loads(mf.read_text())
        best = doc["best"]
        cv = classify.MetricsReport.from_dict(best["cv"]["pooled"])
        s = doc["summary"]
        out += [
            f"Classifier {doc['classifier']} ({doc['folds']}-fold CV, seed {doc['seed']})",
            "-" * 40,
            f"mean CV accuracy over the front: max {100 * s['max_accuracy']:.2f}  "
            f"avg {100 * s['avg_accuracy']:.2f}  min {100 * s['min_accuracy']:.2f}",
            f"best subset #{best['index']} ({len(best['selected'])} features): "
            + ", ".join(str(i) for i in best["selected"]),
            "  " + ", ".join(best["feature_names"]),
            f"fold accuracy: mean {100 * best['cv']['mean_accuracy']:.2f}  "
            f"min {100 * best['cv']['min_accuracy']:.2f}",
            "",
            cv.table("Cross-validation (pooled folds)"),
            "Confusion matrix (pooled folds)",
            cv.confusion_table(),
        ]
        if best.get("test"):
            test = classify.MetricsReport.from_dict(best["test"])
            out += [test.table("Held-out test set"), "Confusion matrix (test set)",
                    test.confusion_table()]
        if best.get("binary"):
            out += ["One-vs-rest binary classification", _binary_table(best["binary"], names)]

    report = run_dir / "report.txt"
    files = sorted({p.name for p in run_dir.iterdir() if p.is_file()}
                   | {"report.txt", "scatter.csv", "manifest.json"})
    out += ["Files", "-----"] + [f"  {name}" for name in files]
    report.write_text("\n".join(out) + "\n")
    update_manifest(run_dir, "report", {"run": str(run)}, {"total": time.perf_counter() - t0})
    return report


# -- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="moofs", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess", help="encode a raw file into a run directory")
    pre.add_argument("--data", required=True)
    pre.add_argument("--schema", required=True,
                     help=f"schema JSON or one of {', '.join(dataset.BUILTIN_SCHEMAS)}")
    pre.add_argument("--out", required=True)
    pre.add_argument("--test")
    pre.add_argument("--subsample", type=int)
    pre.add_argument("--seed", type=int, default=0)

    sel = sub.add_parser("select", help="run the GA and write the Pareto front")
    sel.add_argument("--data", required=True, help="run directory")
    sel.add_argument("--model", default="model3a", choices=list(objectives.MODEL_TOKENS))
    sel.add_argument("--pop", type=int, default=100)
    sel.add_argument("--gens", type=int, default=200)
    sel.add_argument("--cx", type=float, default=0.9)
    sel.add_argument("--mut", type=float, default=0.0244)
    sel.add_argument("--seed", type=int, default=0)
    sel.add_argument("--bins", type=int, default=measures.DEFAULT_BINS)
    sel.add_argument("--crossover", default="single_point", choices=["single_point", "uniform"])
    sel.add_argument("--tournament", type=int, default=2)

    ev = sub.add_parser("evaluate", help="cross-validate every subset of a front")
    ev.add_argument("--front", required=True)
    ev.add_argument("--classifier", default="dtree")
    ev.add_argument("--folds", type=int, default=10)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--binary", action="store_true", help="also run one-vs-rest per class")
    ev.add_argument("--jobs", type=int, default=1, help="subsets evaluated in parallel")

    rep = sub.add_parser("report", help="write report.txt and scatter.csv")
    rep.add_argument("--run", required=True)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "preprocess":
            cmd_preprocess(args.data, args.schema, args.out, args.test, args.subsample, args.seed)
        elif args.command == "select":
            cmd_select(args.data, args.model, args.pop, args.gens, args.cx, args.mut, args.seed,
                       args.bins, args.crossover, args.tournament)
        elif args.command == "evaluate":
            cmd_evaluate(args.front, args.classifier, args.folds, args.seed, args.binary, args.jobs)
        else:
            print(cmd_report(args.run).read_text(), end="")
    except (dataset.DatasetError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
