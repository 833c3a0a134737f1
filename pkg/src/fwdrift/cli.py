"""Command-line pipeline: synth, extract, imagize, pair, train, eval, detect, report.

Artifacts live under --data-root (reports under --out when given) and every
stage records what it wrote in the run manifest. Exit codes: 0 success,
2 bad usage, 3 missing input artifact, 4 training divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional

from . import drift, features, images, pairs, reports, twin
from .capture import parse_capture
from .config import PipelineConfig, load_config
from .fixtures import generate_corpus, load_corpus_manifest
from .manifest import MissingArtifactError, RunManifest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_DIVERGED = 4

_SPLIT_FILES = {
    pairs.Split.TRAIN: "pairs-train.jsonl",
    pairs.Split.VALIDATION: "pairs-validation.jsonl",
    pairs.Split.TEST_STABLE: "pairs-test_stable.jsonl",
    pairs.Split.TEST_CHANGE: "pairs-test_change.jsonl",
}


def _manifest(root: Path, config: PipelineConfig, seed: int) -> RunManifest:
    return RunManifest.load_or_create(
        root, seeds={"pairing": seed, "model": seed}, config=config.as_dict()
    )


def cmd_synth(root: Path, config: PipelineConfig, seed: int) -> int:
    manifest = _manifest(root, config, seed)
    corpus = generate_corpus(root, seed=seed, days=config.days, devices=config.devices)
    artifacts = ["corpus.json", "profiles.json"]
    for device in corpus.devices:
        for day in range(1, corpus.days + 1):
            stem = f"{device['device_id']}-day{day:02d}"
            artifacts.append(f"pcaps/{stem}.pcap")
            artifacts.append(f"logs/{stem}.jsonl")
    manifest.record_stage("synth", artifacts, {"devices": len(corpus.devices)})
    manifest.save(root)
    print(f"synth: {len(corpus.devices)} devices x {corpus.days} days -> {root / 'pcaps'}")
    return EXIT_OK


def cmd_extract(root: Path, config: PipelineConfig, seed: int) -> int:
    manifest = _manifest(root, config, seed)
    manifest.require_stage("synth", root)
    corpus = load_corpus_manifest(root)
    artifacts = []
    for device in corpus.devices:
        device_id = device["device_id"]
        for day in range(1, corpus.days + 1):
            stem = f"{device_id}-day{day:02d}"
            capture = parse_capture(
                root / "pcaps" / f"{stem}.pcap",
                device_selector=device["mac"],
                device_id=device_id,
                day_index=day,
                assume_ocsp_ports=tuple(config.assume_ocsp_ports),
            )
            stats = features.compute_device_day(capture)
            rel = f"stats/{stem}.csv"
            features.write_stats_csv(stats, root / rel)
            artifacts.append(rel)
    manifest.record_stage("extract", artifacts)
    manifest.save(root)
    print(f"extract: wrote {len(artifacts)} stats files under {root / 'stats'}")
    return EXIT_OK


def cmd_imagize(root: Path, config: PipelineConfig, seed: int) -> int:
    manifest = _manifest(root, config, seed)
    manifest.require_stage("extract", root)
    corpus = load_corpus_manifest(root)
    store = images.ImageStore(root / "images")
    entries = []
    for device in corpus.devices:
        device_id = device["device_id"]
        for day in range(1, corpus.days + 1):
            stats = features.read_stats_csv(
                root / "stats" / f"{device_id}-day{day:02d}.csv", device_id, day
            )
            entries.extend(store.ingest_device_day(images.render_device_day(stats)))
    store.write_index(entries)
    kept = sum(1 for e in entries if not e.degenerate)
    manifest.record_stage(
        "imagize", [f"images/{store.INDEX_NAME}"], {"images": len(entries), "usable": kept}
    )
    manifest.save(root)
    print(f"imagize: {len(entries)} images ({kept} usable) under {root / 'images'}")
    return EXIT_OK


def _do_pair(root: Path, out: Path, config: PipelineConfig, seed: int) -> dict[pairs.Split, pairs.PairSet]:
    corpus = load_corpus_manifest(root)
    store = images.ImageStore(root / "images")
    image_corpus = pairs.ImageCorpus(store)
    splits = pairs.build_splits(image_corpus, seed=seed, change_devices=corpus.changed_devices)
    pair_dir = out / "pairs"
    for split, pairset in splits.items():
        pairs.save_pairset(pairset, store, pair_dir / _SPLIT_FILES[split])
    pair_manifest = {
        "seed": seed,
        "splits": {
            split.value: {
                "file": _SPLIT_FILES[split],
                "pairs": len(pairset),
                "counts": {
                    f"{device}/day{day:02d}": counts
                    for (device, day), counts in sorted(pairset.counts.items())
                },
            }
            for split, pairset in splits.items()
        },
    }
    (pair_dir / "pairs-manifest.json").write_text(
        json.dumps(pair_manifest, sort_keys=True, indent=2) + "\n"
    )
    return splits


def cmd_pair(root: Path, config: PipelineConfig, seed: int) -> int:
    manifest = _manifest(root, config, seed)
    manifest.require_stage("imagize", root)
    splits = _do_pair(root, root, config, seed)
    manifest.record_stage(
        "pair",
        [f"pairs/{name}" for name in list(_SPLIT_FILES.values()) + ["pairs-manifest.json"]],
        {split.value: len(pairset) for split, pairset in splits.items()},
    )
    manifest.save(root)
    sizes = ", ".join(f"{s.value}={len(p)}" for s, p in splits.items())
    print(f"pair: {sizes}")
    return EXIT_OK


def _load_split(root: Path, out: Path, split: pairs.Split, seed: int) -> pairs.PairSet:
    store = images.ImageStore(root / "images")
    return pairs.load_pairset(out / "pairs" / _SPLIT_FILES[split], store, split, seed)


def _model_path(out: Path, seed: int) -> Path:
    return out / "models" / f"twin-s{seed:04d}.bin"


def _do_train(root: Path, out: Path, config: PipelineConfig, seed: int) -> Path:
    train_set = _load_split(root, out, pairs.Split.TRAIN, seed)
    val_set = _load_split(root, out, pairs.Split.VALIDATION, seed)
    model = twin.train(config.train_config(seed), train_set.pairs, val_set.pairs)
    path = _model_path(out, seed)
    twin.save_model(model, path)
    meta = model.metadata
    logger.info(
        "trained: epochs=%s best_val=%.6f stopped_early=%s",
        meta["epochs_run"], meta["best_validation_loss"], meta["stopped_early"],
    )
    return path


def cmd_train(root: Path, config: PipelineConfig, seed: int) -> int:
    manifest = _manifest(root, config, seed)
    manifest.require_stage("pair", root)
    path = _do_train(root, root, config, seed)
    manifest.record_stage("train", [str(path.relative_to(root))])
    manifest.save(root)
    print(f"train: model -> {path}")
    return EXIT_OK


def _do_eval(root: Path, out: Path, config: PipelineConfig, seed: int) -> dict:
    """Score both experiments with the trained model; returns the reports."""
    model = twin.load_model(_model_path(out, seed))
    report_dir = out / "reports"

    train_eval = twin.evaluate_pairs(
        model, _load_split(root, out, pairs.Split.TRAIN, seed).pairs, config.margin
    )
    baselines = drift.baselines_from_records(train_eval.records)
    reports.write_scores_csv(train_eval.records, report_dir / "scores-train.csv")

    results = {"seed": seed, "train": train_eval}
    for split, truth_changed, name in (
        (pairs.Split.TEST_STABLE, False, "stable"),
        (pairs.Split.TEST_CHANGE, True, "change"),
    ):
        pairset = _load_split(root, out, split, seed)
        evaluation = twin.evaluate_pairs(model, pairset.pairs, config.margin)
        day_samples = drift.group_scores_by_day(evaluation.records)
        truth = {(s.device_id, s.day_index): truth_changed for s in day_samples}
        accuracy, drift_report = drift.accuracy_metrics(day_samples, truth, baselines, seed)
        reports.write_scores_csv(evaluation.records, report_dir / f"scores-{name}.csv")
        reports.save_accuracy_report(accuracy, seed, report_dir / f"accuracy-{name}.json")
        drift_report.to_json(report_dir / f"drift-{name}.json")
        drift_report.to_csv(report_dir / f"drift-{name}.csv")
        results[name] = (accuracy, drift_report)
    return results


def cmd_eval(root: Path, out: Path, config: PipelineConfig, seed: int, runs: int) -> int:
    manifest = _manifest(root, config, seed)
    if runs <= 1:
        manifest.require_stage("train", root)
        results = _do_eval(root, out, config, seed)
        for name in ("stable", "change"):
            accuracy, _ = results[name]
            print(f"eval[{name}]: " + ", ".join(
                f"{k}={v:.4f}" for k, v in accuracy.as_dict().items()
            ))
        manifest.record_stage("eval", [f"reports/accuracy-{n}.json" for n in ("stable", "change")])
        manifest.save(root)
        return EXIT_OK

    # Multi-run protocol: re-draw dissimilar pairs and retrain per run seed.
    manifest.require_stage("imagize", root)
    stable_reports, change_reports = [], []
    for r in range(runs):
        run_seed = seed + r
        run_out = out / "runs" / f"r{r + 1:02d}"
        _do_pair(root, run_out, config, run_seed)
        _do_train(root, run_out, config, run_seed)
        results = _do_eval(root, run_out, config, run_seed)
        stable_reports.append(results["stable"][0])
        change_reports.append(results["change"][0])
        print(f"run {r + 1}/{runs} (seed {run_seed}) done")
    for name, collected in (("stable", stable_reports), ("change", change_reports)):
        table = reports.aggregate_runs(collected)
        reports.save_runs_table(table, out / "reports" / f"runs-{name}.json")
        text = reports.render_table(table, f"{name} experiment, {runs} runs")
        (out / "reports" / f"runs-{name}.txt").write_text(text)
        print(text)
    manifest.record_stage(
        "eval", [f"reports/runs-{n}.json" for n in ("stable", "change")], {"runs": runs}
    )
    manifest.save(root)
    return EXIT_OK


def cmd_detect(root: Path, out: Path, config: PipelineConfig, seed: int) -> int:
    """Per device-day change verdicts across all scored test days."""
    manifest = _manifest(root, config, seed)
    manifest.require_stage("train", root)
    results = _do_eval(root, out, config, seed)
    rows = []
    for name in ("stable", "change"):
        _, drift_report = results[name]
        for row in drift_report.rows:
            rows.append(
                {
                    "device_id": row.device_id,
                    "day": row.day_index,
                    "mean_score": row.mean_score,
                    "hedges_g": row.hedges.g,
                    "effect": row.hedges.effect_label.value,
                    "change_detected": row.verdict,
                }
            )
    path = out / "reports" / "detect.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"seed": seed, "rows": rows}, sort_keys=True, indent=2) + "\n")
    flagged = [r for r in rows if r["change_detected"]]
    print(f"detect: {len(flagged)}/{len(rows)} device-days flagged as version changes")
    for r in flagged:
        print(f"  {r['device_id']} day {r['day']}: g={r['hedges_g']:.4f} ({r['effect']})")
    manifest.record_stage("detect", ["reports/detect.json"])
    manifest.save(root)
    return EXIT_OK


def cmd_report(out: Path, with_plots: bool) -> int:
    report_dir = out / "reports"
    if not report_dir.exists():
        raise MissingArtifactError(f"no reports directory at {report_dir}")
    shown = False
    for name in ("stable", "change"):
        runs_file = report_dir / f"runs-{name}.txt"
        acc_file = report_dir / f"accuracy-{name}.json"
        if runs_file.exists():
            print(runs_file.read_text())
            shown = True
        elif acc_file.exists():
            data = json.loads(acc_file.read_text())
            print(f"{name} experiment (seed {data['seed']}):")
            for key, label in reports.METRIC_ROWS:
                print(f"  {label}: {data[key] * 100:.2f}%")
            shown = True
    if not shown:
        raise MissingArtifactError("no accuracy reports found; run eval first")
    if with_plots:
        import csv as _csv

        per_device: dict[str, list[float]] = {}
        for name in ("stable", "change"):
            path = report_dir / f"scores-{name}.csv"
            if not path.exists():
                continue
            with open(path, newline="") as fh:
                for rec in _csv.DictReader(fh):
                    per_device.setdefault(rec["left_device"], []).append(float(rec["score"]))
        written = reports.plot_score_distributions(per_device, report_dir / "plots")
        print(f"report: wrote {len(written)} plots under {report_dir / 'plots'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fwdrift",
        description="Fingerprint IoT traffic as images and detect firmware-version drift.",
    )
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="base seed (overrides config)")
    parser.add_argument("--runs", type=int, default=None, help="number of runs for eval")
    parser.add_argument("--data-root", type=Path, default=Path("data"), help="artifact directory")
    parser.add_argument("--out", type=Path, default=None, help="output directory (default: data root)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth", "extract", "imagize", "pair", "train", "eval", "detect"):
        sub.add_parser(name)
    report = sub.add_parser("report")
    report.add_argument("--plots", action="store_true", help="write score-distribution plots")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: bad config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.seed is not None:
        config.seed = args.seed
    if args.runs is not None:
        if args.runs < 1:
            print("error: --runs must be at least 1", file=sys.stderr)
            return EXIT_USAGE
        config.runs = args.runs
    root = args.data_root
    out = args.out if args.out is not None else root
    seed = config.seed

    try:
        if args.command == "synth":
            return cmd_synth(root, config, seed)
        if args.command == "extract":
            return cmd_extract(root, config, seed)
        if args.command == "imagize":
            return cmd_imagize(root, config, seed)
        if args.command == "pair":
            return cmd_pair(root, config, seed)
        if args.command == "train":
            return cmd_train(root, config, seed)
        if args.command == "eval":
            return cmd_eval(root, out, config, seed, config.runs)
        if args.command == "detect":
            return cmd_detect(root, out, config, seed)
        if args.command == "report":
            return cmd_report(out, args.plots)
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except twin.TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
