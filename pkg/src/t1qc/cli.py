"""Command-line entry points for the full pipeline.

Every subcommand accepts --config (JSON), --seed and --out; failures exit
nonzero with a machine-readable JSON error on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import cohort, metrics, phantom, splits
from .model import (
    Annotation,
    MissingAdjudication,
    Task,
    annotation_from_dict,
    consensus_from_dict,
    consensus_merge,
    consensus_to_dict,
    read_jsonl,
    write_jsonl,
)
from .nifti import read_nifti_file, write_nifti_file, write_slice_pngs
from .preprocess import PreprocessConfig, preprocess_pipeline


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text())


def load_dataset(directory: str | Path) -> list[phantom.LabeledSample]:
    """Read a synth-format dataset: .nii volumes plus a labels.jsonl manifest."""
    directory = Path(directory)
    manifest = directory / "labels.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} not found")
    samples = []
    for record in read_jsonl(manifest.read_text()):
        label = consensus_from_dict(record)
        volume = read_nifti_file(directory / f"{label.image_id}.nii")
        samples.append(
            phantom.LabeledSample(volume=volume, label=label, patient_id=str(record["patient_id"]))
        )
    return samples


def _cmd_synth(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    shape = tuple(int(s) for s in (args.shape or cfg.get("shape", "32,40,36")).split(","))
    mix = [float(x) for x in (args.mix or cfg.get("mix", "0.26,0.16,0.28,0.30")).split(",")]
    samples = phantom.generate_labeled_dataset(
        n=args.n or int(cfg.get("n", 100)), shape=shape, class_mix=mix, seed=args.seed
    )
    manifest = phantom.save_dataset(samples, args.out)
    print(json.dumps({"written": len(samples), "manifest": str(manifest)}))
    return 0


def _cmd_select(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    text = Path(args.catalog).read_text()
    fmt = args.format or ("jsonl" if args.catalog.endswith((".jsonl", ".ndjson")) else "csv")
    catalog = cohort.parse_catalog(text, format=fmt, source=args.catalog)
    rules = cohort.KeywordRules(
        t1w_patterns=tuple(cfg.get("t1w_patterns", cohort.DEFAULT_T1W_PATTERNS)),
        gadolinium_markers=tuple(cfg.get("gadolinium_markers", cohort.DEFAULT_GADOLINIUM_MARKERS)),
    )
    selected = cohort.filter_min_slices(cohort.select_t1w(catalog, rules), args.min_slices)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(cohort.catalog_to_csv(selected))
    report = {
        "input_rows": catalog.row_count,
        "parsed": len(catalog),
        "row_errors": [{"line": e.line_number, "message": e.message} for e in catalog.row_errors],
        "selected": len(selected),
        "written": str(out),
    }
    print(json.dumps(report))
    return 0


def _cmd_preprocess(args: argparse.Namespace) -> int:
    cfg_dict = _load_config(args.config)
    reference = None
    if cfg_dict.get("reference_path"):
        reference = read_nifti_file(cfg_dict["reference_path"])
    cfg = PreprocessConfig(
        target_spacing=float(cfg_dict.get("target_spacing", 1.0)),
        target_shape=tuple(cfg_dict.get("target_shape", [169, 208, 179])),
        interpolation=cfg_dict.get("interpolation", "trilinear"),
        do_registration=bool(cfg_dict.get("do_registration", False)),
        reference=reference,
        resample_threshold_mm=cfg_dict.get("resample_threshold_mm"),
    )
    in_path = Path(args.input)
    files = sorted(in_path.glob("*.nii")) if in_path.is_dir() else [in_path]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    slices_dir = out_dir / "slices"
    manifest = in_path / "labels.jsonl" if in_path.is_dir() else None
    for path in files:
        volume = read_nifti_file(path)
        processed = preprocess_pipeline(volume, cfg)
        write_nifti_file(processed, out_dir / path.name)
        write_slice_pngs(processed, path.stem, slices_dir)
    if manifest is not None and manifest.exists():
        (out_dir / "labels.jsonl").write_text(manifest.read_text())
    print(json.dumps({"processed": len(files), "out": str(out_dir)}))
    return 0


def _cmd_serve_annotate(args: argparse.Namespace) -> int:
    import uvicorn

    from .annotation import AnnotationStore, create_app

    data_dir = Path(args.data)
    manifest = data_dir / "labels.jsonl"
    if manifest.exists():
        image_ids = [str(r["image_id"]) for r in read_jsonl(manifest.read_text())]
    else:
        image_ids = sorted(p.stem for p in data_dir.glob("*.nii"))
    slices_dir = Path(args.slices) if args.slices else data_dir / "slices"
    if not slices_dir.exists():
        slices_dir.mkdir(parents=True, exist_ok=True)
        for image_id in image_ids:
            write_slice_pngs(read_nifti_file(data_dir / f"{image_id}.nii"), image_id, slices_dir)
    store = AnnotationStore(
        image_ids=image_ids,
        raters=args.raters.split(","),
        log_path=args.out or data_dir / "annotations.log.jsonl",
    )
    ui_dir = Path(args.ui) if args.ui else None
    if ui_dir is not None and not ui_dir.exists():
        raise FileNotFoundError(f"UI directory {ui_dir} does not exist")
    app = create_app(store, slices_dir, ui_dir)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def _split_annotations_by_rater(lines: list[dict]) -> tuple[dict[str, Annotation], dict[str, Annotation]]:
    by_image: dict[str, dict[str, Annotation]] = {}
    for obj in lines:
        a = annotation_from_dict(obj)
        by_image.setdefault(a.image_id, {})[a.rater_id] = a
    raters = sorted({a.rater_id for img in by_image.values() for a in img.values()})
    if len(raters) != 2:
        raise ValueError(f"expected annotations from exactly two raters, got {raters}")
    first = {i: img[raters[0]] for i, img in by_image.items() if raters[0] in img}
    second = {i: img[raters[1]] for i, img in by_image.items() if raters[1] in img}
    return first, second


def _cmd_consensus(args: argparse.Namespace) -> int:
    lines = list(read_jsonl(Path(args.annotations).read_text()))
    resolutions = _load_config(args.resolutions) if args.resolutions else {}
    first, second = _split_annotations_by_rater(lines)
    out_lines = []
    pending = []
    for image_id in sorted(set(first) & set(second)):
        resolution = resolutions.get(image_id)
        try:
            label = consensus_merge(first[image_id], second[image_id], sr_resolution=resolution)
        except MissingAdjudication:
            pending.append(image_id)
            out_lines.append({"image_id": image_id, "pending_adjudication": True})
            continue
        record = consensus_to_dict(label)
        record["pending_adjudication"] = False
        out_lines.append(record)
    Path(args.out).write_text(write_jsonl(out_lines))
    print(json.dumps({"merged": len(out_lines) - len(pending), "pending_adjudication": pending}))
    return 0


def _cmd_kappa(args: argparse.Namespace) -> int:
    lines = list(read_jsonl(Path(args.annotations).read_text()))
    first, second = _split_annotations_by_rater(lines)
    shared = sorted(set(first) & set(second))
    result: dict[str, float | None] = {}
    sr1 = [int(first[i].straight_reject) for i in shared]
    sr2 = [int(second[i].straight_reject) for i in shared]
    result["sr"] = metrics.weighted_cohens_kappa(sr1, sr2, 2, args.weighting)
    both_graded = [i for i in shared if not first[i].straight_reject and not second[i].straight_reject]
    if len(both_graded) >= 2:
        g1 = [int(bool(first[i].gadolinium)) for i in both_graded]
        g2 = [int(bool(second[i].gadolinium)) for i in both_graded]
        result["gadolinium"] = metrics.weighted_cohens_kappa(g1, g2, 2, args.weighting)
        for characteristic in ("motion", "contrast", "noise"):
            c1 = [getattr(first[i].grades, characteristic) for i in both_graded]
            c2 = [getattr(second[i].grades, characteristic) for i in both_graded]
            result[characteristic] = metrics.weighted_cohens_kappa(c1, c2, 3, args.weighting)
    payload = {"weighting": args.weighting, "n_images": len(shared), "kappa": result}
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload))
    return 0


def _task_from_name(name: str) -> Task:
    for task in Task:
        if task.value == name:
            return task
    raise ValueError(f"unknown task {name!r}; expected one of {[t.value for t in Task]}")


def _build_split_for_task(ds, samples, n_test: int, n_folds: int, seed: int):
    labels = [s.label for s in samples if s.label.image_id in set(ds.ids)]
    manufacturers = {s.label.image_id: "synthetic" for s in samples}
    patients = {s.label.image_id: s.patient_id for s in samples}
    full, _ = splits.cv_split(labels, manufacturers, patients, n_test=n_test, n_folds=n_folds, seed=seed)
    return full


def _cmd_train(args: argparse.Namespace) -> int:
    from . import nn

    cfg_dict = _load_config(args.config)
    task = _task_from_name(args.task)
    samples = load_dataset(args.data)
    ds = nn.TaskDataset.from_samples(samples, task)
    spec = nn.NetworkSpec.from_dict(cfg_dict["network"]) if "network" in cfg_dict else nn.NetworkSpec()
    train_cfg = (
        nn.TrainConfig.from_dict({**nn.TrainConfig().to_dict(), **cfg_dict.get("train", {}), "seed": args.seed})
        if "train" in cfg_dict
        else nn.TrainConfig(seed=args.seed)
    )
    n_test = int(cfg_dict.get("n_test", max(2, len(ds.ids) // 5)))
    n_folds = int(cfg_dict.get("n_folds", 5))
    split = _build_split_for_task(ds, samples, n_test, n_folds, args.seed)
    model = nn.train_fold(ds, split, args.fold, spec, train_cfg)
    nn.save_model(model, args.out)
    print(
        json.dumps(
            {
                "task": task.value,
                "fold": args.fold,
                "epochs_run": model.epochs_run,
                "best_validation_loss": model.best_validation_loss,
                "model": str(args.out),
            }
        )
    )
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    from . import nn

    model = nn.load_model(args.model)
    samples = load_dataset(args.data)
    task = _task_from_name(model.task)
    ds = nn.TaskDataset.from_samples(samples, task)
    index = ds.index
    ids = list(ds.ids)
    evaluation = nn.evaluate_on_test(model, ds, ids)
    cm = metrics.ConfusionMatrix.from_predictions(evaluation.labels, evaluation.predictions)
    report = metrics.classification_metrics(cm, task=model.task)
    auc = metrics.roc_auc(evaluation.probabilities[:, 1], evaluation.labels)
    payload = report.to_dict()
    payload["auc_rank"] = auc
    payload["auc_hard"] = metrics.hard_decision_auc(evaluation.labels, evaluation.predictions)
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload))
    return 0


def _cmd_learning_curve(args: argparse.Namespace) -> int:
    from . import nn

    cfg_dict = _load_config(args.config)
    task = _task_from_name(args.task)
    samples = load_dataset(args.data)
    ds = nn.TaskDataset.from_samples(samples, task)
    spec = nn.NetworkSpec.from_dict(cfg_dict["network"]) if "network" in cfg_dict else nn.NetworkSpec()
    train_cfg = (
        nn.TrainConfig.from_dict({**nn.TrainConfig().to_dict(), **cfg_dict.get("train", {}), "seed": args.seed})
        if "train" in cfg_dict
        else nn.TrainConfig(seed=args.seed)
    )
    n_test = int(cfg_dict.get("n_test", max(2, len(ds.ids) // 5)))
    n_folds = int(cfg_dict.get("n_folds", 2))
    split = _build_split_for_task(ds, samples, n_test, n_folds, args.seed)
    sizes = [int(s) for s in args.sizes.split(",")]
    points = nn.learning_curve(ds, split, sizes, spec, train_cfg)
    payload = [
        {"size": p.size, "mean_ba": p.mean_ba, "std_ba": p.std_ba, "fold_bas": list(p.fold_bas)}
        for p in points
    ]
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload))
    return 0


def _cmd_audit_gado(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    text = Path(args.catalog).read_text()
    fmt = args.format or ("jsonl" if args.catalog.endswith((".jsonl", ".ndjson")) else "csv")
    catalog = cohort.parse_catalog(text, format=fmt, source=args.catalog)
    labels = [consensus_from_dict(r) for r in read_jsonl(Path(args.labels).read_text())]
    rules = cohort.KeywordRules(
        t1w_patterns=tuple(cfg.get("t1w_patterns", cohort.DEFAULT_T1W_PATTERNS)),
        gadolinium_markers=tuple(cfg.get("gadolinium_markers", cohort.DEFAULT_GADOLINIUM_MARKERS)),
    )
    audit = cohort.audit_gadolinium_keywords(catalog, labels, rules)
    payload = audit.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, indent=2))
    print(json.dumps(payload["table"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="t1qc", description="3D T1w brain MRI quality-control pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required, help="output path")

    p = sub.add_parser("synth", help="generate a labeled phantom dataset")
    common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--shape")
    p.add_argument("--mix")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("select", help="select the T1w cohort from a metadata catalog")
    common(p)
    p.add_argument("--catalog", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--min-slices", type=int, default=40)
    p.set_defaults(func=_cmd_select)

    p = sub.add_parser("preprocess", help="resample, align, rescale and crop volumes")
    common(p)
    p.add_argument("--input", required=True, help=".nii file or directory")
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("serve-annotate", help="serve the annotation API and UI")
    common(p, out_required=False)
    p.add_argument("--data", required=True, help="dataset directory (volumes + labels.jsonl)")
    p.add_argument("--raters", default="rater1,rater2")
    p.add_argument("--slices", help="pre-generated slice PNG directory")
    p.add_argument("--ui", help="static UI directory")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=_cmd_serve_annotate)

    p = sub.add_parser("consensus", help="merge two raters' annotation files")
    common(p)
    p.add_argument("--annotations", required=True, help="JSON-lines of Annotation records")
    p.add_argument("--resolutions", help="JSON map image_id -> keep_sr for SR conflicts")
    p.set_defaults(func=_cmd_consensus)

    p = sub.add_parser("kappa", help="inter-rater agreement per characteristic")
    common(p, out_required=False)
    p.add_argument("--annotations", required=True)
    p.add_argument("--weighting", choices=("linear", "quadratic"), default="linear")
    p.set_defaults(func=_cmd_kappa)

    p = sub.add_parser("train", help="train one cross-validation fold")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--fold", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained model on a dataset")
    common(p, out_required=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("learning-curve", help="balanced accuracy vs training-set size")
    common(p, out_required=False)
    p.add_argument("--data", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--sizes", required=True, help="comma-separated training sizes")
    p.set_defaults(func=_cmd_learning_curve)

    p = sub.add_parser("audit-gado", help="gadolinium keyword audit against manual labels")
    common(p, out_required=False)
    p.add_argument("--catalog", required=True)
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.add_argument("--labels", required=True, help="JSON-lines of ConsensusLabel records")
    p.set_defaults(func=_cmd_audit_gado)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(e).__name__, "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
