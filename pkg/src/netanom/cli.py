"""Command-line pipeline: sample, train, detect, evaluate, roc, simulate, synth.

Commands compose through files on disk and are reproducible: all randomness
flows from the --seed flag, and every run writes exactly one manifest next
to its outputs recording resolved parameters and input/output digests.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import __version__
from ._docjson import digest_of_bytes, pretty_dumps
from .collab import SimulationError, load_simconfig, replay, run_simulation, simconfig_to_doc
from .decision import (
    DecisionError,
    DetectionConfig,
    classify_scores,
    ensure_bound,
    load_profile_file,
    save_profile_file,
    train_profile,
)
from .evaluation import (
    EvaluationError,
    confusion,
    metrics,
    render_table,
    report_to_doc,
    roc_points_to_csv,
    roc_sweep,
)
from .gmm import EmConfig, GmmError
from .ingest import (
    IngestError,
    SamplePlan,
    default_schema,
    load_schema,
    parse_flow_csvs,
    stratified_sample,
    write_flow_csv,
)
from .preprocess import (
    PreprocessError,
    fit_preprocess,
    load_preprocess,
    parse_reduction_mode,
    save_preprocess,
)

_ERRORS = (
    IngestError,
    PreprocessError,
    GmmError,
    DecisionError,
    EvaluationError,
    SimulationError,
    OSError,
    ValueError,
)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netanom",
        description="Flow anomaly detection: GMM density scoring with an IQR-band rule.",
    )
    parser.add_argument("--version", action="version", version=f"netanom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw a seeded train/test split from flow CSVs")
    p.add_argument("--input", nargs="+", required=True, metavar="CSV")
    p.add_argument("--schema", default=None, help="schema JSON (default: bundled layout)")
    p.add_argument("--size", type=int, required=True, help="total records to draw")
    p.add_argument("--normal-frac", type=float, default=0.65)
    p.add_argument("--train-frac", type=float, default=0.6, help="share of normals used for training")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("train", help="fit preprocessing and a normal profile")
    p.add_argument("--train", required=True, metavar="CSV")
    p.add_argument("--schema", default=None)
    p.add_argument("--features", default="table1", help="table1 or pca:<k>")
    p.add_argument("--components", default="auto", help="mixture size K, or 'auto' (= feature count)")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="PROFILE_JSON")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("detect", help="classify records against a profile")
    p.add_argument("--profile", required=True)
    p.add_argument("--preprocess", default=None, help="default: <profile>.preprocess.json")
    p.add_argument("--input", required=True, metavar="CSV")
    p.add_argument("--w", type=float, default=1.5)
    p.add_argument("--allow-any-w", action="store_true")
    p.add_argument("--out", required=True, metavar="VERDICTS_CSV")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("evaluate", help="metrics of one w on a labeled test set")
    p.add_argument("--profile", required=True)
    p.add_argument("--preprocess", default=None)
    p.add_argument("--test", required=True, metavar="CSV")
    p.add_argument("--w", type=float, required=True)
    p.add_argument("--allow-any-w", action="store_true")
    p.add_argument("--out", required=True, metavar="PREFIX")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("roc", help="sweep w over a grid and emit ROC data")
    p.add_argument("--profile", required=True)
    p.add_argument("--preprocess", default=None)
    p.add_argument("--test", required=True, metavar="CSV")
    p.add_argument("--w-grid", required=True, metavar="A:B:STEP")
    p.add_argument("--out", required=True, metavar="PREFIX")
    p.set_defaults(func=_cmd_roc)

    p = sub.add_parser("simulate", help="multi-node collaborative detection run")
    p.add_argument("--config", required=True, metavar="SIM_JSON")
    p.add_argument("--profile", required=True)
    p.add_argument("--preprocess", default=None)
    p.add_argument("--test", required=True, metavar="CSV")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("synth", help="generate a seeded synthetic flow CSV")
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--attack-frac", type=float, default=0.35)
    p.add_argument("--schema-out", default=None, help="also write the bundled schema JSON here")
    p.add_argument("--out", required=True, metavar="CSV")
    p.set_defaults(func=_cmd_synth)

    return parser


def _load_schema_arg(path: str | None):
    return load_schema(Path(path)) if path else default_schema()


def _file_digest(path) -> str:
    return digest_of_bytes(Path(path).read_bytes())


def _write_manifest(
    manifest_path: Path,
    command: str,
    parameters: dict,
    seed: int | None,
    inputs: list,
    outputs: list,
    started: float,
) -> None:
    doc = {
        "version": 1,
        "command": command,
        "parameters": parameters,
        "seed": seed,
        "artifact_version": __version__,
        "input_digests": {str(p): _file_digest(p) for p in inputs},
        "output_digests": {str(p): _file_digest(p) for p in outputs},
        "duration_seconds": time.perf_counter() - started,
    }
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(pretty_dumps(doc), encoding="utf-8")


def _sibling(path: Path, tag: str) -> Path:
    return path.with_name(path.stem + f".{tag}.json")


def _cmd_sample(args, parser) -> int:
    if args.size <= 0:
        parser.error("--size must be positive")
    for name in ("normal_frac", "train_frac"):
        if not 0.0 <= getattr(args, name) <= 1.0:
            parser.error(f"--{name.replace('_', '-')} must be in [0, 1]")
    started = time.perf_counter()
    schema = _load_schema_arg(args.schema)
    records = parse_flow_csvs(args.input, schema)
    plan = SamplePlan(args.size, args.normal_frac, args.train_frac, args.seed)
    train, test = stratified_sample(records, plan)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_path = out / "train_normal.csv"
    test_path = out / "test.csv"
    write_flow_csv(train, schema, train_path)
    write_flow_csv(test, schema, test_path)
    _write_manifest(
        out / "manifest.json",
        "sample",
        {
            "input": [str(p) for p in args.input],
            "schema": args.schema or "<bundled-default>",
            "size": args.size,
            "normal_frac": args.normal_frac,
            "train_frac": args.train_frac,
            "out": str(out),
        },
        args.seed,
        list(args.input) + ([args.schema] if args.schema else []),
        [train_path, test_path],
        started,
    )
    print(f"sampled {len(train)} training normals and {len(test)} test records into {out}")
    return 0


def _cmd_train(args, parser) -> int:
    started = time.perf_counter()
    try:
        parse_reduction_mode(args.features)
    except PreprocessError as exc:
        parser.error(str(exc))
    if args.components != "auto":
        try:
            k = int(args.components)
        except ValueError:
            parser.error("--components must be an integer or 'auto'")
        if k < 1:
            parser.error("--components must be >= 1")
    schema = _load_schema_arg(args.schema)
    records = parse_flow_csvs([args.train], schema)
    if not records:
        print("error: training file has no records", file=sys.stderr)
        return 1
    for rec in records:
        if rec.truth is None:
            print(f"error: unlabeled row in training input: {rec.origin[0]} row {rec.origin[1]}", file=sys.stderr)
            return 1
        if rec.truth == 1:
            print(f"error: attack-labeled row in training input: {rec.origin[0]} row {rec.origin[1]}", file=sys.stderr)
            return 1

    preprocess = fit_preprocess(records, schema, args.features)
    matrix = preprocess.apply_records(records)
    k = matrix.shape[1] if args.components == "auto" else int(args.components)
    cfg = EmConfig(n_components=k, max_iter=args.max_iter, tol=args.tol, seed=args.seed)
    profile = train_profile(matrix, cfg, preprocess_digest=preprocess.digest())

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    preprocess_path = _sibling(out, "preprocess")
    save_preprocess(preprocess, preprocess_path)
    save_profile_file(profile, out)
    _write_manifest(
        _sibling(out, "manifest"),
        "train",
        {
            "train": args.train,
            "schema": args.schema or "<bundled-default>",
            "features": args.features,
            "components": k,
            "tol": args.tol,
            "max_iter": args.max_iter,
            "out": str(out),
        },
        args.seed,
        [args.train] + ([args.schema] if args.schema else []),
        [out, preprocess_path],
        started,
    )
    rep = profile.fit_report
    print(
        f"trained K={k} profile on {len(records)} normals "
        f"(iterations={rep.iterations}, converged={rep.converged}); wrote {out}"
    )
    return 0


def _load_pipeline(args):
    profile_path = Path(args.profile)
    preprocess_path = Path(args.preprocess) if args.preprocess else _sibling(profile_path, "preprocess")
    profile = load_profile_file(profile_path)
    preprocess = load_preprocess(preprocess_path)
    ensure_bound(profile, preprocess)
    return profile, preprocess, profile_path, preprocess_path


def _detection_config(args, parser) -> DetectionConfig:
    try:
        return DetectionConfig(args.w, enforce_range=not args.allow_any_w)
    except DecisionError as exc:
        parser.error(str(exc))


def _cmd_detect(args, parser) -> int:
    started = time.perf_counter()
    det = _detection_config(args, parser)
    profile, preprocess, profile_path, preprocess_path = _load_pipeline(args)
    records = parse_flow_csvs([args.input], preprocess.schema)

    lines = ["origin_file,origin_row,score,label"]
    if records:
        scores = profile.score_matrix(preprocess.apply_records(records))
        flagged = classify_scores(scores, profile, det)
        for rec, score, is_attack in zip(records, scores, flagged):
            label = "attack" if is_attack else "normal"
            lines.append(f"{rec.origin[0]},{rec.origin[1]},{float(score)!r},{label}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(
        _sibling(out, "manifest"),
        "detect",
        {"profile": args.profile, "preprocess": str(preprocess_path), "input": args.input, "w": args.w, "out": str(out)},
        None,
        [profile_path, preprocess_path, args.input],
        [out],
        started,
    )
    print(f"classified {len(records)} records at w={args.w:g}; wrote {out}")
    return 0


def _require_truths(records):
    for rec in records:
        if rec.truth is None:
            raise EvaluationError(
                f"unlabeled row: {rec.origin[0]} row {rec.origin[1]}; metrics need ground truth"
            )
    return [rec.truth for rec in records]


def _cmd_evaluate(args, parser) -> int:
    started = time.perf_counter()
    det = _detection_config(args, parser)
    profile, preprocess, profile_path, preprocess_path = _load_pipeline(args)
    records = parse_flow_csvs([args.test], preprocess.schema)
    if not records:
        print("error: test file has no records", file=sys.stderr)
        return 1
    truths = _require_truths(records)
    scores = profile.score_matrix(preprocess.apply_records(records))
    flagged = classify_scores(scores, profile, det)
    report = metrics(confusion(flagged.astype(int), truths), w=args.w)

    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    json_path = prefix.with_suffix(".json")
    text_path = prefix.with_suffix(".txt")
    json_path.write_text(pretty_dumps(report_to_doc(report)), encoding="utf-8")
    text_path.write_text(render_table([report]), encoding="utf-8")
    _write_manifest(
        _sibling(prefix, "manifest"),
        "evaluate",
        {"profile": args.profile, "preprocess": str(preprocess_path), "test": args.test, "w": args.w, "out": str(prefix)},
        None,
        [profile_path, preprocess_path, args.test],
        [json_path, text_path],
        started,
    )
    print(render_table([report]), end="")
    return 0


def _parse_w_grid(spec: str, parser) -> list[float]:
    parts = spec.split(":")
    if len(parts) != 3:
        parser.error("--w-grid must look like A:B:STEP, e.g. 1.5:3:0.5")
    try:
        a, b, step = (float(x) for x in parts)
    except ValueError:
        parser.error("--w-grid values must be numbers")
    if step <= 0 or a < 0 or b < a:
        parser.error("--w-grid needs 0 <= A <= B and STEP > 0")
    grid = []
    i = 0
    while (w := a + i * step) <= b + 1e-9:
        grid.append(round(w, 12))
        i += 1
    return grid


def _cmd_roc(args, parser) -> int:
    started = time.perf_counter()
    grid = _parse_w_grid(args.w_grid, parser)
    profile, preprocess, profile_path, preprocess_path = _load_pipeline(args)
    records = parse_flow_csvs([args.test], preprocess.schema)
    if not records:
        print("error: test file has no records", file=sys.stderr)
        return 1
    truths = _require_truths(records)
    matrix = preprocess.apply_records(records)
    points = roc_sweep(matrix, truths, profile, grid)

    reports = []
    scores = profile.score_matrix(matrix)
    for w in grid:
        flagged = classify_scores(scores, profile, DetectionConfig(w, enforce_range=False))
        reports.append(metrics(confusion(flagged.astype(int), truths), w=w))

    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_suffix(".csv")
    json_path = prefix.with_suffix(".json")
    text_path = prefix.with_suffix(".txt")
    csv_path.write_text(roc_points_to_csv(points), encoding="utf-8")
    json_path.write_text(pretty_dumps({"version": 1, "points": [report_to_doc(r) for r in reports]}), encoding="utf-8")
    text_path.write_text(render_table(reports, include_reference=True), encoding="utf-8")
    _write_manifest(
        _sibling(prefix, "manifest"),
        "roc",
        {"profile": args.profile, "preprocess": str(preprocess_path), "test": args.test, "w_grid": args.w_grid, "out": str(prefix)},
        None,
        [profile_path, preprocess_path, args.test],
        [csv_path, json_path, text_path],
        started,
    )
    print(render_table(reports), end="")
    return 0


def _cmd_simulate(args, parser) -> int:
    started = time.perf_counter()
    cfg = load_simconfig(args.config)
    profile, preprocess, profile_path, preprocess_path = _load_pipeline(args)
    records = parse_flow_csvs([args.test], preprocess.schema)
    if not records:
        print("error: test file has no records", file=sys.stderr)
        return 1
    _require_truths(records)
    store = replay(records, cfg, preprocess.schema)
    outcome = run_simulation(store, profile, preprocess, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for node, report in outcome.per_node_reports.items():
        path = out / f"node_{node}.json"
        path.write_text(pretty_dumps(report_to_doc(report)), encoding="utf-8")
        written.append(path)
    agg_json = out / "aggregate.json"
    agg_text = out / "aggregate.txt"
    agg_json.write_text(pretty_dumps(report_to_doc(outcome.aggregate_report)), encoding="utf-8")
    agg_text.write_text(render_table([outcome.aggregate_report]), encoding="utf-8")
    written += [agg_json, agg_text]

    manifest_extras = {
        "simulation": simconfig_to_doc(cfg),
        "failed_nodes": list(outcome.failed_nodes),
        "partial": outcome.partial,
        "records": len(records),
    }
    _write_manifest(
        out / "manifest.json",
        "simulate",
        {"config": args.config, "profile": args.profile, "preprocess": str(preprocess_path), "test": args.test, "out": str(out), **manifest_extras},
        None,
        [args.config, profile_path, preprocess_path, args.test],
        written,
        started,
    )
    status = f"partial (failed: {', '.join(outcome.failed_nodes)})" if outcome.partial else "complete"
    print(f"simulated {len(cfg.nodes)} node(s) over {len(records)} records [{status}]; wrote {out}")
    return 0


def _cmd_synth(args, parser) -> int:
    from .ingest import save_schema
    from .synth import write_synthetic_csv

    if args.rows <= 0:
        parser.error("--rows must be positive")
    if not 0.0 <= args.attack_frac <= 1.0:
        parser.error("--attack-frac must be in [0, 1]")
    started = time.perf_counter()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    summary = write_synthetic_csv(out, args.rows, args.seed, args.attack_frac)
    outputs = [out]
    if args.schema_out:
        save_schema(default_schema(), args.schema_out)
        outputs.append(Path(args.schema_out))
    _write_manifest(
        _sibling(out, "manifest"),
        "synth",
        {"rows": args.rows, "attack_frac": args.attack_frac, "out": str(out)},
        args.seed,
        [],
        outputs,
        started,
    )
    print(f"wrote {summary['rows']} rows ({summary['normal']} normal / {summary['attack']} attack) to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
