"""Single entry point exposing every pipeline stage.

Subcommands: index, thresholds, match, tsplit, tlc, eval, analyze. Every
run writes a ``run.json`` provenance record next to its outputs, and every
output artifact embeds the config that produced it (JSONL outputs carry it
as a leading ``{"_run": ...}`` header line), so any artifact can be
replayed from itself.

A JSON config file may supply defaults (``--config``); explicit flags win.
Paths are recorded exactly as given. Relative input paths resolve against
$MEMEKIT_DATA_ROOT when it is set; flags and outputs are never rerouted.
Exit codes: 0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__, analysis, corpus, evaluation, fusion, jsonio, thresholds, tlc, tsplit
from .index import ENTRY_EXAMPLE, ENTRY_TEMPLATE, EntryMeta, build_index, query_knn_batch

DATA_ROOT_ENV = "MEMEKIT_DATA_ROOT"


class CliError(Exception):
    """Data-level failure; maps to exit code 1."""


def _data_path(path: str) -> str:
    """Resolve a relative input path against the optional data root."""
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not os.path.isabs(path) and not os.path.exists(path):
        candidate = os.path.join(root, path)
        if os.path.exists(candidate):
            return candidate
    return path


def _load_kb(args):
    emb = corpus.load_embeddings(_data_path(args.kb_emb))
    templates = corpus.load_kb(_data_path(args.kb), emb)
    return templates, emb


def _load_dataset(args):
    emb = corpus.load_embeddings(_data_path(args.dataset_emb))
    task = corpus.load_task(_data_path(args.task))
    records = corpus.load_dataset(_data_path(args.dataset), emb, task)
    return records, emb, task


def _kb_image_index(templates, emb, include_examples=False):
    """Index over raw image rows of the KB matrix."""
    meta = [None] * emb.n_rows
    for t in templates:
        meta[t.image_row] = EntryMeta(ENTRY_TEMPLATE, t.template_id)
        for r in t.example_image_rows:
            meta[r] = EntryMeta(ENTRY_EXAMPLE, t.template_id)
    rows = [i for i, m in enumerate(meta) if m is not None]
    sub = emb.take(rows)
    sub_meta = [meta[i] for i in rows]
    return build_index(sub, sub_meta, include_examples=include_examples), rows


def _run_config(args, subcommand: str) -> dict:
    # threads caps workers without affecting outputs, so it stays out of
    # provenance: the same run at any thread count is the same run.
    skip = {"func", "config", "required_args", "threads"}
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    return {"subcommand": subcommand, "version": __version__, "args": cfg}


def _write_provenance(out_path: str, run_config: dict) -> None:
    out_dir = Path(out_path).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonio.write_json(out_dir / "run.json", run_config)


def _load_profiles_for(args, templates, emb, method):
    """Profiles from --thresholds when given, else computed from the KB."""
    if getattr(args, "thresholds", None):
        profiles, glob = thresholds.load_thresholds(_data_path(args.thresholds))
        if glob.method != method:
            raise CliError(
                f"thresholds file was built with method {glob.method!r}, run asked for {method!r}"
            )
        missing = [t.template_id for t in templates if t.template_id not in profiles]
        if missing:
            raise CliError(f"thresholds file is missing {len(missing)} templates, e.g. {missing[0]!r}")
        return profiles, glob
    return thresholds.build_profiles(templates, emb, method)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_index(args) -> int:
    templates, emb = _load_kb(args)
    idx, _ = _kb_image_index(templates, emb, include_examples=args.include_examples)
    n_templates, n_examples = corpus.kb_counts(templates)
    rc = _run_config(args, "index")
    doc = {
        "entries": idx.size,
        "dim": idx.dim,
        "templates": n_templates,
        "examples": n_examples,
        "include_examples": args.include_examples,
        "run_config": rc,
    }
    _write_provenance(args.out, rc)
    jsonio.write_json(args.out, doc)
    print(f"indexed {idx.size} entries ({n_templates} templates, {n_examples} examples)")
    return 0


def _threshold_vec_fn(args, emb):
    """Fused-vector hook for thresholds; image-only stays the default."""
    mode = fusion.parse_mode(args.fusion or "image")
    if mode == fusion.IMAGE_ONLY:
        return None
    if mode == fusion.LATE:
        raise CliError("late fusion merges votes at prediction time; thresholds cannot use it")

    def vec_fn(image_row, text_row):
        image = None if image_row is None else emb.row(image_row)
        text = None if text_row is None else emb.row(text_row)
        return fusion.fuse(image, text, mode)

    return vec_fn


def cmd_thresholds(args) -> int:
    templates, emb = _load_kb(args)
    profiles, glob = thresholds.build_profiles(
        templates, emb, args.method, vec_fn=_threshold_vec_fn(args, emb)
    )
    rc = _run_config(args, "thresholds")
    _write_provenance(args.out, rc)
    thresholds.save_thresholds(profiles, glob, args.out, run_config=rc)
    n_fallback = sum(1 for p in profiles.values() if p.fallback)
    print(
        f"thresholds[{args.method}] for {len(profiles)} templates "
        f"({n_fallback} on global fallback {glob.value:.6g})"
    )
    return 0


def cmd_match(args) -> int:
    templates, kb_emb = _load_kb(args)
    records, ds_emb, _ = _load_dataset(args)
    idx, _ = _kb_image_index(templates, kb_emb, include_examples=args.include_examples)
    profiles = None
    if args.thresholds:
        profiles, _ = thresholds.load_thresholds(_data_path(args.thresholds))
    queries = [ds_emb.row(r.image_row) for r in records]
    hits = query_knn_batch(idx, queries, k=1, threads=args.threads)
    rows = []
    for rec, (hit,) in zip(records, hits):
        row = {"item_id": rec.item_id, "template_id": hit.template_id, "distance": hit.distance}
        if profiles is not None:
            row["is_instance"] = thresholds.classify_item(hit.distance, profiles[hit.template_id]) == thresholds.INSTANCE
        rows.append(row)
    rc = _run_config(args, "match")
    _write_provenance(args.out, rc)
    jsonio.write_jsonl(args.out, rows, header=rc)
    print(f"matched {len(rows)} items against {idx.size} entries")
    return 0


def cmd_tsplit_run(args) -> int:
    templates, kb_emb = _load_kb(args)
    records, ds_emb, _ = _load_dataset(args)
    profiles, _ = _load_profiles_for(args, templates, kb_emb, args.method)
    idx, _ = _kb_image_index(templates, kb_emb, include_examples=False)

    if args.mode == "downsample":
        plan = tsplit.tsplit_downsample_mode(
            records, idx, profiles, ds_emb, seed=args.seed,
            threshold_method=args.method, threads=args.threads,
        )
    else:
        plan = tsplit.tsplit_full_mode(
            records, idx, profiles, ds_emb, seed=args.seed,
            threshold_method=args.method, threads=args.threads,
        )
        if args.mode == "full-downsample":
            if args.downsample_size is None:
                raise CliError("--downsample-size is required for mode full-downsample")
            plan = tsplit.tsplit_downsample_by_template(
                plan, args.downsample_size, args.val_downsample_size
            )

    leaks = plan.leaky_objects()
    if leaks:
        raise CliError(f"internal error: {len(leaks)} objects span multiple splits")
    rc = _run_config(args, "tsplit.run")
    _write_provenance(args.out, rc)
    tsplit.save_plan(plan, args.out, run_config=rc)
    for warning in plan.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"{'split':<8} {'items':>6} {'templates':>10} {'uis':>6}")
    for split, row in plan.summary().items():
        print(f"{split:<8} {row['items']:>6} {row['templates']:>10} {row['uis']:>6}")
    return 0


def _records_for_role(records, plan_path, role):
    if plan_path is None:
        return records
    plan = tsplit.load_plan(_data_path(plan_path))
    keep = {i for i, s in plan.assignments.items() if s == role}
    return [r for r in records if r.item_id in keep]


def cmd_tlc_fit(args) -> int:
    templates, kb_emb = _load_kb(args)
    records, ds_emb, _ = _load_dataset(args)
    train = _records_for_role(records, args.split, args.split_role)
    if not train:
        raise CliError("no training records selected")
    mode = fusion.parse_mode(args.fusion)
    if mode == fusion.LATE:
        raise CliError("fit per-modality models (image, text) to use late fusion")
    idx = tlc.build_reference(templates, kb_emb, mode, args.include_examples, args.normalize)
    model = tlc.tlc_fit(
        train, idx, ds_emb, mode, args.include_examples,
        k=args.k, vote_mode=f"{args.vote}_vote", ood_mode=args.ood,
        seed=args.seed, normalize=args.normalize,
    )
    rc = _run_config(args, "tlc.fit")
    _write_provenance(args.out, rc)
    tlc.save_model(model, args.out, run_config=rc)
    print(f"fitted {len(model.tallies)} templates from {len(train)} records")
    return 0


def _predict_late_fusion(args, templates, kb_emb, items, ds_emb):
    model_img = tlc.load_model(_data_path(args.model))
    model_txt = tlc.load_model(_data_path(args.text_model))
    if model_img.fusion_mode != fusion.IMAGE_ONLY or model_txt.fusion_mode != fusion.TEXT_ONLY:
        raise CliError(
            "late fusion expects --model fit with --fusion image and --text-model with --fusion text"
        )
    if tlc.OOD_NORM not in (model_img.ood_mode, model_txt.ood_mode):
        raise CliError("late fusion runs without an OOD gate; fit both models with --ood norm")
    index_img = tlc.build_reference(
        templates, kb_emb, fusion.IMAGE_ONLY, model_img.include_examples, model_img.normalize
    )
    index_txt = tlc.build_reference(
        templates, kb_emb, fusion.TEXT_ONLY, model_txt.include_examples, model_txt.normalize
    )
    return [
        tlc.tlc_predict_late_fusion(model_img, model_txt, rec, index_img, index_txt, ds_emb)
        for rec in items
    ]


def cmd_tlc_predict(args) -> int:
    templates, kb_emb = _load_kb(args)
    records, ds_emb, _ = _load_dataset(args)
    items = _records_for_role(records, args.split, args.split_role)
    if not items:
        raise CliError("no records selected for prediction")
    if args.text_model:
        preds = _predict_late_fusion(args, templates, kb_emb, items, ds_emb)
        rows = [
            {
                "item_id": p.item_id,
                "labels": list(p.labels),
                "matched_template_id": p.matched_template_id,
                "backoff_reason": p.backoff_reason,
            }
            for p in preds
        ]
        rc = _run_config(args, "tlc.predict")
        _write_provenance(args.out, rc)
        jsonio.write_jsonl(args.out, rows, header=rc)
        print(f"predicted {len(rows)} items (late fusion)")
        return 0
    model = tlc.load_model(_data_path(args.model))
    idx = tlc.build_reference(
        templates, kb_emb, model.fusion_mode, model.include_examples, model.normalize
    )
    max_profiles = None
    if model.ood_mode != tlc.OOD_NORM:
        if not args.thresholds:
            raise CliError("OOD modes require --thresholds built with method max")
        max_profiles, glob = thresholds.load_thresholds(_data_path(args.thresholds))
        if glob.method != "max":
            raise CliError("the OOD gate compares against max-method thresholds")
    rows = []
    for rec in items:
        pred = tlc.tlc_predict(model, rec, idx, ds_emb, max_profiles)
        rows.append(
            {
                "item_id": pred.item_id,
                "labels": list(pred.labels),
                "matched_template_id": pred.matched_template_id,
                "backoff_reason": pred.backoff_reason,
            }
        )
    rc = _run_config(args, "tlc.predict")
    _write_provenance(args.out, rc)
    jsonio.write_jsonl(args.out, rows, header=rc)
    print(f"predicted {len(rows)} items")
    return 0


def _load_preds(path):
    _, rows = jsonio.read_jsonl(_data_path(path))
    return rows


def cmd_tlc_eval(args) -> int:
    return _eval_common(args, "tlc.eval")


def cmd_eval_f1(args) -> int:
    return _eval_common(args, "eval.f1")


def _eval_common(args, subcommand) -> int:
    task = corpus.load_task(_data_path(args.task))
    pred_rows = _load_preds(args.preds)
    golds_by_id = {}
    with open(_data_path(args.golds), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entry = json.loads(line)
                golds_by_id[entry["item_id"]] = entry["labels"]
    preds, golds = [], []
    for row in pred_rows:
        if row["item_id"] not in golds_by_id:
            raise CliError(f"prediction for unknown item {row['item_id']!r}")
        preds.append(row["labels"])
        golds.append(golds_by_id[row["item_id"]])
    report = evaluation.f1_report(preds, golds, task, convention=args.convention)
    doc = evaluation.report_to_dict(report)
    doc["n_items"] = len(preds)
    doc["average_requested"] = args.average
    doc["value"] = {"macro": report.macro, "weighted": report.weighted, "micro": report.micro}[args.average]
    rc = _run_config(args, subcommand)
    doc["run_config"] = rc
    if args.out:
        _write_provenance(args.out, rc)
        jsonio.write_json(args.out, doc)
    print(evaluation.format_table(report, task))
    return 0


def cmd_analyze_retrieve(args) -> int:
    templates, kb_emb = _load_kb(args)
    records, ds_emb, _ = _load_dataset(args)
    idx, _ = _kb_image_index(templates, kb_emb, include_examples=args.include_examples)
    pairs = analysis.retrieval_report(records, idx, args.n, ds_emb, threads=args.threads)
    rows = [
        {"template_id": p.template_id, "item_id": p.item_id, "distance": p.distance, "grouping": p.grouping}
        for p in pairs
    ]
    rc = _run_config(args, "analyze.retrieve")
    _write_provenance(args.out, rc)
    jsonio.write_jsonl(args.out, rows, header=rc)
    print(f"wrote {len(rows)} template-meme pairs")
    return 0


def cmd_analyze_centroids(args) -> int:
    templates, kb_emb = _load_kb(args)
    records, ds_emb, _ = _load_dataset(args)
    kb_vectors = [kb_emb.row(t.image_row) for t in templates]
    kb_ids = [t.template_id for t in templates]
    ds_vectors = [ds_emb.row(r.image_row) for r in records]
    ds_ids = [r.item_id for r in records]
    if args.side == "kb":
        report = analysis.centroid_report(kb_vectors, ds_vectors, ds_ids, args.k, args.seed, "kb")
    else:
        report = analysis.centroid_report(ds_vectors, kb_vectors, kb_ids, args.k, args.seed, "dataset")
    rc = _run_config(args, "analyze.centroids")
    doc = {
        "k": report.k,
        "fit_side": report.fit_side,
        "centroids": [
            {
                "centroid": list(e.centroid),
                "nearest_entry_id": e.nearest_entry_id,
                "distance": e.distance,
            }
            for e in report.entries
        ],
        "run_config": rc,
    }
    _write_provenance(args.out, rc)
    jsonio.write_json(args.out, doc)
    print(f"k-means(k={report.k}) on {report.fit_side}; nearest entries written")
    return 0


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _require(p, *names):
    """Mark options as required after the config merge, not at parse time,
    so a --config file can supply them."""
    existing = list(p.get_default("required_args") or ())
    p.set_defaults(required_args=existing + list(names))


def _add_kb_args(p):
    p.add_argument("--kb", help="KB manifest (kb.json)")
    p.add_argument("--kb-emb", help="KB embedding matrix (*.emb)")
    _require(p, "kb", "kb_emb")


def _add_dataset_args(p):
    p.add_argument("--dataset", help="dataset JSONL")
    p.add_argument("--dataset-emb", help="dataset embedding matrix (*.emb)")
    p.add_argument("--task", help="task meta JSON")
    _require(p, "dataset", "dataset_emb", "task")


def _add_common(p):
    p.add_argument("--threads", type=int, default=1, help="worker cap; never changes outputs")
    p.add_argument("--config", help="JSON config file supplying defaults; flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="memekit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"memekit {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("index", help="build the KB index and report entry counts")
    _add_kb_args(p)
    p.add_argument("--include-examples", action="store_true")
    p.add_argument("--out")
    _require(p, "out")
    _add_common(p)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("thresholds", help="per-template instance thresholds")
    _add_kb_args(p)
    p.add_argument("--method", choices=thresholds.METHODS)
    p.add_argument("--fusion", default="image", help="vector to threshold: image|text|concat|hadamard|norm_avg")
    p.add_argument("--out")
    _require(p, "method", "out")
    _add_common(p)
    p.set_defaults(func=cmd_thresholds)

    p = sub.add_parser("match", help="nearest template per dataset item")
    _add_kb_args(p)
    _add_dataset_args(p)
    p.add_argument("--include-examples", action="store_true")
    p.add_argument("--thresholds", help="adds an is_instance flag per item")
    p.add_argument("--out")
    _require(p, "out")
    _add_common(p)
    p.set_defaults(func=cmd_match)

    p_tsplit = sub.add_parser("tsplit", help="template-aware dataset splitting")
    tsplit_sub = p_tsplit.add_subparsers(dest="tsplit_cmd", required=True)
    p = tsplit_sub.add_parser("run", help="produce a split plan")
    _add_kb_args(p)
    _add_dataset_args(p)
    p.add_argument("--mode", choices=("downsample", "full", "full-downsample"))
    p.add_argument("--method", choices=thresholds.METHODS)
    p.add_argument("--seed", type=int)
    _require(p, "mode", "method", "seed")
    p.add_argument("--thresholds", help="reuse a thresholds.json instead of recomputing")
    p.add_argument("--downsample-size", type=int)
    p.add_argument("--val-downsample-size", type=int)
    p.add_argument(
        "--allow-shared-templates",
        action="store_true",
        help="reserved: equally-distributed-template splitting is not implemented",
    )
    p.add_argument("--out")
    _require(p, "out")
    _add_common(p)
    p.set_defaults(func=cmd_tsplit_run)

    p_tlc = sub.add_parser("tlc", help="nearest-template majority-label classifier")
    tlc_sub = p_tlc.add_subparsers(dest="tlc_cmd", required=True)
    p = tlc_sub.add_parser("fit")
    _add_kb_args(p)
    _add_dataset_args(p)
    p.add_argument("--split", help="split plan JSON; fit only on --split-role items")
    p.add_argument("--split-role", default="train", choices=tsplit.SPLITS)
    p.add_argument("--fusion", default="image", help="image|text|concat|hadamard|norm_avg")
    p.add_argument("--include-examples", action="store_true")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--vote", default="template", choices=("template", "label"))
    p.add_argument("--ood", default="norm", choices=tlc.OOD_MODES)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _require(p, "out")
    _add_common(p)
    p.set_defaults(func=cmd_tlc_fit)

    p = tlc_sub.add_parser("predict")
    _add_kb_args(p)
    _add_dataset_args(p)
    p.add_argument("--model")
    p.add_argument("--text-model", help="text-side model; switches prediction to late fusion")
    p.add_argument("--split", help="split plan JSON; predict only --split-role items")
    p.add_argument("--split-role", default="test", choices=tsplit.SPLITS)
    p.add_argument("--thresholds", help="max-method thresholds for the OOD gate")
    p.add_argument("--out")
    _require(p, "model", "out")
    _add_common(p)
    p.set_defaults(func=cmd_tlc_predict)

    p = tlc_sub.add_parser("eval")
    p.add_argument("--preds")
    p.add_argument("--golds", help="dataset JSONL carrying gold labels")
    p.add_argument("--task")
    _require(p, "preds", "golds", "task")
    p.add_argument("--average", default="macro", choices=("macro", "weighted", "micro"))
    p.add_argument("--convention", default=evaluation.MAX_OF_BOTH, choices=evaluation.CONVENTIONS)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_tlc_eval)

    p_eval = sub.add_parser("eval", help="F1 with the dual zero-division convention")
    eval_sub = p_eval.add_subparsers(dest="eval_cmd", required=True)
    p = eval_sub.add_parser("f1")
    p.add_argument("--preds")
    p.add_argument("--golds", help="dataset JSONL carrying gold labels")
    p.add_argument("--task")
    _require(p, "preds", "golds", "task")
    p.add_argument("--average", default="macro", choices=("macro", "weighted", "micro"))
    p.add_argument("--convention", default=evaluation.MAX_OF_BOTH, choices=evaluation.CONVENTIONS)
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_eval_f1)

    p_an = sub.add_parser("analyze", help="retrieval pairs and centroid reports")
    an_sub = p_an.add_subparsers(dest="analyze_cmd", required=True)
    p = an_sub.add_parser("retrieve")
    _add_kb_args(p)
    _add_dataset_args(p)
    p.add_argument("--n", type=int)
    p.add_argument("--include-examples", action="store_true")
    p.add_argument("--out")
    _require(p, "n", "out")
    _add_common(p)
    p.set_defaults(func=cmd_analyze_retrieve)

    p = an_sub.add_parser("centroids")
    _add_kb_args(p)
    _add_dataset_args(p)
    p.add_argument("--k", type=int)
    p.add_argument("--side", choices=("kb", "dataset"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    _require(p, "k", "side", "seed", "out")
    _add_common(p)
    p.set_defaults(func=cmd_analyze_centroids)

    return parser


def _apply_config_file(parser, args, argv):
    """Fill unset options from --config; explicit flags keep priority."""
    if not getattr(args, "config", None):
        return args
    with open(_data_path(args.config), "r", encoding="utf-8") as fh:
        defaults = json.load(fh)
    given = set()
    for token in argv:
        if token.startswith("--"):
            given.add(token.split("=", 1)[0].lstrip("-").replace("-", "_"))
    for key, value in defaults.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and attr not in given:
            setattr(args, attr, value)
    return args


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args = _apply_config_file(parser, args, argv)
    missing = [
        name for name in getattr(args, "required_args", ()) if getattr(args, name) is None
    ]
    if missing:
        flags = ", ".join("--" + name.replace("_", "-") for name in missing)
        print(f"error: missing required arguments: {flags}", file=sys.stderr)
        return 2
    if getattr(args, "threads", 1) is not None and getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return 2
    if getattr(args, "allow_shared_templates", False):
        print("error: --allow-shared-templates is reserved but not implemented", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (corpus.CorpusError, CliError, fusion.FusionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
