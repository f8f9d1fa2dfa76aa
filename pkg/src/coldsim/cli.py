"""Command-line interface.

Commands operate on a working directory (``--out``) holding the persisted
artifacts of earlier stages, so each stage can be rerun independently:

    ingest, split, train-backbone, cache-content, train-filter,
    export-finetune, simulate, warmup, evaluate, ablate, sweep,
    default-config

Exit codes: 0 success, 1 validation error (bad arguments, missing or
malformed inputs), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import filtering, pipeline, refiner, store, warmup
from .backbone import BackboneModel, train_backbone
from .content import (FileContentProvider, HttpContentProvider,
                      MockContentProvider, VectorCache, warm_cache)
from .corpus import (ColdWarmSplit, InteractionLog, ItemCatalog,
                     load_citeulike, load_movielens, make_cold_split)
from .evaluation import TASKS, adoption_rate, evaluate, format_report, reports_to_csv
from .filtering import TwoTowerFilter
from .refiner import DecisionLog, SimulationResult, prepare_finetune_data

logger = logging.getLogger(__name__)

DEFAULT_WORKDIR = "runs"


def _workdir(args) -> Path:
    return Path(args.out if args.out is not None else DEFAULT_WORKDIR)


def _save_dataset(out: Path, log: InteractionLog, catalog: ItemCatalog) -> None:
    doc = {
        "n_users": log.n_users,
        "n_items": log.n_items,
        "pairs": [list(p) for p in sorted(log.pairs)],
        "content": {str(i): t for i, t in sorted(catalog.content.items())},
        "titles": ({str(i): t for i, t in sorted(catalog.titles.items())}
                   if catalog.titles else None),
    }
    with open(out / "dataset.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, ensure_ascii=False)
        fh.write("\n")


def _load_dataset(out: Path):
    path = out / "dataset.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `ingest` first")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    log = InteractionLog.from_pairs(doc["n_users"], doc["n_items"],
                                    [tuple(p) for p in doc["pairs"]])
    catalog = ItemCatalog(
        content={int(i): t for i, t in doc["content"].items()},
        titles=({int(i): t for i, t in doc["titles"].items()}
                if doc.get("titles") else None))
    return log, catalog


def _load_split(out: Path) -> ColdWarmSplit:
    path = out / "split.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `split` first")
    return ColdWarmSplit.load(path)


def _load_backbone(out: Path) -> BackboneModel:
    if not (out / "backbone_user.cemb").exists():
        raise FileNotFoundError(f"backbone tables not found in {out}; "
                                f"run `train-backbone` first")
    return BackboneModel.load(out)


def _load_cache(out: Path) -> VectorCache:
    path = out / "content_cache.cemb"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `cache-content` first")
    return VectorCache.load(path)


def _load_filter(out: Path, variant: str, required: bool = True):
    path = out / f"filter_{variant}"
    if not (path / "manifest.json").exists():
        if required:
            raise FileNotFoundError(f"{path} not found; run `train-filter "
                                    f"--variant {variant}` first")
        return None
    return TwoTowerFilter.load(path)


def _content_provider(cfg, out: Path):
    c = cfg["content"]
    if c["provider"] == "mock":
        return MockContentProvider(dim=c["dim"], hash_seed=c["hash_seed"])
    if c["provider"] == "file":
        if not c["endpoint"]:
            raise ValueError("file provider needs content.endpoint "
                             "(path to a vector table)")
        return FileContentProvider(c["endpoint"])
    if c["provider"] == "http":
        if not c["endpoint"]:
            raise ValueError("http provider needs content.endpoint")
        return HttpContentProvider(c["endpoint"], timeout=c["timeout"],
                                   retries=c["retries"])
    raise ValueError(f"unknown content provider {c['provider']!r}")


def _assemble_pipeline(out: Path, cfg) -> pipeline.Pipeline:
    log, catalog = _load_dataset(out)
    split = _load_split(out)
    backbone = _load_backbone(out)
    cache = _load_cache(out)
    content_matrix = cache.matrix(log.n_items)
    pipe = pipeline.Pipeline(log=log, catalog=catalog, split=split,
                             backbone=backbone, content_matrix=content_matrix,
                             train_items=split.train_items_of(log.n_users))
    pipe.hist_means = filtering.history_content_means(pipe.train_items,
                                                      content_matrix)
    pipe.filter_b = _load_filter(out, "B", required=False)
    pipe.filter_l = _load_filter(out, "L", required=False)
    pipe.oracle = pipeline.make_oracle(cfg, content_matrix)
    return pipe


def _eval_model(out: Path) -> BackboneModel:
    """Backbone with the warmed item table when warmup has run."""
    model = _load_backbone(out)
    warmed = out / "warmed_item.cemb"
    if warmed.exists():
        model.item_emb = store.load_table(warmed).astype(np.float64)
    return model


def _save_simulations(out: Path, sims: dict[int, SimulationResult]) -> None:
    doc = {str(item): {"users": sim.users,
                       "fallback_used": bool(sim.fallback_used)}
           for item, sim in sorted(sims.items())}
    with open(out / "simulated.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def _load_simulations(out: Path) -> dict[int, SimulationResult]:
    path = out / "simulated.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `simulate` first")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return {int(item): SimulationResult(item=int(item), users=body["users"],
                                        fallback_used=body["fallback_used"])
            for item, body in doc.items()}


# ---------------------------------------------------------------- commands


def cmd_default_config(args, cfg) -> int:
    text = config_mod.dump_config(config_mod.default_config())
    sys.stdout.write(text)
    if args.out:
        out = _workdir(args)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(text, encoding="utf-8")
    return 0


def cmd_ingest(args, cfg) -> int:
    out = _workdir(args)
    out.mkdir(parents=True, exist_ok=True)
    dataset = args.dataset or cfg["data"]["dataset"]
    path = args.path or cfg["data"]["path"]
    if not path:
        raise ValueError("ingest needs --path (or data.path in the config)")
    if dataset == "citeulike":
        log, catalog = load_citeulike(path, mapping_path=out / "idmap.json")
    elif dataset == "movielens":
        log, catalog = load_movielens(path, mapping_path=out / "idmap.json",
                                      min_rating=cfg["data"]["min_rating"])
    else:
        raise ValueError(f"unknown dataset {dataset!r}")
    _save_dataset(out, log, catalog)
    print(f"ingested {dataset}: {log.n_users} users, {log.n_items} items, "
          f"{len(log.pairs)} interactions")
    return 0


def cmd_split(args, cfg) -> int:
    out = _workdir(args)
    log, _ = _load_dataset(out)
    split = make_cold_split(log, cfg["data"]["cold_frac"], cfg["data"]["seed"])
    split.save(out / "split.json")
    print(f"split: {len(split.warm_items)} warm / {len(split.cold_items)} cold "
          f"items; warm-train {len(split.warm_train)} pairs")
    return 0


def cmd_train_backbone(args, cfg) -> int:
    out = _workdir(args)
    log, _ = _load_dataset(out)
    split = _load_split(out)
    model = train_backbone(split, pipeline.backbone_config_from(cfg),
                           n_users=log.n_users, n_items=log.n_items)
    model.save(out)
    meta = {"dim": model.dim, "trained_epochs": model.trained_epochs,
            "fingerprint": config_mod.fingerprint(cfg)}
    (out / "backbone.json").write_text(
        json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    store.export_tsv(out / "backbone_item.tsv", model.item_emb[:50])
    print(f"backbone trained: {model.trained_epochs} epochs, dim {model.dim}")
    return 0


def cmd_cache_content(args, cfg) -> int:
    out = _workdir(args)
    _, catalog = _load_dataset(out)
    provider = _content_provider(cfg, out)
    cache = warm_cache(provider, catalog, out / "content_cache.cemb",
                       max_inflight=cfg["content"]["max_inflight"])
    print(f"content cache: {len(cache)} vectors, dim {cache.dim}")
    return 0


def cmd_train_filter(args, cfg) -> int:
    out = _workdir(args)
    pipe = _assemble_pipeline(out, cfg)
    variant = args.variant
    fcfg = pipeline.filter_config_from(cfg, seed_shift=0 if variant == "B" else 1)
    filt = TwoTowerFilter.init(variant, pipe.backbone.dim,
                               pipe.content_matrix.shape[1],
                               hidden=cfg["filter"]["hidden"],
                               out=cfg["filter"]["out"],
                               seed=cfg["filter"]["seed"] + (0 if variant == "B" else 100))
    if variant == "B":
        filt, history = filtering.train_behavior_filter(
            filt, pipe.backbone, pipe.content_matrix, pipe.split, fcfg)
    else:
        if pipe.filter_b is None:
            raise ValueError("train filter B before filter L (its item tower "
                             "builds the oracle contexts)")
        labeler = pipeline.oracle_labeler(pipe, pipe.oracle,
                                          cfg["refiner"]["context_len"])
        filt, history = filtering.train_coupled_filter(
            filt, pipe.backbone, pipe.content_matrix, pipe.split, labeler, fcfg)
    filt.save(out / f"filter_{variant}",
              train_config={**cfg["filter"], "variant": variant})
    best = max((h["val_ndcg"] for h in history), default=0.0)
    print(f"filter {variant} trained: {len(history)} epochs, "
          f"best val NDCG {best:.4f}")
    return 0


def cmd_export_finetune(args, cfg) -> int:
    out = _workdir(args)
    log, catalog = _load_dataset(out)
    split = _load_split(out)
    filt = _load_filter(out, "B")
    cache = _load_cache(out)
    records = prepare_finetune_data(
        split, catalog, filt, cache.matrix(log.n_items),
        mode=cfg["refiner"]["finetune_mode"], seed=cfg["data"]["seed"],
        n_positives=cfg["refiner"]["finetune_positives"],
        top_l=cfg["refiner"]["context_len"], out_path=out / "finetune.jsonl",
        n_users=log.n_users)
    n_yes = sum(1 for r in records if r.completion == "Yes")
    print(f"finetune export: {len(records)} records ({n_yes} Yes / "
          f"{len(records) - n_yes} No)")
    return 0


def cmd_simulate(args, cfg) -> int:
    out = _workdir(args)
    pipe = _assemble_pipeline(out, cfg)
    if pipe.filter_b is None and pipe.filter_l is None:
        raise ValueError("no trained filters found; run `train-filter` first")
    decision_log = DecisionLog()
    cache_path = out / "decisions.jsonl"
    if cache_path.exists():
        decision_log = DecisionLog.load(cache_path)
    sims = pipeline.simulate_all(pipe, cfg, use_b=pipe.filter_b is not None,
                                 use_l=pipe.filter_l is not None,
                                 decision_log=decision_log)
    _save_simulations(out, sims)
    decision_log.save(cache_path)
    stats = adoption_rate(decision_log)
    print(f"simulated {len(sims)} cold items; adoption rate "
          f"{stats.rate:.2%} ({stats.accepted}/{stats.filtered})")
    return 0


def cmd_warmup(args, cfg) -> int:
    out = _workdir(args)
    pipe = _assemble_pipeline(out, cfg)
    sims = _load_simulations(out)
    model, report = warmup.warm_all_cold(pipe.split, sims, pipe.backbone,
                                         pipeline.warmup_config_from(cfg),
                                         filt_b=pipe.filter_b,
                                         content_matrix=pipe.content_matrix)
    if cfg["warmup"]["retrain_with_simulated"]:
        model = pipeline.retrain_with_simulated(pipe, sims, cfg, model)
    store.save_table(out / "warmed_item.cemb", model.item_emb)
    warmup.save_warmup_report(out / "warmup_report.json", report)
    n_done = sum(1 for r in report if "skipped" not in r)
    print(f"warmed {n_done} cold items ({len(report) - n_done} skipped)")
    return 0


def cmd_evaluate(args, cfg) -> int:
    out = _workdir(args)
    split = _load_split(out)
    model = _eval_model(out)
    e = cfg["eval"]
    report = evaluate(model, split, task=args.task, k=e["k"],
                      n_users=e["users"], seed=e["seed"],
                      fingerprint=config_mod.fingerprint(cfg))
    report.save(out / f"eval_{args.task}.json")
    text = format_report(report)
    (out / f"eval_{args.task}.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_ablate(args, cfg) -> int:
    out = _workdir(args)
    pipe = _assemble_pipeline(out, cfg)
    reports = pipeline.run_ablation(args.variant, pipe, cfg,
                                    tasks=("overall", "warm", "cold"))
    doc = {task: {"recall": r.recall, "ndcg": r.ndcg, "k": r.k,
                  "n_users": r.n_users}
           for task, r in reports.items()}
    path = out / f"ablation_{args.variant}.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n",
                    encoding="utf-8")
    for task, r in reports.items():
        print(f"{args.variant} {task}: Recall@{r.k} {r.recall:.4f} "
              f"NDCG@{r.k} {r.ndcg:.4f}")
    return 0


def cmd_sweep(args, cfg) -> int:
    out = _workdir(args)
    pipe = _assemble_pipeline(out, cfg)
    try:
        values = [json.loads(v) for v in args.values.split(",") if v]
    except json.JSONDecodeError:
        raise ValueError(f"could not parse sweep values: {args.values!r}") from None
    rows = pipeline.sweep(args.param, values, pipe, cfg)
    path = out / f"sweep_{args.param}.csv"
    reports_to_csv(rows, path)
    print(f"swept {args.param} over {values}; wrote {path.name}")
    return 0


COMMANDS = {
    "default-config": cmd_default_config,
    "ingest": cmd_ingest,
    "split": cmd_split,
    "train-backbone": cmd_train_backbone,
    "cache-content": cmd_cache_content,
    "train-filter": cmd_train_filter,
    "export-finetune": cmd_export_finetune,
    "simulate": cmd_simulate,
    "warmup": cmd_warmup,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coldsim",
        description="Simulate interactions for cold items and warm their "
                    "embeddings.")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the global seed")
    parser.add_argument("--out", default=None,
                        help="working directory (default: runs)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("default-config", help="print the full default config")
    p = sub.add_parser("ingest", help="load a corpus into the working dir")
    p.add_argument("--dataset", choices=["citeulike", "movielens"], default=None)
    p.add_argument("--path", default=None, help="corpus directory")
    sub.add_parser("split", help="make the cold/warm split")
    sub.add_parser("train-backbone", help="train MF embeddings with BPR")
    sub.add_parser("cache-content", help="embed and cache item content")
    p = sub.add_parser("train-filter", help="train a two-tower filter")
    p.add_argument("--variant", choices=["B", "L"], required=True)
    sub.add_parser("export-finetune", help="write oracle fine-tuning JSONL")
    sub.add_parser("simulate", help="funnel-filter and refine all cold items")
    sub.add_parser("warmup", help="optimize cold item embeddings")
    p = sub.add_parser("evaluate", help="Recall/NDCG on a task")
    p.add_argument("--task", choices=list(TASKS), default="overall")
    p = sub.add_parser("ablate", help="run an ablation variant")
    p.add_argument("--variant", type=str.lower,
                   choices=list(pipeline.ABLATION_VARIANTS), required=True)
    p = sub.add_parser("sweep", help="sweep a parameter over values")
    p.add_argument("--param", choices=sorted(pipeline.SWEEP_PARAMS), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad arguments; that is a validation failure here
        return 1 if exc.code not in (0, None) else 0
    try:
        cfg = config_mod.load_config(args.config)
        cfg = config_mod.resolve_seeds(cfg, args.seed)
        return COMMANDS[args.command](args, cfg)
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        logger.error("%s", exc)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2
        logger.error("runtime failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
