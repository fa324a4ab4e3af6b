"""``reciprocal`` command line: prepare, train, evaluate, stream, adjust.

Every command works inside one run directory (``--out``) and records the
files it wrote in ``manifest.json`` there. Exit codes: 0 success, 1 runtime
error, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np

from . import backbone, crrs, harness
from .config import ExperimentConfig, load_config
from .dataset import (
    ConfigError, DataFormatError, ValidationError, derive_treatment_sets, generate_synthetic,
    k_core_filter, load_interactions, read_split, split, write_split,
)
from .metrics import MatchSet, RecommendationRun, evaluate_run
from .streaming import StreamingMetricsState

logger = logging.getLogger("reciprocal")

MODES = ("backbone", "dual", "crrs-simple", "crrs-rerank")


class UsageError(Exception):
    pass


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _update_manifest(run_dir: str, command: str, files: list[str]) -> None:
    path = os.path.join(run_dir, "manifest.json")
    manifest = {"commands": {}}
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    manifest["commands"][command] = sorted(files)
    manifest["files"] = sorted({f for fs in manifest["commands"].values() for f in fs} | {"manifest.json"})
    _write_json(path, manifest)


def _out_dir(cfg: ExperimentConfig) -> str:
    if not cfg.out:
        raise UsageError("--out is required (flag or 'out' in the config file)")
    return cfg.out


def cmd_prepare(cfg: ExperimentConfig) -> list[str]:
    out = _out_dir(cfg)
    if cfg.synthetic == (cfg.data is not None):
        raise UsageError("give exactly one of --synthetic or --data")
    if cfg.synthetic:
        raw = generate_synthetic(cfg.n, cfg.m, cfg.synthetic_dim, cfg.density,
                                 cfg.seed_for("synthetic"), cfg.sharpness)
        source = {"synthetic": {"n": cfg.n, "m": cfg.m, "dim": cfg.synthetic_dim,
                                "density": cfg.density, "sharpness": cfg.sharpness,
                                "seed": cfg.seed_for("synthetic")}}
    else:
        raw = load_interactions(cfg.data)
        source = {"data": os.path.abspath(cfg.data)}
    core = k_core_filter(raw, cfg.k_core)
    if core.empty:
        logger.warning("k-core filter with k=%d left no interactions", cfg.k_core)
    seed = cfg.seed_for("split")
    parts = split(core.log, cfg.ratios(), seed)
    meta = {
        "source": source, "root_seed": cfg.seed, "split_seed": seed,
        "ratios": list(cfg.ratios()), "k_core": cfg.k_core, "empty": core.empty,
        "reindex_a": core.a_ids.tolist(), "reindex_b": core.b_ids.tolist(),
        "sizes": {"train": len(parts.train), "validation": len(parts.validation),
                  "test": len(parts.test)},
    }
    files = write_split(parts, out, meta)
    _update_manifest(out, "prepare", files)
    return files


def _load_prepared(cfg: ExperimentConfig):
    out = _out_dir(cfg)
    return out, *read_split(out)


def cmd_train(cfg: ExperimentConfig, stage: str = "all") -> list[str]:
    out, sp, meta = _load_prepared(cfg)
    val = MatchSet(sp.validation.matched_pairs() - sp.train.matched_pairs())
    model = backbone.init_model(sp.n, sp.m, cfg.dim, cfg.seed_for("init"))
    pre = backbone.train(model, sp.train, val, cfg.train_config())
    ck_meta = {"stage": "pretrain", "best_epoch": pre.best_epoch, "optimizer": pre.optimizer,
               "root_seed": cfg.seed}
    backbone.save_model(pre.model, os.path.join(out, "backbone.npz"), ck_meta)
    files = ["backbone.npz", "history.json"]
    history = {"pretrain": {"best_epoch": pre.best_epoch, "epochs": pre.history}}
    if stage == "all":
        sets = derive_treatment_sets(sp.train)
        models = crrs.init_from_pretrained(pre.model)
        ft = crrs.counterfactual_finetune(models, sets, sp.train, cfg.finetune_config(), val)
        crrs.save_treatment_models(ft.models, os.path.join(out, "treatment_models.npz"),
                                   {"stage": "finetune", "best_epoch": ft.best_epoch,
                                    "root_seed": cfg.seed,
                                    "treatment_sizes": {"d11": len(sets.d11), "d10": len(sets.d10),
                                                        "d01": len(sets.d01)}})
        files.append("treatment_models.npz")
        history["finetune"] = {"best_epoch": ft.best_epoch, "epochs": ft.history}
    # the output location is left out so identical runs in different directories match
    history["config"] = {k: v for k, v in cfg.to_dict().items() if k != "out"}
    _write_json(os.path.join(out, "history.json"), history)
    _update_manifest(out, "train", files)
    return files


def _check_shape(sp, n: int, m: int, what: str) -> None:
    if (n, m) != (sp.n, sp.m):
        raise ValidationError(f"{what} has n={n}, m={m} but the prepared split has n={sp.n}, m={sp.m}")


def _load_checkpoint(path: str, what: str):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing {what} checkpoint {path}; run 'train' first")
    return path


def build_run(cfg: ExperimentConfig, mode: str):
    out, sp, _ = _load_prepared(cfg)
    ecfg = cfg.eval_config()
    if mode == "backbone":
        model, _ = backbone.load_model(_load_checkpoint(os.path.join(out, "backbone.npz"), "backbone"))
        _check_shape(sp, model.n, model.m, "backbone checkpoint")
        run, report = harness.full_rank_evaluate(model.score_matrix, sp, ecfg)
    elif mode == "dual":
        res = harness.run_baseline_dual(sp, cfg.train_config(), ecfg, cfg.dim, cfg.seed_for("init"))
        run, report = res.run, res.report
    else:
        models, _ = crrs.load_treatment_models(
            _load_checkpoint(os.path.join(out, "treatment_models.npz"), "treatment-models"))
        _check_shape(sp, models.n, models.m, "treatment-models checkpoint")
        if mode == "crrs-simple":
            scorer = crrs.simple_scorer(models)
        else:
            ex_a, ex_b = backbone.exclusion_index(sp.train.matched_pairs())
            est = crrs.VacantSlotEstimator(models.pretrained, ecfg.ybar_sample_size, ecfg.ybar_top_q,
                                           ecfg.seed, ex_a, ex_b)
            scorer = crrs.rerank_scorer(models, est)
        run, report = harness.full_rank_evaluate(scorer, sp, ecfg)
    matches, _ = harness.evaluation_targets(sp, ecfg.candidate_policy)
    return out, run, report, matches


def write_events(run: RecommendationRun, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for side, lists in (("A", run.lists_a), ("B", run.lists_b)):
            for u in sorted(lists):
                fh.write(f"{side}\t{u}\t{','.join(str(v) for v in lists[u])}\n")


def read_events(path: str):
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[0] not in ("A", "B"):
                raise DataFormatError(f"{path}:{lineno}: expected '<A|B>\\t<user>\\t<ids>'")
            ids = [int(x) for x in parts[2].split(",") if x]
            events.append((parts[0], int(parts[1]), ids))
    return events


def _write_report(out_dir: str, run, report, matches, with_events: bool = True) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json())
    with open(os.path.join(out_dir, "report.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_tsv())
    hist = harness.redundancy_rank_histogram(run, matches)
    with open(os.path.join(out_dir, "histogram.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(hist.to_json())
    names = ["report.json", "report.tsv", "histogram.json"]
    names += harness.write_run_dump(run, out_dir)
    if with_events:
        write_events(run, os.path.join(out_dir, "events.tsv"))
        names.append("events.tsv")
    return names


def cmd_evaluate(cfg: ExperimentConfig, mode: str) -> list[str]:
    if mode not in MODES:
        raise UsageError(f"invalid mode {mode!r}; choose from {MODES}")
    out, run, report, matches = build_run(cfg, mode)
    rel = os.path.join("reports", mode)
    names = _write_report(os.path.join(out, rel), run, report, matches)
    files = [os.path.join(rel, n) for n in names]
    _update_manifest(out, f"evaluate:{mode}", files)
    return files


TRAJECTORY_COLUMNS = ("t", "side", "user", "crecall", "cprecision", "srecall", "sprecision",
                      "mirror_crecall", "mirror_cprecision", "mirror_srecall", "mirror_sprecision")


def replay(events, matches: MatchSet, k: int) -> list[dict]:
    state = StreamingMetricsState(k)
    rows = [{"side": "-", "user": -1, **state.snapshot()}]
    for side, user, ids in events:
        if (side, user) in state.processed:
            raise ValueError(f"duplicate event for user {user} on side {side}")
        state.process_user(user, side, ids, matches.per_user(side).get(user, ()))
        rows.append({"side": side, "user": user, **state.snapshot()})
    return rows


def cmd_stream(cfg: ExperimentConfig, events_path: str, output: str | None = None) -> list[str]:
    out, sp, _ = _load_prepared(cfg)
    matches, _ = harness.evaluation_targets(sp, cfg.candidate_policy)
    rows = replay(read_events(events_path), matches, cfg.k)
    target = output or os.path.join(out, "stream", "trajectory.tsv")
    os.makedirs(os.path.dirname(os.path.abspath(target)), exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(TRAJECTORY_COLUMNS) + "\n")
        for r in rows:
            fh.write("\t".join(repr(r[c]) if isinstance(r[c], float) else str(r[c])
                               for c in TRAJECTORY_COLUMNS) + "\n")
    rel = os.path.relpath(target, out)
    _update_manifest(out, "stream", [rel])
    return [rel]


def cmd_adjust(cfg: ExperimentConfig, mode: str) -> list[str]:
    out, sp, _ = _load_prepared(cfg)
    src = os.path.join(out, "reports", mode)
    if not os.path.exists(os.path.join(src, "run_a.tsv")):
        raise FileNotFoundError(f"no run dump in {src}; run 'evaluate --mode {mode}' first")
    run = harness.read_run_dump(src, cfg.k)
    matches, _ = harness.evaluation_targets(sp, cfg.candidate_policy)
    files = []
    summary = {}
    for name, fn in (("uni", harness.adjust_uni), ("rep", harness.adjust_rep)):
        rng = np.random.default_rng(cfg.seed_for(f"adjust-{name}"))
        adj, info = fn(run, matches, rng)
        report = evaluate_run(adj, matches)
        rel = os.path.join("reports", f"{mode}-{name}")
        files += [os.path.join(rel, n) for n in _write_report(os.path.join(out, rel), adj, report,
                                                              matches, with_events=False)]
        summary[name] = {"adjusted": info.adjusted, "skipped": info.skipped}
    _write_json(os.path.join(out, "reports", f"{mode}-adjustment.json"), summary)
    files.append(os.path.join("reports", f"{mode}-adjustment.json"))
    _update_manifest(out, f"adjust:{mode}", files)
    return files


def _add_config_flags(p: argparse.ArgumentParser, skip=()) -> None:
    p.add_argument("--config", help="flat key = value config file")
    for f in fields(ExperimentConfig):
        if f.name in skip:
            continue
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool",) or isinstance(f.default, bool):
            p.add_argument(flag, dest=f.name, action="store_const", const="true", default=None)
        else:
            p.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reciprocal", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="load or synthesize data, k-core filter, split")
    _add_config_flags(p)

    p = sub.add_parser("train", help="pretrain the backbone and finetune treatment models")
    _add_config_flags(p)
    p.add_argument("--stage", choices=("all", "pretrain-only"), default="all")

    p = sub.add_parser("evaluate", help="full-ranking evaluation of one method")
    _add_config_flags(p)
    p.add_argument("--mode", choices=MODES, required=True)

    p = sub.add_parser("stream", help="replay per-user lists through the streaming metrics")
    _add_config_flags(p)
    p.add_argument("--events", required=True, help="TSV of '<A|B>\\t<user>\\t<comma ids>' lines")
    p.add_argument("--output", help="trajectory TSV (default <out>/stream/trajectory.tsv)")

    p = sub.add_parser("adjust", help="apply the redundancy adjusters to an evaluated run")
    _add_config_flags(p)
    p.add_argument("--mode", choices=MODES, required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {f.name: getattr(args, f.name, None) for f in fields(ExperimentConfig)}
    try:
        cfg = load_config(args.config, overrides).validate()
        if not cfg.out:
            parser.error("--out is required (flag or 'out' in the config file)")
        if args.command == "prepare":
            files = cmd_prepare(cfg)
        elif args.command == "train":
            files = cmd_train(cfg, args.stage)
        elif args.command == "evaluate":
            files = cmd_evaluate(cfg, args.mode)
        elif args.command == "stream":
            files = cmd_stream(cfg, args.events, args.output)
        else:
            files = cmd_adjust(cfg, args.mode)
    except (UsageError, ConfigError, ValidationError) as exc:
        print(f"reciprocal {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, DataFormatError, ValueError, RuntimeError) as exc:
        print(f"reciprocal {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(os.path.join(cfg.out, f))
    return 0


if __name__ == "__main__":
    sys.exit(main())
