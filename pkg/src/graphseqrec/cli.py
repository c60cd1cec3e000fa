"""Command-line entry points: train, eval, synth, gridsearch, build-graph.

Exit codes: 0 success, 2 usage error, 1 runtime failure.  Every run writes a
resolved-config snapshot so it can be reproduced bit-for-bit with
``graphseqrec train --config <outdir>/config.resolved``.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import Dict, List, Optional

import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .data import (ingest, leave_one_out, synth_generate, write_interactions)
from .evaluation import spectrum, write_spectrum_csv
from .graph import build_transition_graph
from .model import Model
from .training import (LAMBDA1_GRID, ENCODER_LAYER_GRID, evaluate_model, train)

OUTPUT_ROOT_ENV = "GRAPHSEQREC_OUTPUT_ROOT"


class UsageError(Exception):
    pass


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value configuration file")
    for key, field in cfgmod.SCHEMA.items():
        flag = "--" + key.replace("_", "-")
        parser.add_argument(flag, dest=key, default=None, metavar="V",
                            help=f"{field.help} (default: {field.default})")


def _collect_overrides(args: argparse.Namespace) -> Dict[str, object]:
    return {key: getattr(args, key) for key in cfgmod.SCHEMA if getattr(args, key, None) is not None}


def _resolve_outdir(resolved: Dict[str, object], command: str) -> str:
    outdir = str(resolved["outdir"])
    if not outdir:
        root = os.environ.get(OUTPUT_ROOT_ENV, "")
        if not root:
            raise UsageError(f"--outdir is required (or set {OUTPUT_ROOT_ENV})")
        outdir = os.path.join(root, command)
        resolved["outdir"] = outdir
    os.makedirs(outdir, exist_ok=True)
    return outdir


def _load_dataset(resolved: Dict[str, object]):
    path = str(resolved["dataset"])
    if not path:
        raise UsageError("--dataset is required")
    if not os.path.exists(path):
        raise UsageError(f"--dataset: no such file: {path}")
    sequences = ingest(path, int(resolved["min_count"]), cfgmod.delimiter_char(resolved))
    return leave_one_out(sequences)


def cmd_train(args: argparse.Namespace) -> int:
    resolved = cfgmod.resolve(args.config, _collect_overrides(args))
    outdir = _resolve_outdir(resolved, "train")
    dataset = _load_dataset(resolved)
    cfg = cfgmod.to_train_config(resolved)
    cfgmod.write_resolved(os.path.join(outdir, "config.resolved"), resolved)
    result = train(cfg, dataset)
    with open(os.path.join(outdir, "metrics.log"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(result.history) + "\n")
    with open(os.path.join(outdir, "timing.log"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(result.timing) + "\n")
    # the model holds the restored best parameters at this point
    result.model.save(os.path.join(outdir, "checkpoint.best"))
    result.model.save(os.path.join(outdir, "checkpoint.final"),
                      extra=result.optimizer.state_arrays())
    if resolved["spectrum"]:
        report = spectrum(result.model.params["item_emb"].data[1:])
        write_spectrum_csv(report, os.path.join(outdir, "spectrum.csv"))
    for line in result.history[-2:]:
        print(line)
    print(f"artifacts written to {outdir}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    resolved = cfgmod.resolve(args.config, _collect_overrides(args))
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"--checkpoint: no such file: {args.checkpoint}")
    dataset = _load_dataset(resolved)
    cfg = cfgmod.to_train_config(resolved)
    from .data import ItemSequence
    graph = build_transition_graph(
        [ItemSequence(u.user_id, u.train) for u in dataset.users],
        cfg.window, dataset.num_items, cfg.degree_mode)
    rng = np.random.default_rng([cfg.seed, 0])
    model = Model(cfg.model_config(dataset.num_items, dataset.num_users), graph, rng)
    model.load(args.checkpoint)
    report = evaluate_model(model, dataset, args.split, cfg.batch_size, cfg.exclude_history)
    print(f"split={args.split} " + " ".join(report.lines()))
    if args.spectrum_csv:
        write_spectrum_csv(spectrum(model.params["item_emb"].data[1:]), args.spectrum_csv)
        print(f"spectrum written to {args.spectrum_csv}")
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    if not args.out:
        raise UsageError("--out is required")
    log = synth_generate(args.users, args.items, args.order, args.noise,
                         args.seed, args.seq_len)
    delim = "\t" if args.delimiter == "tab" else ","
    write_interactions(args.out, log, delim)
    print(f"wrote {len(log)} interactions for {args.users} users to {args.out}")
    return 0


def cmd_build_graph(args: argparse.Namespace) -> int:
    resolved = cfgmod.resolve(args.config, _collect_overrides(args))
    if not args.out:
        raise UsageError("--out is required")
    dataset = _load_dataset(resolved)
    from .data import ItemSequence
    graph = build_transition_graph(
        [ItemSequence(u.user_id, u.train) for u in dataset.users],
        int(resolved["window"]), dataset.num_items, str(resolved["degree_mode"]))
    graph.dump(args.out)
    print(f"graph with {graph.nnz} entries written to {args.out}")
    return 0


def _parse_grid(text: str, kind) -> List:
    try:
        return [kind(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise UsageError(f"bad grid specification: {text!r}") from None


def cmd_gridsearch(args: argparse.Namespace) -> int:
    resolved = cfgmod.resolve(args.config, _collect_overrides(args))
    outdir = _resolve_outdir(resolved, "gridsearch")
    dataset = _load_dataset(resolved)
    base = cfgmod.to_train_config(resolved)
    lambda1_grid = _parse_grid(args.lambda1_grid, float) if args.lambda1_grid else list(LAMBDA1_GRID)
    layers_grid = _parse_grid(args.layers_grid, int) if args.layers_grid else list(ENCODER_LAYER_GRID)
    rows = []
    failures = 0
    for lam in lambda1_grid:
        for layers in layers_grid:
            cell = replace(base, lambda1=lam, encoder_layers=layers)
            cell_dir = os.path.join(outdir, f"cell-lambda1_{lam}-layers_{layers}")
            os.makedirs(cell_dir, exist_ok=True)
            cell_resolved = dict(resolved)
            cell_resolved.update(lambda1=lam, encoder_layers=layers, outdir=cell_dir)
            cfgmod.write_resolved(os.path.join(cell_dir, "config.resolved"), cell_resolved)
            try:
                result = train(cell, dataset)
            except Exception as exc:  # keep scanning the rest of the grid
                print(f"cell lambda1={lam} layers={layers} failed: {exc}", file=sys.stderr)
                failures += 1
                continue
            with open(os.path.join(cell_dir, "metrics.log"), "w", encoding="utf-8") as fh:
                fh.write("\n".join(result.history) + "\n")
            result.model.save(os.path.join(cell_dir, "checkpoint.best"))
            rows.append((lam, layers, result.state.best_val_ndcg20,
                         result.test_report.hr[20], result.test_report.ndcg[20]))
    rows.sort(key=lambda r: -r[2])
    summary = os.path.join(outdir, "grid_summary.tsv")
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write("lambda1\tencoder_layers\tval_ndcg@20\ttest_hr@20\ttest_ndcg@20\n")
        for lam, layers, val, hr20, ndcg20 in rows:
            fh.write(f"{lam}\t{layers}\t{val:.6f}\t{hr20:.6f}\t{ndcg20:.6f}\n")
    print(f"grid summary written to {summary}")
    return 1 if failures and not rows else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphseqrec",
        description="Graph-enhanced sequential recommendation: train, evaluate, "
                    "and inspect models on interaction logs.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write run artifacts")
    _add_config_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_config_flags(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint archive to load")
    p_eval.add_argument("--split", choices=("valid", "test"), default="test")
    p_eval.add_argument("--spectrum-csv", dest="spectrum_csv",
                        help="also write the embedding spectrum CSV here")
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic interaction log")
    p_synth.add_argument("--out", help="output log path")
    p_synth.add_argument("--users", type=int, default=500)
    p_synth.add_argument("--items", type=int, default=200)
    p_synth.add_argument("--order", type=int, default=1)
    p_synth.add_argument("--noise", type=float, default=0.2)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--seq-len", dest="seq_len", type=int, default=20)
    p_synth.add_argument("--delimiter", choices=("tab", "comma"), default="tab")
    p_synth.set_defaults(func=cmd_synth)

    p_grid = sub.add_parser("gridsearch", help="train every cell of a hyperparameter grid")
    _add_config_flags(p_grid)
    p_grid.add_argument("--lambda1-grid", dest="lambda1_grid",
                        help="comma-separated lambda1 values (default 0.05,0.1,0.2,0.4)")
    p_grid.add_argument("--layers-grid", dest="layers_grid",
                        help="comma-separated encoder layer counts (default 1,2,3)")
    p_grid.set_defaults(func=cmd_gridsearch)

    p_graph = sub.add_parser("build-graph", help="dump the finalized transition graph")
    _add_config_flags(p_graph)
    p_graph.add_argument("--out", help="output text path (i<TAB>j<TAB>weight)")
    p_graph.set_defaults(func=cmd_build_graph)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
